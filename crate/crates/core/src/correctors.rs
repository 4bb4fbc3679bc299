//! Corrector problems for the corrected (test-side) multiscale basis.
//!
//! Every coarse basis function receives a fine-scale correction from the
//! interpolation kernel, so the corrected test space keeps the coarse
//! dimension. Corrections are computed per component: macro hat functions see
//! the cell-averaged operator on vertex patches of the macro mesh, while the
//! two cell components solve periodic-cell problems that do not depend on the
//! macro position when the coefficients are constant, so one correction per
//! coarse cell basis function serves every macro slot.
//!
//! Each element problem is a saddle-point system: the patch-restricted
//! operator block under kernel constraints enforced with Lagrange multipliers
//! attached to the coarse basis functions whose rows meet the patch. The
//! correction acts as the conjugated (test) argument of the form, so the
//! conjugate-transposed system has to be solved; by complex symmetry of all
//! operator blocks this is the plain system followed by conjugation of the
//! solution, and the right-hand sides are real.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::fem::{element_edge_mass, element_mass, element_stiffness, DofMap};
use crate::interp::{measured_kernel_constant, Embedding, QuasiInterpolator};
use crate::mesh::{Region, Triangulation2D, VertexIncidence};
use crate::scalar::{r, Cplx, Real};
use crate::sparse::{
    principal_submatrix, restrict_rows, vec_norm, Csr, SparseError, SparseLu, Triplet,
};
use crate::system::StructuredTwoScaleMatrix;
use crate::twoscale::{CellMoments, FormWeights, ProblemParams, TwoScaleFunction, TwoScaleSpace};

/// Patch order large enough to saturate any finite mesh; requests the
/// idealized (global) corrector.
pub const SATURATING_OVERSAMPLING: usize = usize::MAX;

/// Default guard on the number of unknowns a single corrector system may
/// carry into the direct factorization.
pub const MAX_DIRECT_UNKNOWNS: usize = 200_000;

const SOLVE_TOL: f64 = 1e-10;

/// Component of the triple a basis function or correction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ComponentKind {
    /// macro `P1` hat on the computational domain
    Macro,
    /// periodic zero-mean basis on the perforated cell
    CellStar,
    /// zero-trace basis on the inclusion
    CellInclusion,
}

impl ComponentKind {
    fn word(self) -> &'static str {
        match self {
            ComponentKind::Macro => "macro",
            ComponentKind::CellStar => "cell-star",
            ComponentKind::CellInclusion => "cell-inclusion",
        }
    }

    fn from_word(w: &str) -> Option<Self> {
        match w {
            "macro" => Some(ComponentKind::Macro),
            "cell-star" => Some(ComponentKind::CellStar),
            "cell-inclusion" => Some(ComponentKind::CellInclusion),
            _ => None,
        }
    }
}

/// Patch orders per component; the cell orders usually equal the macro order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Oversampling {
    pub macro_m: usize,
    pub cell1_m: usize,
    pub cell2_m: usize,
}

impl Oversampling {
    /// Same order for all three components.
    pub fn uniform(m: usize) -> Self {
        Self { macro_m: m, cell1_m: m, cell2_m: m }
    }

    /// Saturating orders, yielding the idealized correctors.
    pub fn ideal() -> Self {
        Self::uniform(SATURATING_OVERSAMPLING)
    }
}

/// Errors from corrector assembly, solves, and cache IO.
#[derive(Debug, Error)]
pub enum CorrectorError {
    #[error("corrector system solve failed: {0}")]
    Solve(#[from] SparseError),
    #[error("corrector system has {dim} unknowns, the direct-solve guard is {max}")]
    TooLarge { dim: usize, max: usize },
    #[error("coarse and fine spaces are inconsistent: {0}")]
    SpaceMismatch(&'static str),
    #[error("element {element} is not a valid {kind:?} seed")]
    BadSeed { kind: ComponentKind, element: usize },
    #[error("corner {corner} of element {element} carries no coarse basis function")]
    NoBasisAtCorner { element: usize, corner: usize },
    #[error("corrector cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Correction from a single element problem: fine patch triangles and sparse
/// fine coefficients of the component the correction lives in.
#[derive(Clone, Debug)]
pub struct ElementCorrection<R: Real> {
    pub patch: Vec<usize>,
    pub entries: Vec<(usize, Cplx<R>)>,
}

/// Accumulated correction attached to one coarse basis function.
#[derive(Clone, Debug, PartialEq)]
pub struct Corrector<R: Real> {
    pub kind: ComponentKind,
    /// coarse dof index within the component
    pub basis: usize,
    /// union of the fine element patches behind this correction
    pub patch: Vec<usize>,
    /// fine coefficients, sorted by dof
    pub entries: Vec<(usize, Cplx<R>)>,
}

struct ElementOutcome<R: Real> {
    patch: Vec<usize>,
    /// per requested corner: sparse fine coefficients
    corrections: Vec<(usize, Vec<(usize, Cplx<R>)>)>,
    solves: usize,
}

/// Shared operators and lookup tables for corrector solves on a fixed
/// coarse/fine space pair.
pub struct CorrectorAssembler<'a, R: Real> {
    coarse: &'a TwoScaleSpace<R>,
    fine: &'a TwoScaleSpace<R>,
    interp: &'a QuasiInterpolator<R>,
    weights: FormWeights<R>,
    ops: StructuredTwoScaleMatrix<R>,
    moments: CellMoments<R>,
    /// coarse macro element -> fine macro triangles
    children: Vec<Vec<usize>>,
    /// coarse cell element -> fine cell triangles
    cell_children: Vec<Vec<usize>>,
    /// coarse macro element -> fine boundary edges on its rim
    boundary_children: Vec<Vec<(usize, usize)>>,
    /// sorted vertex pairs of fine boundary edges
    fine_boundary: BTreeSet<(usize, usize)>,
    /// fine cell mesh: class edge -> incident triangles per region
    cell_edge_regions: BTreeMap<(usize, usize), [u8; 2]>,
    macro_inc: VertexIncidence,
    cell_inc: VertexIncidence,
    /// coarse cell elements by region
    star_elements: Vec<usize>,
    incl_elements: Vec<usize>,
    /// coarse basis dof -> incident (element, corner) pairs, per component
    macro_support: Vec<Vec<(usize, usize)>>,
    cell1_support: Vec<Vec<(usize, usize)>>,
    cell2_support: Vec<Vec<(usize, usize)>>,
    solve_guard: usize,
}

impl<'a, R: Real> CorrectorAssembler<'a, R> {
    pub fn new(
        coarse: &'a TwoScaleSpace<R>,
        fine: &'a TwoScaleSpace<R>,
        interp: &'a QuasiInterpolator<R>,
        weights: FormWeights<R>,
    ) -> Result<Self, CorrectorError> {
        let children = child_lists(fine.macro_mesh(), coarse.macro_mesh().n_triangles())
            .ok_or(CorrectorError::SpaceMismatch("fine macro mesh does not refine the coarse one"))?;
        let cell_children = child_lists(fine.cell_mesh(), coarse.cell_mesh().n_triangles())
            .ok_or(CorrectorError::SpaceMismatch("fine cell mesh does not refine the coarse one"))?;
        if interp.macro_rows().ncols() != fine.n_macro_dofs()
            || interp.macro_rows().nrows() != coarse.n_macro_dofs()
            || interp.cell1_kernel_rows().ncols() != fine.n_cell1_dofs()
            || interp.cell2_rows().ncols() != fine.n_cell2_dofs()
            || interp.cell2_rows().nrows() != coarse.n_cell2_dofs()
            || interp.slot_parents().len() != fine.n_slots()
        {
            return Err(CorrectorError::SpaceMismatch("interpolator shapes do not match the spaces"));
        }

        let moments = CellMoments::full(fine);
        let ops = StructuredTwoScaleMatrix::assemble(fine, &weights, &moments);

        let mut boundary_children = vec![Vec::new(); coarse.macro_mesh().n_triangles()];
        let mut fine_boundary = BTreeSet::new();
        let fine_parents = fine.macro_mesh().parents().unwrap();
        for &(t, k) in fine.boundary_edges() {
            boundary_children[fine_parents[t]].push((t, k));
            fine_boundary.insert(edge_key_planar(fine.macro_mesh(), t, k));
        }

        let mut cell_edge_regions: BTreeMap<(usize, usize), [u8; 2]> = BTreeMap::new();
        let cmesh = fine.cell_mesh();
        for t in 0..cmesh.n_triangles() {
            let slot = match cmesh.label(t) {
                Region::Outer => 0,
                Region::Inner => 1,
            };
            for e in 0..3 {
                let key = edge_key_class(cmesh, t, e);
                cell_edge_regions.entry(key).or_insert([0, 0])[slot] += 1;
            }
        }

        let macro_support = support_list(coarse.macro_mesh(), coarse.macro_map(), None);
        let cell1_support = support_list(coarse.cell_mesh(), coarse.cell1_map(), Some(Region::Outer));
        let cell2_support = support_list(coarse.cell_mesh(), coarse.cell2_map(), Some(Region::Inner));

        Ok(Self {
            macro_inc: coarse.macro_mesh().vertex_incidence(),
            cell_inc: coarse.cell_mesh().vertex_incidence(),
            star_elements: coarse.cell_mesh().labeled_triangles(Region::Outer),
            incl_elements: coarse.cell_mesh().labeled_triangles(Region::Inner),
            coarse,
            fine,
            interp,
            weights,
            ops,
            moments,
            children,
            cell_children,
            boundary_children,
            fine_boundary,
            cell_edge_regions,
            macro_support,
            cell1_support,
            cell2_support,
            solve_guard: MAX_DIRECT_UNKNOWNS,
        })
    }

    pub fn coarse(&self) -> &TwoScaleSpace<R> {
        self.coarse
    }

    pub fn fine(&self) -> &TwoScaleSpace<R> {
        self.fine
    }

    pub fn interpolator(&self) -> &QuasiInterpolator<R> {
        self.interp
    }

    pub fn weights(&self) -> &FormWeights<R> {
        &self.weights
    }

    /// Assembled fine-space operator blocks the corrector systems restrict.
    pub fn operator(&self) -> &StructuredTwoScaleMatrix<R> {
        &self.ops
    }

    pub fn moments(&self) -> &CellMoments<R> {
        &self.moments
    }

    /// Replaces the unknown-count guard for direct factorizations.
    pub fn set_solve_guard(&mut self, max: usize) {
        self.solve_guard = max;
    }

    /// Correction of one coarse basis function restricted to one element, on
    /// the m-th order patch around that element. `corner` selects the local
    /// basis function of the element.
    pub fn element_correction(
        &self,
        kind: ComponentKind,
        element: usize,
        corner: usize,
        m: usize,
    ) -> Result<ElementCorrection<R>, CorrectorError> {
        assert!(corner < 3, "corner index out of range");
        self.check_seed(kind, element)?;
        if kind == ComponentKind::CellInclusion {
            let v = self.coarse.cell_mesh().triangle(element)[corner];
            if self.coarse.cell2_map().dof_of_vertex(v).is_none() {
                return Err(CorrectorError::NoBasisAtCorner { element, corner });
            }
        }
        let out = self.solve_element(kind, element, &[corner], m)?;
        let entries = out.corrections.into_iter().next().map(|(_, e)| e).unwrap_or_default();
        Ok(ElementCorrection { patch: out.patch, entries })
    }

    /// Accumulated correction of one coarse basis function: the sum of its
    /// element corrections over the elements it is supported on.
    pub fn basis_correction(
        &self,
        kind: ComponentKind,
        basis: usize,
        m: usize,
    ) -> Result<Corrector<R>, CorrectorError> {
        let support = match kind {
            ComponentKind::Macro => &self.macro_support,
            ComponentKind::CellStar => &self.cell1_support,
            ComponentKind::CellInclusion => &self.cell2_support,
        };
        let mut patch = BTreeSet::new();
        let mut acc: BTreeMap<usize, Cplx<R>> = BTreeMap::new();
        for &(element, corner) in &support[basis] {
            let ec = self.element_correction(kind, element, corner, m)?;
            patch.extend(ec.patch);
            for (d, v) in ec.entries {
                *acc.entry(d).or_insert_with(Cplx::zero) += v;
            }
        }
        Ok(Corrector {
            kind,
            basis,
            patch: patch.into_iter().collect(),
            entries: acc.into_iter().filter(|(_, v)| !v.is_zero()).collect(),
        })
    }

    /// Relative energy tails of the idealized element correction outside the
    /// m-th order patches, for `m = 0..=m_max`. A patch that saturates its
    /// region gives an exactly zero tail.
    pub fn decay_profile(
        &self,
        kind: ComponentKind,
        element: usize,
        corner: usize,
        m_max: usize,
    ) -> Result<Vec<(usize, R)>, CorrectorError> {
        let ideal = self.element_correction(kind, element, corner, SATURATING_OVERSAMPLING)?;
        let dense = self.dense_component(kind, &ideal.entries);
        let total = self.component_seminorm(kind, &dense, None);
        let mut rows = Vec::with_capacity(m_max + 1);
        for m in 0..=m_max {
            if total.is_zero() {
                rows.push((m, R::zero()));
                continue;
            }
            let mask = self.fine_patch_mask(kind, element, m);
            let tail = self.component_seminorm(kind, &dense, Some(&mask));
            rows.push((m, tail / total));
        }
        Ok(rows)
    }

    /// Relative energy distance between the idealized and the m-th order
    /// element correction.
    pub fn localization_error(
        &self,
        kind: ComponentKind,
        element: usize,
        corner: usize,
        m: usize,
    ) -> Result<R, CorrectorError> {
        let ideal = self.element_correction(kind, element, corner, SATURATING_OVERSAMPLING)?;
        let local = self.element_correction(kind, element, corner, m)?;
        let mut diff = self.dense_component(kind, &ideal.entries);
        for (d, v) in &local.entries {
            diff[*d] -= *v;
        }
        let denom = self.component_seminorm(kind, &self.dense_component(kind, &ideal.entries), None);
        if denom.is_zero() {
            return Ok(R::zero());
        }
        Ok(self.component_seminorm(kind, &diff, None) / denom)
    }

    /// Largest observed energy-norm ratio of a correction against its coarse
    /// argument, over random coarse functions.
    pub fn measured_continuity(&self, set: &CorrectorSet<R>, samples: usize, seed: u64) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coarse_moments = CellMoments::full(self.coarse);
        let k = self.weights.mass.norm().sqrt();
        let mut worst = R::zero();
        for _ in 0..samples {
            let mut v = TwoScaleFunction::zeros(self.coarse);
            for x in v.data_mut() {
                *x = Cplx::new(r(rng.gen_range(-1.0..1.0)), r(rng.gen_range(-1.0..1.0)));
            }
            let vn = crate::twoscale::energy_norm(self.coarse, k, &coarse_moments, &v);
            if vn.is_zero() {
                continue;
            }
            let qv = set.apply(self, &v);
            let qn = crate::twoscale::energy_norm(self.fine, k, &self.moments, &qv);
            worst = worst.max(qn / vn);
        }
        worst
    }

    fn check_seed(&self, kind: ComponentKind, element: usize) -> Result<(), CorrectorError> {
        let ok = match kind {
            ComponentKind::Macro => element < self.coarse.macro_mesh().n_triangles(),
            ComponentKind::CellStar => {
                element < self.coarse.cell_mesh().n_triangles()
                    && self.coarse.cell_mesh().label(element) == Region::Outer
            }
            ComponentKind::CellInclusion => {
                element < self.coarse.cell_mesh().n_triangles()
                    && self.coarse.cell_mesh().label(element) == Region::Inner
            }
        };
        if ok {
            Ok(())
        } else {
            Err(CorrectorError::BadSeed { kind, element })
        }
    }

    fn solve_element(
        &self,
        kind: ComponentKind,
        element: usize,
        corners: &[usize],
        m: usize,
    ) -> Result<ElementOutcome<R>, CorrectorError> {
        let (fine_tris, keep) = match kind {
            ComponentKind::Macro => {
                let p = self.coarse.macro_mesh().patch(&self.macro_inc, &[element], m, None);
                let fine_tris = collect_children(&self.children, &p.tris);
                let keep = self.macro_patch_dofs(&fine_tris);
                (fine_tris, keep)
            }
            ComponentKind::CellStar => {
                let p =
                    self.coarse.cell_mesh().patch(&self.cell_inc, &[element], m, Some(Region::Outer));
                let fine_tris = collect_children(&self.cell_children, &p.tris);
                let keep = self.cell_patch_dofs(&fine_tris, Region::Outer);
                (fine_tris, keep)
            }
            ComponentKind::CellInclusion => {
                let p =
                    self.coarse.cell_mesh().patch(&self.cell_inc, &[element], m, Some(Region::Inner));
                let fine_tris = collect_children(&self.cell_children, &p.tris);
                let keep = self.cell_patch_dofs(&fine_tris, Region::Inner);
                (fine_tris, keep)
            }
        };
        if keep.is_empty() {
            return Ok(ElementOutcome {
                patch: fine_tris,
                corrections: corners.iter().map(|&c| (c, Vec::new())).collect(),
                solves: 0,
            });
        }

        let block: &Csr<R> = match kind {
            ComponentKind::Macro => self.ops.macro_block(),
            ComponentKind::CellStar => self.ops.cell1_block(),
            ComponentKind::CellInclusion => self.ops.cell2_block(),
        };
        let op_sub = principal_submatrix(block, &keep);
        let con = match kind {
            ComponentKind::Macro => restrict_rows(self.interp.macro_rows(), &keep).1,
            ComponentKind::CellStar => {
                // The pure-gradient block needs its constant direction pinned
                // only on a saturated patch, where no rim is left; there the
                // independent re-centered rows plus the mean row are the right
                // set. On a proper patch the rim pins constants already, and
                // the weighted row-sum identity of the projection rows makes
                // an appended mean row exactly dependent, so the locally
                // supported projection rows alone are the constraints.
                if keep.len() == block.nrows() {
                    let rows = restrict_rows(self.interp.cell1_kernel_rows(), &keep).1;
                    append_mean_row(&rows, self.fine.cell1_map().integral_weights(), &keep)
                } else {
                    restrict_rows(self.interp.cell1_projection_rows(), &keep).1
                }
            }
            ComponentKind::CellInclusion => restrict_rows(self.interp.cell2_rows(), &keep).1,
        };
        let mut solver = PatchSolver::new(op_sub, con, self.solve_guard)?;

        let n_component = block.nrows();
        let mut pos = vec![usize::MAX; n_component];
        for (p, &d) in keep.iter().enumerate() {
            pos[d] = p;
        }

        let mut out = ElementOutcome { patch: fine_tris, corrections: Vec::new(), solves: 0 };
        for &corner in corners {
            let rhs = match kind {
                ComponentKind::Macro => self.macro_element_rhs(element, corner, &pos, keep.len()),
                // the common coupled-gradient factor cancels between the
                // operator and the right-hand side unless it vanishes
                ComponentKind::CellStar => self.cell_element_rhs(
                    element,
                    corner,
                    self.fine.cell1_map(),
                    if self.weights.grad_coupled.is_zero() {
                        Cplx::zero()
                    } else {
                        Cplx::new(R::one(), R::zero())
                    },
                    Cplx::zero(),
                    &pos,
                    keep.len(),
                ),
                ComponentKind::CellInclusion => self.cell_element_rhs(
                    element,
                    corner,
                    self.fine.cell2_map(),
                    self.weights.grad_incl,
                    self.weights.mass,
                    &pos,
                    keep.len(),
                ),
            };
            let (q, solved) = solver.solve(&rhs)?;
            if solved {
                out.solves += 1;
            }
            let entries: Vec<(usize, Cplx<R>)> =
                keep.iter().zip(&q).filter(|(_, v)| !v.is_zero()).map(|(&d, &v)| (d, v)).collect();
            out.corrections.push((corner, entries));
        }
        Ok(out)
    }

    /// Free fine macro dofs of a patch: every patch vertex except those on the
    /// patch rim, where the rim does not coincide with the domain boundary.
    fn macro_patch_dofs(&self, fine_tris: &[usize]) -> Vec<usize> {
        let mesh = self.fine.macro_mesh();
        let map = self.fine.macro_map();
        let mut count: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        for &t in fine_tris {
            for e in 0..3 {
                *count.entry(edge_key_planar(mesh, t, e)).or_insert(0) += 1;
            }
        }
        let mut banned: BTreeSet<usize> = BTreeSet::new();
        for (&key, &cnt) in &count {
            if cnt == 1 && !self.fine_boundary.contains(&key) {
                banned.insert(key.0);
                banned.insert(key.1);
            }
        }
        let mut dofs: Vec<usize> = Vec::new();
        for &t in fine_tris {
            for &v in &mesh.triangle(t) {
                if banned.contains(&v) {
                    continue;
                }
                if let Some(d) = map.dof_of_vertex(v) {
                    dofs.push(d);
                }
            }
        }
        dofs.sort_unstable();
        dofs.dedup();
        dofs
    }

    /// Free fine cell dofs of a patch within one region: rim classes are
    /// excluded where the rim borders further triangles of the same region,
    /// while the interface to the other region imposes nothing.
    fn cell_patch_dofs(&self, fine_tris: &[usize], region: Region) -> Vec<usize> {
        let mesh = self.fine.cell_mesh();
        let map = match region {
            Region::Outer => self.fine.cell1_map(),
            Region::Inner => self.fine.cell2_map(),
        };
        let mut count: BTreeMap<(usize, usize), u8> = BTreeMap::new();
        for &t in fine_tris {
            for e in 0..3 {
                *count.entry(edge_key_class(mesh, t, e)).or_insert(0) += 1;
            }
        }
        let region_slot = match region {
            Region::Outer => 0,
            Region::Inner => 1,
        };
        let mut banned: BTreeSet<usize> = BTreeSet::new();
        for (&key, &cnt) in &count {
            if cnt == 1 && self.cell_edge_regions[&key][region_slot] == 2 {
                banned.insert(key.0);
                banned.insert(key.1);
            }
        }
        let mut dofs: Vec<usize> = Vec::new();
        for &t in fine_tris {
            for &v in &mesh.triangle(t) {
                if banned.contains(&mesh.vertex_class(v)) {
                    continue;
                }
                if let Some(d) = map.dof_of_vertex(v) {
                    dofs.push(d);
                }
            }
        }
        dofs.sort_unstable();
        dofs.dedup();
        dofs
    }

    /// Element-restricted cell-averaged operator applied to the coarse hat at
    /// `corner`, on the patch dofs.
    fn macro_element_rhs(
        &self,
        element: usize,
        corner: usize,
        pos: &[usize],
        p: usize,
    ) -> Vec<Cplx<R>> {
        let mesh_c = self.coarse.macro_mesh();
        let mesh_f = self.fine.macro_mesh();
        let map = self.fine.macro_map();
        let wm = self.weights.mass * Cplx::new(self.moments.cell_area(), R::zero());
        let mut rhs = vec![Cplx::<R>::zero(); p];
        for &t in &self.children[element] {
            let pc = mesh_f.tri_coords(t);
            let k_loc = element_stiffness(pc);
            let m_loc = element_mass(mesh_f.tri_area(t));
            let gw = match mesh_f.label(t) {
                Region::Inner => {
                    self.weights.grad_coupled * Cplx::new(self.moments.star_area, R::zero())
                }
                Region::Outer => self.weights.grad_outer,
            };
            let tri = mesh_f.triangle(t);
            let hat: Vec<R> = tri
                .iter()
                .map(|&v| mesh_c.barycentric(element, mesh_f.vertex(v))[corner])
                .collect();
            for i in 0..3 {
                let d = map.dof_of_vertex(tri[i]).unwrap();
                if pos[d] == usize::MAX {
                    continue;
                }
                let mut acc = Cplx::<R>::zero();
                for j in 0..3 {
                    let w = gw * Cplx::new(k_loc[i][j], R::zero())
                        + wm * Cplx::new(m_loc[i][j], R::zero());
                    acc += w * Cplx::new(hat[j], R::zero());
                }
                rhs[pos[d]] += acc;
            }
        }
        for &(t, k) in &self.boundary_children[element] {
            let tri = mesh_f.triangle(t);
            let pair = [tri[k], tri[(k + 1) % 3]];
            let (a, b) = (mesh_f.vertex(pair[0]), mesh_f.vertex(pair[1]));
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let e_loc = element_edge_mass(len);
            let hat: Vec<R> =
                pair.iter().map(|&v| mesh_c.barycentric(element, mesh_f.vertex(v))[corner]).collect();
            for i in 0..2 {
                let d = map.dof_of_vertex(pair[i]).unwrap();
                if pos[d] == usize::MAX {
                    continue;
                }
                let mut acc = Cplx::<R>::zero();
                for j in 0..2 {
                    acc += self.weights.boundary
                        * Cplx::new(e_loc[i][j], R::zero())
                        * Cplx::new(hat[j], R::zero());
                }
                rhs[pos[d]] += acc;
            }
        }
        rhs
    }

    /// Element-restricted cell operator applied to the coarse hat at `corner`.
    /// For the perforated component the shared coupled-gradient weight cancels
    /// between the operator and the right-hand side, so both stay unweighted.
    #[allow(clippy::too_many_arguments)]
    fn cell_element_rhs(
        &self,
        element: usize,
        corner: usize,
        map: &DofMap<R>,
        gw: Cplx<R>,
        mw: Cplx<R>,
        pos: &[usize],
        p: usize,
    ) -> Vec<Cplx<R>> {
        let mesh_c = self.coarse.cell_mesh();
        let mesh_f = self.fine.cell_mesh();
        let mut rhs = vec![Cplx::<R>::zero(); p];
        for &t in &self.cell_children[element] {
            let pc = mesh_f.tri_coords(t);
            let k_loc = element_stiffness(pc);
            let m_loc = element_mass(mesh_f.tri_area(t));
            let tri = mesh_f.triangle(t);
            let hat: Vec<R> = tri
                .iter()
                .map(|&v| mesh_c.barycentric(element, mesh_f.vertex(v))[corner])
                .collect();
            for i in 0..3 {
                let Some(d) = map.dof_of_vertex(tri[i]) else { continue };
                if pos[d] == usize::MAX {
                    continue;
                }
                let mut acc = Cplx::<R>::zero();
                for j in 0..3 {
                    let w = gw * Cplx::new(k_loc[i][j], R::zero())
                        + mw * Cplx::new(m_loc[i][j], R::zero());
                    acc += w * Cplx::new(hat[j], R::zero());
                }
                rhs[pos[d]] += acc;
            }
        }
        rhs
    }

    fn dense_component(&self, kind: ComponentKind, entries: &[(usize, Cplx<R>)]) -> Vec<Cplx<R>> {
        let n = match kind {
            ComponentKind::Macro => self.fine.n_macro_dofs(),
            ComponentKind::CellStar => self.fine.n_cell1_dofs(),
            ComponentKind::CellInclusion => self.fine.n_cell2_dofs(),
        };
        let mut dense = vec![Cplx::<R>::zero(); n];
        for &(d, v) in entries {
            dense[d] = v;
        }
        dense
    }

    /// Positive energy-type seminorm of one component, over the triangles
    /// outside the optional mask.
    fn component_seminorm(
        &self,
        kind: ComponentKind,
        dense: &[Cplx<R>],
        exclude: Option<&[bool]>,
    ) -> R {
        let (mesh, map): (&Triangulation2D<R>, &DofMap<R>) = match kind {
            ComponentKind::Macro => (self.fine.macro_mesh(), self.fine.macro_map()),
            ComponentKind::CellStar => (self.fine.cell_mesh(), self.fine.cell1_map()),
            ComponentKind::CellInclusion => (self.fine.cell_mesh(), self.fine.cell2_map()),
        };
        let want = match kind {
            ComponentKind::Macro => None,
            ComponentKind::CellStar => Some(Region::Outer),
            ComponentKind::CellInclusion => Some(Region::Inner),
        };
        let mut total = R::zero();
        for t in 0..mesh.n_triangles() {
            if let Some(reg) = want {
                if mesh.label(t) != reg {
                    continue;
                }
            }
            if exclude.map_or(false, |mask| mask[t]) {
                continue;
            }
            let (gw, mw) = match kind {
                ComponentKind::Macro => {
                    let g = match mesh.label(t) {
                        Region::Inner => self.weights.grad_coupled.norm() * self.moments.star_area,
                        Region::Outer => self.weights.grad_outer.norm(),
                    };
                    (g, self.weights.mass.norm() * self.moments.cell_area())
                }
                ComponentKind::CellStar => (self.weights.grad_coupled.norm(), R::zero()),
                ComponentKind::CellInclusion => {
                    (self.weights.grad_incl.norm(), self.weights.mass.norm())
                }
            };
            let tri = mesh.triangle(t);
            let vals: Vec<Cplx<R>> = tri
                .iter()
                .map(|&v| map.dof_of_vertex(v).map_or(Cplx::zero(), |d| dense[d]))
                .collect();
            let k_loc = element_stiffness(mesh.tri_coords(t));
            let m_loc = element_mass(mesh.tri_area(t));
            let mut grad = R::zero();
            let mut mass = R::zero();
            for i in 0..3 {
                for j in 0..3 {
                    let prod = (vals[i].conj() * vals[j]).re;
                    grad += k_loc[i][j] * prod;
                    mass += m_loc[i][j] * prod;
                }
            }
            total += gw * grad.max(R::zero()) + mw * mass.max(R::zero());
        }
        total.sqrt()
    }

    /// Mask of fine triangles covered by the m-th order patch of an element.
    fn fine_patch_mask(&self, kind: ComponentKind, element: usize, m: usize) -> Vec<bool> {
        match kind {
            ComponentKind::Macro => {
                let p = self.coarse.macro_mesh().patch(&self.macro_inc, &[element], m, None);
                let mut mask = vec![false; self.fine.macro_mesh().n_triangles()];
                for t in collect_children(&self.children, &p.tris) {
                    mask[t] = true;
                }
                mask
            }
            ComponentKind::CellStar | ComponentKind::CellInclusion => {
                let reg = if kind == ComponentKind::CellStar { Region::Outer } else { Region::Inner };
                let p = self.coarse.cell_mesh().patch(&self.cell_inc, &[element], m, Some(reg));
                let mut mask = vec![false; self.fine.cell_mesh().n_triangles()];
                for t in collect_children(&self.cell_children, &p.tris) {
                    mask[t] = true;
                }
                mask
            }
        }
    }
}

/// Corrections for every coarse basis function. Cell corrections are stored
/// once per coarse cell basis function and serve every macro slot.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectorSet<R: Real> {
    m: Oversampling,
    macro_correctors: Vec<Corrector<R>>,
    cell1_correctors: Vec<Corrector<R>>,
    cell2_correctors: Vec<Corrector<R>>,
    solves_performed: usize,
}

impl<R: Real> CorrectorSet<R> {
    /// Solves every element corrector problem and accumulates the results per
    /// coarse basis function. Element problems run in parallel; the merge
    /// order is fixed by element index, so results do not depend on the
    /// schedule.
    pub fn build(asm: &CorrectorAssembler<R>, m: Oversampling) -> Result<Self, CorrectorError> {
        let mut solves = 0usize;

        let n_macro_elems = asm.coarse.macro_mesh().n_triangles();
        let macro_runs: Result<Vec<_>, _> = (0..n_macro_elems)
            .into_par_iter()
            .map(|t| asm.solve_element(ComponentKind::Macro, t, &[0, 1, 2], m.macro_m))
            .collect();
        let mut macro_correctors =
            new_correctors(ComponentKind::Macro, asm.coarse.n_macro_dofs());
        for (t, out) in macro_runs?.into_iter().enumerate() {
            solves += out.solves;
            let tri = asm.coarse.macro_mesh().triangle(t);
            for (corner, entries) in out.corrections {
                let dof = asm.coarse.macro_map().dof_of_vertex(tri[corner]).unwrap();
                merge_correction(&mut macro_correctors[dof], &out.patch, entries);
            }
        }

        let cell1_runs: Result<Vec<_>, _> = asm
            .star_elements
            .par_iter()
            .map(|&t| asm.solve_element(ComponentKind::CellStar, t, &[0, 1, 2], m.cell1_m))
            .collect();
        let mut cell1_correctors =
            new_correctors(ComponentKind::CellStar, asm.coarse.n_cell1_dofs());
        for (&t, out) in asm.star_elements.iter().zip(cell1_runs?) {
            solves += out.solves;
            let tri = asm.coarse.cell_mesh().triangle(t);
            for (corner, entries) in out.corrections {
                let dof = asm.coarse.cell1_map().dof_of_vertex(tri[corner]).unwrap();
                merge_correction(&mut cell1_correctors[dof], &out.patch, entries);
            }
        }

        let incl_work: Vec<(usize, Vec<usize>)> = asm
            .incl_elements
            .iter()
            .map(|&t| {
                let tri = asm.coarse.cell_mesh().triangle(t);
                let corners = (0..3)
                    .filter(|&c| asm.coarse.cell2_map().dof_of_vertex(tri[c]).is_some())
                    .collect();
                (t, corners)
            })
            .filter(|(_, c): &(usize, Vec<usize>)| !c.is_empty())
            .collect();
        let cell2_runs: Result<Vec<_>, _> = incl_work
            .par_iter()
            .map(|(t, corners)| asm.solve_element(ComponentKind::CellInclusion, *t, corners, m.cell2_m))
            .collect();
        let mut cell2_correctors =
            new_correctors(ComponentKind::CellInclusion, asm.coarse.n_cell2_dofs());
        for ((t, _), out) in incl_work.iter().zip(cell2_runs?) {
            solves += out.solves;
            let tri = asm.coarse.cell_mesh().triangle(*t);
            for (corner, entries) in out.corrections {
                let dof = asm.coarse.cell2_map().dof_of_vertex(tri[corner]).unwrap();
                merge_correction(&mut cell2_correctors[dof], &out.patch, entries);
            }
        }

        Ok(Self { m, macro_correctors, cell1_correctors, cell2_correctors, solves_performed: solves })
    }

    pub fn oversampling(&self) -> Oversampling {
        self.m
    }

    pub fn macro_correctors(&self) -> &[Corrector<R>] {
        &self.macro_correctors
    }

    pub fn cell1_correctors(&self) -> &[Corrector<R>] {
        &self.cell1_correctors
    }

    pub fn cell2_correctors(&self) -> &[Corrector<R>] {
        &self.cell2_correctors
    }

    /// Linear solves behind this set; zero when it was read from a cache.
    pub fn solves_performed(&self) -> usize {
        self.solves_performed
    }

    /// Macro corrections as columns of a sparse fine-by-coarse matrix.
    pub fn macro_matrix(&self, n_fine: usize) -> Csr<R> {
        let mut trips: Vec<Triplet<R>> = Vec::new();
        for c in &self.macro_correctors {
            for &(d, v) in &c.entries {
                trips.push((d, c.basis, v));
            }
        }
        Csr::from_triplets(n_fine, self.macro_correctors.len(), trips)
    }

    /// Expands coarse coefficients into the fine correction triple.
    pub fn apply(&self, asm: &CorrectorAssembler<R>, v: &TwoScaleFunction<R>) -> TwoScaleFunction<R> {
        assert_eq!(v.dim(), asm.coarse.dim(), "coarse coefficient vector has the wrong length");
        let mut out = TwoScaleFunction::zeros(asm.fine);
        for c in &self.macro_correctors {
            let coef = v.macro_block()[c.basis];
            if coef.is_zero() {
                continue;
            }
            let block = out.macro_block_mut();
            for &(d, q) in &c.entries {
                block[d] += coef * q;
            }
        }
        let parents = asm.interp.slot_parents();
        for fs in 0..asm.fine.n_slots() {
            let cs = parents[fs];
            for c in &self.cell1_correctors {
                let coef = v.cell1_block(cs)[c.basis];
                if coef.is_zero() {
                    continue;
                }
                let block = out.cell1_block_mut(fs);
                for &(d, q) in &c.entries {
                    block[d] += coef * q;
                }
            }
            for c in &self.cell2_correctors {
                let coef = v.cell2_block(cs)[c.basis];
                if coef.is_zero() {
                    continue;
                }
                let block = out.cell2_block_mut(fs);
                for &(d, q) in &c.entries {
                    block[d] += coef * q;
                }
            }
        }
        out
    }

    /// Adjoint of [`CorrectorSet::apply`]: pairs a fine triple against every
    /// correction, giving the coarse vector of values `correction(I)^H w`.
    pub fn apply_adjoint(
        &self,
        asm: &CorrectorAssembler<R>,
        w: &TwoScaleFunction<R>,
    ) -> TwoScaleFunction<R> {
        assert_eq!(w.dim(), asm.fine.dim(), "fine vector has the wrong length");
        let mut out = TwoScaleFunction::zeros(asm.coarse);
        for c in &self.macro_correctors {
            let mut acc = Cplx::<R>::zero();
            for &(d, q) in &c.entries {
                acc += q.conj() * w.macro_block()[d];
            }
            out.macro_block_mut()[c.basis] = acc;
        }
        let parents = asm.interp.slot_parents();
        for fs in 0..asm.fine.n_slots() {
            let sc = parents[fs];
            for c in &self.cell1_correctors {
                let mut acc = Cplx::<R>::zero();
                let block = w.cell1_block(fs);
                for &(d, q) in &c.entries {
                    acc += q.conj() * block[d];
                }
                out.cell1_block_mut(sc)[c.basis] += acc;
            }
            for c in &self.cell2_correctors {
                let mut acc = Cplx::<R>::zero();
                let block = w.cell2_block(fs);
                for &(d, q) in &c.entries {
                    acc += q.conj() * block[d];
                }
                out.cell2_block_mut(sc)[c.basis] += acc;
            }
        }
        out
    }

    /// Writes the set to a plain-text cache file under a caller-chosen tag,
    /// typically a hash of everything the corrections depend on.
    pub fn save_text(&self, path: &Path, tag: &str) -> std::io::Result<()> {
        let mut s = String::new();
        writeln!(s, "two-scale correctors").unwrap();
        writeln!(s, "tag {tag}").unwrap();
        writeln!(s, "oversampling {} {} {}", self.m.macro_m, self.m.cell1_m, self.m.cell2_m).unwrap();
        writeln!(
            s,
            "counts {} {} {}",
            self.macro_correctors.len(),
            self.cell1_correctors.len(),
            self.cell2_correctors.len()
        )
        .unwrap();
        for group in [&self.macro_correctors, &self.cell1_correctors, &self.cell2_correctors] {
            for c in group {
                writeln!(s, "corrector {} {} {} {}", c.kind.word(), c.basis, c.patch.len(), c.entries.len())
                    .unwrap();
                write!(s, "patch").unwrap();
                for &t in &c.patch {
                    write!(s, " {t}").unwrap();
                }
                s.push('\n');
                for &(d, v) in &c.entries {
                    writeln!(s, "{} {} {}", d, v.re, v.im).unwrap();
                }
            }
        }
        std::fs::write(path, s)
    }

    /// Reads a cached set and its tag. The caller is responsible for checking
    /// the tag against the current configuration; a loaded set reports zero
    /// solves.
    pub fn load_text(path: &Path) -> Result<(String, Self), CorrectorError> {
        let text = std::fs::read_to_string(path)?;
        let bad = |msg: &str| CorrectorError::Cache(format!("{}: {msg}", path.display()));
        let mut lines = text.lines();
        if lines.next() != Some("two-scale correctors") {
            return Err(bad("missing header"));
        }
        let tag = lines
            .next()
            .and_then(|l| l.strip_prefix("tag "))
            .ok_or_else(|| bad("missing tag"))?
            .to_string();
        let m = parse_fields::<usize>(lines.next(), "oversampling", 3).map_err(|e| bad(&e))?;
        let m = Oversampling { macro_m: m[0], cell1_m: m[1], cell2_m: m[2] };
        let counts = parse_fields::<usize>(lines.next(), "counts", 3).map_err(|e| bad(&e))?;
        let mut groups: [Vec<Corrector<R>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (g, &count) in counts.iter().enumerate() {
            let want_kind = match g {
                0 => ComponentKind::Macro,
                1 => ComponentKind::CellStar,
                _ => ComponentKind::CellInclusion,
            };
            for basis in 0..count {
                let head = lines.next().ok_or_else(|| bad("truncated corrector header"))?;
                let mut f = head.split_whitespace();
                if f.next() != Some("corrector") {
                    return Err(bad("expected a corrector header"));
                }
                let kind = f
                    .next()
                    .and_then(ComponentKind::from_word)
                    .ok_or_else(|| bad("unknown component kind"))?;
                let idx: usize =
                    f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad basis index"))?;
                let np: usize =
                    f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad patch length"))?;
                let ne: usize =
                    f.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad entry count"))?;
                if kind != want_kind || idx != basis {
                    return Err(bad("correctors out of order"));
                }
                let pline = lines.next().ok_or_else(|| bad("missing patch line"))?;
                let mut pf = pline.split_whitespace();
                if pf.next() != Some("patch") {
                    return Err(bad("expected a patch line"));
                }
                let patch: Vec<usize> =
                    pf.map(|x| x.parse()).collect::<Result<_, _>>().map_err(|_| bad("bad patch id"))?;
                if patch.len() != np {
                    return Err(bad("patch length mismatch"));
                }
                let mut entries = Vec::with_capacity(ne);
                for _ in 0..ne {
                    let line = lines.next().ok_or_else(|| bad("truncated entries"))?;
                    let mut ef = line.split_whitespace();
                    let d: usize =
                        ef.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad dof"))?;
                    let re: f64 =
                        ef.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad value"))?;
                    let im: f64 =
                        ef.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad("bad value"))?;
                    entries.push((d, Cplx::new(r::<R>(re), r::<R>(im))));
                }
                groups[g].push(Corrector { kind, basis, patch, entries });
            }
        }
        let [macro_correctors, cell1_correctors, cell2_correctors] = groups;
        Ok((tag, Self { m, macro_correctors, cell1_correctors, cell2_correctors, solves_performed: 0 }))
    }
}

/// Left side of the patch resolution condition divided by its right side;
/// values above one mean the meshes underresolve the wave number. Uses the
/// measured interpolation and overlap constants.
#[allow(clippy::too_many_arguments)]
pub fn resolution_slack<R: Real>(
    fine: &TwoScaleSpace<R>,
    coarse: &TwoScaleSpace<R>,
    interp: &QuasiInterpolator<R>,
    embed: &Embedding<R>,
    params: &ProblemParams<R>,
    m: Oversampling,
    samples: usize,
    seed: u64,
) -> R {
    let ci = measured_kernel_constant(fine, coarse, interp, embed, samples, seed);
    let inc_g = coarse.macro_mesh().vertex_incidence();
    let inc_y = coarse.cell_mesh().vertex_incidence();
    let ol_g = coarse.macro_mesh().overlap_constant(&inc_g, m.macro_m, None);
    let ol_y = coarse.cell_mesh().overlap_constant(&inc_y, m.cell1_m.max(m.cell2_m), None);
    let h_macro = coarse.macro_mesh().mesh_size();
    let h_cell = coarse.cell_mesh().mesh_size();
    let lhs = params.k
        * ci
        * (r::<R>(ol_g as f64).sqrt() * h_macro + r::<R>(ol_y as f64).sqrt() * h_cell);
    let floor = params.coercivity_floor() / r::<R>(2.0);
    lhs / floor.sqrt()
}

struct PatchSolver<R: Real> {
    op: Csr<R>,
    con: Csr<R>,
    kkt: Csr<R>,
    lu: Option<SparseLu<R>>,
    p: usize,
}

fn assemble_kkt<R: Real>(op: &Csr<R>, con: &Csr<R>) -> Csr<R> {
    let p = op.nrows();
    let dim = p + con.nrows();
    let mut trips: Vec<Triplet<R>> = Vec::new();
    for i in 0..p {
        let (cols, vals) = op.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            trips.push((i, j, v));
        }
    }
    for i in 0..con.nrows() {
        let (cols, vals) = con.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            trips.push((p + i, j, v));
            trips.push((j, p + i, v));
        }
    }
    Csr::from_triplets(dim, dim, trips)
}

impl<R: Real> PatchSolver<R> {
    fn new(op: Csr<R>, con: Csr<R>, guard: usize) -> Result<Self, CorrectorError> {
        let p = op.nrows();
        let dim = p + con.nrows();
        if dim > guard {
            return Err(CorrectorError::TooLarge { dim, max: guard });
        }
        let kkt = assemble_kkt(&op, &con);
        Ok(Self { op, con, kkt, lu: None, p })
    }

    /// Solves the plain saddle-point system and conjugates the primal part,
    /// yielding the test-side correction. The factorization is created on the
    /// first nonzero right-hand side and shared afterwards; the returned flag
    /// reports whether a solve actually ran.
    fn solve(&mut self, rhs: &[Cplx<R>]) -> Result<(Vec<Cplx<R>>, bool), CorrectorError> {
        debug_assert_eq!(rhs.len(), self.p);
        let bnorm = vec_norm(rhs);
        if bnorm.is_zero() {
            return Ok((vec![Cplx::zero(); self.p], false));
        }
        if self.lu.is_none() {
            match SparseLu::factor(&self.kkt) {
                Ok(lu) => self.lu = Some(lu),
                Err(SparseError::SingularPivot { .. }) => {
                    // a tiny patch can restrict distinct interpolation rows
                    // onto the same few dofs; drop the dependent rows, which
                    // keeps the constrained space, and factor again
                    self.con = independent_rows(&self.con, r::<R>(1e-10));
                    self.kkt = assemble_kkt(&self.op, &self.con);
                    self.lu = Some(SparseLu::factor(&self.kkt)?);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let lu = self.lu.as_ref().unwrap();
        let n = self.kkt.nrows();
        let mut b = rhs.to_vec();
        b.resize(n, Cplx::zero());
        let mut x = lu.solve(&b);
        let required = r::<R>(SOLVE_TOL);
        for _ in 0..3 {
            let ax = self.kkt.apply(&x);
            let mut rn = R::zero();
            let mut res = b.clone();
            for (ri, ai) in res.iter_mut().zip(&ax) {
                *ri -= *ai;
                rn += ri.norm_sqr();
            }
            if rn.sqrt() <= required * bnorm {
                return Ok((x[..self.p].iter().map(|v| v.conj()).collect(), true));
            }
            let dx = lu.solve(&res);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += *di;
            }
        }
        let ax = self.kkt.apply(&x);
        let mut rn = R::zero();
        for (bi, ai) in b.iter().zip(&ax) {
            rn += (*bi - *ai).norm_sqr();
        }
        let rel = rn.sqrt() / bnorm;
        if rel <= required {
            Ok((x[..self.p].iter().map(|v| v.conj()).collect(), true))
        } else {
            Err(CorrectorError::Solve(SparseError::ResidualTooLarge {
                achieved: rel.to_f64().unwrap_or(f64::NAN),
                required: SOLVE_TOL,
            }))
        }
    }
}

fn child_lists<R: Real>(fine: &Triangulation2D<R>, n_coarse: usize) -> Option<Vec<Vec<usize>>> {
    let parents = fine.parents()?;
    if parents.len() != fine.n_triangles() {
        return None;
    }
    let mut lists = vec![Vec::new(); n_coarse];
    for (t, &p) in parents.iter().enumerate() {
        if p >= n_coarse {
            return None;
        }
        lists[p].push(t);
    }
    Some(lists)
}

fn collect_children(children: &[Vec<usize>], coarse_tris: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = coarse_tris.iter().flat_map(|&t| children[t].iter().copied()).collect();
    out.sort_unstable();
    out
}

fn edge_key_planar<R: Real>(mesh: &Triangulation2D<R>, t: usize, e: usize) -> (usize, usize) {
    let tri = mesh.triangle(t);
    let (a, b) = (tri[e], tri[(e + 1) % 3]);
    (a.min(b), a.max(b))
}

fn edge_key_class<R: Real>(mesh: &Triangulation2D<R>, t: usize, e: usize) -> (usize, usize) {
    let tri = mesh.triangle(t);
    let (a, b) = (mesh.vertex_class(tri[e]), mesh.vertex_class(tri[(e + 1) % 3]));
    (a.min(b), a.max(b))
}

/// Per-dof lists of (element, corner) incidences for one coarse component.
fn support_list<R: Real>(
    mesh: &Triangulation2D<R>,
    map: &DofMap<R>,
    region: Option<Region>,
) -> Vec<Vec<(usize, usize)>> {
    let mut support = vec![Vec::new(); map.n_dofs()];
    for t in 0..mesh.n_triangles() {
        if let Some(reg) = region {
            if mesh.label(t) != reg {
                continue;
            }
        }
        for (corner, &v) in mesh.triangle(t).iter().enumerate() {
            if let Some(d) = map.dof_of_vertex(v) {
                support[d].push((t, corner));
            }
        }
    }
    support
}

/// Keeps a maximal independent subset of the rows, in order, dropping rows
/// within `tol` of the span of the rows above them.
fn independent_rows<R: Real>(con: &Csr<R>, tol: R) -> Csr<R> {
    let ncols = con.ncols();
    let mut basis: Vec<Vec<Cplx<R>>> = Vec::new();
    let mut trips: Vec<Triplet<R>> = Vec::new();
    let mut kept = 0;
    for i in 0..con.nrows() {
        let (cols, vals) = con.row(i);
        let mut dense = vec![Cplx::<R>::zero(); ncols];
        for (&j, &v) in cols.iter().zip(vals) {
            dense[j] = v;
        }
        let scale = vec_norm(&dense);
        if scale.is_zero() {
            continue;
        }
        for b in &basis {
            let coef = crate::sparse::vec_dot(b, &dense);
            for (d, bv) in dense.iter_mut().zip(b) {
                *d -= coef * bv;
            }
        }
        let rest = vec_norm(&dense);
        if rest <= tol * scale {
            continue;
        }
        let inv = Cplx::new(R::one() / rest, R::zero());
        for d in &mut dense {
            *d *= inv;
        }
        basis.push(dense);
        for (&j, &v) in cols.iter().zip(vals) {
            trips.push((kept, j, v));
        }
        kept += 1;
    }
    Csr::from_triplets(kept, ncols, trips)
}

/// Appends the fine zero-mean functional, restricted to the kept dofs, as one
/// more constraint row.
fn append_mean_row<R: Real>(con: &Csr<R>, weights: &[R], keep: &[usize]) -> Csr<R> {
    let nc = con.nrows();
    let mut trips: Vec<Triplet<R>> = Vec::new();
    for i in 0..nc {
        let (cols, vals) = con.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            trips.push((i, j, v));
        }
    }
    for (p, &d) in keep.iter().enumerate() {
        if !weights[d].is_zero() {
            trips.push((nc, p, Cplx::new(weights[d], R::zero())));
        }
    }
    Csr::from_triplets(nc + 1, con.ncols(), trips)
}

fn new_correctors<R: Real>(kind: ComponentKind, n: usize) -> Vec<Corrector<R>> {
    (0..n).map(|basis| Corrector { kind, basis, patch: Vec::new(), entries: Vec::new() }).collect()
}

fn merge_correction<R: Real>(
    into: &mut Corrector<R>,
    patch: &[usize],
    entries: Vec<(usize, Cplx<R>)>,
) {
    let mut acc: BTreeMap<usize, Cplx<R>> = into.entries.iter().copied().collect();
    for (d, v) in entries {
        *acc.entry(d).or_insert_with(Cplx::zero) += v;
    }
    into.entries = acc.into_iter().filter(|(_, v)| !v.is_zero()).collect();
    let mut tris: BTreeSet<usize> = into.patch.iter().copied().collect();
    tris.extend(patch.iter().copied());
    into.patch = tris.into_iter().collect();
}

fn parse_fields<T: std::str::FromStr>(
    line: Option<&str>,
    prefix: &str,
    n: usize,
) -> Result<Vec<T>, String> {
    let line = line.ok_or_else(|| format!("missing {prefix} line"))?;
    let rest = line.strip_prefix(prefix).ok_or_else(|| format!("expected {prefix} line"))?;
    let vals: Vec<T> = rest
        .split_whitespace()
        .map(|x| x.parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| format!("bad {prefix} values"))?;
    if vals.len() == n {
        Ok(vals)
    } else {
        Err(format!("{prefix} expects {n} values"))
    }
}
