//! The coupled triple space and the sesquilinear form of the transmission
//! problem.
//!
//! A two-scale function is a triple `(u0, u1, u2)`: a P1 field `u0` on the
//! macro mesh of `G`, and for every macro triangle inside the oscillation
//! subdomain (an "x-slot") one P1 profile `u1` on the perforated cell region
//! `Y*` (periodic, zero mean) and one profile `u2` on the inclusion `D` (zero
//! trace). Coefficients are stored flat: the macro block first, then per slot
//! the `Y*` and `D` blocks.
//!
//! The form combines five terms, each carrying its own complex weight in
//! [`FormWeights`]: the coupled gradient on `Omega x Y*`, the plain gradient
//! outside the oscillation subdomain, the inclusion gradient on `Omega x D`,
//! the coupled mass on `G x Y` pairing `u0 + u2` against the test macro and
//! inclusion parts, and the Robin boundary mass on the macro boundary. The
//! Helmholtz weights are `(1/eps_e, 1, 1/eps_i, -k^2, -ik)`; reusing the same
//! evaluator with positive weights yields the energy and gradient Gram forms,
//! so every norm in this crate is literally a weight choice.
//!
//! [`eval_form`] integrates element by element against explicit cell moments
//! and an optional macro-triangle mask, which makes restriction to patch
//! products exact: [`eval_form_localized`] is the same loop fed with masked
//! moments and mask.

use crate::fem::{
    assemble_mass, assemble_stiffness, element_gradients, element_mass, gauss_segment_4, DofMap,
    SpaceKind,
};
use crate::mesh::{Region, Triangulation2D};
use crate::scalar::{r, Cplx, Real};
use crate::sparse::Csr;
use num_traits::Zero;

/// Errors from parameter and space validation.
#[derive(Debug, thiserror::Error)]
pub enum TwoScaleError {
    #[error("wave number must be positive, got {0}")]
    NonPositiveWaveNumber(f64),
    #[error("exterior permittivity must be positive, got {0}")]
    NonPositiveEpsE(f64),
    #[error("inclusion permittivity must have a positive real part, got {re}{im:+}i")]
    BadEpsI { re: f64, im: f64 },
    #[error("boundary quadrature needs at least one sub-segment per edge")]
    NoQuadSplits,
    #[error("the cell mesh must carry a periodic identification")]
    CellMeshNotPeriodic,
    #[error("the cell mesh has no inclusion triangles")]
    NoInclusion,
    #[error("the macro mesh must not be periodic")]
    MacroMeshPeriodic,
}

fn to_f64<R: Real>(x: R) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

/// Boundary datum of the Robin condition on the macro boundary.
#[derive(Clone, Copy, Debug)]
pub enum BoundaryDatum<R: Real> {
    /// Constant right-hand side.
    Constant(Cplx<R>),
    /// Incoming plane wave along `direction`: the datum of a wave that solves
    /// the constant-coefficient equation exactly, `ik (d.n - 1) e^{ik d.x}`.
    PlaneWave { direction: [R; 2] },
}

impl<R: Real> BoundaryDatum<R> {
    /// Evaluates the datum at a boundary point with outward unit normal `n`.
    pub fn eval(&self, k: R, x: [R; 2], n: [R; 2]) -> Cplx<R> {
        match *self {
            BoundaryDatum::Constant(v) => v,
            BoundaryDatum::PlaneWave { direction: d } => {
                let phase = Cplx::new(R::zero(), k * (d[0] * x[0] + d[1] * x[1])).exp();
                let dn = d[0] * n[0] + d[1] * n[1];
                Cplx::new(R::zero(), k * (dn - R::one())) * phase
            }
        }
    }
}

/// Physical and discretization parameters of one problem instance.
#[derive(Clone, Copy, Debug)]
pub struct ProblemParams<R: Real> {
    /// Wave number `k > 0`.
    pub k: R,
    /// Permittivity outside the inclusions, real and positive.
    pub eps_e: R,
    /// Inclusion permittivity; its inverse must have a positive real part.
    pub eps_i: Cplx<R>,
    /// Robin boundary datum.
    pub boundary: BoundaryDatum<R>,
    /// Sub-segments per boundary edge for the load quadrature (a composite
    /// 4-point Gauss rule per sub-segment).
    pub quad_splits: usize,
}

impl<R: Real> ProblemParams<R> {
    /// Plane-wave scattering with unit permittivities and default quadrature.
    pub fn plane_wave(k: R) -> Self {
        Self {
            k,
            eps_e: R::one(),
            eps_i: Cplx::new(R::one(), R::zero()),
            boundary: BoundaryDatum::PlaneWave { direction: [R::one(), R::zero()] },
            quad_splits: 3,
        }
    }

    pub fn validate(&self) -> Result<(), TwoScaleError> {
        if !(self.k > R::zero()) {
            return Err(TwoScaleError::NonPositiveWaveNumber(to_f64(self.k)));
        }
        if !(self.eps_e > R::zero()) {
            return Err(TwoScaleError::NonPositiveEpsE(to_f64(self.eps_e)));
        }
        if !(self.eps_i.re > R::zero()) || self.eps_i.is_zero() {
            return Err(TwoScaleError::BadEpsI {
                re: to_f64(self.eps_i.re),
                im: to_f64(self.eps_i.im),
            });
        }
        if self.quad_splits == 0 {
            return Err(TwoScaleError::NoQuadSplits);
        }
        Ok(())
    }

    /// Smallest real-part weight among the gradient terms; the constant in the
    /// shifted-coercivity bound of the form.
    pub fn coercivity_floor(&self) -> R {
        let inv_e = R::one() / self.eps_e;
        let inv_i_re = (Cplx::new(R::one(), R::zero()) / self.eps_i).re;
        inv_e.min(R::one()).min(inv_i_re)
    }

    /// Upper envelope for the continuity constant of the form in the energy
    /// norm.
    pub fn continuity_bound(&self) -> R {
        let inv_e = R::one() / self.eps_e;
        let inv_i = (Cplx::new(R::one(), R::zero()) / self.eps_i).norm();
        inv_e.max(R::one()).max(inv_i) + r(2.0)
    }
}

/// Complex weights of the five form terms.
#[derive(Clone, Copy, Debug)]
pub struct FormWeights<R: Real> {
    /// Coupled gradient `(grad u0 + grad_y u1) . (grad v0 + grad_y v1)` on
    /// `Omega x Y*`.
    pub grad_coupled: Cplx<R>,
    /// Plain gradient on the macro triangles outside the oscillation
    /// subdomain.
    pub grad_outer: Cplx<R>,
    /// Inclusion gradient `grad_y u2 . grad_y v2` on `Omega x D`.
    pub grad_incl: Cplx<R>,
    /// Coupled mass `(u0 + u2)(v0 + v2)` on `G x Y` (`u2` extended by zero
    /// outside the inclusion).
    pub mass: Cplx<R>,
    /// Boundary mass on the macro boundary.
    pub boundary: Cplx<R>,
}

impl<R: Real> FormWeights<R> {
    /// The Helmholtz transmission form.
    pub fn helmholtz(p: &ProblemParams<R>) -> Self {
        let one = Cplx::new(R::one(), R::zero());
        Self {
            grad_coupled: one / Cplx::new(p.eps_e, R::zero()),
            grad_outer: one,
            grad_incl: one / p.eps_i,
            mass: Cplx::new(-(p.k * p.k), R::zero()),
            boundary: Cplx::new(R::zero(), -p.k),
        }
    }

    /// Gram form of the energy norm: all gradient terms with weight one and
    /// the coupled mass with weight `+k^2`.
    pub fn energy(k: R) -> Self {
        let one = Cplx::new(R::one(), R::zero());
        Self {
            grad_coupled: one,
            grad_outer: one,
            grad_incl: one,
            mass: Cplx::new(k * k, R::zero()),
            boundary: Cplx::zero(),
        }
    }

    /// Gram form of the gradient seminorm (the energy form without mass).
    pub fn gradient() -> Self {
        let one = Cplx::new(R::one(), R::zero());
        Self {
            grad_coupled: one,
            grad_outer: one,
            grad_incl: one,
            mass: Cplx::zero(),
            boundary: Cplx::zero(),
        }
    }
}

/// The coupled triple space on a macro/cell mesh pair.
#[derive(Clone, Debug)]
pub struct TwoScaleSpace<R: Real> {
    macro_mesh: Triangulation2D<R>,
    cell_mesh: Triangulation2D<R>,
    macro_map: DofMap<R>,
    cell1_map: DofMap<R>,
    cell2_map: DofMap<R>,
    /// macro triangles carrying cell profiles, ascending
    x_partition: Vec<usize>,
    /// macro triangle -> slot index, `usize::MAX` outside
    slot_of_tri: Vec<usize>,
    star_tris: Vec<usize>,
    incl_tris: Vec<usize>,
    boundary_edges: Vec<(usize, usize)>,
}

impl<R: Real> TwoScaleSpace<R> {
    /// Builds the triple space. The macro mesh must be planar, the cell mesh
    /// periodic with a nonempty inclusion.
    pub fn build(
        macro_mesh: Triangulation2D<R>,
        cell_mesh: Triangulation2D<R>,
    ) -> Result<Self, TwoScaleError> {
        if macro_mesh.periodic_map().is_some() {
            return Err(TwoScaleError::MacroMeshPeriodic);
        }
        if cell_mesh.periodic_map().is_none() {
            return Err(TwoScaleError::CellMeshNotPeriodic);
        }
        let incl_tris = cell_mesh.labeled_triangles(Region::Inner);
        if incl_tris.is_empty() {
            return Err(TwoScaleError::NoInclusion);
        }
        let star_tris = cell_mesh.labeled_triangles(Region::Outer);
        let macro_map = DofMap::build(&macro_mesh, SpaceKind::Free);
        let cell1_map = DofMap::build(&cell_mesh, SpaceKind::PeriodicZeroMean);
        let cell2_map = DofMap::build(&cell_mesh, SpaceKind::ZeroTraceInner);
        let x_partition = macro_mesh.labeled_triangles(Region::Inner);
        let mut slot_of_tri = vec![usize::MAX; macro_mesh.n_triangles()];
        for (s, &t) in x_partition.iter().enumerate() {
            slot_of_tri[t] = s;
        }
        let boundary_edges = macro_mesh.boundary_edges();
        Ok(Self {
            macro_mesh,
            cell_mesh,
            macro_map,
            cell1_map,
            cell2_map,
            x_partition,
            slot_of_tri,
            star_tris,
            incl_tris,
            boundary_edges,
        })
    }

    pub fn macro_mesh(&self) -> &Triangulation2D<R> {
        &self.macro_mesh
    }

    pub fn cell_mesh(&self) -> &Triangulation2D<R> {
        &self.cell_mesh
    }

    pub fn macro_map(&self) -> &DofMap<R> {
        &self.macro_map
    }

    pub fn cell1_map(&self) -> &DofMap<R> {
        &self.cell1_map
    }

    pub fn cell2_map(&self) -> &DofMap<R> {
        &self.cell2_map
    }

    /// Macro triangles that carry cell profiles, ascending.
    pub fn x_partition(&self) -> &[usize] {
        &self.x_partition
    }

    /// Slot index of a macro triangle inside the oscillation subdomain.
    pub fn slot_of(&self, t: usize) -> Option<usize> {
        match self.slot_of_tri[t] {
            usize::MAX => None,
            s => Some(s),
        }
    }

    pub fn n_slots(&self) -> usize {
        self.x_partition.len()
    }

    pub fn n_macro_dofs(&self) -> usize {
        self.macro_map.n_dofs()
    }

    pub fn n_cell1_dofs(&self) -> usize {
        self.cell1_map.n_dofs()
    }

    pub fn n_cell2_dofs(&self) -> usize {
        self.cell2_map.n_dofs()
    }

    /// Perforated-region triangles of the cell mesh.
    pub fn star_tris(&self) -> &[usize] {
        &self.star_tris
    }

    /// Inclusion triangles of the cell mesh.
    pub fn incl_tris(&self) -> &[usize] {
        &self.incl_tris
    }

    /// Macro boundary edges as `(triangle, local edge)`.
    pub fn boundary_edges(&self) -> &[(usize, usize)] {
        &self.boundary_edges
    }

    /// Total number of stored coefficients.
    pub fn dim(&self) -> usize {
        self.n_macro_dofs() + self.n_slots() * (self.n_cell1_dofs() + self.n_cell2_dofs())
    }
}

/// Coefficient triple stored flat: macro block, then `(Y*, D)` blocks per slot.
#[derive(Clone, Debug)]
pub struct TwoScaleFunction<R: Real> {
    n_macro: usize,
    n_cell1: usize,
    n_cell2: usize,
    n_slots: usize,
    data: Vec<Cplx<R>>,
}

impl<R: Real> TwoScaleFunction<R> {
    pub fn zeros(space: &TwoScaleSpace<R>) -> Self {
        Self {
            n_macro: space.n_macro_dofs(),
            n_cell1: space.n_cell1_dofs(),
            n_cell2: space.n_cell2_dofs(),
            n_slots: space.n_slots(),
            data: vec![Cplx::zero(); space.dim()],
        }
    }

    /// Zero function over explicit block dimensions (for operators that map
    /// between two spaces and carry the target dimensions themselves).
    pub(crate) fn from_dims(n_macro: usize, n_cell1: usize, n_cell2: usize, n_slots: usize) -> Self {
        Self {
            n_macro,
            n_cell1,
            n_cell2,
            n_slots,
            data: vec![Cplx::zero(); n_macro + n_slots * (n_cell1 + n_cell2)],
        }
    }

    /// Wraps an existing flat coefficient vector.
    pub fn from_vec(space: &TwoScaleSpace<R>, data: Vec<Cplx<R>>) -> Self {
        assert_eq!(data.len(), space.dim());
        Self {
            n_macro: space.n_macro_dofs(),
            n_cell1: space.n_cell1_dofs(),
            n_cell2: space.n_cell2_dofs(),
            n_slots: space.n_slots(),
            data,
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[Cplx<R>] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Cplx<R>] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Cplx<R>> {
        self.data
    }

    pub fn macro_block(&self) -> &[Cplx<R>] {
        &self.data[..self.n_macro]
    }

    pub fn macro_block_mut(&mut self) -> &mut [Cplx<R>] {
        &mut self.data[..self.n_macro]
    }

    /// Flat index range of the `Y*` block of a slot.
    pub fn cell1_range(&self, slot: usize) -> std::ops::Range<usize> {
        assert!(slot < self.n_slots);
        let off = self.n_macro + slot * (self.n_cell1 + self.n_cell2);
        off..off + self.n_cell1
    }

    /// Flat index range of the `D` block of a slot.
    pub fn cell2_range(&self, slot: usize) -> std::ops::Range<usize> {
        assert!(slot < self.n_slots);
        let off = self.n_macro + slot * (self.n_cell1 + self.n_cell2) + self.n_cell1;
        off..off + self.n_cell2
    }

    pub fn cell1_block(&self, slot: usize) -> &[Cplx<R>] {
        &self.data[self.cell1_range(slot)]
    }

    pub fn cell2_block(&self, slot: usize) -> &[Cplx<R>] {
        &self.data[self.cell2_range(slot)]
    }

    pub fn cell1_block_mut(&mut self, slot: usize) -> &mut [Cplx<R>] {
        let range = self.cell1_range(slot);
        &mut self.data[range]
    }

    pub fn cell2_block_mut(&mut self, slot: usize) -> &mut [Cplx<R>] {
        let range = self.cell2_range(slot);
        &mut self.data[range]
    }
}

/// Integrated cell-mesh quantities entering the form: stiffness and mass
/// blocks, basis-function gradient and volume integrals, and region areas.
/// Masked variants integrate over triangle subsets only.
#[derive(Clone, Debug)]
pub struct CellMoments<R: Real> {
    /// `Y*` stiffness on the periodic zero-mean space.
    pub k1: Csr<R>,
    /// Zero-mean constraint weights (full-region basis integrals; not masked).
    pub c: Vec<R>,
    /// Per `Y*` dof: integral of its basis gradient over the region.
    pub g1: Vec<[R; 2]>,
    /// Area of the integrated `Y*` part.
    pub star_area: R,
    /// Inclusion stiffness on the zero-trace space.
    pub k2: Csr<R>,
    /// Inclusion mass.
    pub m2: Csr<R>,
    /// Per inclusion dof: integral of its basis function.
    pub b2: Vec<R>,
    /// Area of the integrated inclusion part.
    pub incl_area: R,
}

impl<R: Real> CellMoments<R> {
    /// Moments over the full cell mesh.
    pub fn full(space: &TwoScaleSpace<R>) -> Self {
        Self::masked(space, space.star_tris(), space.incl_tris())
    }

    /// Moments over explicit `Y*` and inclusion triangle subsets.
    pub fn masked(space: &TwoScaleSpace<R>, star_tris: &[usize], incl_tris: &[usize]) -> Self {
        let mesh = space.cell_mesh();
        let map1 = space.cell1_map();
        let map2 = space.cell2_map();
        debug_assert!(star_tris.iter().all(|&t| mesh.label(t) == Region::Outer));
        debug_assert!(incl_tris.iter().all(|&t| mesh.label(t) == Region::Inner));
        let k1 = assemble_stiffness(mesh, map1, star_tris);
        let k2 = assemble_stiffness(mesh, map2, incl_tris);
        let m2 = assemble_mass(mesh, map2, incl_tris);
        let mut g1 = vec![[R::zero(); 2]; map1.n_dofs()];
        let mut star_area = R::zero();
        for &t in star_tris {
            let (grads, area) = element_gradients(mesh.tri_coords(t));
            star_area += area;
            for (k, &v) in mesh.triangle(t).iter().enumerate() {
                if let Some(d) = map1.dof_of_vertex(v) {
                    g1[d][0] += area * grads[k][0];
                    g1[d][1] += area * grads[k][1];
                }
            }
        }
        let third = R::one() / r(3.0);
        let mut b2 = vec![R::zero(); map2.n_dofs()];
        let mut incl_area = R::zero();
        for &t in incl_tris {
            let area = mesh.tri_area(t);
            incl_area += area;
            for &v in &mesh.triangle(t) {
                if let Some(d) = map2.dof_of_vertex(v) {
                    b2[d] += area * third;
                }
            }
        }
        let c = map1.integral_weights().to_vec();
        Self { k1, c, g1, star_area, k2, m2, b2, incl_area }
    }

    /// Area of the integrated cell part, `|Y*| + |D|` when unmasked.
    pub fn cell_area(&self) -> R {
        self.star_area + self.incl_area
    }
}

fn quad_form<R: Real>(m: &Csr<R>, u: &[Cplx<R>], v: &[Cplx<R>]) -> Cplx<R> {
    let mut acc = Cplx::<R>::zero();
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        let mut row = Cplx::<R>::zero();
        for (&j, &a) in cols.iter().zip(vals) {
            row += a * u[j];
        }
        acc += v[i].conj() * row;
    }
    acc
}

fn dot_conj2<R: Real>(a: [Cplx<R>; 2], b: [Cplx<R>; 2]) -> Cplx<R> {
    a[0] * b[0].conj() + a[1] * b[1].conj()
}

/// Evaluates the weighted form on a trial/test pair, conjugate-linear in the
/// test function. `macro_mask` restricts the macro integration (and, through
/// the slots, the x-side of the cell terms); the y-side restriction enters
/// through masked `moments`. The boundary term is included per edge when its
/// triangle passes the mask.
pub fn eval_form<R: Real>(
    space: &TwoScaleSpace<R>,
    weights: &FormWeights<R>,
    moments: &CellMoments<R>,
    macro_mask: Option<&[bool]>,
    include_boundary: bool,
    u: &TwoScaleFunction<R>,
    v: &TwoScaleFunction<R>,
) -> Cplx<R> {
    let mesh = space.macro_mesh();
    let map = space.macro_map();
    let mut acc = Cplx::<R>::zero();
    let third = R::one() / r(3.0);
    let cell_area = moments.cell_area();
    for t in 0..mesh.n_triangles() {
        if let Some(mask) = macro_mask {
            if !mask[t] {
                continue;
            }
        }
        let tri = mesh.triangle(t);
        let (grads, area) = element_gradients(mesh.tri_coords(t));
        let dof =
            |k: usize| map.dof_of_vertex(tri[k]).expect("macro vertices all carry dofs");
        let mut gu = [Cplx::<R>::zero(); 2];
        let mut gv = [Cplx::<R>::zero(); 2];
        let mut int_u0 = Cplx::<R>::zero();
        let mut int_v0 = Cplx::<R>::zero();
        for k in 0..3 {
            let (cu, cv) = (u.macro_block()[dof(k)], v.macro_block()[dof(k)]);
            for d in 0..2 {
                gu[d] += cu * Cplx::new(grads[k][d], R::zero());
                gv[d] += cv * Cplx::new(grads[k][d], R::zero());
            }
            int_u0 += cu;
            int_v0 += cv;
        }
        int_u0 *= Cplx::new(area * third, R::zero());
        int_v0 *= Cplx::new(area * third, R::zero());
        // macro-macro mass via the exact element matrix
        let mel = element_mass(area);
        let mut m_uv = Cplx::<R>::zero();
        for i in 0..3 {
            for j in 0..3 {
                m_uv += v.macro_block()[dof(i)].conj()
                    * u.macro_block()[dof(j)]
                    * Cplx::new(mel[i][j], R::zero());
            }
        }
        let area_c = Cplx::new(area, R::zero());
        match space.slot_of(t) {
            None => {
                acc += weights.grad_outer * area_c * dot_conj2(gu, gv);
                acc += weights.mass * Cplx::new(cell_area, R::zero()) * m_uv;
            }
            Some(s) => {
                let u1 = u.cell1_block(s);
                let v1 = v.cell1_block(s);
                let u2 = u.cell2_block(s);
                let v2 = v.cell2_block(s);
                // y-integrated profile gradients
                let mut gy_u = [Cplx::<R>::zero(); 2];
                let mut gy_v = [Cplx::<R>::zero(); 2];
                for (l, g) in moments.g1.iter().enumerate() {
                    for d in 0..2 {
                        gy_u[d] += u1[l] * Cplx::new(g[d], R::zero());
                        gy_v[d] += v1[l] * Cplx::new(g[d], R::zero());
                    }
                }
                let coupled = Cplx::new(moments.star_area, R::zero()) * dot_conj2(gu, gv)
                    + dot_conj2(gu, gy_v)
                    + dot_conj2(gy_u, gv)
                    + quad_form(&moments.k1, u1, v1);
                acc += weights.grad_coupled * area_c * coupled;
                acc += weights.grad_incl * area_c * quad_form(&moments.k2, u2, v2);
                let mut b_u2 = Cplx::<R>::zero();
                let mut b_v2 = Cplx::<R>::zero();
                for (l, &b) in moments.b2.iter().enumerate() {
                    b_u2 += u2[l] * Cplx::new(b, R::zero());
                    b_v2 += v2[l] * Cplx::new(b, R::zero());
                }
                let mass = Cplx::new(cell_area, R::zero()) * m_uv
                    + int_u0 * b_v2.conj()
                    + b_u2 * int_v0.conj()
                    + area_c * quad_form(&moments.m2, u2, v2);
                acc += weights.mass * mass;
            }
        }
    }
    if include_boundary && !weights.boundary.is_zero() {
        for &(t, k) in space.boundary_edges() {
            if let Some(mask) = macro_mask {
                if !mask[t] {
                    continue;
                }
            }
            let tri = mesh.triangle(t);
            let pair = [tri[k], tri[(k + 1) % 3]];
            let (a, b) = (mesh.vertex(pair[0]), mesh.vertex(pair[1]));
            let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
            let el = crate::fem::element_edge_mass(len);
            for i in 0..2 {
                let di = map.dof_of_vertex(pair[i]).unwrap();
                for j in 0..2 {
                    let dj = map.dof_of_vertex(pair[j]).unwrap();
                    acc += weights.boundary
                        * v.macro_block()[di].conj()
                        * u.macro_block()[dj]
                        * Cplx::new(el[i][j], R::zero());
                }
            }
        }
    }
    acc
}

/// The form restricted to a product of patches: only the listed macro
/// triangles (with their boundary edges) and the listed cell triangles
/// integrate.
#[allow(clippy::too_many_arguments)]
pub fn eval_form_localized<R: Real>(
    space: &TwoScaleSpace<R>,
    weights: &FormWeights<R>,
    macro_patch: &[usize],
    star_patch: &[usize],
    incl_patch: &[usize],
    u: &TwoScaleFunction<R>,
    v: &TwoScaleFunction<R>,
) -> Cplx<R> {
    let mut mask = vec![false; space.macro_mesh().n_triangles()];
    for &t in macro_patch {
        mask[t] = true;
    }
    let moments = CellMoments::masked(space, star_patch, incl_patch);
    eval_form(space, weights, &moments, Some(&mask), true, u, v)
}

/// Full-form evaluation with the Helmholtz weights.
pub fn eval_helmholtz<R: Real>(
    space: &TwoScaleSpace<R>,
    params: &ProblemParams<R>,
    moments: &CellMoments<R>,
    u: &TwoScaleFunction<R>,
    v: &TwoScaleFunction<R>,
) -> Cplx<R> {
    eval_form(space, &FormWeights::helmholtz(params), moments, None, true, u, v)
}

/// Energy norm `(gradient terms + k^2 coupled mass)^(1/2)`.
pub fn energy_norm<R: Real>(
    space: &TwoScaleSpace<R>,
    k: R,
    moments: &CellMoments<R>,
    v: &TwoScaleFunction<R>,
) -> R {
    let q = eval_form(space, &FormWeights::energy(k), moments, None, false, v, v);
    q.re.max(R::zero()).sqrt()
}

/// Gradient seminorm over all three components.
pub fn gradient_seminorm<R: Real>(
    space: &TwoScaleSpace<R>,
    moments: &CellMoments<R>,
    v: &TwoScaleFunction<R>,
) -> R {
    let q = eval_form(space, &FormWeights::gradient(), moments, None, false, v, v);
    q.re.max(R::zero()).sqrt()
}

/// Inner product of the gradient Gram form.
pub fn gradient_inner<R: Real>(
    space: &TwoScaleSpace<R>,
    moments: &CellMoments<R>,
    u: &TwoScaleFunction<R>,
    v: &TwoScaleFunction<R>,
) -> Cplx<R> {
    eval_form(space, &FormWeights::gradient(), moments, None, false, u, v)
}

/// Robin boundary load: `F(v) = int_dG g conj(v0) ds`, integrated with a
/// composite 4-point Gauss rule (`quad_splits` sub-segments per edge). Only
/// the macro block is nonzero.
pub fn rhs_vector<R: Real>(
    space: &TwoScaleSpace<R>,
    params: &ProblemParams<R>,
) -> TwoScaleFunction<R> {
    let mesh = space.macro_mesh();
    let map = space.macro_map();
    let mut rhs = TwoScaleFunction::zeros(space);
    let rule = gauss_segment_4::<R>();
    let splits = params.quad_splits.max(1);
    let inv_s = R::one() / r(splits as f64);
    for &(t, k) in space.boundary_edges() {
        let tri = mesh.triangle(t);
        let pair = [tri[k], tri[(k + 1) % 3]];
        let (a, b) = (mesh.vertex(pair[0]), mesh.vertex(pair[1]));
        let e = [b[0] - a[0], b[1] - a[1]];
        let len = (e[0] * e[0] + e[1] * e[1]).sqrt();
        let n = [e[1] / len, -e[0] / len];
        for s in 0..splits {
            let t0 = r::<R>(s as f64) * inv_s;
            for &(q, w) in &rule {
                let tq = t0 + q * inv_s;
                let x = [a[0] + tq * e[0], a[1] + tq * e[1]];
                let g = params.boundary.eval(params.k, x, n);
                let scale = w * inv_s * len;
                let hats = [R::one() - tq, tq];
                for i in 0..2 {
                    let d = map.dof_of_vertex(pair[i]).unwrap();
                    rhs.macro_block_mut()[d] += g * Cplx::new(scale * hats[i], R::zero());
                }
            }
        }
    }
    rhs
}
