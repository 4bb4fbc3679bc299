//! Corrected coarse system and its solvers.
//!
//! The coarse method tests the two-scale form against corrector-enriched
//! functions: the trial side is the embedded coarse basis, the test side is
//! the embedded basis minus its fine-scale correction. Both families share
//! the coarse dimension, so the assembled system is square and as small as
//! the plain coarse operator.
//!
//! Against embedded trial functions all cell couplings keep the rank
//! structure of the plain operator: per slot the macro unknowns enter only
//! through the element gradient and the corner sum, and the coarse cell
//! moments factor out of every cell column. The corrections add per-slot
//! macro profiles (measured by pairing correctors against the fine blocks)
//! and slot-independent modifications of the shared cell blocks. The system
//! therefore stores small shared pieces instead of one flat sparse matrix,
//! and its solve condenses the cell unknowns through a single shared
//! factorization, exactly like the plain structured operator.
//!
//! Alongside the system live the fine reference solver, energy-error
//! summaries against the best coarse approximation, an orthogonality check
//! of the corrected test space, a discrete inf-sup estimator, and helpers
//! turning measured corrector decay rates into oversampling radii.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::time::Instant;

use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::correctors::{
    resolution_slack, Corrector, CorrectorAssembler, CorrectorError, CorrectorSet, Oversampling,
    MAX_DIRECT_UNKNOWNS,
};
use crate::fem::element_gradients;
use crate::interp::{Embedding, InterpError, QuasiInterpolator};
use crate::scalar::{r, Cplx, Real};
use crate::sparse::{matmul, vec_dot, vec_norm, Csr, SparseError, SparseLu, Triplet};
use crate::system::StructuredTwoScaleMatrix;
use crate::twoscale::{
    energy_norm, rhs_vector, CellMoments, FormWeights, ProblemParams, TwoScaleError,
    TwoScaleFunction, TwoScaleSpace,
};

const SOLVE_TOL: f64 = 1e-10;

/// Relative eigenvalue tolerance of the inf-sup power iteration.
pub const INFSUP_TOL: f64 = 1e-6;

/// Iteration cap of the inf-sup power iteration.
pub const INFSUP_MAX_ITER: usize = 400;

const DIAG_SAMPLES: usize = 24;
const DIAG_SEED: u64 = 11;

/// Errors from building and solving the corrected coarse system.
#[derive(Debug, Error)]
pub enum LodError {
    #[error(transparent)]
    Corrector(#[from] CorrectorError),
    #[error(transparent)]
    Space(#[from] InterpError),
    #[error(transparent)]
    Params(#[from] TwoScaleError),
    #[error("linear solve failed: {0}")]
    Solve(SparseError),
    #[error(
        "the assembled system is numerically singular; for the corrected coarse \
         method a larger oversampling radius usually restores well-posedness"
    )]
    IllPosed {
        #[source]
        source: SparseError,
    },
    #[error("the reference system has {dim} unknowns in one factorized block, the guard is {max}")]
    TooLarge { dim: usize, max: usize },
}

fn sparse_failure(e: SparseError) -> LodError {
    match e {
        SparseError::SingularPivot { .. } => LodError::IllPosed { source: e },
        other => LodError::Solve(other),
    }
}

/// Wall-clock seconds of the three solve phases.
#[derive(Clone, Copy, Debug, Default)]
pub struct PhaseTimings {
    pub correctors: f64,
    pub assembly: f64,
    pub solve: f64,
}

/// Measured well-posedness indicators attached to a corrected coarse solve.
#[derive(Clone, Copy, Debug)]
pub struct LodDiagnostics<R: Real> {
    /// Left side of the patch resolution condition over its right side.
    pub resolution_slack: R,
    /// Largest macro patch cardinality at the used oversampling order.
    pub overlap_macro: usize,
    /// Largest cell patch cardinality at the used oversampling order.
    pub overlap_cell: usize,
    /// Corrector systems actually solved (zero when served from a cache).
    pub correctors_solved: usize,
}

/// Outcome of a solve: the solution triple, the achieved relative residual,
/// phase timings, and diagnostics where the method provides them.
#[derive(Clone, Debug)]
pub struct SolveReport<R: Real> {
    pub solution: TwoScaleFunction<R>,
    pub residual: R,
    pub timings: PhaseTimings,
    pub diagnostics: Option<LodDiagnostics<R>>,
}

/// Energy error of a coarse solution against the fine reference, next to the
/// best coarse approximation error and their ratio.
#[derive(Clone, Copy, Debug)]
pub struct ErrorSummary<R: Real> {
    pub error: R,
    pub best: R,
    pub ratio: R,
}

/// Result of the inf-sup power iteration.
#[derive(Clone, Copy, Debug)]
pub struct InfSupEstimate<R: Real> {
    pub value: R,
    pub converged: bool,
    pub iterations: usize,
}

/// Log-linear fit of a positive decay profile.
#[derive(Clone, Copy, Debug)]
pub struct GeometricFit<R: Real> {
    /// Factor per patch order; below one means decay.
    pub rate: R,
    pub r_squared: R,
}

/// Corner dofs, hat gradients, and area of one slot triangle.
#[derive(Clone, Copy)]
struct SlotGeom<R: Real> {
    dofs: [usize; 3],
    grads: [[R; 2]; 3],
    area: R,
}

fn slot_geometry<R: Real>(space: &TwoScaleSpace<R>) -> Vec<SlotGeom<R>> {
    let mesh = space.macro_mesh();
    let map = space.macro_map();
    space
        .x_partition()
        .iter()
        .map(|&t| {
            let tri = mesh.triangle(t);
            let (grads, area) = element_gradients(mesh.tri_coords(t));
            let dofs = [
                map.dof_of_vertex(tri[0]).unwrap(),
                map.dof_of_vertex(tri[1]).unwrap(),
                map.dof_of_vertex(tri[2]).unwrap(),
            ];
            SlotGeom { dofs, grads, area }
        })
        .collect()
}

fn push_rows_at<R: Real>(
    out: &mut Vec<Triplet<R>>,
    m: &Csr<R>,
    scale: Cplx<R>,
    row_off: usize,
    col_off: usize,
) {
    if scale.is_zero() {
        return;
    }
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            out.push((row_off + i, col_off + j, scale * v));
        }
    }
}

/// `scale * (base - pairings)` where row `l` of the pairings is the
/// conjugated entry list of corrector `l` against the rows of `pair`.
fn corrected_block<R: Real>(
    base: &Csr<R>,
    pair: &Csr<R>,
    correctors: &[Corrector<R>],
    scale: Cplx<R>,
) -> Csr<R> {
    debug_assert_eq!(base.nrows(), correctors.len());
    debug_assert_eq!(base.ncols(), pair.ncols());
    let mut trips: Vec<Triplet<R>> = Vec::new();
    push_rows_at(&mut trips, base, scale, 0, 0);
    let mut acc = vec![Cplx::<R>::zero(); pair.ncols()];
    let mut seen = vec![false; pair.ncols()];
    let mut touched: Vec<usize> = Vec::new();
    for cor in correctors {
        for &(d, q) in &cor.entries {
            let (cols, vals) = pair.row(d);
            for (&j, &v) in cols.iter().zip(vals) {
                if !seen[j] {
                    seen[j] = true;
                    touched.push(j);
                }
                acc[j] += q.conj() * v;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            if !acc[j].is_zero() {
                trips.push((cor.basis, j, -(scale * acc[j])));
            }
            acc[j] = Cplx::zero();
            seen[j] = false;
        }
        touched.clear();
    }
    Csr::from_triplets(base.nrows(), base.ncols(), trips)
}

struct LodFactors<R: Real> {
    khat: SparseLu<R>,
    schur: SparseLu<R>,
    /// cell solutions generated by the gradient components and the corner sum
    u: [Vec<Cplx<R>>; 3],
    /// conjugate-transposed generators for the adjoint back substitution
    v: [Vec<Cplx<R>>; 3],
}

/// The corrected coarse system over the flat coarse layout.
///
/// Rows are the corrected test functions, columns the embedded coarse basis.
/// The macro block and the shared cell blocks carry the corrections folded
/// in; the macro-to-cell couplings are stored as per-slot profiles times the
/// coarse cell moments, the cell-to-macro couplings as slot-independent
/// column generators times the slot geometry.
pub struct LodSystem<R: Real> {
    n_macro: usize,
    n_cell1: usize,
    n_cell2: usize,
    slots: Vec<SlotGeom<R>>,
    /// corrected macro block
    m00: Csr<R>,
    /// corrected shared `Y*` block (the slot factor is `|T|`)
    d1: Csr<R>,
    /// corrected shared inclusion block (the slot factor is `|T|`)
    d2: Csr<R>,
    /// corrected cell-row couplings to the macro gradient, per cell dof
    a1: Vec<[Cplx<R>; 2]>,
    /// corrected cell-row couplings to the macro corner sum, per cell dof
    a2: Vec<Cplx<R>>,
    /// per-slot macro row profiles of the gradient coupling
    r1: Vec<Vec<(usize, [Cplx<R>; 2])>>,
    /// per-slot macro row profiles of the mean coupling
    r2: Vec<Vec<(usize, Cplx<R>)>>,
    /// coarse cell gradient moments (the column pattern of the couplings)
    g_cols: Vec<[R; 2]>,
    /// coarse inclusion mean moments
    b_cols: Vec<R>,
    /// zero-mean constraint weights of the coarse cell space
    c: Vec<R>,
    w_gc: Cplx<R>,
    w_m: Cplx<R>,
    load: Vec<Cplx<R>>,
    m: Oversampling,
    factors: Option<LodFactors<R>>,
}

impl<R: Real> LodSystem<R> {
    /// Assembles the corrected system and its load vector from a complete
    /// corrector set. The trial side is the embedded coarse basis; the load
    /// pairs the fine right-hand side with the corrected test functions.
    pub fn assemble(
        asm: &CorrectorAssembler<R>,
        set: &CorrectorSet<R>,
        embed: &Embedding<R>,
        params: &ProblemParams<R>,
    ) -> Self {
        let coarse = asm.coarse();
        let fine = asm.fine();
        let weights = asm.weights();
        let n0 = coarse.n_macro_dofs();
        let n1 = coarse.n_cell1_dofs();
        let n2 = coarse.n_cell2_dofs();
        assert_eq!(set.macro_correctors().len(), n0, "macro corrector family is incomplete");
        assert_eq!(set.cell1_correctors().len(), n1, "cell corrector family is incomplete");
        assert_eq!(set.cell2_correctors().len(), n2, "inclusion corrector family is incomplete");
        assert_eq!(embed.macro_matrix().ncols(), n0, "embedding does not match the coarse space");
        assert_eq!(
            embed.macro_matrix().nrows(),
            fine.n_macro_dofs(),
            "embedding does not match the fine space"
        );

        let cm = CellMoments::full(coarse);
        let opc = StructuredTwoScaleMatrix::assemble(coarse, weights, &cm);
        let slots = slot_geometry(coarse);
        let fine_slots = slot_geometry(fine);
        let parents = asm.interpolator().slot_parents();
        assert_eq!(parents.len(), fine_slots.len(), "slot parents do not cover the fine slots");

        // corrector pairings against the fine blocks applied to the embedding
        let ae0 = matmul(asm.operator().macro_block(), embed.macro_matrix());
        let ke1 = matmul(asm.operator().cell1_block(), embed.cell1_matrix());
        let se2 = matmul(asm.operator().cell2_block(), embed.cell2_matrix());
        let one = Cplx::new(R::one(), R::zero());
        let m00 = corrected_block(opc.macro_block(), &ae0, set.macro_correctors(), one);
        let d1 = corrected_block(opc.cell1_block(), &ke1, set.cell1_correctors(), weights.grad_coupled);
        let d2 = corrected_block(opc.cell2_block(), &se2, set.cell2_correctors(), one);

        // cell-row couplings: coarse moments minus the corrector moments
        let g1f = &asm.moments().g1;
        let b2f = &asm.moments().b2;
        let third = r::<R>(3.0);
        let a1: Vec<[Cplx<R>; 2]> = set
            .cell1_correctors()
            .iter()
            .enumerate()
            .map(|(l, cor)| {
                debug_assert_eq!(cor.basis, l);
                let mut gq = [Cplx::<R>::zero(); 2];
                for &(d, q) in &cor.entries {
                    for e in 0..2 {
                        gq[e] += q * Cplx::new(g1f[d][e], R::zero());
                    }
                }
                [
                    weights.grad_coupled * (Cplx::new(cm.g1[l][0], R::zero()) - gq[0].conj()),
                    weights.grad_coupled * (Cplx::new(cm.g1[l][1], R::zero()) - gq[1].conj()),
                ]
            })
            .collect();
        let a2: Vec<Cplx<R>> = set
            .cell2_correctors()
            .iter()
            .enumerate()
            .map(|(l, cor)| {
                debug_assert_eq!(cor.basis, l);
                let mut bq = Cplx::<R>::zero();
                for &(d, q) in &cor.entries {
                    bq += q * Cplx::new(b2f[d], R::zero());
                }
                weights.mass * (Cplx::new(cm.b2[l], R::zero()) - bq.conj())
                    / Cplx::new(third, R::zero())
            })
            .collect();

        // macro row profiles: plain corner couplings per slot
        let mut r1_maps: Vec<BTreeMap<usize, [Cplx<R>; 2]>> = vec![BTreeMap::new(); slots.len()];
        let mut r2_maps: Vec<BTreeMap<usize, Cplx<R>>> = vec![BTreeMap::new(); slots.len()];
        for (sc, s) in slots.iter().enumerate() {
            for k in 0..3 {
                let e = r1_maps[sc].entry(s.dofs[k]).or_insert([Cplx::zero(); 2]);
                for d in 0..2 {
                    e[d] += Cplx::new(s.area * s.grads[k][d], R::zero());
                }
                *r2_maps[sc].entry(s.dofs[k]).or_insert_with(Cplx::zero) +=
                    Cplx::new(s.area / third, R::zero());
            }
        }
        // minus the macro corrector moments over the fine slots
        let mut q_dense = vec![Cplx::<R>::zero(); fine.n_macro_dofs()];
        let mut p_acc = vec![[Cplx::<R>::zero(); 2]; slots.len()];
        let mut s_acc = vec![Cplx::<R>::zero(); slots.len()];
        let mut slot_seen = vec![false; slots.len()];
        let mut slot_touched: Vec<usize> = Vec::new();
        for cor in set.macro_correctors() {
            if cor.entries.is_empty() {
                continue;
            }
            for &(d, q) in &cor.entries {
                q_dense[d] = q;
            }
            for (fs, g) in fine_slots.iter().enumerate() {
                let q0 = q_dense[g.dofs[0]];
                let q1 = q_dense[g.dofs[1]];
                let q2 = q_dense[g.dofs[2]];
                if q0.is_zero() && q1.is_zero() && q2.is_zero() {
                    continue;
                }
                let sc = parents[fs];
                if !slot_seen[sc] {
                    slot_seen[sc] = true;
                    slot_touched.push(sc);
                }
                let qs = [q0, q1, q2];
                let mut grad = [Cplx::<R>::zero(); 2];
                for k in 0..3 {
                    for d in 0..2 {
                        grad[d] += qs[k] * Cplx::new(g.grads[k][d], R::zero());
                    }
                }
                for d in 0..2 {
                    p_acc[sc][d] += Cplx::new(g.area, R::zero()) * grad[d].conj();
                }
                s_acc[sc] += Cplx::new(g.area / third, R::zero()) * (q0 + q1 + q2).conj();
            }
            slot_touched.sort_unstable();
            for &sc in &slot_touched {
                let e = r1_maps[sc].entry(cor.basis).or_insert([Cplx::zero(); 2]);
                for d in 0..2 {
                    e[d] -= p_acc[sc][d];
                }
                *r2_maps[sc].entry(cor.basis).or_insert_with(Cplx::zero) -= s_acc[sc];
                p_acc[sc] = [Cplx::zero(); 2];
                s_acc[sc] = Cplx::zero();
                slot_seen[sc] = false;
            }
            slot_touched.clear();
            for &(d, _) in &cor.entries {
                q_dense[d] = Cplx::zero();
            }
        }
        let r1: Vec<Vec<(usize, [Cplx<R>; 2])>> = r1_maps
            .into_iter()
            .map(|m| m.into_iter().filter(|(_, v)| !(v[0].is_zero() && v[1].is_zero())).collect())
            .collect();
        let r2: Vec<Vec<(usize, Cplx<R>)>> =
            r2_maps.into_iter().map(|m| m.into_iter().filter(|(_, v)| !v.is_zero()).collect()).collect();

        // load: the fine right-hand side against the corrected test functions
        let f = rhs_vector(fine, params);
        let ef = embed.apply_adjoint(&f);
        let qf = set.apply_adjoint(asm, &f);
        drop(f);
        let mut load = ef.into_vec();
        for (li, qi) in load.iter_mut().zip(qf.data()) {
            *li -= *qi;
        }

        Self {
            n_macro: n0,
            n_cell1: n1,
            n_cell2: n2,
            slots,
            m00,
            d1,
            d2,
            a1,
            a2,
            r1,
            r2,
            g_cols: cm.g1.clone(),
            b_cols: cm.b2.clone(),
            c: cm.c.clone(),
            w_gc: weights.grad_coupled,
            w_m: weights.mass,
            load,
            m: set.oversampling(),
            factors: None,
        }
    }

    /// Total unknowns: the coarse flat layout, independent of the fine space
    /// and the oversampling order.
    pub fn dim(&self) -> usize {
        self.n_macro + self.slots.len() * (self.n_cell1 + self.n_cell2)
    }

    pub fn n_slots(&self) -> usize {
        self.slots.len()
    }

    /// Oversampling orders of the corrector set behind this system.
    pub fn oversampling(&self) -> Oversampling {
        self.m
    }

    /// Load vector over the flat coarse layout. Boundary data enters only
    /// through the macro component; the cell entries are zero.
    pub fn load(&self) -> &[Cplx<R>] {
        &self.load
    }

    fn slot_grads(&self, s: &SlotGeom<R>, x0: &[Cplx<R>]) -> [Cplx<R>; 2] {
        let mut g = [Cplx::<R>::zero(); 2];
        for k in 0..3 {
            let v = x0[s.dofs[k]];
            for d in 0..2 {
                g[d] += v * Cplx::new(s.grads[k][d], R::zero());
            }
        }
        g
    }

    fn slot_sum(&self, s: &SlotGeom<R>, x0: &[Cplx<R>]) -> Cplx<R> {
        x0[s.dofs[0]] + x0[s.dofs[1]] + x0[s.dofs[2]]
    }

    /// `y = M x` over the flat coarse layout.
    pub fn apply(&self, x: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(x.len(), self.dim());
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let mut y = vec![Cplx::<R>::zero(); self.dim()];
        let y0 = self.m00.apply(&x[..n0]);
        y[..n0].copy_from_slice(&y0);
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let area = Cplx::new(s.area, R::zero());
            // macro rows: profiles times the cell moments of this slot
            let mut gamma = [Cplx::<R>::zero(); 2];
            for (j, g) in self.g_cols.iter().enumerate() {
                let v = x[off1 + j];
                gamma[0] += v * Cplx::new(g[0], R::zero());
                gamma[1] += v * Cplx::new(g[1], R::zero());
            }
            let mut delta = Cplx::<R>::zero();
            for (j, &b) in self.b_cols.iter().enumerate() {
                delta += x[off2 + j] * Cplx::new(b, R::zero());
            }
            for &(i, v) in &self.r1[sc] {
                y[i] += self.w_gc * (v[0] * gamma[0] + v[1] * gamma[1]);
            }
            for &(i, w) in &self.r2[sc] {
                y[i] += self.w_m * w * delta;
            }
            // cell rows: shared blocks plus the macro couplings
            let g = self.slot_grads(s, &x[..n0]);
            let su = self.slot_sum(s, &x[..n0]);
            let y1 = self.d1.apply(&x[off1..off1 + n1]);
            for l in 0..n1 {
                y[off1 + l] = area * (y1[l] + self.a1[l][0] * g[0] + self.a1[l][1] * g[1]);
            }
            let y2 = self.d2.apply(&x[off2..off2 + n2]);
            for l in 0..n2 {
                y[off2 + l] = area * (y2[l] + self.a2[l] * su);
            }
        }
        y
    }

    /// `y = M^H x` over the flat coarse layout.
    pub fn apply_conj_transpose(&self, x: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(x.len(), self.dim());
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let mut y = vec![Cplx::<R>::zero(); self.dim()];
        let y0 = self.m00.apply_conj_transpose(&x[..n0]);
        y[..n0].copy_from_slice(&y0);
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let area = Cplx::new(s.area, R::zero());
            // transposed cell rows land on the slot corners
            let mut t1 = [Cplx::<R>::zero(); 2];
            for l in 0..n1 {
                for d in 0..2 {
                    t1[d] += self.a1[l][d].conj() * x[off1 + l];
                }
            }
            let mut t2 = Cplx::<R>::zero();
            for l in 0..n2 {
                t2 += self.a2[l].conj() * x[off2 + l];
            }
            for k in 0..3 {
                let gk = s.grads[k];
                y[s.dofs[k]] += area
                    * (Cplx::new(gk[0], R::zero()) * t1[0]
                        + Cplx::new(gk[1], R::zero()) * t1[1]
                        + t2);
            }
            // transposed macro profiles land on the cell columns
            let mut rho = [Cplx::<R>::zero(); 2];
            for &(i, v) in &self.r1[sc] {
                for d in 0..2 {
                    rho[d] += v[d].conj() * x[i];
                }
            }
            let mut sigma = Cplx::<R>::zero();
            for &(i, w) in &self.r2[sc] {
                sigma += w.conj() * x[i];
            }
            let y1 = self.d1.apply_conj_transpose(&x[off1..off1 + n1]);
            for (j, g) in self.g_cols.iter().enumerate() {
                y[off1 + j] = area * y1[j]
                    + self.w_gc.conj()
                        * (Cplx::new(g[0], R::zero()) * rho[0] + Cplx::new(g[1], R::zero()) * rho[1]);
            }
            let y2 = self.d2.apply_conj_transpose(&x[off2..off2 + n2]);
            for (j, &b) in self.b_cols.iter().enumerate() {
                y[off2 + j] = area * y2[j] + self.w_m.conj() * Cplx::new(b, R::zero()) * sigma;
            }
        }
        y
    }

    /// Flat triplet form, mainly for small-system cross checks. The macro
    /// couplings densify over the cell columns of each slot.
    pub fn to_triplets(&self) -> Vec<Triplet<R>> {
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let one = Cplx::new(R::one(), R::zero());
        let mut out: Vec<Triplet<R>> = Vec::new();
        push_rows_at(&mut out, &self.m00, one, 0, 0);
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let area = Cplx::new(s.area, R::zero());
            push_rows_at(&mut out, &self.d1, area, off1, off1);
            push_rows_at(&mut out, &self.d2, area, off2, off2);
            for l in 0..n1 {
                for k in 0..3 {
                    let val = area
                        * (self.a1[l][0] * Cplx::new(s.grads[k][0], R::zero())
                            + self.a1[l][1] * Cplx::new(s.grads[k][1], R::zero()));
                    if !val.is_zero() {
                        out.push((off1 + l, s.dofs[k], val));
                    }
                }
            }
            for l in 0..n2 {
                let val = area * self.a2[l];
                if !val.is_zero() {
                    for k in 0..3 {
                        out.push((off2 + l, s.dofs[k], val));
                    }
                }
            }
            for &(i, v) in &self.r1[sc] {
                for (j, g) in self.g_cols.iter().enumerate() {
                    let val = self.w_gc
                        * (v[0] * Cplx::new(g[0], R::zero()) + v[1] * Cplx::new(g[1], R::zero()));
                    if !val.is_zero() {
                        out.push((i, off1 + j, val));
                    }
                }
            }
            for &(i, w) in &self.r2[sc] {
                for (j, &b) in self.b_cols.iter().enumerate() {
                    let val = self.w_m * w * Cplx::new(b, R::zero());
                    if !val.is_zero() {
                        out.push((i, off2 + j, val));
                    }
                }
            }
        }
        out
    }

    /// Factorizes the shared blocks for the condensation solve: one bordered
    /// cell factorization, six generator columns with their moments, and the
    /// macro Schur complement.
    pub fn factorize(&mut self) -> Result<(), SparseError> {
        if self.factors.is_some() {
            return Ok(());
        }
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        assert!(!self.w_gc.is_zero(), "condensation needs a nonzero coupled gradient weight");
        let border = usize::from(n1 > 0);
        let nk = n1 + n2 + border;
        // bordered shared cell block
        let mut trips: Vec<Triplet<R>> = Vec::new();
        let one = Cplx::new(R::one(), R::zero());
        push_rows_at(&mut trips, &self.d1, one, 0, 0);
        push_rows_at(&mut trips, &self.d2, one, n1, n1);
        for (l, &w) in self.c.iter().enumerate() {
            trips.push((l, n1 + n2, Cplx::new(w, R::zero())));
            trips.push((n1 + n2, l, Cplx::new(w, R::zero())));
        }
        let khat = SparseLu::factor(&Csr::from_triplets(nk, nk, trips))?;
        // generator columns of the macro-to-cell coupling
        let mut u: [Vec<Cplx<R>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for t in 0..3 {
            let mut rhs = vec![Cplx::<R>::zero(); nk];
            match t {
                0 | 1 => {
                    for l in 0..n1 {
                        rhs[l] = self.a1[l][t];
                    }
                }
                _ => {
                    for l in 0..n2 {
                        rhs[n1 + l] = self.a2[l];
                    }
                }
            }
            u[t] = khat.solve(&rhs);
        }
        let mut ug = [[Cplx::<R>::zero(); 2]; 3];
        let mut ud = [Cplx::<R>::zero(); 3];
        for t in 0..3 {
            for (j, g) in self.g_cols.iter().enumerate() {
                for d in 0..2 {
                    ug[t][d] += Cplx::new(g[d], R::zero()) * u[t][j];
                }
            }
            for (j, &b) in self.b_cols.iter().enumerate() {
                ud[t] += Cplx::new(b, R::zero()) * u[t][n1 + j];
            }
        }
        // adjoint generators: cell moment columns through the transposed block
        let mut v: [Vec<Cplx<R>>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for t in 0..3 {
            let mut rhs = vec![Cplx::<R>::zero(); nk];
            match t {
                0 | 1 => {
                    for (l, g) in self.g_cols.iter().enumerate() {
                        rhs[l] = Cplx::new(g[t], R::zero());
                    }
                }
                _ => {
                    for (l, &b) in self.b_cols.iter().enumerate() {
                        rhs[n1 + l] = Cplx::new(b, R::zero());
                    }
                }
            }
            v[t] = khat.solve_conj_transpose(&rhs);
        }
        // macro Schur complement; its conjugate transpose is the Schur
        // complement of the adjoint system, so one factorization serves both
        // solve directions
        let mut trips: Vec<Triplet<R>> = Vec::new();
        push_rows_at(&mut trips, &self.m00, one, 0, 0);
        for (sc, s) in self.slots.iter().enumerate() {
            for k in 0..3 {
                let gk0 = Cplx::new(s.grads[k][0], R::zero());
                let gk1 = Cplx::new(s.grads[k][1], R::zero());
                let ghat = [
                    gk0 * ug[0][0] + gk1 * ug[1][0] + ug[2][0],
                    gk0 * ug[0][1] + gk1 * ug[1][1] + ug[2][1],
                ];
                let bhat = gk0 * ud[0] + gk1 * ud[1] + ud[2];
                for &(i, vv) in &self.r1[sc] {
                    trips.push((i, s.dofs[k], -(self.w_gc * (vv[0] * ghat[0] + vv[1] * ghat[1]))));
                }
                for &(i, w) in &self.r2[sc] {
                    trips.push((i, s.dofs[k], -(self.w_m * w * bhat)));
                }
            }
        }
        let schur = SparseLu::factor(&Csr::from_triplets(n0, n0, trips))?;
        self.factors = Some(LodFactors { khat, schur, u, v });
        Ok(())
    }

    /// One pass of the condensation with zero constraint targets, returning
    /// the flat solution and per-slot multipliers.
    fn condense_once(&self, b: &[Cplx<R>]) -> (Vec<Cplx<R>>, Vec<Cplx<R>>) {
        let f = self.factors.as_ref().expect("factorize first");
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let border = usize::from(n1 > 0);
        let nk = n1 + n2 + border;
        let ns = self.slots.len();
        let mut parts: Vec<Vec<Cplx<R>>> = vec![Vec::new(); ns];
        let mut rhs0: Vec<Cplx<R>> = b[..n0].to_vec();
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let zero_rhs = b[off1..off2 + n2].iter().all(|v| v.is_zero());
            if zero_rhs {
                continue;
            }
            let inv_area = Cplx::new(R::one() / s.area, R::zero());
            let mut kb = vec![Cplx::<R>::zero(); nk];
            for l in 0..n1 {
                kb[l] = b[off1 + l] * inv_area;
            }
            for l in 0..n2 {
                kb[n1 + l] = b[off2 + l] * inv_area;
            }
            let sol = f.khat.solve(&kb);
            let mut gamma = [Cplx::<R>::zero(); 2];
            for (j, g) in self.g_cols.iter().enumerate() {
                for d in 0..2 {
                    gamma[d] += Cplx::new(g[d], R::zero()) * sol[j];
                }
            }
            let mut delta = Cplx::<R>::zero();
            for (j, &bb) in self.b_cols.iter().enumerate() {
                delta += Cplx::new(bb, R::zero()) * sol[n1 + j];
            }
            for &(i, v) in &self.r1[sc] {
                rhs0[i] -= self.w_gc * (v[0] * gamma[0] + v[1] * gamma[1]);
            }
            for &(i, w) in &self.r2[sc] {
                rhs0[i] -= self.w_m * w * delta;
            }
            parts[sc] = sol;
        }
        let x0 = f.schur.solve(&rhs0);
        let mut x = vec![Cplx::<R>::zero(); self.dim()];
        x[..n0].copy_from_slice(&x0);
        let mut mults = vec![Cplx::<R>::zero(); ns];
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let g = self.slot_grads(s, &x0);
            let su = self.slot_sum(s, &x0);
            let part = &parts[sc];
            let area = Cplx::new(s.area, R::zero());
            for l in 0..nk {
                let base = if part.is_empty() { Cplx::zero() } else { part[l] };
                let val = base - (g[0] * f.u[0][l] + g[1] * f.u[1][l] + su * f.u[2][l]);
                if l < n1 {
                    x[off1 + l] = val;
                } else if l < n1 + n2 {
                    x[off2 + (l - n1)] = val;
                } else {
                    mults[sc] = area * val;
                }
            }
        }
        (x, mults)
    }

    /// Adjoint counterpart of [`LodSystem::condense_once`]. The Schur
    /// complement of the adjoint is the conjugate transpose of the forward
    /// one, so both share the same factorizations.
    fn condense_ct_once(&self, b: &[Cplx<R>]) -> (Vec<Cplx<R>>, Vec<Cplx<R>>) {
        let f = self.factors.as_ref().expect("factorize first");
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let border = usize::from(n1 > 0);
        let nk = n1 + n2 + border;
        let ns = self.slots.len();
        let mut parts: Vec<Vec<Cplx<R>>> = vec![Vec::new(); ns];
        let mut rhs0: Vec<Cplx<R>> = b[..n0].to_vec();
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let zero_rhs = b[off1..off2 + n2].iter().all(|v| v.is_zero());
            if zero_rhs {
                continue;
            }
            let inv_area = Cplx::new(R::one() / s.area, R::zero());
            let mut kb = vec![Cplx::<R>::zero(); nk];
            for l in 0..n1 {
                kb[l] = b[off1 + l] * inv_area;
            }
            for l in 0..n2 {
                kb[n1 + l] = b[off2 + l] * inv_area;
            }
            let sol = f.khat.solve_conj_transpose(&kb);
            let mut t1 = [Cplx::<R>::zero(); 2];
            for l in 0..n1 {
                for d in 0..2 {
                    t1[d] += self.a1[l][d].conj() * sol[l];
                }
            }
            let mut t2 = Cplx::<R>::zero();
            for l in 0..n2 {
                t2 += self.a2[l].conj() * sol[n1 + l];
            }
            for k in 0..3 {
                let contrib = Cplx::new(s.grads[k][0], R::zero()) * t1[0]
                    + Cplx::new(s.grads[k][1], R::zero()) * t1[1]
                    + t2;
                rhs0[s.dofs[k]] -= Cplx::new(s.area, R::zero()) * contrib;
            }
            parts[sc] = sol;
        }
        let x0 = f.schur.solve_conj_transpose(&rhs0);
        let mut x = vec![Cplx::<R>::zero(); self.dim()];
        x[..n0].copy_from_slice(&x0);
        let mut mults = vec![Cplx::<R>::zero(); ns];
        for (sc, s) in self.slots.iter().enumerate() {
            let off1 = n0 + sc * (n1 + n2);
            let off2 = off1 + n1;
            let mut rho = [Cplx::<R>::zero(); 2];
            for &(i, v) in &self.r1[sc] {
                for d in 0..2 {
                    rho[d] += v[d].conj() * x0[i];
                }
            }
            let mut sigma = Cplx::<R>::zero();
            for &(i, w) in &self.r2[sc] {
                sigma += w.conj() * x0[i];
            }
            let part = &parts[sc];
            let area = Cplx::new(s.area, R::zero());
            let wg = self.w_gc.conj();
            let wm = self.w_m.conj();
            for l in 0..nk {
                let base = if part.is_empty() { Cplx::zero() } else { part[l] };
                let val =
                    base - (wg * (rho[0] * f.v[0][l] + rho[1] * f.v[1][l]) + wm * sigma * f.v[2][l]);
                if l < n1 {
                    x[off1 + l] = val;
                } else if l < n1 + n2 {
                    x[off2 + (l - n1)] = val;
                } else {
                    mults[sc] = area * val;
                }
            }
        }
        (x, mults)
    }

    /// Residual of the bordered system at `(x, mults)`.
    fn bordered_residual(
        &self,
        x: &[Cplx<R>],
        mults: &[Cplx<R>],
        b: &[Cplx<R>],
        adjoint: bool,
    ) -> Vec<Cplx<R>> {
        let n0 = self.n_macro;
        let (n1, n2) = (self.n_cell1, self.n_cell2);
        let ax = if adjoint { self.apply_conj_transpose(x) } else { self.apply(x) };
        let mut r: Vec<Cplx<R>> = b.iter().zip(&ax).map(|(bb, aa)| bb - aa).collect();
        for sc in 0..self.slots.len() {
            let off1 = n0 + sc * (n1 + n2);
            for l in 0..n1 {
                r[off1 + l] -= mults[sc] * Cplx::new(self.c[l], R::zero());
            }
        }
        r
    }

    fn solve_refined(
        &mut self,
        b: &[Cplx<R>],
        adjoint: bool,
    ) -> Result<(Vec<Cplx<R>>, R), SparseError> {
        assert_eq!(b.len(), self.dim());
        self.factorize()?;
        let norm_b = vec_norm(b);
        if norm_b == R::zero() {
            return Ok((vec![Cplx::zero(); self.dim()], R::zero()));
        }
        let once =
            |s: &Self, rhs: &[Cplx<R>]| if adjoint { s.condense_ct_once(rhs) } else { s.condense_once(rhs) };
        let (mut x, mut mults) = once(self, b);
        let tol = r::<R>(SOLVE_TOL);
        for _ in 0..2 {
            let res = self.bordered_residual(&x, &mults, b, adjoint);
            let rel = vec_norm(&res) / norm_b;
            if rel <= tol {
                return Ok((x, rel));
            }
            let (dx, dm) = once(self, &res);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
            for (mi, di) in mults.iter_mut().zip(&dm) {
                *mi += di;
            }
        }
        let achieved = vec_norm(&self.bordered_residual(&x, &mults, b, adjoint)) / norm_b;
        if achieved <= tol {
            Ok((x, achieved))
        } else {
            Err(SparseError::ResidualTooLarge {
                achieved: num_traits::ToPrimitive::to_f64(&achieved).unwrap_or(f64::NAN),
                required: SOLVE_TOL,
            })
        }
    }

    /// Solves the constrained system `M x + C^T mu = b`, `C x = 0` (one
    /// zero-mean constraint per slot) by cell-first condensation with
    /// iterative refinement, also reporting the achieved relative residual.
    pub fn solve_with_residual(&mut self, b: &[Cplx<R>]) -> Result<(Vec<Cplx<R>>, R), SparseError> {
        self.solve_refined(b, false)
    }

    /// See [`LodSystem::solve_with_residual`].
    pub fn solve(&mut self, b: &[Cplx<R>]) -> Result<Vec<Cplx<R>>, SparseError> {
        self.solve_refined(b, false).map(|(x, _)| x)
    }

    /// Solves the conjugate-transposed constrained system, reusing the
    /// forward factorizations.
    pub fn solve_conj_transpose(&mut self, b: &[Cplx<R>]) -> Result<Vec<Cplx<R>>, SparseError> {
        self.solve_refined(b, true).map(|(x, _)| x)
    }
}

/// Builds correctors for every coarse basis function and solves the
/// corrected coarse system for the boundary load of `params`.
pub fn solve_lod<R: Real>(
    coarse: &TwoScaleSpace<R>,
    fine: &TwoScaleSpace<R>,
    params: &ProblemParams<R>,
    interp: &QuasiInterpolator<R>,
    m: Oversampling,
) -> Result<SolveReport<R>, LodError> {
    params.validate()?;
    let embed = Embedding::build(fine, coarse)?;
    let start = Instant::now();
    let asm = CorrectorAssembler::new(coarse, fine, interp, FormWeights::helmholtz(params))?;
    let set = CorrectorSet::build(&asm, m)?;
    let correctors = start.elapsed().as_secs_f64();
    let mut report = solve_lod_with(&asm, &set, &embed, params)?;
    report.timings.correctors = correctors;
    Ok(report)
}

/// Corrected coarse solve from prebuilt correctors, for reuse across loads
/// and cached corrector sets. The corrector phase is reported as zero.
pub fn solve_lod_with<R: Real>(
    asm: &CorrectorAssembler<R>,
    set: &CorrectorSet<R>,
    embed: &Embedding<R>,
    params: &ProblemParams<R>,
) -> Result<SolveReport<R>, LodError> {
    params.validate()?;
    let coarse = asm.coarse();
    let fine = asm.fine();
    let start = Instant::now();
    let mut system = LodSystem::assemble(asm, set, embed, params);
    let assembly = start.elapsed().as_secs_f64();
    let start = Instant::now();
    system.factorize().map_err(sparse_failure)?;
    let load = system.load().to_vec();
    let (x, residual) = system.solve_with_residual(&load).map_err(sparse_failure)?;
    let solve = start.elapsed().as_secs_f64();
    let m = set.oversampling();
    let inc_g = coarse.macro_mesh().vertex_incidence();
    let inc_y = coarse.cell_mesh().vertex_incidence();
    let diagnostics = LodDiagnostics {
        resolution_slack: resolution_slack(
            fine,
            coarse,
            asm.interpolator(),
            embed,
            params,
            m,
            DIAG_SAMPLES,
            DIAG_SEED,
        ),
        overlap_macro: coarse.macro_mesh().overlap_constant(&inc_g, m.macro_m, None),
        overlap_cell: coarse
            .cell_mesh()
            .overlap_constant(&inc_y, m.cell1_m.max(m.cell2_m), None),
        correctors_solved: set.solves_performed(),
    };
    Ok(SolveReport {
        solution: TwoScaleFunction::from_vec(coarse, x),
        residual,
        timings: PhaseTimings { correctors: 0.0, assembly, solve },
        diagnostics: Some(diagnostics),
    })
}

/// Direct solve of the plain two-scale system on the given space, the
/// reference for error studies. Guards the factorized block sizes rather
/// than the flat dimension, which the condensation never materializes.
pub fn solve_reference<R: Real>(
    space: &TwoScaleSpace<R>,
    params: &ProblemParams<R>,
) -> Result<SolveReport<R>, LodError> {
    params.validate()?;
    let largest = space
        .n_macro_dofs()
        .max(space.n_cell1_dofs() + 1)
        .max(space.n_cell2_dofs());
    if largest > MAX_DIRECT_UNKNOWNS {
        return Err(LodError::TooLarge { dim: largest, max: MAX_DIRECT_UNKNOWNS });
    }
    let start = Instant::now();
    let moments = CellMoments::full(space);
    let mut op = StructuredTwoScaleMatrix::assemble(space, &FormWeights::helmholtz(params), &moments);
    let f = rhs_vector(space, params);
    let assembly = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let norm_b = vec_norm(f.data());
    let x = op.solve(f.data()).map_err(sparse_failure)?;
    // residual with the per-slot multiplier directions projected out
    let residual = if norm_b == R::zero() {
        R::zero()
    } else {
        let mut res = op.apply(&x);
        for (ri, bi) in res.iter_mut().zip(f.data()) {
            *ri = *bi - *ri;
        }
        let c = &moments.c;
        let cc: R = c.iter().map(|&w| w * w).sum();
        if !cc.is_zero() {
            let n0 = space.n_macro_dofs();
            let (n1, n2) = (space.n_cell1_dofs(), space.n_cell2_dofs());
            for sc in 0..space.n_slots() {
                let off1 = n0 + sc * (n1 + n2);
                let mut mu = Cplx::<R>::zero();
                for l in 0..n1 {
                    mu += Cplx::new(c[l], R::zero()) * res[off1 + l];
                }
                mu /= Cplx::new(cc, R::zero());
                for l in 0..n1 {
                    res[off1 + l] -= mu * Cplx::new(c[l], R::zero());
                }
            }
        }
        vec_norm(&res) / norm_b
    };
    let solve = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        solution: TwoScaleFunction::from_vec(space, x),
        residual,
        timings: PhaseTimings { correctors: 0.0, assembly, solve },
        diagnostics: None,
    })
}

/// Energy error of the coarse solution against the fine reference, the best
/// approximation error out of the coarse space (an energy-Gram projection
/// with the per-slot zero-mean constraints), and their ratio.
pub fn error_energy<R: Real>(
    fine: &TwoScaleSpace<R>,
    coarse: &TwoScaleSpace<R>,
    embed: &Embedding<R>,
    k: R,
    reference: &TwoScaleFunction<R>,
    lod: &TwoScaleFunction<R>,
) -> Result<ErrorSummary<R>, LodError> {
    let fm = CellMoments::full(fine);
    let error = {
        let mut diff = embed.apply(lod);
        for (di, ri) in diff.data_mut().iter_mut().zip(reference.data()) {
            *di = *ri - *di;
        }
        energy_norm(fine, k, &fm, &diff)
    };
    let gram_f = StructuredTwoScaleMatrix::assemble(fine, &FormWeights::energy(k), &fm);
    let w = gram_f.apply(reference.data());
    let rhs = embed.apply_adjoint(&TwoScaleFunction::from_vec(fine, w));
    let cm = CellMoments::full(coarse);
    let mut gram_c = StructuredTwoScaleMatrix::assemble(coarse, &FormWeights::energy(k), &cm);
    let z = gram_c.solve(rhs.data()).map_err(sparse_failure)?;
    let best = {
        let mut diff = embed.apply(&TwoScaleFunction::from_vec(coarse, z));
        for (di, ri) in diff.data_mut().iter_mut().zip(reference.data()) {
            *di = *ri - *di;
        }
        energy_norm(fine, k, &fm, &diff)
    };
    let ratio = if best.is_zero() {
        if error.is_zero() {
            R::one()
        } else {
            R::infinity()
        }
    } else {
        error / best
    };
    Ok(ErrorSummary { error, best, ratio })
}

/// Largest pairing of the solve defect with a corrected test basis function:
/// `max_i |B(u_ref - E u_lod, (E - Q) e_i)|`. Near zero when both solves met
/// their tolerances.
pub fn galerkin_orthogonality_check<R: Real>(
    asm: &CorrectorAssembler<R>,
    set: &CorrectorSet<R>,
    embed: &Embedding<R>,
    reference: &TwoScaleFunction<R>,
    lod: &TwoScaleFunction<R>,
) -> R {
    let mut err = embed.apply(lod);
    for (ei, ri) in err.data_mut().iter_mut().zip(reference.data()) {
        *ei = *ri - *ei;
    }
    let w = asm.operator().apply(err.data());
    drop(err);
    let wfn = TwoScaleFunction::from_vec(asm.fine(), w);
    let et = embed.apply_adjoint(&wfn);
    let qt = set.apply_adjoint(asm, &wfn);
    let mut worst = R::zero();
    for (ei, qi) in et.data().iter().zip(qt.data()) {
        worst = worst.max((*ei - *qi).norm());
    }
    worst
}

/// Smallest generalized singular value of a system in the trial/test norm
/// geometry, by inverse power iteration on `M^H Gt^{-1} M` against `Gu`.
/// The caller provides solves with the system and its conjugate transpose,
/// the two Gram applications, and a projection onto the admissible subspace.
#[allow(clippy::too_many_arguments)]
pub fn infsup_estimate<R, S, SCT, GU, GT, P>(
    dim: usize,
    mut solve: S,
    mut solve_ct: SCT,
    mut gram_trial: GU,
    mut gram_test: GT,
    mut constrain: P,
    seed: u64,
    tol: R,
    max_iter: usize,
) -> Result<InfSupEstimate<R>, SparseError>
where
    R: Real,
    S: FnMut(&[Cplx<R>]) -> Result<Vec<Cplx<R>>, SparseError>,
    SCT: FnMut(&[Cplx<R>]) -> Result<Vec<Cplx<R>>, SparseError>,
    GU: FnMut(&[Cplx<R>]) -> Vec<Cplx<R>>,
    GT: FnMut(&[Cplx<R>]) -> Vec<Cplx<R>>,
    P: FnMut(&mut [Cplx<R>]),
{
    assert!(dim > 0, "the iteration needs at least one unknown");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Cplx<R>> = Vec::new();
    for _ in 0..8 {
        x = (0..dim)
            .map(|_| Cplx::new(r(rng.gen_range(-1.0..1.0)), r(rng.gen_range(-1.0..1.0))))
            .collect();
        constrain(&mut x);
        let gx = gram_trial(&x);
        let n = vec_dot(&x, &gx).re;
        if n > R::zero() {
            let scale = Cplx::new(R::one() / n.sqrt(), R::zero());
            for v in &mut x {
                *v *= scale;
            }
            break;
        }
        x.clear();
    }
    assert!(!x.is_empty(), "could not draw a seed vector with positive trial norm");
    let mut lambda = R::zero();
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=max_iter {
        iterations = it;
        let gx = gram_trial(&x);
        let t = solve_ct(&gx)?;
        let gt = gram_test(&t);
        let mut y = solve(&gt)?;
        constrain(&mut y);
        let num = vec_dot(&x, &gx).re;
        let den = vec_dot(&gx, &y).re;
        if !(den > R::zero()) {
            break;
        }
        let next = num / den;
        if it > 1 && (next - lambda).abs() <= tol * next.abs() {
            lambda = next;
            converged = true;
            break;
        }
        lambda = next;
        let gy = gram_trial(&y);
        let ny = vec_dot(&y, &gy).re;
        if !(ny > R::zero()) {
            break;
        }
        let scale = Cplx::new(R::one() / ny.sqrt(), R::zero());
        x = y;
        for v in &mut x {
            *v *= scale;
        }
    }
    Ok(InfSupEstimate { value: lambda.max(R::zero()).sqrt(), converged, iterations })
}

fn mean_projection<R: Real>(
    n0: usize,
    n1: usize,
    n2: usize,
    ns: usize,
    c: Vec<R>,
) -> impl FnMut(&mut [Cplx<R>]) {
    let total: R = c.iter().copied().sum();
    move |x: &mut [Cplx<R>]| {
        if total.is_zero() {
            return;
        }
        for sc in 0..ns {
            let off = n0 + sc * (n1 + n2);
            let mut mean = Cplx::<R>::zero();
            for l in 0..n1 {
                mean += x[off + l] * Cplx::new(c[l], R::zero());
            }
            let shift = mean / Cplx::new(total, R::zero());
            for l in 0..n1 {
                x[off + l] -= shift;
            }
        }
    }
}

/// Discrete inf-sup constant of the plain two-scale system on one space, in
/// the energy-norm geometry on both sides.
pub fn galerkin_infsup<R: Real>(
    space: &TwoScaleSpace<R>,
    params: &ProblemParams<R>,
    seed: u64,
) -> Result<InfSupEstimate<R>, LodError> {
    params.validate()?;
    let moments = CellMoments::full(space);
    let op = RefCell::new(StructuredTwoScaleMatrix::assemble(
        space,
        &FormWeights::helmholtz(params),
        &moments,
    ));
    let gram = StructuredTwoScaleMatrix::assemble(space, &FormWeights::energy(params.k), &moments);
    let constrain = mean_projection(
        space.n_macro_dofs(),
        space.n_cell1_dofs(),
        space.n_cell2_dofs(),
        space.n_slots(),
        moments.c.clone(),
    );
    infsup_estimate(
        space.dim(),
        |b| op.borrow_mut().solve(b),
        |b| op.borrow_mut().solve_conj_transpose(b),
        |x| gram.apply(x),
        |x| gram.apply(x),
        constrain,
        seed,
        r::<R>(INFSUP_TOL),
        INFSUP_MAX_ITER,
    )
    .map_err(sparse_failure)
}

/// Discrete inf-sup constant of the corrected coarse method: coarse trial
/// functions in the coarse energy norm against corrected test functions in
/// the fine energy norm.
pub fn lod_infsup<R: Real>(
    system: &mut LodSystem<R>,
    asm: &CorrectorAssembler<R>,
    set: &CorrectorSet<R>,
    embed: &Embedding<R>,
    params: &ProblemParams<R>,
    seed: u64,
) -> Result<InfSupEstimate<R>, LodError> {
    params.validate()?;
    let coarse = asm.coarse();
    let fine = asm.fine();
    let cm = CellMoments::full(coarse);
    let gram_c = StructuredTwoScaleMatrix::assemble(coarse, &FormWeights::energy(params.k), &cm);
    let gram_f = StructuredTwoScaleMatrix::assemble(fine, &FormWeights::energy(params.k), asm.moments());
    let dim = coarse.dim();
    let sys = RefCell::new(system);
    let constrain = mean_projection(
        coarse.n_macro_dofs(),
        coarse.n_cell1_dofs(),
        coarse.n_cell2_dofs(),
        coarse.n_slots(),
        cm.c.clone(),
    );
    let gram_test = |v: &[Cplx<R>]| -> Vec<Cplx<R>> {
        let vfn = TwoScaleFunction::from_vec(coarse, v.to_vec());
        let mut t = embed.apply(&vfn);
        let q = set.apply(asm, &vfn);
        for (ti, qi) in t.data_mut().iter_mut().zip(q.data()) {
            *ti -= *qi;
        }
        let w = gram_f.apply(t.data());
        drop(t);
        let wfn = TwoScaleFunction::from_vec(fine, w);
        let mut out = embed.apply_adjoint(&wfn);
        let qo = set.apply_adjoint(asm, &wfn);
        for (oi, qi) in out.data_mut().iter_mut().zip(qo.data()) {
            *oi -= *qi;
        }
        out.into_vec()
    };
    infsup_estimate(
        dim,
        |b| sys.borrow_mut().solve(b),
        |b| sys.borrow_mut().solve_conj_transpose(b),
        |x| gram_c.apply(x),
        gram_test,
        constrain,
        seed,
        r::<R>(INFSUP_TOL),
        INFSUP_MAX_ITER,
    )
    .map_err(sparse_failure)
}

/// Least-squares fit of `value ~ C * rate^m` through the positive samples.
/// Returns `None` with fewer than two usable points (exactly zero tails, as
/// saturated patches produce, are skipped).
pub fn fit_geometric_rate<R: Real>(samples: &[(usize, R)]) -> Option<GeometricFit<R>> {
    let pts: Vec<(R, R)> = samples
        .iter()
        .filter(|&&(_, v)| v > R::zero())
        .map(|&(m, v)| (r::<R>(m as f64), v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = r::<R>(pts.len() as f64);
    let mean_x: R = pts.iter().map(|p| p.0).sum::<R>() / n;
    let mean_y: R = pts.iter().map(|p| p.1).sum::<R>() / n;
    let sxx: R = pts.iter().map(|p| (p.0 - mean_x) * (p.0 - mean_x)).sum();
    if sxx.is_zero() {
        return None;
    }
    let sxy: R = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let slope = sxy / sxx;
    let ss_tot: R = pts.iter().map(|p| (p.1 - mean_y) * (p.1 - mean_y)).sum();
    let ss_res: R = pts
        .iter()
        .map(|p| {
            let fit = mean_y + slope * (p.0 - mean_x);
            (p.1 - fit) * (p.1 - fit)
        })
        .sum();
    let r_squared =
        if ss_tot > R::zero() { (R::one() - ss_res / ss_tot).max(R::zero()) } else { R::one() };
    Some(GeometricFit { rate: slope.exp(), r_squared })
}

/// Oversampling order for a wave number from a measured decay rate:
/// `max(2, ceil(log k / |log rate|))`, with the rate clamped away from the
/// degenerate ends.
pub fn oversampling_for_wavenumber<R: Real>(k: R, rate: R) -> usize {
    if !(k > R::one()) {
        return 2;
    }
    let clamped = rate.max(r(1e-6)).min(r(0.99));
    let m = (k.ln() / clamped.ln().abs()).ceil();
    num_traits::ToPrimitive::to_usize(&m).unwrap_or(2).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{Rect, Triangulation2D};
    use crate::sparse::solve_sparse;
    use crate::twoscale::{eval_form, BoundaryDatum};
    use rand::rngs::StdRng;

    type C = Cplx<f64>;

    struct Setup {
        coarse: TwoScaleSpace<f64>,
        fine: TwoScaleSpace<f64>,
    }

    fn setup_levels(levels: usize) -> Setup {
        let gc = Triangulation2D::<f64>::macro_grid(4, Some(Rect::new(0.25, 0.25, 0.75, 0.75)))
            .unwrap();
        let yc = Triangulation2D::<f64>::cell_grid(4, Rect::centered_square(0.5)).unwrap();
        let gf = gc.refine_uniform(levels);
        let yf = yc.refine_uniform(levels);
        Setup {
            coarse: TwoScaleSpace::build(gc, yc).unwrap(),
            fine: TwoScaleSpace::build(gf, yf).unwrap(),
        }
    }

    fn setup() -> Setup {
        setup_levels(1)
    }

    fn params(k: f64) -> ProblemParams<f64> {
        ProblemParams {
            k,
            eps_e: 2.0,
            eps_i: C::new(1.0, 0.5),
            boundary: BoundaryDatum::PlaneWave { direction: [1.0, 0.0] },
            quad_splits: 3,
        }
    }

    fn random_vec(n: usize, rng: &mut StdRng) -> Vec<C> {
        (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect()
    }

    fn unit(space: &TwoScaleSpace<f64>, idx: usize) -> TwoScaleFunction<f64> {
        let mut v = TwoScaleFunction::zeros(space);
        v.data_mut()[idx] = C::new(1.0, 0.0);
        v
    }

    #[test]
    fn zero_boundary_data_yields_the_zero_solution() {
        let s = setup();
        let mut p = params(2.0);
        p.boundary = BoundaryDatum::Constant(C::new(0.0, 0.0));
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let report = solve_lod(&s.coarse, &s.fine, &p, &interp, Oversampling::uniform(1)).unwrap();
        assert_eq!(report.residual, 0.0);
        assert!(report.solution.data().iter().all(|v| v.is_zero()));
    }

    #[test]
    fn matching_spaces_reproduce_the_plain_coarse_solution() {
        let s = setup_levels(0);
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let report =
            solve_lod(&s.coarse, &s.fine, &p, &interp, Oversampling::ideal()).unwrap();
        let moments = CellMoments::full(&s.coarse);
        let mut op =
            StructuredTwoScaleMatrix::assemble(&s.coarse, &FormWeights::helmholtz(&p), &moments);
        let b = rhs_vector(&s.coarse, &p);
        let direct = op.solve(b.data()).unwrap();
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in report.solution.data().iter().zip(&direct) {
            diff += (a - b).norm_sqr();
            scale += b.norm_sqr();
        }
        assert!(diff.sqrt() <= 1e-8 * scale.sqrt(), "relative gap {}", diff.sqrt() / scale.sqrt());
    }

    #[test]
    fn dimension_is_fixed_by_the_coarse_space() {
        let p = params(2.0);
        let mut dims = Vec::new();
        for levels in [1, 2] {
            let s = setup_levels(levels);
            let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
            let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
            for m in [1usize, 2] {
                let asm = CorrectorAssembler::new(
                    &s.coarse,
                    &s.fine,
                    &interp,
                    FormWeights::helmholtz(&p),
                )
                .unwrap();
                let set = CorrectorSet::build(&asm, Oversampling::uniform(m)).unwrap();
                let system = LodSystem::assemble(&asm, &set, &embed, &p);
                assert_eq!(system.dim(), s.coarse.dim());
                dims.push(system.dim());
            }
        }
        assert!(dims.windows(2).all(|w| w[0] == w[1]), "dims vary: {dims:?}");
    }

    #[test]
    fn assembled_entries_match_the_form_on_corrected_pairs() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let system = LodSystem::assemble(&asm, &set, &embed, &p);
        let dim = system.dim();
        let matrix = Csr::from_triplets(dim, dim, system.to_triplets());

        let n0 = s.coarse.n_macro_dofs();
        let probe = TwoScaleFunction::zeros(&s.coarse);
        let mut indices: Vec<usize> = (0..n0).collect();
        for sc in [0, s.coarse.n_slots() / 2] {
            indices.extend(probe.cell1_range(sc));
            indices.extend(probe.cell2_range(sc));
        }
        let weights = FormWeights::helmholtz(&p);
        for &i in &indices {
            let ei = unit(&s.coarse, i);
            let mut test = embed.apply(&ei);
            let q = set.apply(&asm, &ei);
            for (ti, qi) in test.data_mut().iter_mut().zip(q.data()) {
                *ti -= *qi;
            }
            for &j in &indices {
                let trial = embed.apply(&unit(&s.coarse, j));
                let want =
                    eval_form(&s.fine, &weights, asm.moments(), None, true, &trial, &test);
                let got = matrix.get(i, j);
                assert!(
                    (want - got).norm() <= 1e-9 * (1.0 + want.norm()),
                    "entry ({i}, {j}): {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn triplets_and_structured_application_agree() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let system = LodSystem::assemble(&asm, &set, &embed, &p);
        let dim = system.dim();
        let matrix = Csr::from_triplets(dim, dim, system.to_triplets());
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..3 {
            let x = random_vec(dim, &mut rng);
            let direct = matrix.apply(&x);
            let structured = system.apply(&x);
            let direct_ct = matrix.apply_conj_transpose(&x);
            let structured_ct = system.apply_conj_transpose(&x);
            for (a, b) in structured.iter().zip(&direct) {
                assert!((a - b).norm() <= 1e-11 * (1.0 + b.norm()));
            }
            for (a, b) in structured_ct.iter().zip(&direct_ct) {
                assert!((a - b).norm() <= 1e-11 * (1.0 + b.norm()));
            }
        }
    }

    #[test]
    fn condensed_solve_matches_a_direct_bordered_factorization() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let mut system = LodSystem::assemble(&asm, &set, &embed, &p);
        let dim = system.dim();
        let ns = s.coarse.n_slots();
        let n0 = s.coarse.n_macro_dofs();
        let (n1, n2) = (s.coarse.n_cell1_dofs(), s.coarse.n_cell2_dofs());
        let mut rng = StdRng::seed_from_u64(9);
        let b = random_vec(dim, &mut rng);
        let x = system.solve(&b).unwrap();

        let mut trips = system.to_triplets();
        let c = s.coarse.cell1_map().integral_weights();
        for sc in 0..ns {
            let off1 = n0 + sc * (n1 + n2);
            for (l, &w) in c.iter().enumerate() {
                trips.push((off1 + l, dim + sc, C::new(w, 0.0)));
                trips.push((dim + sc, off1 + l, C::new(w, 0.0)));
            }
        }
        let a = Csr::from_triplets(dim + ns, dim + ns, trips);
        let mut rhs = b.clone();
        rhs.resize(dim + ns, C::new(0.0, 0.0));
        let direct = solve_sparse(&a, &rhs).unwrap();
        let mut diff = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in x.iter().zip(&direct[..dim]) {
            diff += (a - b).norm_sqr();
            scale += b.norm_sqr();
        }
        assert!(diff.sqrt() <= 1e-8 * scale.sqrt(), "relative gap {}", diff.sqrt() / scale.sqrt());
    }

    #[test]
    fn forward_and_adjoint_solves_are_dual() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let mut system = LodSystem::assemble(&asm, &set, &embed, &p);
        let mut rng = StdRng::seed_from_u64(13);
        let b1 = random_vec(system.dim(), &mut rng);
        let b2 = random_vec(system.dim(), &mut rng);
        let x1 = system.solve(&b1).unwrap();
        let x2 = system.solve_conj_transpose(&b2).unwrap();
        let left = vec_dot(&x2, &b1);
        let right = vec_dot(&b2, &x1);
        assert!(
            (left - right).norm() <= 1e-9 * (1.0 + left.norm()),
            "{left} vs {right}"
        );
    }

    #[test]
    fn lod_solution_is_orthogonal_to_the_corrected_test_space() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(2)).unwrap();
        let lod = solve_lod_with(&asm, &set, &embed, &p).unwrap();
        let reference = solve_reference(&s.fine, &p).unwrap();
        let load_norm = {
            let f = rhs_vector(&s.fine, &p);
            vec_norm(f.data())
        };
        let value = galerkin_orthogonality_check(
            &asm,
            &set,
            &embed,
            &reference.solution,
            &lod.solution,
        );
        assert!(value <= 1e-8 * load_norm, "defect pairing {value}, load norm {load_norm}");

        let mut rng = StdRng::seed_from_u64(21);
        let mut perturbed = lod.solution.clone();
        for v in perturbed.macro_block_mut() {
            *v += C::new(0.01 * rng.gen_range(-1.0..1.0), 0.01 * rng.gen_range(-1.0..1.0));
        }
        let broken = galerkin_orthogonality_check(
            &asm,
            &set,
            &embed,
            &reference.solution,
            &perturbed,
        );
        assert!(broken > 100.0 * (value + 1e-300), "perturbation stayed orthogonal: {broken}");
    }

    #[test]
    fn error_summary_orders_error_and_best_approximation() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(2)).unwrap();
        let lod = solve_lod_with(&asm, &set, &embed, &p).unwrap();
        let reference = solve_reference(&s.fine, &p).unwrap();
        let es = error_energy(
            &s.fine,
            &s.coarse,
            &embed,
            p.k,
            &reference.solution,
            &lod.solution,
        )
        .unwrap();
        assert!(es.best > 0.0);
        assert!(es.error >= es.best * (1.0 - 1e-10), "error {} best {}", es.error, es.best);
        assert!(es.ratio >= 1.0 - 1e-10);
        assert!((es.ratio - es.error / es.best).abs() <= 1e-12);
    }

    #[test]
    fn identity_solves_estimate_a_unit_infsup() {
        let est = infsup_estimate(
            40,
            |b: &[C]| Ok::<_, SparseError>(b.to_vec()),
            |b: &[C]| Ok::<_, SparseError>(b.to_vec()),
            |x: &[C]| x.to_vec(),
            |x: &[C]| x.to_vec(),
            |_: &mut [C]| {},
            7,
            1e-6,
            50,
        )
        .unwrap();
        assert!(est.converged);
        assert_eq!(est.iterations, 2);
        assert!((est.value - 1.0).abs() <= 1e-9, "value {}", est.value);
    }

    #[test]
    fn plain_galerkin_infsup_is_positive() {
        let s = setup();
        let p = params(2.0);
        let est = galerkin_infsup(&s.coarse, &p, 7).unwrap();
        assert!(est.converged, "no convergence after {} iterations", est.iterations);
        assert!(est.value > 0.0);
        assert!(est.value < 10.0, "implausibly large inf-sup {}", est.value);
    }

    #[test]
    fn corrected_system_infsup_is_positive() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let mut system = LodSystem::assemble(&asm, &set, &embed, &p);
        let est = lod_infsup(&mut system, &asm, &set, &embed, &p, 3).unwrap();
        assert!(est.converged, "no convergence after {} iterations", est.iterations);
        assert!(est.value > 0.0);
    }

    #[test]
    fn reference_solve_meets_its_residual_contract() {
        let s = setup();
        let p = params(2.0);
        let report = solve_reference(&s.fine, &p).unwrap();
        assert!(report.residual <= 1e-10, "residual {}", report.residual);
        assert!(report.diagnostics.is_none());
        assert!(vec_norm(report.solution.data()) > 0.0);
    }

    #[test]
    fn report_diagnostics_cover_the_corrector_phase() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let report = solve_lod(&s.coarse, &s.fine, &p, &interp, Oversampling::uniform(1)).unwrap();
        assert!(report.residual <= 1e-10);
        assert_eq!(report.solution.dim(), s.coarse.dim());
        let d = report.diagnostics.expect("corrected solves carry diagnostics");
        assert!(d.correctors_solved > 0);
        assert!(d.overlap_macro >= 1);
        assert!(d.overlap_cell >= 1);
        assert!(d.resolution_slack > 0.0);
        assert!(report.timings.correctors > 0.0);
    }

    #[test]
    fn zero_rhs_short_circuits_the_condensation() {
        let s = setup();
        let p = params(2.0);
        let interp = QuasiInterpolator::build(&s.fine, &s.coarse).unwrap();
        let embed = Embedding::build(&s.fine, &s.coarse).unwrap();
        let asm =
            CorrectorAssembler::new(&s.coarse, &s.fine, &interp, FormWeights::helmholtz(&p))
                .unwrap();
        let set = CorrectorSet::build(&asm, Oversampling::uniform(1)).unwrap();
        let mut system = LodSystem::assemble(&asm, &set, &embed, &p);
        let (x, rel) = system.solve_with_residual(&vec![C::new(0.0, 0.0); system.dim()]).unwrap();
        assert_eq!(rel, 0.0);
        assert!(x.iter().all(|v| v.is_zero()));
    }

    #[test]
    fn sparse_errors_map_to_solver_diagnoses() {
        let singular = sparse_failure(SparseError::SingularPivot { col: 3, pivot_mag: 0.0 });
        assert!(matches!(singular, LodError::IllPosed { .. }));
        let slow = sparse_failure(SparseError::ResidualTooLarge { achieved: 1.0, required: 1e-10 });
        assert!(matches!(slow, LodError::Solve(_)));
    }

    #[test]
    fn geometric_fit_recovers_a_planted_decay() {
        let samples: Vec<(usize, f64)> =
            (0..6).map(|m| (m, 3.0 * 0.4f64.powi(m as i32))).collect();
        let fit = fit_geometric_rate(&samples).unwrap();
        assert!((fit.rate - 0.4).abs() <= 1e-12);
        assert!(fit.r_squared >= 1.0 - 1e-12);

        let mut with_tail = samples.clone();
        with_tail.push((6, 0.0));
        with_tail.push((7, 0.0));
        let fit = fit_geometric_rate(&with_tail).unwrap();
        assert!((fit.rate - 0.4).abs() <= 1e-12, "saturated tails must be skipped");

        let flat = [(0usize, 2.0f64), (1, 2.0), (2, 2.0)];
        let fit = fit_geometric_rate(&flat).unwrap();
        assert!((fit.rate - 1.0).abs() <= 1e-12);
        assert!((fit.r_squared - 1.0).abs() <= 1e-12);

        assert!(fit_geometric_rate(&[(0usize, 1.0f64)]).is_none());
        assert!(fit_geometric_rate(&[(0usize, 0.0f64), (1, 0.0)]).is_none());
    }

    #[test]
    fn oversampling_radius_tracks_the_wave_number() {
        assert_eq!(oversampling_for_wavenumber(1.0f64, 0.5), 2);
        assert_eq!(oversampling_for_wavenumber(0.5f64, 0.5), 2);
        assert_eq!(oversampling_for_wavenumber(16.0f64, 0.5), 4);
        let low = oversampling_for_wavenumber(16.0f64, 0.5);
        let high = oversampling_for_wavenumber(32.0f64, 0.5);
        assert!(high >= low);
        // degenerate rates clamp instead of overflowing
        assert!(oversampling_for_wavenumber(8.0f64, 0.0) >= 2);
        assert!(oversampling_for_wavenumber(8.0f64, 1.0) >= 2);
    }
}
