//! Quasi-interpolation onto a coarse triple space and the geometric embedding
//! back into the fine one.
//!
//! Both operators assume the fine meshes were produced by
//! [`Triangulation2D::refine_uniform`] on the coarse ones, so every fine
//! triangle knows its coarse parent.
//!
//! The scalar interpolation is an Oswald-type operator: project onto P1 over
//! each coarse element with the exact element mass matrix, then assign each
//! coarse vertex the arithmetic average of the element values meeting there.
//! Averages respect region fences (cell profiles only see their own region's
//! elements), the inclusion space keeps its zero trace because boundary
//! classes simply carry no dofs, and the periodic profile is re-centered to
//! zero mean after averaging. Cell components are first pooled in the macro
//! direction: the fine profiles of one coarse triangle combine with weights
//! `|t| / |T|` before the scalar map is applied.
//!
//! The interpolation matrices double as corrector constraints: a fine
//! function lies in the corrector kernel exactly when the rows of the scalar
//! maps annihilate it. The re-centered periodic map has one dependent row,
//! which [`QuasiInterpolator::cell1_kernel_rows`] drops to keep the
//! constraint set linearly independent.

use crate::fem::DofMap;
use crate::mesh::{Region, Triangulation2D};
use crate::scalar::{r, Cplx, Real};
use crate::sparse::{Csr, Triplet};
use crate::twoscale::{
    eval_form, gradient_seminorm, CellMoments, FormWeights, TwoScaleFunction, TwoScaleSpace,
};
use num_traits::Zero;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Errors from pairing a fine and a coarse space.
#[derive(Debug, thiserror::Error)]
pub enum InterpError {
    #[error("the fine {0} mesh does not carry parents into the coarse one")]
    MissingParents(&'static str),
    #[error("the fine {0} mesh parents do not match the coarse mesh")]
    BadParents(&'static str),
    #[error("region labels disagree across the {0} refinement")]
    LabelMismatch(&'static str),
}

fn validate_pair<R: Real>(
    fine: &Triangulation2D<R>,
    coarse: &Triangulation2D<R>,
    which: &'static str,
) -> Result<(), InterpError> {
    let parents = fine.parents().ok_or(InterpError::MissingParents(which))?;
    if parents.len() != fine.n_triangles()
        || fine.n_triangles() != coarse.n_triangles() * (fine.n_triangles() / coarse.n_triangles())
    {
        return Err(InterpError::BadParents(which));
    }
    for (t, &p) in parents.iter().enumerate() {
        if p >= coarse.n_triangles() {
            return Err(InterpError::BadParents(which));
        }
        if fine.label(t) != coarse.label(p) {
            return Err(InterpError::LabelMismatch(which));
        }
    }
    Ok(())
}

/// children[T] = fine triangles whose parent is T
fn children_of<R: Real>(fine: &Triangulation2D<R>, coarse: &Triangulation2D<R>) -> Vec<Vec<usize>> {
    let mut children = vec![Vec::new(); coarse.n_triangles()];
    for (t, &p) in fine.parents().unwrap().iter().enumerate() {
        children[p].push(t);
    }
    children
}

/// Scalar Oswald interpolation matrix (coarse dofs x fine dofs) over the
/// elements of one region (all elements when `region` is `None`).
fn scalar_interpolation<R: Real>(
    fine_mesh: &Triangulation2D<R>,
    fine_map: &DofMap<R>,
    coarse_mesh: &Triangulation2D<R>,
    coarse_map: &DofMap<R>,
    region: Option<Region>,
) -> Csr<R> {
    let tris: Vec<usize> = match region {
        Some(reg) => coarse_mesh.labeled_triangles(reg),
        None => (0..coarse_mesh.n_triangles()).collect(),
    };
    let children = children_of(fine_mesh, coarse_mesh);
    // per coarse dof: accumulated element rows and the incidence count
    let mut accum: Vec<Vec<(usize, R)>> = vec![Vec::new(); coarse_map.n_dofs()];
    let mut count = vec![0usize; coarse_map.n_dofs()];
    let half = r::<R>(0.5);
    let third = R::one() / r(3.0);
    for &tc in &tris {
        let area_t = coarse_mesh.tri_area(tc);
        // element projection: rows of M_T^{-1} A_T, assembled as a dense
        // 3 x (local fine dof) block
        let mut cols: Vec<usize> = Vec::new();
        let mut rhs_rows: Vec<[R; 3]> = Vec::new();
        let mut col_pos: std::collections::BTreeMap<usize, usize> = std::collections::BTreeMap::new();
        for &tf in &children[tc] {
            let p = fine_mesh.tri_coords(tf);
            let area_f = fine_mesh.tri_area(tf);
            let tri = fine_mesh.triangle(tf);
            // midpoint rule on the fine triangle, exact for the P1 x P1
            // integrand
            for e in 0..3 {
                let (a, b) = (e, (e + 1) % 3);
                let mid = [(p[a][0] + p[b][0]) * half, (p[a][1] + p[b][1]) * half];
                let bary = coarse_mesh.barycentric(tc, mid);
                let w = area_f * third * half;
                for &v in &[tri[a], tri[b]] {
                    if let Some(d) = fine_map.dof_of_vertex(v) {
                        let pos = *col_pos.entry(d).or_insert_with(|| {
                            cols.push(d);
                            rhs_rows.push([R::zero(); 3]);
                            cols.len() - 1
                        });
                        for i in 0..3 {
                            rhs_rows[pos][i] += w * bary[i];
                        }
                    }
                }
            }
        }
        // exact inverse of the P1 element mass matrix
        let s = r::<R>(3.0) / area_t;
        let minv = [
            [s * r(3.0), -s, -s],
            [-s, s * r(3.0), -s],
            [-s, -s, s * r(3.0)],
        ];
        let tri_c = coarse_mesh.triangle(tc);
        for i in 0..3 {
            let Some(dof) = coarse_map.dof_of_vertex(tri_c[i]) else { continue };
            count[dof] += 1;
            for (pos, &col) in cols.iter().enumerate() {
                let mut val = R::zero();
                for j in 0..3 {
                    val += minv[i][j] * rhs_rows[pos][j];
                }
                accum[dof].push((col, val));
            }
        }
    }
    let mut trips: Vec<Triplet<R>> = Vec::new();
    for (dof, entries) in accum.into_iter().enumerate() {
        if count[dof] == 0 {
            continue;
        }
        let scale = R::one() / r(count[dof] as f64);
        for (col, val) in entries {
            trips.push((dof, col, Cplx::new(val * scale, R::zero())));
        }
    }
    Csr::from_triplets(coarse_map.n_dofs(), fine_map.n_dofs(), trips)
}

/// Geometric embedding of the coarse triple space into the fine one: point
/// evaluation of the coarse functions at the fine vertices, with each coarse
/// slot profile copied to all its fine child slots.
pub struct Embedding<R: Real> {
    e0: Csr<R>,
    e1: Csr<R>,
    e2: Csr<R>,
    /// fine slot -> coarse slot
    slot_parent: Vec<usize>,
    fine_dims: (usize, usize, usize, usize),
    coarse_dims: (usize, usize, usize, usize),
}

/// Point-evaluation matrix of coarse P1 functions at fine dof positions.
fn scalar_embedding<R: Real>(
    fine_mesh: &Triangulation2D<R>,
    fine_map: &DofMap<R>,
    coarse_mesh: &Triangulation2D<R>,
    coarse_map: &DofMap<R>,
) -> Csr<R> {
    let parents = fine_mesh.parents().unwrap();
    let mut trips: Vec<Triplet<R>> = Vec::new();
    let mut done = vec![false; fine_map.n_dofs()];
    let tiny = r::<R>(1e-13);
    for t in 0..fine_mesh.n_triangles() {
        let tc = parents[t];
        let tri_c = coarse_mesh.triangle(tc);
        for &v in &fine_mesh.triangle(t) {
            let Some(d) = fine_map.dof_of_vertex(v) else { continue };
            if done[d] {
                continue;
            }
            done[d] = true;
            let bary = coarse_mesh.barycentric(tc, fine_mesh.vertex(v));
            for i in 0..3 {
                if bary[i].abs() <= tiny {
                    continue;
                }
                if let Some(dc) = coarse_map.dof_of_vertex(tri_c[i]) {
                    trips.push((d, dc, Cplx::new(bary[i], R::zero())));
                }
            }
        }
    }
    Csr::from_triplets(fine_map.n_dofs(), coarse_map.n_dofs(), trips)
}

impl<R: Real> Embedding<R> {
    pub fn build(
        fine: &TwoScaleSpace<R>,
        coarse: &TwoScaleSpace<R>,
    ) -> Result<Self, InterpError> {
        validate_pair(fine.macro_mesh(), coarse.macro_mesh(), "macro")?;
        validate_pair(fine.cell_mesh(), coarse.cell_mesh(), "cell")?;
        let e0 = scalar_embedding(
            fine.macro_mesh(),
            fine.macro_map(),
            coarse.macro_mesh(),
            coarse.macro_map(),
        );
        let e1 = scalar_embedding(
            fine.cell_mesh(),
            fine.cell1_map(),
            coarse.cell_mesh(),
            coarse.cell1_map(),
        );
        let e2 = scalar_embedding(
            fine.cell_mesh(),
            fine.cell2_map(),
            coarse.cell_mesh(),
            coarse.cell2_map(),
        );
        let parents = fine.macro_mesh().parents().unwrap();
        let slot_parent = fine
            .x_partition()
            .iter()
            .map(|&t| coarse.slot_of(parents[t]).expect("consistent labels"))
            .collect();
        Ok(Self {
            e0,
            e1,
            e2,
            slot_parent,
            fine_dims: (
                fine.n_macro_dofs(),
                fine.n_cell1_dofs(),
                fine.n_cell2_dofs(),
                fine.n_slots(),
            ),
            coarse_dims: (
                coarse.n_macro_dofs(),
                coarse.n_cell1_dofs(),
                coarse.n_cell2_dofs(),
                coarse.n_slots(),
            ),
        })
    }

    /// fine slot -> coarse slot
    pub fn slot_parent(&self) -> &[usize] {
        &self.slot_parent
    }

    /// Macro embedding columns (fine macro dofs x coarse macro dofs).
    pub fn macro_matrix(&self) -> &Csr<R> {
        &self.e0
    }

    /// Periodic-cell embedding columns.
    pub fn cell1_matrix(&self) -> &Csr<R> {
        &self.e1
    }

    /// Inclusion embedding columns.
    pub fn cell2_matrix(&self) -> &Csr<R> {
        &self.e2
    }

    /// Embeds a coarse triple into the fine space.
    pub fn apply(&self, coarse: &TwoScaleFunction<R>) -> TwoScaleFunction<R> {
        let (n0, n1, n2, ns) = self.fine_dims;
        let mut out = TwoScaleFunction::from_dims(n0, n1, n2, ns);
        self.e0.apply_add_into(coarse.macro_block(), &mut out.macro_block_mut()[..]);
        for sf in 0..ns {
            let sc = self.slot_parent[sf];
            self.e1.apply_add_into(coarse.cell1_block(sc), out.cell1_block_mut(sf));
            self.e2.apply_add_into(coarse.cell2_block(sc), out.cell2_block_mut(sf));
        }
        out
    }

    /// Hermitian adjoint of [`Embedding::apply`] with respect to the flat
    /// coefficient inner product.
    pub fn apply_adjoint(&self, fine: &TwoScaleFunction<R>) -> TwoScaleFunction<R> {
        let (n0, n1, n2, ns) = self.coarse_dims;
        let mut out = TwoScaleFunction::from_dims(n0, n1, n2, ns);
        let y0 = self.e0.apply_conj_transpose(fine.macro_block());
        out.macro_block_mut().copy_from_slice(&y0);
        for sf in 0..self.fine_dims.3 {
            let sc = self.slot_parent[sf];
            let y1 = self.e1.apply_conj_transpose(fine.cell1_block(sf));
            for (o, v) in out.cell1_block_mut(sc).iter_mut().zip(&y1) {
                *o += *v;
            }
            let y2 = self.e2.apply_conj_transpose(fine.cell2_block(sf));
            for (o, v) in out.cell2_block_mut(sc).iter_mut().zip(&y2) {
                *o += *v;
            }
        }
        out
    }
}

/// The quasi-interpolation operator from the fine onto the coarse triple
/// space.
pub struct QuasiInterpolator<R: Real> {
    r0: Csr<R>,
    /// nodal periodic projection, before re-centering
    p1: Csr<R>,
    /// re-centered periodic map
    r1: Csr<R>,
    /// `r1` with its dependent row removed
    r1_kernel: Csr<R>,
    r2: Csr<R>,
    /// coarse slot -> (fine slot, area weight)
    slot_agg: Vec<Vec<(usize, R)>>,
    slot_parent: Vec<usize>,
    coarse_dims: (usize, usize, usize, usize),
}

impl<R: Real> QuasiInterpolator<R> {
    pub fn build(
        fine: &TwoScaleSpace<R>,
        coarse: &TwoScaleSpace<R>,
    ) -> Result<Self, InterpError> {
        validate_pair(fine.macro_mesh(), coarse.macro_mesh(), "macro")?;
        validate_pair(fine.cell_mesh(), coarse.cell_mesh(), "cell")?;
        let r0 = scalar_interpolation(
            fine.macro_mesh(),
            fine.macro_map(),
            coarse.macro_mesh(),
            coarse.macro_map(),
            None,
        );
        let p1 = scalar_interpolation(
            fine.cell_mesh(),
            fine.cell1_map(),
            coarse.cell_mesh(),
            coarse.cell1_map(),
            Some(Region::Outer),
        );
        let r2 = scalar_interpolation(
            fine.cell_mesh(),
            fine.cell2_map(),
            coarse.cell_mesh(),
            coarse.cell2_map(),
            Some(Region::Inner),
        );
        // re-center: subtract the weighted coarse mean so the image satisfies
        // the zero-mean constraint
        let c = coarse.cell1_map().integral_weights();
        let inv_area = R::one() / coarse.cell1_map().region_area();
        let n1h = coarse.n_cell1_dofs();
        let mut mean_row = vec![Cplx::<R>::zero(); fine.n_cell1_dofs()];
        for i in 0..n1h {
            let (cols, vals) = p1.row(i);
            let ci = Cplx::new(c[i] * inv_area, R::zero());
            for (&j, &v) in cols.iter().zip(vals) {
                mean_row[j] += ci * v;
            }
        }
        let mut trips: Vec<Triplet<R>> = Vec::new();
        for i in 0..n1h {
            let (cols, vals) = p1.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                trips.push((i, j, v));
            }
            for (j, &m) in mean_row.iter().enumerate() {
                if !m.is_zero() {
                    trips.push((i, j, -m));
                }
            }
        }
        let r1 = Csr::from_triplets(n1h, fine.n_cell1_dofs(), trips);
        // the c-weighted combination of the re-centered rows vanishes, so one
        // row is dependent; drop the one with the largest weight
        let drop = c
            .iter()
            .enumerate()
            .max_by(|(i, a), (j, b)| a.partial_cmp(b).unwrap().then(j.cmp(i)))
            .map(|(i, _)| i)
            .unwrap();
        let mut ktrips: Vec<Triplet<R>> = Vec::new();
        for i in 0..n1h {
            if i == drop {
                continue;
            }
            let row = if i < drop { i } else { i - 1 };
            let (cols, vals) = r1.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                ktrips.push((row, j, v));
            }
        }
        let r1_kernel = Csr::from_triplets(n1h - 1, fine.n_cell1_dofs(), ktrips);
        // macro pooling weights
        let parents = fine.macro_mesh().parents().unwrap();
        let mut slot_agg = vec![Vec::new(); coarse.n_slots()];
        let mut slot_parent = Vec::with_capacity(fine.n_slots());
        for (sf, &tf) in fine.x_partition().iter().enumerate() {
            let tc = parents[tf];
            let sc = coarse.slot_of(tc).expect("consistent labels");
            let w = fine.macro_mesh().tri_area(tf) / coarse.macro_mesh().tri_area(tc);
            slot_agg[sc].push((sf, w));
            slot_parent.push(sc);
        }
        Ok(Self {
            r0,
            p1,
            r1,
            r1_kernel,
            r2,
            slot_agg,
            slot_parent,
            coarse_dims: (
                coarse.n_macro_dofs(),
                coarse.n_cell1_dofs(),
                coarse.n_cell2_dofs(),
                coarse.n_slots(),
            ),
        })
    }

    /// Interpolates a fine triple onto the coarse space.
    pub fn apply(&self, fine: &TwoScaleFunction<R>) -> TwoScaleFunction<R> {
        let (n0, n1h, n2h, nsh) = self.coarse_dims;
        let mut out = TwoScaleFunction::from_dims(n0, n1h, n2h, nsh);
        self.r0.apply_add_into(fine.macro_block(), &mut out.macro_block_mut()[..]);
        let n1f = self.r1.ncols();
        let n2f = self.r2.ncols();
        for (sc, agg) in self.slot_agg.iter().enumerate() {
            let mut pooled1 = vec![Cplx::<R>::zero(); n1f];
            let mut pooled2 = vec![Cplx::<R>::zero(); n2f];
            for &(sf, w) in agg {
                let wc = Cplx::new(w, R::zero());
                for (p, v) in pooled1.iter_mut().zip(fine.cell1_block(sf)) {
                    *p += wc * v;
                }
                for (p, v) in pooled2.iter_mut().zip(fine.cell2_block(sf)) {
                    *p += wc * v;
                }
            }
            self.r1.apply_add_into(&pooled1, out.cell1_block_mut(sc));
            self.r2.apply_add_into(&pooled2, out.cell2_block_mut(sc));
        }
        out
    }

    /// Macro interpolation rows (coarse macro dofs x fine macro dofs); the
    /// macro corrector constraints.
    pub fn macro_rows(&self) -> &Csr<R> {
        &self.r0
    }

    /// Full re-centered periodic interpolation rows.
    pub fn cell1_rows(&self) -> &Csr<R> {
        &self.r1
    }

    /// Nodal periodic projection rows before re-centering. Unlike the
    /// re-centered rows these have local support, so restricting them to a
    /// patch keeps them independent.
    pub fn cell1_projection_rows(&self) -> &Csr<R> {
        &self.p1
    }

    /// Independent periodic constraint rows (one dependent row dropped).
    pub fn cell1_kernel_rows(&self) -> &Csr<R> {
        &self.r1_kernel
    }

    /// Inclusion interpolation rows; the inclusion corrector constraints.
    pub fn cell2_rows(&self) -> &Csr<R> {
        &self.r2
    }

    /// fine slot -> coarse slot
    pub fn slot_parents(&self) -> &[usize] {
        &self.slot_parent
    }

    /// Pooling weights of one coarse slot over its fine slots.
    pub fn slot_aggregation(&self, coarse_slot: usize) -> &[(usize, R)] {
        &self.slot_agg[coarse_slot]
    }
}

/// Seeded sample estimate of the interpolation-kernel smallness constant:
/// the largest ratio of the paired mass norm to `H` times the gradient
/// seminorm over random fine functions projected onto the kernel.
pub fn measured_kernel_constant<R: Real>(
    fine: &TwoScaleSpace<R>,
    coarse: &TwoScaleSpace<R>,
    interp: &QuasiInterpolator<R>,
    embed: &Embedding<R>,
    samples: usize,
    seed: u64,
) -> R {
    let moments = CellMoments::full(fine);
    let mass_only = FormWeights {
        grad_coupled: Cplx::zero(),
        grad_outer: Cplx::zero(),
        grad_incl: Cplx::zero(),
        mass: Cplx::new(R::one(), R::zero()),
        boundary: Cplx::zero(),
    };
    let h = coarse.macro_mesh().mesh_size();
    let c = fine.cell1_map().integral_weights().to_vec();
    let total: R = c.iter().fold(R::zero(), |a, &b| a + b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = R::zero();
    for _ in 0..samples {
        let mut v = TwoScaleFunction::from_dims(
            fine.n_macro_dofs(),
            fine.n_cell1_dofs(),
            fine.n_cell2_dofs(),
            fine.n_slots(),
        );
        for x in v.data_mut() {
            *x = Cplx::new(r(rng.gen_range(-1.0..1.0)), r(rng.gen_range(-1.0..1.0)));
        }
        for s in 0..fine.n_slots() {
            let mean: Cplx<R> = v
                .cell1_block(s)
                .iter()
                .zip(&c)
                .map(|(x, &w)| x * Cplx::new(w, R::zero()))
                .sum();
            let shift = mean / Cplx::new(total, R::zero());
            for x in v.cell1_block_mut(s) {
                *x -= shift;
            }
        }
        let coarse_part = embed.apply(&interp.apply(&v));
        let mut w = v;
        for (a, b) in w.data_mut().iter_mut().zip(coarse_part.data()) {
            *a -= *b;
        }
        let l2 = eval_form(fine, &mass_only, &moments, None, false, &w, &w)
            .re
            .max(R::zero())
            .sqrt();
        let grad = gradient_seminorm(fine, &moments, &w);
        if grad > R::zero() {
            let ratio = l2 / (h * grad);
            if ratio > worst {
                worst = ratio;
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;
    use rand::rngs::StdRng;

    type C = Cplx<f64>;

    fn pair() -> (TwoScaleSpace<f64>, TwoScaleSpace<f64>) {
        let gc = Triangulation2D::<f64>::macro_grid(4, Some(Rect::new(0.25, 0.25, 0.75, 0.75)))
            .unwrap();
        let yc = Triangulation2D::<f64>::cell_grid(4, Rect::centered_square(0.5)).unwrap();
        let gf = gc.refine_uniform(1);
        let yf = yc.refine_uniform(1);
        let coarse = TwoScaleSpace::build(gc, yc).unwrap();
        let fine = TwoScaleSpace::build(gf, yf).unwrap();
        (fine, coarse)
    }

    fn random_coarse(space: &TwoScaleSpace<f64>, rng: &mut StdRng) -> TwoScaleFunction<f64> {
        let mut f = TwoScaleFunction::zeros(space);
        for v in f.data_mut() {
            *v = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let c = space.cell1_map().integral_weights().to_vec();
        let total: f64 = c.iter().sum();
        for s in 0..space.n_slots() {
            let mean: C = f.cell1_block(s).iter().zip(&c).map(|(v, w)| v * C::new(*w, 0.0)).sum();
            let shift = mean / C::new(total, 0.0);
            for v in f.cell1_block_mut(s) {
                *v -= shift;
            }
        }
        f
    }

    #[test]
    fn interpolation_inverts_the_embedding() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        let embed = Embedding::build(&fine, &coarse).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let cfun = random_coarse(&coarse, &mut rng);
            let back = interp.apply(&embed.apply(&cfun));
            let err: f64 = back
                .data()
                .iter()
                .zip(cfun.data())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let scale: f64 = cfun.data().iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-12 * scale, "relative drift {}", err / scale);
        }
    }

    #[test]
    fn interpolant_lands_on_the_zero_mean_constraint() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        let mut rng = StdRng::seed_from_u64(7);
        let mut v = TwoScaleFunction::zeros(&fine);
        for x in v.data_mut() {
            *x = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let iv = interp.apply(&v);
        let c = coarse.cell1_map().integral_weights();
        for s in 0..coarse.n_slots() {
            let mean: C =
                iv.cell1_block(s).iter().zip(c).map(|(x, &w)| x * C::new(w, 0.0)).sum();
            assert!(mean.norm() < 1e-12);
        }
    }

    #[test]
    fn kernel_projection_annihilates_all_constraint_rows() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        let embed = Embedding::build(&fine, &coarse).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let mut v = TwoScaleFunction::zeros(&fine);
        for x in v.data_mut() {
            *x = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        // make the cell profiles feasible first
        let c = fine.cell1_map().integral_weights().to_vec();
        let total: f64 = c.iter().sum();
        for s in 0..fine.n_slots() {
            let mean: C = v.cell1_block(s).iter().zip(&c).map(|(x, w)| x * C::new(*w, 0.0)).sum();
            let shift = mean / C::new(total, 0.0);
            for x in v.cell1_block_mut(s) {
                *x -= shift;
            }
        }
        let coarse_part = embed.apply(&interp.apply(&v));
        let mut w = v;
        for (a, b) in w.data_mut().iter_mut().zip(coarse_part.data()) {
            *a -= *b;
        }
        // every interpolation row annihilates w
        let iw = interp.apply(&w);
        let worst = iw.data().iter().map(|x| x.norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12, "interpolation of a kernel function: {worst}");
        // the reduced constraint rows annihilate the pooled profiles too
        for sc in 0..coarse.n_slots() {
            let mut pooled = vec![C::new(0.0, 0.0); fine.n_cell1_dofs()];
            for &(sf, wgt) in interp.slot_aggregation(sc) {
                for (p, x) in pooled.iter_mut().zip(w.cell1_block(sf)) {
                    *p += C::new(wgt, 0.0) * x;
                }
            }
            let res = interp.cell1_kernel_rows().apply(&pooled);
            assert!(res.iter().all(|x| x.norm() < 1e-12));
        }
    }

    #[test]
    fn macro_interpolation_is_local() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        // a single fine hat: its interpolant vanishes at coarse vertices more
        // than two coarse cells away
        let mut v = TwoScaleFunction::zeros(&fine);
        let probe = fine.macro_map().class_of_dof(0);
        let pos = fine.macro_mesh().vertex(probe);
        v.macro_block_mut()[0] = C::new(1.0, 0.0);
        let iv = interp.apply(&v);
        let h = 1.0 / 4.0;
        for d in 0..coarse.n_macro_dofs() {
            let z = coarse.macro_mesh().vertex(coarse.macro_map().class_of_dof(d));
            let dist = ((z[0] - pos[0]).powi(2) + (z[1] - pos[1]).powi(2)).sqrt();
            if dist > 2.0 * h + 1e-12 {
                assert!(
                    iv.macro_block()[d].norm() < 1e-14,
                    "nonzero at distance {dist}"
                );
            }
        }
    }

    #[test]
    fn pooling_weights_sum_to_one() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        for sc in 0..coarse.n_slots() {
            let total: f64 = interp.slot_aggregation(sc).iter().map(|&(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-13);
            assert_eq!(interp.slot_aggregation(sc).len(), 4);
        }
    }

    #[test]
    fn embedding_adjoint_is_consistent() {
        let (fine, coarse) = pair();
        let embed = Embedding::build(&fine, &coarse).unwrap();
        let mut rng = StdRng::seed_from_u64(13);
        let cfun = random_coarse(&coarse, &mut rng);
        let mut ffun = TwoScaleFunction::zeros(&fine);
        for v in ffun.data_mut() {
            *v = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let dot = |a: &[C], b: &[C]| -> C { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
        let lhs = dot(ffun.data(), embed.apply(&cfun).data());
        let rhs = dot(embed.apply_adjoint(&ffun).data(), cfun.data());
        assert!((lhs - rhs).norm() < 1e-12 * (1.0 + lhs.norm()));
    }

    #[test]
    fn unrelated_meshes_are_rejected() {
        let gc = Triangulation2D::<f64>::macro_grid(4, Some(Rect::new(0.25, 0.25, 0.75, 0.75)))
            .unwrap();
        let yc = Triangulation2D::<f64>::cell_grid(4, Rect::centered_square(0.5)).unwrap();
        let coarse = TwoScaleSpace::build(gc.clone(), yc.clone()).unwrap();
        let other = TwoScaleSpace::build(gc, yc).unwrap();
        assert!(matches!(
            QuasiInterpolator::build(&other, &coarse),
            Err(InterpError::MissingParents(_))
        ));
    }

    #[test]
    fn level_zero_interpolation_is_the_identity() {
        let gc = Triangulation2D::<f64>::macro_grid(4, Some(Rect::new(0.25, 0.25, 0.75, 0.75)))
            .unwrap();
        let yc = Triangulation2D::<f64>::cell_grid(4, Rect::centered_square(0.5)).unwrap();
        let coarse = TwoScaleSpace::build(gc.clone(), yc.clone()).unwrap();
        let same =
            TwoScaleSpace::build(gc.refine_uniform(0), yc.refine_uniform(0)).unwrap();
        let interp = QuasiInterpolator::build(&same, &coarse).unwrap();
        let mut rng = StdRng::seed_from_u64(17);
        let cfun = random_coarse(&coarse, &mut rng);
        let ifun = interp.apply(&cfun);
        for (a, b) in ifun.data().iter().zip(cfun.data()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn measured_constant_is_positive_and_deterministic() {
        let (fine, coarse) = pair();
        let interp = QuasiInterpolator::build(&fine, &coarse).unwrap();
        let embed = Embedding::build(&fine, &coarse).unwrap();
        let a = measured_kernel_constant(&fine, &coarse, &interp, &embed, 5, 42);
        let b = measured_kernel_constant(&fine, &coarse, &interp, &embed, 5, 42);
        assert!(a > 0.0 && a < 10.0, "constant {a}");
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
