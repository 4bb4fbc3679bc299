//! P1 finite elements on a single triangulation.
//!
//! A [`DofMap`] selects which vertex classes of a mesh carry degrees of
//! freedom. Three flavors cover the spaces of the coupled problem: all classes
//! (macro space on `G`), classes meeting the perforated region of a periodic
//! cell with a recorded zero-mean weight vector (cell space on `Y*`), and
//! classes strictly inside the inclusion (cell space on `D` with zero trace on
//! its boundary).
//!
//! Element matrices are closed-form: stiffness from edge vectors, mass as
//! `area/12 * [[2,1,1],[1,2,1],[1,1,2]]`, boundary edge mass as
//! `len/6 * [[2,1],[1,2]]`. Assembly runs over an explicit triangle subset, so
//! the same routines produce region-restricted and patch-restricted matrices.

use crate::mesh::{Region, Triangulation2D};
use crate::scalar::{r, Cplx, Real};
use crate::sparse::{Csr, Triplet};

/// Which vertex classes of a mesh carry degrees of freedom.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpaceKind {
    /// Every vertex class. Used for the macro space on `G`; on a periodic mesh
    /// this is the full torus space.
    Free,
    /// Classes incident to at least one `Outer` triangle of a periodic cell
    /// mesh. Functions are identified across the seam; the recorded integral
    /// weights define the zero-mean constraint over the perforated region.
    PeriodicZeroMean,
    /// Classes all of whose incident triangles are `Inner`: the inclusion
    /// interior, with zero trace on the inclusion boundary.
    ZeroTraceInner,
}

impl SpaceKind {
    /// The triangles the kind's function space lives on.
    pub fn region(self) -> Option<Region> {
        match self {
            SpaceKind::Free => None,
            SpaceKind::PeriodicZeroMean => Some(Region::Outer),
            SpaceKind::ZeroTraceInner => Some(Region::Inner),
        }
    }
}

/// Vertex-class-to-dof numbering plus the integral weights of the basis
/// functions over the space's region.
#[derive(Clone, Debug)]
pub struct DofMap<R: Real> {
    kind: SpaceKind,
    /// planar vertex -> dof index, `usize::MAX` when the vertex carries none
    vertex_dof: Vec<usize>,
    /// dof -> canonical class, ascending
    dof_class: Vec<usize>,
    /// per dof: integral of its basis function over the region
    integral_weights: Vec<R>,
    region_area: R,
}

impl<R: Real> DofMap<R> {
    /// Numbers the dofs of `kind` on the mesh, ascending by canonical class id.
    pub fn build(mesh: &Triangulation2D<R>, kind: SpaceKind) -> Self {
        let nv = mesh.n_vertices();
        // classes incident to Outer / Inner triangles
        let mut touches_outer = vec![false; nv];
        let mut touches_inner = vec![false; nv];
        for t in 0..mesh.n_triangles() {
            let flag = match mesh.label(t) {
                Region::Outer => &mut touches_outer,
                Region::Inner => &mut touches_inner,
            };
            for &v in &mesh.triangle(t) {
                flag[mesh.vertex_class(v)] = true;
            }
        }
        let is_dof = |c: usize| match kind {
            SpaceKind::Free => true,
            SpaceKind::PeriodicZeroMean => touches_outer[c],
            SpaceKind::ZeroTraceInner => touches_inner[c] && !touches_outer[c],
        };
        let mut vertex_dof = vec![usize::MAX; nv];
        let mut dof_class = Vec::new();
        for c in 0..nv {
            if mesh.vertex_class(c) == c && is_dof(c) {
                vertex_dof[c] = dof_class.len();
                dof_class.push(c);
            }
        }
        for v in 0..nv {
            vertex_dof[v] = vertex_dof[mesh.vertex_class(v)];
        }
        let region_tris: Vec<usize> = match kind.region() {
            Some(reg) => mesh.labeled_triangles(reg),
            None => (0..mesh.n_triangles()).collect(),
        };
        let mut integral_weights = vec![R::zero(); dof_class.len()];
        let third = R::one() / r(3.0);
        let mut region_area = R::zero();
        for &t in &region_tris {
            let w = mesh.tri_area(t) * third;
            region_area += mesh.tri_area(t);
            for &v in &mesh.triangle(t) {
                let d = vertex_dof[v];
                if d != usize::MAX {
                    integral_weights[d] += w;
                }
            }
        }
        Self { kind, vertex_dof, dof_class, integral_weights, region_area }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_class.len()
    }

    /// Dof carried by a planar vertex, shared across its periodic class.
    pub fn dof_of_vertex(&self, v: usize) -> Option<usize> {
        match self.vertex_dof[v] {
            usize::MAX => None,
            d => Some(d),
        }
    }

    /// Canonical class of a dof.
    pub fn class_of_dof(&self, d: usize) -> usize {
        self.dof_class[d]
    }

    /// Integrals of the basis functions over the space's region. For the
    /// perforated cell space these are the zero-mean constraint weights; for
    /// the inclusion space, the load weights of constant-in-`y` data.
    pub fn integral_weights(&self) -> &[R] {
        &self.integral_weights
    }

    /// Total area of the space's region.
    pub fn region_area(&self) -> R {
        self.region_area
    }
}

/// Constant gradients of the three barycentric basis functions and the
/// triangle area.
pub fn element_gradients<R: Real>(p: [[R; 2]; 3]) -> ([[R; 2]; 3], R) {
    let area2 = crate::mesh::signed_area2(p[0], p[1], p[2]);
    let mut g = [[R::zero(); 2]; 3];
    for k in 0..3 {
        let b = p[(k + 1) % 3];
        let c = p[(k + 2) % 3];
        g[k] = [(b[1] - c[1]) / area2, (c[0] - b[0]) / area2];
    }
    (g, area2 / r(2.0))
}

/// Element stiffness matrix from the edge vectors, `K_ij = e_i . e_j / (4 A)`.
pub fn element_stiffness<R: Real>(p: [[R; 2]; 3]) -> [[R; 3]; 3] {
    let e = [
        [p[2][0] - p[1][0], p[2][1] - p[1][1]],
        [p[0][0] - p[2][0], p[0][1] - p[2][1]],
        [p[1][0] - p[0][0], p[1][1] - p[0][1]],
    ];
    let area2 = crate::mesh::signed_area2(p[0], p[1], p[2]);
    let mut k = [[R::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            k[i][j] = (e[i][0] * e[j][0] + e[i][1] * e[j][1]) / (area2 + area2);
        }
    }
    k
}

/// Element mass matrix `area/12 * [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn element_mass<R: Real>(area: R) -> [[R; 3]; 3] {
    let s = area / r(12.0);
    let two = s + s;
    [[two, s, s], [s, two, s], [s, s, two]]
}

/// Mass matrix of one boundary edge, `len/6 * [[2,1],[1,2]]`.
pub fn element_edge_mass<R: Real>(len: R) -> [[R; 2]; 2] {
    let s = len / r(6.0);
    [[s + s, s], [s, s + s]]
}

/// 4-point Gauss-Legendre rule on `[0, 1]`; weights sum to one. Exact through
/// degree 7, ample for the oscillatory boundary data this crate integrates.
pub fn gauss_segment_4<R: Real>() -> [(R, R); 4] {
    let x1 = r::<R>(0.339_981_043_584_856_26);
    let x2 = r::<R>(0.861_136_311_594_052_6);
    let w1 = r::<R>(0.652_145_154_862_546_2);
    let w2 = r::<R>(0.347_854_845_137_453_86);
    let half = r::<R>(0.5);
    [
        ((R::one() - x2) * half, w2 * half),
        ((R::one() - x1) * half, w1 * half),
        ((R::one() + x1) * half, w1 * half),
        ((R::one() + x2) * half, w2 * half),
    ]
}

fn scatter_element<R: Real>(
    map: &DofMap<R>,
    tri: [usize; 3],
    el: &[[R; 3]; 3],
    trips: &mut Vec<Triplet<R>>,
) {
    for (i, &vi) in tri.iter().enumerate() {
        let Some(di) = map.dof_of_vertex(vi) else { continue };
        for (j, &vj) in tri.iter().enumerate() {
            let Some(dj) = map.dof_of_vertex(vj) else { continue };
            trips.push((di, dj, Cplx::new(el[i][j], R::zero())));
        }
    }
}

/// Stiffness matrix over the given triangles. Vertices without a dof are
/// dropped, which realizes the zero-trace reading of the inclusion space.
pub fn assemble_stiffness<R: Real>(
    mesh: &Triangulation2D<R>,
    map: &DofMap<R>,
    tris: &[usize],
) -> Csr<R> {
    let n = map.n_dofs();
    let mut trips = Vec::with_capacity(9 * tris.len());
    for &t in tris {
        let el = element_stiffness(mesh.tri_coords(t));
        scatter_element(map, mesh.triangle(t), &el, &mut trips);
    }
    Csr::from_triplets(n, n, trips)
}

/// Mass matrix over the given triangles.
pub fn assemble_mass<R: Real>(
    mesh: &Triangulation2D<R>,
    map: &DofMap<R>,
    tris: &[usize],
) -> Csr<R> {
    let n = map.n_dofs();
    let mut trips = Vec::with_capacity(9 * tris.len());
    for &t in tris {
        let el = element_mass(mesh.tri_area(t));
        scatter_element(map, mesh.triangle(t), &el, &mut trips);
    }
    Csr::from_triplets(n, n, trips)
}

/// Boundary mass matrix over the given `(triangle, local edge)` pairs.
pub fn assemble_boundary_mass<R: Real>(
    mesh: &Triangulation2D<R>,
    map: &DofMap<R>,
    edges: &[(usize, usize)],
) -> Csr<R> {
    let n = map.n_dofs();
    let mut trips = Vec::with_capacity(4 * edges.len());
    for &(t, k) in edges {
        let tri = mesh.triangle(t);
        let pair = [tri[k], tri[(k + 1) % 3]];
        let (a, b) = (mesh.vertex(pair[0]), mesh.vertex(pair[1]));
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let el = element_edge_mass(len);
        for i in 0..2 {
            let Some(di) = map.dof_of_vertex(pair[i]) else { continue };
            for j in 0..2 {
                let Some(dj) = map.dof_of_vertex(pair[j]) else { continue };
                trips.push((di, dj, Cplx::new(el[i][j], R::zero())));
            }
        }
    }
    Csr::from_triplets(n, n, trips)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Rect;

    fn quarter() -> Rect<f64> {
        Rect::centered_square(0.5)
    }

    fn all_tris(mesh: &Triangulation2D<f64>) -> Vec<usize> {
        (0..mesh.n_triangles()).collect()
    }

    #[test]
    fn dof_counts_are_frozen() {
        let g = Triangulation2D::<f64>::macro_grid(2, None).unwrap();
        assert_eq!(DofMap::build(&g, SpaceKind::Free).n_dofs(), 13);

        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        assert_eq!(DofMap::build(&y, SpaceKind::Free).n_dofs(), 32);
        assert_eq!(DofMap::build(&y, SpaceKind::PeriodicZeroMean).n_dofs(), 27);
        assert_eq!(DofMap::build(&y, SpaceKind::ZeroTraceInner).n_dofs(), 5);
    }

    #[test]
    fn periodic_duplicates_share_their_dof() {
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let map = DofMap::build(&y, SpaceKind::Free);
        let pm = y.periodic_map().unwrap();
        for v in 0..y.n_vertices() {
            assert_eq!(map.dof_of_vertex(v), map.dof_of_vertex(pm[v]));
        }
        // dof classes ascend
        for d in 1..map.n_dofs() {
            assert!(map.class_of_dof(d) > map.class_of_dof(d - 1));
        }
    }

    #[test]
    fn inclusion_space_excludes_boundary_classes() {
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let map = DofMap::build(&y, SpaceKind::ZeroTraceInner);
        for d in 0..map.n_dofs() {
            let p = y.vertex(map.class_of_dof(d));
            assert!(p[0].abs() < 0.25 && p[1].abs() < 0.25, "dof strictly inside the inclusion");
        }
        // independent route: brute-force classification of each class
        let mut expected = 0;
        for c in 0..y.n_vertices() {
            if y.vertex_class(c) != c {
                continue;
            }
            let mut any = false;
            let mut all_inner = true;
            for t in 0..y.n_triangles() {
                if y.triangle(t).iter().any(|&v| y.vertex_class(v) == c) {
                    any = true;
                    all_inner &= y.label(t) == Region::Inner;
                }
            }
            if any && all_inner {
                expected += 1;
            }
        }
        assert_eq!(map.n_dofs(), expected);
    }

    #[test]
    fn integral_weights_sum_to_region_areas() {
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let star = DofMap::build(&y, SpaceKind::PeriodicZeroMean);
        let sum: f64 = star.integral_weights().iter().sum();
        assert!((sum - 0.75).abs() < 1e-14, "perforated-region weights sum to its area");
        assert!((star.region_area() - 0.75).abs() < 1e-14);

        let g = Triangulation2D::<f64>::macro_grid(3, None).unwrap();
        let free = DofMap::build(&g, SpaceKind::Free);
        let sum: f64 = free.integral_weights().iter().sum();
        assert!((sum - 1.0).abs() < 1e-14);

        // inclusion space: boundary classes carry no dof, so the weights sum to
        // less than the inclusion area; check against a brute-force recount
        let incl = DofMap::build(&y, SpaceKind::ZeroTraceInner);
        let mut expected = vec![0.0; incl.n_dofs()];
        for t in y.labeled_triangles(Region::Inner) {
            for &v in &y.triangle(t) {
                if let Some(d) = incl.dof_of_vertex(v) {
                    expected[d] += y.tri_area(t) / 3.0;
                }
            }
        }
        for (w, e) in incl.integral_weights().iter().zip(&expected) {
            assert!((w - e).abs() < 1e-15);
        }
        let sum: f64 = incl.integral_weights().iter().sum();
        assert!(sum < 0.25 - 1e-3);
        assert!((incl.region_area() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn reference_element_matrices_are_frozen() {
        let p: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let k = element_stiffness(p);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - expect[i][j]).abs() < 1e-15);
            }
        }
        let (g, area) = element_gradients(p);
        assert!((area - 0.5).abs() < 1e-15);
        let gexpect = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        for i in 0..3 {
            for d in 0..2 {
                assert!((g[i][d] - gexpect[i][d]).abs() < 1e-15);
            }
        }
        // stiffness agrees with gradient outer products on a skewed triangle
        let p: [[f64; 2]; 3] = [[0.2, -0.1], [1.3, 0.4], [0.5, 1.1]];
        let k = element_stiffness(p);
        let (g, area) = element_gradients(p);
        for i in 0..3 {
            for j in 0..3 {
                let dot = (g[i][0] * g[j][0] + g[i][1] * g[j][1]) * area;
                assert!((k[i][j] - dot).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn single_cell_stiffness_matches_hand_computation() {
        let g = Triangulation2D::<f64>::macro_grid(1, None).unwrap();
        let map = DofMap::build(&g, SpaceKind::Free);
        let k = assemble_stiffness(&g, &map, &all_tris(&g));
        let expect = [
            [1.0, 0.0, 0.0, 0.0, -1.0],
            [0.0, 1.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 0.0, -1.0],
            [0.0, 0.0, 0.0, 1.0, -1.0],
            [-1.0, -1.0, -1.0, -1.0, 4.0],
        ];
        for i in 0..5 {
            for j in 0..5 {
                assert!(
                    (k.get(i, j).re - expect[i][j]).abs() < 1e-14 && k.get(i, j).im == 0.0,
                    "entry ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let g = Triangulation2D::<f64>::macro_grid(3, None).unwrap();
        let map = DofMap::build(&g, SpaceKind::Free);
        let k = assemble_stiffness(&g, &map, &all_tris(&g));
        let ones = vec![Cplx::new(1.0, 0.0); map.n_dofs()];
        for row in k.apply(&ones) {
            assert!(row.norm() < 1e-13);
        }
        // same on the torus, where the glued space also contains constants
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let fmap = DofMap::build(&y, SpaceKind::Free);
        let k = assemble_stiffness(&y, &fmap, &all_tris(&y));
        let ones = vec![Cplx::new(1.0, 0.0); fmap.n_dofs()];
        for row in k.apply(&ones) {
            assert!(row.norm() < 1e-13);
        }
    }

    #[test]
    fn mass_total_equals_area_and_boundary_mass_equals_perimeter() {
        let g = Triangulation2D::<f64>::macro_grid(2, None).unwrap();
        let map = DofMap::build(&g, SpaceKind::Free);
        let m = assemble_mass(&g, &map, &all_tris(&g));
        let ones = vec![Cplx::new(1.0, 0.0); map.n_dofs()];
        let total: f64 = m.apply(&ones).iter().map(|v| v.re).sum();
        assert!((total - 1.0).abs() < 1e-13);

        let bm = assemble_boundary_mass(&g, &map, &g.boundary_edges());
        let total: f64 = bm.apply(&ones).iter().map(|v| v.re).sum();
        assert!((total - 4.0).abs() < 1e-13);
    }

    #[test]
    fn assembly_is_additive_over_triangle_subsets() {
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let map = DofMap::build(&y, SpaceKind::Free);
        let whole = assemble_stiffness(&y, &map, &all_tris(&y));
        let outer = assemble_stiffness(&y, &map, &y.labeled_triangles(Region::Outer));
        let inner = assemble_stiffness(&y, &map, &y.labeled_triangles(Region::Inner));
        for i in 0..map.n_dofs() {
            for j in 0..map.n_dofs() {
                let d = whole.get(i, j) - outer.get(i, j) - inner.get(i, j);
                assert!(d.norm() < 1e-14);
            }
        }
    }

    #[test]
    fn inclusion_stiffness_matches_dense_reduction() {
        let y = Triangulation2D::<f64>::cell_grid(4, quarter()).unwrap();
        let free = DofMap::build(&y, SpaceKind::Free);
        let incl = DofMap::build(&y, SpaceKind::ZeroTraceInner);
        let k_incl = assemble_stiffness(&y, &incl, &y.labeled_triangles(Region::Inner));
        let k_free = assemble_stiffness(&y, &free, &y.labeled_triangles(Region::Inner));
        // the inclusion matrix is the interior-class principal submatrix
        for i in 0..incl.n_dofs() {
            let fi = free.dof_of_vertex(incl.class_of_dof(i)).unwrap();
            for j in 0..incl.n_dofs() {
                let fj = free.dof_of_vertex(incl.class_of_dof(j)).unwrap();
                assert!((k_incl.get(i, j) - k_free.get(fi, fj)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn segment_rule_integrates_low_degrees_exactly() {
        let rule = gauss_segment_4::<f64>();
        let wsum: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert!((wsum - 1.0).abs() < 1e-15);
        for k in 0..8 {
            let num: f64 = rule.iter().map(|&(t, w)| w * t.powi(k)).sum();
            let exact = 1.0 / (k as f64 + 1.0);
            assert!((num - exact).abs() < 1e-14, "degree {k}");
        }
        // oscillatory integrands against the analytic value; the per-edge phase
        // in boundary loads stays well below one, where the rule is sharp
        for omega in [0.5f64, 2.0, 7.0] {
            let num: f64 = rule.iter().map(|&(t, w)| w * (omega * t).cos()).sum();
            let exact = omega.sin() / omega;
            // standard 4-point Gauss error bound: ~5.6e-10 * f^(8) on a unit
            // interval, with a factor-two margin
            let budget = 1.2e-9 * omega.powi(8);
            assert!((num - exact).abs() < budget.max(1e-15), "omega={omega}");
        }
    }
}
