//! Structured triangulations for the macro domain and the periodic cell.
//!
//! All meshes are criss-cross grids: an `n x n` array of square cells, each cut
//! into four triangles (south, east, north, west, in that order) by its center
//! vertex. Corner vertices are numbered row-major as `j*(n+1) + i`, centers
//! follow as `(n+1)^2 + j*n + i`, and the triangles of cell `(i, j)` occupy
//! indices `4*(j*n + i) .. 4*(j*n + i) + 4`. All triangles are counterclockwise.
//!
//! Each triangle carries a [`Region`] label. On a macro grid `Inner` marks the
//! subdomain carrying cell oscillations; on a cell grid it marks the inclusion.
//!
//! Cell grids cover `[-1/2, 1/2]^2` and identify opposite sides: the planar
//! mesh keeps duplicate vertices on the `x = +1/2` and `y = +1/2` sides, and a
//! periodic map sends every vertex to its canonical representative on the
//! `x = -1/2` / `y = -1/2` sides (all four corners collapse to the lower-left
//! one). Patch growth, dof maps, and averaging operate on these canonical
//! classes, so the planar mesh behaves as a torus.
//!
//! The text format mirrors the in-memory structure:
//!
//! ```text
//! vertices N
//! triangles M
//! x y            (N lines)
//! i j k label    (M lines)
//! periodic P     (optional, P non-identity pairs)
//! dup canonical  (P lines)
//! ```
//!
//! Coordinates are written in shortest round-trip decimal form, so saving and
//! reloading reproduces the mesh bit for bit. Refinement parent tables are
//! derived data and are not serialized.

use crate::scalar::{r, Real};
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Subdomain label of a triangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    /// Macro grid: the part of `G` without cell structure. Cell grid: the
    /// perforated part `Y*` of the unit cell.
    Outer,
    /// Macro grid: the oscillation subdomain. Cell grid: the inclusion.
    Inner,
}

impl Region {
    fn to_u8(self) -> u8 {
        match self {
            Region::Outer => 0,
            Region::Inner => 1,
        }
    }

    fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(Region::Outer),
            1 => Some(Region::Inner),
            _ => None,
        }
    }
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect<R: Real> {
    pub x0: R,
    pub y0: R,
    pub x1: R,
    pub y1: R,
}

impl<R: Real> Rect<R> {
    pub fn new(x0: R, y0: R, x1: R, y1: R) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Centered square of the given side length.
    pub fn centered_square(side: R) -> Self {
        let h = side / r(2.0);
        Self { x0: -h, y0: -h, x1: h, y1: h }
    }

    pub fn contains(&self, p: [R; 2]) -> bool {
        self.x0 <= p[0] && p[0] <= self.x1 && self.y0 <= p[1] && p[1] <= self.y1
    }

    fn validate(&self) -> Result<(), MeshError> {
        if self.x0 < self.x1 && self.y0 < self.y1 {
            Ok(())
        } else {
            Err(MeshError::InvalidRect {
                x0: to_f64(self.x0),
                y0: to_f64(self.y0),
                x1: to_f64(self.x1),
                y1: to_f64(self.y1),
            })
        }
    }

    /// The rectangle translated by `(dx, dy)`.
    pub fn shifted(&self, dx: R, dy: R) -> Self {
        Self { x0: self.x0 + dx, y0: self.y0 + dy, x1: self.x1 + dx, y1: self.y1 + dy }
    }
}

/// Errors from mesh construction and the text format.
#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("invalid rectangle [{x0}, {x1}] x [{y0}, {y1}]")]
    InvalidRect { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("coordinate {coord} does not lie on a grid line of the {n}x{n} grid")]
    Misaligned { coord: f64, n: usize },
    #[error("rectangle [{x0}, {x1}] x [{y0}, {y1}] must lie strictly inside the cell")]
    NotStrictlyInside { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("rectangle [{x0}, {x1}] x [{y0}, {y1}] reaches outside the domain")]
    OutsideDomain { x0: f64, y0: f64, x1: f64, y1: f64 },
    #[error("triangle {t} is degenerate or not counterclockwise")]
    NotCcw { t: usize },
    #[error("triangle {t} references vertex {v}, but the mesh has {nv} vertices")]
    VertexOutOfRange { t: usize, v: usize, nv: usize },
    #[error("periodic entry {v} -> {target} is out of range or not idempotent")]
    BadPeriodicEntry { v: usize, target: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn to_f64<R: Real>(x: R) -> f64 {
    num_traits::ToPrimitive::to_f64(&x).unwrap_or(f64::NAN)
}

/// Twice the signed area of the triangle `(a, b, c)`; positive when
/// counterclockwise.
pub fn signed_area2<R: Real>(a: [R; 2], b: [R; 2], c: [R; 2]) -> R {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Coordinate key with a total order, for exact positional lookups.
#[derive(PartialEq)]
struct PosKey<R: Real>([R; 2]);

impl<R: Real> Eq for PosKey<R> {}

impl<R: Real> PartialOrd for PosKey<R> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<R: Real> Ord for PosKey<R> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // mesh coordinates are never NaN
        self.0[0]
            .partial_cmp(&other.0[0])
            .unwrap()
            .then(self.0[1].partial_cmp(&other.0[1]).unwrap())
    }
}

/// A conforming triangulation with region labels and optional torus
/// identification and refinement ancestry.
#[derive(Clone, Debug)]
pub struct Triangulation2D<R: Real> {
    vertices: Vec<[R; 2]>,
    triangles: Vec<[usize; 3]>,
    labels: Vec<Region>,
    /// planar vertex -> canonical vertex; `None` for non-periodic meshes
    periodic: Option<Vec<usize>>,
    /// triangle -> triangle of the mesh that `refine_uniform` was called on
    parents: Option<Vec<usize>>,
}

/// Per-vertex-class triangle incidence, the lookup structure behind patch
/// growth and averaging.
pub struct VertexIncidence {
    class_tris: Vec<Vec<usize>>,
}

impl VertexIncidence {
    /// Triangles incident to the canonical class `c` (empty for non-canonical
    /// vertex ids).
    pub fn tris_at_class(&self, c: usize) -> &[usize] {
        &self.class_tris[c]
    }
}

/// An element patch: a set of triangles grown from seed elements.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Patch {
    /// Patch triangles, ascending.
    pub tris: Vec<usize>,
    /// Whether growth used some periodic vertex class through two different
    /// planar vertices, i.e. the patch closed around the torus seam.
    pub wrapped: bool,
}

impl<R: Real> Triangulation2D<R> {
    /// Validated constructor from raw data.
    pub fn new(
        vertices: Vec<[R; 2]>,
        triangles: Vec<[usize; 3]>,
        labels: Vec<Region>,
        periodic: Option<Vec<usize>>,
    ) -> Result<Self, MeshError> {
        assert_eq!(triangles.len(), labels.len(), "one label per triangle");
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &v in tri {
                if v >= nv {
                    return Err(MeshError::VertexOutOfRange { t, v, nv });
                }
            }
            if signed_area2(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]) <= R::zero() {
                return Err(MeshError::NotCcw { t });
            }
        }
        if let Some(map) = &periodic {
            assert_eq!(map.len(), nv, "one periodic entry per vertex");
            for (v, &target) in map.iter().enumerate() {
                if target >= nv || map[target] != target {
                    return Err(MeshError::BadPeriodicEntry { v, target });
                }
            }
        }
        Ok(Self { vertices, triangles, labels, periodic, parents: None })
    }

    /// Criss-cross grid of `n x n` cells over the square at `origin` with the
    /// given side length. All labels `Outer`, no periodic identification.
    pub fn criss_cross(origin: [R; 2], side: R, n: usize) -> Self {
        assert!(n > 0, "need at least one cell");
        let np = n + 1;
        let nr = r::<R>(n as f64);
        let coord = |k: usize| r::<R>(k as f64) / nr;
        let center_coord = |k: usize| (r::<R>(k as f64) + r(0.5)) / nr;
        let mut vertices = Vec::with_capacity(np * np + n * n);
        for j in 0..np {
            for i in 0..np {
                vertices.push([origin[0] + side * coord(i), origin[1] + side * coord(j)]);
            }
        }
        for j in 0..n {
            for i in 0..n {
                vertices.push([
                    origin[0] + side * center_coord(i),
                    origin[1] + side * center_coord(j),
                ]);
            }
        }
        let mut triangles = Vec::with_capacity(4 * n * n);
        for j in 0..n {
            for i in 0..n {
                let sw = j * np + i;
                let se = sw + 1;
                let nw = (j + 1) * np + i;
                let ne = nw + 1;
                let c = np * np + j * n + i;
                triangles.push([sw, se, c]);
                triangles.push([se, ne, c]);
                triangles.push([ne, nw, c]);
                triangles.push([nw, sw, c]);
            }
        }
        let labels = vec![Region::Outer; triangles.len()];
        Self { vertices, triangles, labels, periodic: None, parents: None }
    }

    /// Macro grid on `[0, 1]^2`. When a subdomain rectangle is given, its sides
    /// must lie on grid lines; triangles inside it are labeled `Inner`.
    pub fn macro_grid(n: usize, subdomain: Option<Rect<R>>) -> Result<Self, MeshError> {
        let mut mesh = Self::criss_cross([R::zero(), R::zero()], R::one(), n);
        if let Some(rect) = subdomain {
            rect.validate()?;
            let domain = Rect::new(R::zero(), R::zero(), R::one(), R::one());
            if !(domain.contains([rect.x0, rect.y0]) && domain.contains([rect.x1, rect.y1])) {
                return Err(MeshError::OutsideDomain {
                    x0: to_f64(rect.x0),
                    y0: to_f64(rect.y0),
                    x1: to_f64(rect.x1),
                    y1: to_f64(rect.y1),
                });
            }
            check_grid_aligned(&rect, R::zero(), R::one(), n)?;
            for t in 0..mesh.triangles.len() {
                if rect.contains(mesh.centroid(t)) {
                    mesh.labels[t] = Region::Inner;
                }
            }
        }
        Ok(mesh)
    }

    /// Periodic cell grid on `[-1/2, 1/2]^2` with an inclusion rectangle. The
    /// inclusion must be grid-aligned and strictly inside the cell.
    pub fn cell_grid(n: usize, inclusion: Rect<R>) -> Result<Self, MeshError> {
        inclusion.validate()?;
        let half = r::<R>(0.5);
        let mut mesh = Self::criss_cross([-half, -half], R::one(), n);
        check_grid_aligned(&inclusion, -half, R::one(), n)?;
        if !(inclusion.x0 > -half && inclusion.x1 < half && inclusion.y0 > -half && inclusion.y1 < half)
        {
            return Err(MeshError::NotStrictlyInside {
                x0: to_f64(inclusion.x0),
                y0: to_f64(inclusion.y0),
                x1: to_f64(inclusion.x1),
                y1: to_f64(inclusion.y1),
            });
        }
        for t in 0..mesh.triangles.len() {
            if inclusion.contains(mesh.centroid(t)) {
                mesh.labels[t] = Region::Inner;
            }
        }
        mesh.periodic = Some(torus_identification(&mesh.vertices));
        Ok(mesh)
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertices(&self) -> &[[R; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn labels(&self) -> &[Region] {
        &self.labels
    }

    pub fn vertex(&self, v: usize) -> [R; 2] {
        self.vertices[v]
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn label(&self, t: usize) -> Region {
        self.labels[t]
    }

    /// Indices of all triangles with the given label, ascending.
    pub fn labeled_triangles(&self, region: Region) -> Vec<usize> {
        (0..self.triangles.len()).filter(|&t| self.labels[t] == region).collect()
    }

    /// The planar-to-canonical vertex map of a periodic mesh.
    pub fn periodic_map(&self) -> Option<&[usize]> {
        self.periodic.as_deref()
    }

    /// Canonical class of a vertex (the vertex itself on non-periodic meshes).
    pub fn vertex_class(&self, v: usize) -> usize {
        match &self.periodic {
            Some(map) => map[v],
            None => v,
        }
    }

    /// Parent table of a refined mesh, indexing triangles of the mesh that
    /// `refine_uniform` was called on.
    pub fn parents(&self) -> Option<&[usize]> {
        self.parents.as_deref()
    }

    pub fn tri_coords(&self, t: usize) -> [[R; 2]; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn tri_area(&self, t: usize) -> R {
        let [a, b, c] = self.tri_coords(t);
        signed_area2(a, b, c) / r(2.0)
    }

    pub fn centroid(&self, t: usize) -> [R; 2] {
        let [a, b, c] = self.tri_coords(t);
        let third = R::one() / r(3.0);
        [(a[0] + b[0] + c[0]) * third, (a[1] + b[1] + c[1]) * third]
    }

    /// Longest edge over all triangles.
    pub fn mesh_size(&self) -> R {
        let mut h = R::zero();
        for t in 0..self.triangles.len() {
            let p = self.tri_coords(t);
            for k in 0..3 {
                let (a, b) = (p[k], p[(k + 1) % 3]);
                let l = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
                if l > h {
                    h = l;
                }
            }
        }
        h
    }

    /// Barycentric coordinates of `p` with respect to triangle `t`.
    pub fn barycentric(&self, t: usize, p: [R; 2]) -> [R; 3] {
        let [a, b, c] = self.tri_coords(t);
        let total = signed_area2(a, b, c);
        [
            signed_area2(p, b, c) / total,
            signed_area2(a, p, c) / total,
            signed_area2(a, b, p) / total,
        ]
    }

    /// Red refinement applied `levels` times. Triangle `t` of the result
    /// descends from triangle `parents()[t]` of `self`; labels are inherited
    /// and torus identification is rebuilt on the refined seam.
    pub fn refine_uniform(&self, levels: usize) -> Self {
        let mut out = self.clone();
        out.parents = Some((0..self.triangles.len()).collect());
        for _ in 0..levels {
            out = out.refine_once();
        }
        out
    }

    fn refine_once(&self) -> Self {
        let mut vertices = self.vertices.clone();
        let mut edge_mid: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let half = r::<R>(0.5);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<[R; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *edge_mid.entry(key).or_insert_with(|| {
                let (pa, pb) = (vertices[a], vertices[b]);
                vertices.push([(pa[0] + pb[0]) * half, (pa[1] + pb[1]) * half]);
                vertices.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        let mut labels = Vec::with_capacity(4 * self.triangles.len());
        let mut parents = Vec::with_capacity(4 * self.triangles.len());
        let old_parents = self.parents.as_ref().expect("refine_once runs on a parent-tracked mesh");
        for (t, &[a, b, c]) in self.triangles.iter().enumerate() {
            let mab = midpoint(a, b, &mut vertices);
            let mbc = midpoint(b, c, &mut vertices);
            let mca = midpoint(c, a, &mut vertices);
            triangles.push([a, mab, mca]);
            triangles.push([mab, b, mbc]);
            triangles.push([mca, mbc, c]);
            triangles.push([mab, mbc, mca]);
            for _ in 0..4 {
                labels.push(self.labels[t]);
                parents.push(old_parents[t]);
            }
        }
        let periodic = self.periodic.as_ref().map(|_| torus_identification(&vertices));
        Self { vertices, triangles, labels, periodic, parents: Some(parents) }
    }

    /// Boundary edges of the planar mesh as `(triangle, local edge)`, ordered
    /// by triangle. Local edge `k` runs from vertex `k` to vertex `k+1`, so its
    /// outward normal is the edge direction rotated by -90 degrees.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut edges = Vec::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if count[&(a.min(b), a.max(b))] == 1 {
                    edges.push((t, k));
                }
            }
        }
        edges
    }

    /// Builds the class-to-triangle incidence used by patches and averaging.
    pub fn vertex_incidence(&self) -> VertexIncidence {
        let mut class_tris = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                class_tris[self.vertex_class(v)].push(t);
            }
        }
        for l in class_tris.iter_mut() {
            l.sort_unstable();
            l.dedup();
        }
        VertexIncidence { class_tris }
    }

    /// Grows the `m`-th order patch around the seed triangles: `m` rounds of
    /// adding every triangle that shares a vertex class with the current set.
    /// With `within`, growth is restricted to triangles of that label (the
    /// seeds must carry it).
    pub fn patch(
        &self,
        inc: &VertexIncidence,
        seeds: &[usize],
        m: usize,
        within: Option<Region>,
    ) -> Patch {
        let mut in_patch = vec![false; self.triangles.len()];
        let mut tris: Vec<usize> = Vec::new();
        for &s in seeds {
            if let Some(reg) = within {
                assert_eq!(self.labels[s], reg, "seed triangle {s} is outside the growth region");
            }
            if !in_patch[s] {
                in_patch[s] = true;
                tris.push(s);
            }
        }
        let mut frontier = tris.clone();
        for _ in 0..m {
            let mut classes: Vec<usize> = Vec::new();
            let mut seen = BTreeMap::new();
            for &t in &frontier {
                for &v in &self.triangles[t] {
                    let c = self.vertex_class(v);
                    if seen.insert(c, ()).is_none() {
                        classes.push(c);
                    }
                }
            }
            let mut next = Vec::new();
            for &c in &classes {
                for &t in inc.tris_at_class(c) {
                    if !in_patch[t] && within.map_or(true, |reg| self.labels[t] == reg) {
                        in_patch[t] = true;
                        next.push(t);
                    }
                }
            }
            if next.is_empty() {
                break;
            }
            tris.extend_from_slice(&next);
            frontier = next;
        }
        tris.sort_unstable();
        let wrapped = self.patch_wraps(&tris);
        Patch { tris, wrapped }
    }

    fn patch_wraps(&self, tris: &[usize]) -> bool {
        let Some(map) = &self.periodic else { return false };
        let mut first_planar: BTreeMap<usize, usize> = BTreeMap::new();
        for &t in tris {
            for &v in &self.triangles[t] {
                match first_planar.entry(map[v]) {
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(v);
                    }
                    std::collections::btree_map::Entry::Occupied(e) => {
                        if *e.get() != v {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Largest `m`-th order patch cardinality over all seed triangles (of the
    /// given label, when restricted).
    pub fn overlap_constant(
        &self,
        inc: &VertexIncidence,
        m: usize,
        within: Option<Region>,
    ) -> usize {
        (0..self.triangles.len())
            .filter(|&t| within.map_or(true, |reg| self.labels[t] == reg))
            .map(|t| self.patch(inc, &[t], m, within).tris.len())
            .max()
            .unwrap_or(0)
    }

    /// Serializes to the text format.
    pub fn save_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "vertices {}", self.vertices.len()).unwrap();
        writeln!(s, "triangles {}", self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(s, "{} {}", v[0], v[1]).unwrap();
        }
        for (tri, lab) in self.triangles.iter().zip(&self.labels) {
            writeln!(s, "{} {} {} {}", tri[0], tri[1], tri[2], lab.to_u8()).unwrap();
        }
        if let Some(map) = &self.periodic {
            let pairs: Vec<(usize, usize)> =
                map.iter().enumerate().filter(|&(v, &c)| v != c).map(|(v, &c)| (v, c)).collect();
            writeln!(s, "periodic {}", pairs.len()).unwrap();
            for (v, c) in pairs {
                writeln!(s, "{} {}", v, c).unwrap();
            }
        }
        s
    }

    /// Writes the text format to a writer.
    pub fn write_to<W: std::io::Write>(&self, w: &mut W) -> Result<(), MeshError> {
        w.write_all(self.save_text().as_bytes())?;
        Ok(())
    }

    /// Parses the text format. Errors carry 1-based line numbers.
    pub fn parse_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text.lines().enumerate().map(|(k, l)| (k + 1, l));
        let mut next_line = |what: &str| -> Result<(usize, &str), MeshError> {
            lines
                .next()
                .ok_or_else(|| MeshError::Parse { line: 0, msg: format!("missing {what}") })
        };
        let header = |line: usize, text: &str, key: &str| -> Result<usize, MeshError> {
            let mut it = text.split_whitespace();
            match (it.next(), it.next(), it.next()) {
                (Some(k), Some(count), None) if k == key => count.parse().map_err(|_| {
                    MeshError::Parse { line, msg: format!("invalid {key} count '{count}'") }
                }),
                _ => Err(MeshError::Parse { line, msg: format!("expected '{key} <count>'") }),
            }
        };
        let (l1, t1) = next_line("'vertices' header")?;
        let nv = header(l1, t1, "vertices")?;
        let (l2, t2) = next_line("'triangles' header")?;
        let nt = header(l2, t2, "triangles")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, text) = next_line("vertex line")?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(MeshError::Parse { line, msg: "expected 'x y'".into() });
            }
            let mut coord = [R::zero(); 2];
            for (k, part) in parts.iter().enumerate() {
                let x: f64 = part.parse().map_err(|_| MeshError::Parse {
                    line,
                    msg: format!("invalid coordinate '{part}'"),
                })?;
                coord[k] = R::from_f64(x).ok_or_else(|| MeshError::Parse {
                    line,
                    msg: format!("coordinate '{part}' not representable"),
                })?;
            }
            vertices.push(coord);
        }
        let mut triangles = Vec::with_capacity(nt);
        let mut labels = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, text) = next_line("triangle line")?;
            let parts: Vec<&str> = text.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(MeshError::Parse { line, msg: "expected 'i j k label'".into() });
            }
            let mut ids = [0usize; 3];
            for (k, part) in parts[..3].iter().enumerate() {
                ids[k] = part.parse().map_err(|_| MeshError::Parse {
                    line,
                    msg: format!("invalid vertex index '{part}'"),
                })?;
            }
            let lab: u8 = parts[3].parse().map_err(|_| MeshError::Parse {
                line,
                msg: format!("invalid label '{}'", parts[3]),
            })?;
            let lab = Region::from_u8(lab).ok_or_else(|| MeshError::Parse {
                line,
                msg: format!("unknown label {lab}"),
            })?;
            triangles.push(ids);
            labels.push(lab);
        }
        let mut periodic = None;
        if let Some((line, text)) = lines.next() {
            if !text.trim().is_empty() {
                let np = header(line, text, "periodic")?;
                let mut map: Vec<usize> = (0..nv).collect();
                for _ in 0..np {
                    let (line, text) = lines
                        .next()
                        .ok_or(MeshError::Parse { line: 0, msg: "missing periodic pair".into() })?;
                    let parts: Vec<&str> = text.split_whitespace().collect();
                    if parts.len() != 2 {
                        return Err(MeshError::Parse { line, msg: "expected 'dup canonical'".into() });
                    }
                    let v: usize = parts[0].parse().map_err(|_| MeshError::Parse {
                        line,
                        msg: format!("invalid vertex index '{}'", parts[0]),
                    })?;
                    let c: usize = parts[1].parse().map_err(|_| MeshError::Parse {
                        line,
                        msg: format!("invalid vertex index '{}'", parts[1]),
                    })?;
                    if v >= nv || c >= nv {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("periodic pair {v} {c} out of range"),
                        });
                    }
                    map[v] = c;
                }
                periodic = Some(map);
            }
        }
        for (line, text) in lines {
            if !text.trim().is_empty() {
                return Err(MeshError::Parse { line, msg: "unexpected trailing content".into() });
            }
        }
        Self::new(vertices, triangles, labels, periodic)
    }

    /// Reads the text format from a reader.
    pub fn read_from<Rd: std::io::Read>(rd: &mut Rd) -> Result<Self, MeshError> {
        let mut text = String::new();
        rd.read_to_string(&mut text)?;
        Self::parse_text(&text)
    }
}

/// Checks that all four sides of `rect` lie on grid lines of the `n`-cell grid
/// starting at `origin` with the given side length.
fn check_grid_aligned<R: Real>(
    rect: &Rect<R>,
    origin: R,
    side: R,
    n: usize,
) -> Result<(), MeshError> {
    let h = side / r(n as f64);
    let tol = h * r(1e-6);
    for coord in [rect.x0, rect.x1, rect.y0, rect.y1] {
        let steps = ((coord - origin) / h).round();
        if (coord - (origin + h * steps)).abs() > tol {
            return Err(MeshError::Misaligned { coord: to_f64(coord), n });
        }
    }
    Ok(())
}

/// Maps every vertex on the `x = max` / `y = max` sides of the bounding box to
/// the vertex at the folded position on the opposite side. Requires the two
/// sides to carry bit-identical subdivisions, which holds for all grids built
/// and refined by this module.
fn torus_identification<R: Real>(vertices: &[[R; 2]]) -> Vec<usize> {
    let mut lo = vertices[0];
    let mut hi = vertices[0];
    for v in vertices {
        for k in 0..2 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    let fold = |p: [R; 2]| -> [R; 2] {
        [
            if p[0] == hi[0] { lo[0] } else { p[0] },
            if p[1] == hi[1] { lo[1] } else { p[1] },
        ]
    };
    let mut at: BTreeMap<PosKey<R>, usize> = BTreeMap::new();
    for (v, &p) in vertices.iter().enumerate() {
        if fold(p) == p {
            at.insert(PosKey(p), v);
        }
    }
    vertices
        .iter()
        .enumerate()
        .map(|(v, &p)| {
            let q = fold(p);
            if q == p {
                v
            } else {
                *at.get(&PosKey(q)).expect("opposite torus sides must carry matching subdivisions")
            }
        })
        .collect()
}
