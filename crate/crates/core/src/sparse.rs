//! Sparse complex matrices and a direct sparse LU solver.
//!
//! Storage is CSR over `Complex<R>`. The factorization is a left-looking
//! column LU (Gilbert-Peierls) with partial pivoting, preceded by a
//! reverse-Cuthill-McKee-style symmetric preorder that keeps fill localized on
//! the banded patterns produced by structured meshes. High-degree rows (e.g.
//! Lagrange-multiplier borders) are excluded from the level structure and
//! ordered last, where their fill is cheapest.
//!
//! Matrices assembled from sesquilinear forms in this crate are complex
//! *symmetric* (`A[i,j] == A[j,i]`), never Hermitian; the factorization makes
//! no use of symmetry and also handles Hermitian Gram matrices and saddle-point
//! systems.

use crate::scalar::{r, Cplx, Real};
use num_traits::Zero;

/// Assembly triplet `(row, col, value)`; duplicates are summed.
pub type Triplet<R> = (usize, usize, Cplx<R>);

/// Errors from sparse construction and solves.
#[derive(Debug, thiserror::Error)]
pub enum SparseError {
    #[error("matrix is not square: {nrows}x{ncols}")]
    NotSquare { nrows: usize, ncols: usize },
    #[error("dimension mismatch: matrix is {nrows}x{ncols}, vector has length {len}")]
    DimensionMismatch { nrows: usize, ncols: usize, len: usize },
    #[error("singular to working precision at column {col} (best pivot magnitude {pivot_mag:.3e})")]
    SingularPivot { col: usize, pivot_mag: f64 },
    #[error("iterative refinement stalled: relative residual {achieved:.3e} above {required:.3e}")]
    ResidualTooLarge { achieved: f64, required: f64 },
}

/// Compressed-sparse-row matrix over `Complex<R>`.
#[derive(Debug, Clone)]
pub struct Csr<R: Real> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Cplx<R>>,
}

impl<R: Real> Csr<R> {
    /// Matrix of the given shape with no stored entries.
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], cols: Vec::new(), vals: Vec::new() }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            cols: (0..n).collect(),
            vals: vec![Cplx::new(R::one(), R::zero()); n],
        }
    }

    /// Builds from triplets, summing duplicates and dropping exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, mut trips: Vec<Triplet<R>>) -> Self {
        for &(i, j, _) in &trips {
            assert!(i < nrows && j < ncols, "triplet ({i},{j}) outside {nrows}x{ncols}");
        }
        trips.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(trips.len());
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<Cplx<R>> = Vec::with_capacity(trips.len());
        for (i, j, v) in trips {
            if rows.last() == Some(&i) && cols.last() == Some(&j) {
                *vals.last_mut().unwrap() += v;
            } else {
                rows.push(i);
                cols.push(j);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; nrows + 1];
        for &i in &rows {
            row_ptr[i + 1] += 1;
        }
        for i in 0..nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut m = Self { nrows, ncols, row_ptr, cols, vals };
        m.drop_zeros();
        m
    }

    fn drop_zeros(&mut self) {
        let mut new_cols = Vec::with_capacity(self.cols.len());
        let mut new_vals = Vec::with_capacity(self.vals.len());
        let mut new_ptr = vec![0usize; self.nrows + 1];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if !self.vals[k].is_zero() {
                    new_cols.push(self.cols[k]);
                    new_vals.push(self.vals[k]);
                }
            }
            new_ptr[i + 1] = new_cols.len();
        }
        self.row_ptr = new_ptr;
        self.cols = new_cols;
        self.vals = new_vals;
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[Cplx<R>]) {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[range.clone()], &self.vals[range])
    }

    /// Stored value at `(i, j)`, zero if absent.
    pub fn get(&self, i: usize, j: usize) -> Cplx<R> {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => Cplx::zero(),
        }
    }

    /// y = A x.
    pub fn apply(&self, x: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![Cplx::zero(); self.nrows];
        self.apply_add_into(x, &mut y);
        y
    }

    /// y += A x.
    pub fn apply_add_into(&self, x: &[Cplx<R>], y: &mut [Cplx<R>]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let mut acc = Cplx::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[i] += acc;
        }
    }

    /// y = A^H x (conjugate transpose).
    pub fn apply_conj_transpose(&self, x: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![Cplx::zero(); self.ncols];
        for i in 0..self.nrows {
            let xi = x[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k].conj() * xi;
            }
        }
        y
    }

    /// y += A^T x (plain transpose, no conjugation).
    pub fn apply_transpose_add_into(&self, x: &[Cplx<R>], y: &mut [Cplx<R>]) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for i in 0..self.nrows {
            let xi = x[i];
            if xi.is_zero() {
                continue;
            }
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.cols[k]] += self.vals[k] * xi;
            }
        }
    }

    /// Dense copy, for tests and small-system cross-checks.
    pub fn to_dense(&self) -> Vec<Vec<Cplx<R>>> {
        let mut d = vec![vec![Cplx::zero(); self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                d[i][self.cols[k]] = self.vals[k];
            }
        }
        d
    }

    /// Checks `A[i,j] == A[j,i]` (complex symmetry, not Hermitian) within `tol`.
    pub fn is_complex_symmetric(&self, tol: R) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if (v - self.get(j, i)).norm() > tol {
                    return false;
                }
            }
        }
        true
    }

    /// Writes the matrix in coordinate text form, one `row col re im` per line.
    pub fn write_coordinate_text<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, v) in cols.iter().zip(vals) {
                writeln!(w, "{} {} {} {}", i, j, v.re, v.im)?;
            }
        }
        Ok(())
    }
}

/// Restricts a matrix to a sorted column subset: keeps the rows that have at
/// least one entry in those columns, renumbers columns by their position in
/// `keep_cols`, and returns the kept original row ids alongside the submatrix.
pub fn restrict_rows<R: Real>(m: &Csr<R>, keep_cols: &[usize]) -> (Vec<usize>, Csr<R>) {
    debug_assert!(keep_cols.windows(2).all(|w| w[0] < w[1]), "columns must be sorted and unique");
    let mut col_pos = vec![usize::MAX; m.ncols()];
    for (p, &c) in keep_cols.iter().enumerate() {
        col_pos[c] = p;
    }
    let mut rows = Vec::new();
    let mut trips = Vec::new();
    for i in 0..m.nrows() {
        let (cols, vals) = m.row(i);
        let mut hit = false;
        for (&j, &v) in cols.iter().zip(vals) {
            if col_pos[j] != usize::MAX {
                if !hit {
                    rows.push(i);
                    hit = true;
                }
                trips.push((rows.len() - 1, col_pos[j], v));
            }
        }
    }
    let sub = Csr::from_triplets(rows.len(), keep_cols.len(), trips);
    (rows, sub)
}

/// Sparse matrix product `a * b`.
pub fn matmul<R: Real>(a: &Csr<R>, b: &Csr<R>) -> Csr<R> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions must agree");
    let n = b.ncols();
    let mut acc = vec![Cplx::<R>::zero(); n];
    let mut stamp = vec![usize::MAX; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut trips: Vec<Triplet<R>> = Vec::new();
    for i in 0..a.nrows() {
        touched.clear();
        let (cols, vals) = a.row(i);
        for (&k, &av) in cols.iter().zip(vals) {
            let (bcols, bvals) = b.row(k);
            for (&j, &bv) in bcols.iter().zip(bvals) {
                if stamp[j] != i {
                    stamp[j] = i;
                    acc[j] = Cplx::zero();
                    touched.push(j);
                }
                acc[j] += av * bv;
            }
        }
        touched.sort_unstable();
        for &j in &touched {
            if !acc[j].is_zero() {
                trips.push((i, j, acc[j]));
            }
        }
    }
    Csr::from_triplets(a.nrows(), b.ncols(), trips)
}

/// Principal submatrix on a sorted index subset; rows and columns are
/// renumbered by their position in `keep`.
pub fn principal_submatrix<R: Real>(m: &Csr<R>, keep: &[usize]) -> Csr<R> {
    debug_assert!(keep.windows(2).all(|w| w[0] < w[1]), "indices must be sorted and unique");
    let mut pos = vec![usize::MAX; m.ncols()];
    for (p, &i) in keep.iter().enumerate() {
        pos[i] = p;
    }
    let mut trips = Vec::new();
    for (pi, &i) in keep.iter().enumerate() {
        let (cols, vals) = m.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if pos[j] != usize::MAX {
                trips.push((pi, pos[j], v));
            }
        }
    }
    Csr::from_triplets(keep.len(), keep.len(), trips)
}

/// Euclidean norm of a complex vector.
pub fn vec_norm<R: Real>(x: &[Cplx<R>]) -> R {
    x.iter().map(|v| v.norm_sqr()).fold(R::zero(), |a, b| a + b).sqrt()
}

/// Conjugated dot product `x^H y`.
pub fn vec_dot<R: Real>(x: &[Cplx<R>], y: &[Cplx<R>]) -> Cplx<R> {
    assert_eq!(x.len(), y.len());
    let mut acc = Cplx::zero();
    for (a, b) in x.iter().zip(y) {
        acc += a.conj() * *b;
    }
    acc
}

/// Symmetric fill-reducing order on the pattern of `A + A^T`.
///
/// Reverse Cuthill-McKee over the low-degree part of the graph; rows whose
/// degree exceeds a fraction of `n` (multiplier borders, aggregate rows) are
/// appended at the end. Returns `perm` with `perm[new] = old`.
fn fill_reducing_order<R: Real>(a: &Csr<R>) -> Vec<usize> {
    let n = a.nrows();
    if n == 0 {
        return Vec::new();
    }
    // symmetrized adjacency (without self loops)
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        let (cols, _) = a.row(i);
        for &j in cols {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let dense_cut = (n / 4).max(64);
    let is_dense: Vec<bool> = adj.iter().map(|l| l.len() > dense_cut).collect();

    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    // mark dense nodes as visited so BFS ignores them
    for v in 0..n {
        if is_dense[v] {
            seen[v] = true;
        }
    }
    let mut queue = std::collections::VecDeque::new();
    loop {
        // next start: unseen vertex of minimum degree (smallest index on ties)
        let mut start = None;
        let mut best = usize::MAX;
        for v in 0..n {
            if !seen[v] && adj[v].len() < best {
                best = adj[v].len();
                start = Some(v);
            }
        }
        let Some(s) = start else { break };
        seen[s] = true;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            nbrs.sort_unstable_by_key(|&u| (adj[u].len(), u));
            for u in nbrs {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    // dense rows last, in index order
    for v in 0..n {
        if is_dense[v] {
            order.push(v);
        }
    }
    debug_assert_eq!(order.len(), n);
    order
}

/// Direct sparse LU factorization with partial pivoting.
///
/// Factorizes `P B = L U` where `B` is the symmetrically preordered input;
/// exposes solves with the matrix and with its conjugate transpose. The
/// factorization is kept so many right-hand sides can reuse it.
pub struct SparseLu<R: Real> {
    n: usize,
    /// preorder: `perm[new] = old`
    perm: Vec<usize>,
    /// row r (preordered) was chosen as pivot at elimination step `pinv[r]`
    pinv: Vec<usize>,
    // L strictly lower, unit diagonal, CSC in pivot-position row indexing
    l_ptr: Vec<usize>,
    l_rows: Vec<usize>,
    l_vals: Vec<Cplx<R>>,
    // U strictly upper part, CSC in pivot-position row indexing, plus diagonal
    u_ptr: Vec<usize>,
    u_rows: Vec<usize>,
    u_vals: Vec<Cplx<R>>,
    u_diag: Vec<Cplx<R>>,
}

impl<R: Real> SparseLu<R> {
    /// Factorizes the matrix. Fails on structural or numerical singularity.
    pub fn factor(a: &Csr<R>) -> Result<Self, SparseError> {
        if a.nrows() != a.ncols() {
            return Err(SparseError::NotSquare { nrows: a.nrows(), ncols: a.ncols() });
        }
        let n = a.nrows();
        let perm = fill_reducing_order(a);
        let mut perm_inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            perm_inv[old] = new;
        }

        // CSC of the preordered matrix B[i,j] = A[perm[i], perm[j]]
        let mut col_cnt = vec![0usize; n + 1];
        for i in 0..n {
            let (cols, _) = a.row(i);
            for &j in cols {
                col_cnt[perm_inv[j] + 1] += 1;
            }
        }
        for j in 0..n {
            col_cnt[j + 1] += col_cnt[j];
        }
        let nnz = a.nnz();
        let mut b_rows = vec![0usize; nnz];
        let mut b_vals = vec![Cplx::zero(); nnz];
        {
            let mut next = col_cnt.clone();
            for i in 0..n {
                let (cols, vals) = a.row(i);
                let bi = perm_inv[i];
                for (&j, &v) in cols.iter().zip(vals) {
                    let bj = perm_inv[j];
                    let slot = next[bj];
                    next[bj] += 1;
                    b_rows[slot] = bi;
                    b_vals[slot] = v;
                }
            }
        }

        let mut pinv = vec![usize::MAX; n];
        let mut prow = vec![usize::MAX; n]; // prow[p] = row pivoted at step p
        let mut l_cols: Vec<Vec<(usize, Cplx<R>)>> = Vec::with_capacity(n);
        let mut u_cols: Vec<Vec<(usize, Cplx<R>)>> = Vec::with_capacity(n);
        let mut u_diag: Vec<Cplx<R>> = Vec::with_capacity(n);

        let mut x = vec![Cplx::<R>::zero(); n];
        let mut pattern: Vec<usize> = Vec::new();
        let mut in_pattern = vec![false; n];
        let mut reach: Vec<usize> = Vec::new();
        let mut reach_seen = vec![false; n];
        let mut stack: Vec<usize> = Vec::new();

        for j in 0..n {
            pattern.clear();
            reach.clear();
            let mut col_max = R::zero();
            for k in col_cnt[j]..col_cnt[j + 1] {
                let rr = b_rows[k];
                if !in_pattern[rr] {
                    in_pattern[rr] = true;
                    pattern.push(rr);
                    x[rr] = b_vals[k];
                } else {
                    x[rr] += b_vals[k];
                }
                let m = x[rr].norm();
                if m > col_max {
                    col_max = m;
                }
            }
            // reachability through already-pivoted columns
            for idx in 0..pattern.len() {
                let p0 = pinv[pattern[idx]];
                if p0 != usize::MAX && !reach_seen[p0] {
                    stack.push(p0);
                    reach_seen[p0] = true;
                    while let Some(p) = stack.pop() {
                        reach.push(p);
                        for &(rr, _) in &l_cols[p] {
                            let p2 = pinv[rr];
                            if p2 != usize::MAX && !reach_seen[p2] {
                                reach_seen[p2] = true;
                                stack.push(p2);
                            }
                        }
                    }
                }
            }
            reach.sort_unstable();
            let mut u_col = Vec::with_capacity(reach.len());
            for &p in &reach {
                reach_seen[p] = false;
                let pr = prow[p];
                let xp = x[pr];
                if xp.is_zero() {
                    continue;
                }
                u_col.push((p, xp));
                for &(rr, lv) in &l_cols[p] {
                    if !in_pattern[rr] {
                        in_pattern[rr] = true;
                        pattern.push(rr);
                        x[rr] = Cplx::zero();
                    }
                    x[rr] -= xp * lv;
                }
            }
            // partial pivot among not-yet-pivoted rows
            let mut piv_row = usize::MAX;
            let mut piv_mag = R::zero();
            for &rr in &pattern {
                if pinv[rr] == usize::MAX {
                    let m = x[rr].norm();
                    if m > piv_mag || (m == piv_mag && piv_row != usize::MAX && rr < piv_row && m > R::zero()) {
                        piv_mag = m;
                        piv_row = rr;
                    }
                }
            }
            let tiny = r::<R>(1e-300).max(col_max * R::epsilon() * r(1e-3));
            if piv_row == usize::MAX || piv_mag <= tiny {
                return Err(SparseError::SingularPivot {
                    col: j,
                    pivot_mag: piv_mag.to_f64().unwrap_or(0.0),
                });
            }
            let piv = x[piv_row];
            let mut l_col = Vec::new();
            for &rr in &pattern {
                if pinv[rr] == usize::MAX && rr != piv_row && !x[rr].is_zero() {
                    l_col.push((rr, x[rr] / piv));
                }
            }
            for &rr in &pattern {
                in_pattern[rr] = false;
                x[rr] = Cplx::zero();
            }
            pinv[piv_row] = j;
            prow[j] = piv_row;
            u_diag.push(piv);
            u_cols.push(u_col);
            l_cols.push(l_col);
        }

        // flatten, remapping L row indices into pivot positions
        let mut l_ptr = vec![0usize; n + 1];
        let mut u_ptr = vec![0usize; n + 1];
        for j in 0..n {
            l_ptr[j + 1] = l_ptr[j] + l_cols[j].len();
            u_ptr[j + 1] = u_ptr[j] + u_cols[j].len();
        }
        let mut l_rows = Vec::with_capacity(l_ptr[n]);
        let mut l_vals = Vec::with_capacity(l_ptr[n]);
        for col in &l_cols {
            for &(rr, v) in col {
                l_rows.push(pinv[rr]);
                l_vals.push(v);
            }
        }
        let mut u_rows = Vec::with_capacity(u_ptr[n]);
        let mut u_vals = Vec::with_capacity(u_ptr[n]);
        for col in &u_cols {
            for &(p, v) in col {
                u_rows.push(p);
                u_vals.push(v);
            }
        }
        Ok(Self { n, perm, pinv, l_ptr, l_rows, l_vals, u_ptr, u_rows, u_vals, u_diag })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        // z[p] = (P c)[p] with c the preordered rhs
        let mut z = vec![Cplx::zero(); n];
        for new in 0..n {
            z[self.pinv[new]] = b[self.perm[new]];
        }
        // forward: L y = z (unit lower, CSC)
        for jcol in 0..n {
            let yj = z[jcol];
            if yj.is_zero() {
                continue;
            }
            for k in self.l_ptr[jcol]..self.l_ptr[jcol + 1] {
                z[self.l_rows[k]] -= self.l_vals[k] * yj;
            }
        }
        // backward: U x = y (CSC with separate diagonal)
        for jcol in (0..n).rev() {
            let xj = z[jcol] / self.u_diag[jcol];
            z[jcol] = xj;
            if xj.is_zero() {
                continue;
            }
            for k in self.u_ptr[jcol]..self.u_ptr[jcol + 1] {
                z[self.u_rows[k]] -= self.u_vals[k] * xj;
            }
        }
        // undo the symmetric preorder
        let mut out = vec![Cplx::zero(); n];
        for new in 0..n {
            out[self.perm[new]] = z[new];
        }
        out
    }

    /// Solves `A^H x = b` using the same factorization.
    pub fn solve_conj_transpose(&self, b: &[Cplx<R>]) -> Vec<Cplx<R>> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut c = vec![Cplx::zero(); n];
        for new in 0..n {
            c[new] = b[self.perm[new]];
        }
        // B^H = U^H L^H P. First U^H w = c: U^H is lower triangular with
        // conjugated diagonal; iterate columns of U as rows of U^H.
        let mut w = vec![Cplx::zero(); n];
        for jcol in 0..n {
            let mut acc = c[jcol];
            for k in self.u_ptr[jcol]..self.u_ptr[jcol + 1] {
                acc -= self.u_vals[k].conj() * w[self.u_rows[k]];
            }
            w[jcol] = acc / self.u_diag[jcol].conj();
        }
        // L^H v = w: unit upper triangular.
        for jcol in (0..n).rev() {
            let mut acc = w[jcol];
            for k in self.l_ptr[jcol]..self.l_ptr[jcol + 1] {
                acc -= self.l_vals[k].conj() * w[self.l_rows[k]];
            }
            w[jcol] = acc;
        }
        // P y = v: y[prow[p]] = v[p], then undo the preorder.
        let mut out = vec![Cplx::zero(); n];
        for new in 0..n {
            out[self.perm[new]] = w[self.pinv[new]];
        }
        out
    }

    /// Solve with one step of iterative refinement against `a`.
    pub fn solve_refined(&self, a: &Csr<R>, b: &[Cplx<R>]) -> Vec<Cplx<R>> {
        let mut x = self.solve(b);
        let mut res = b.to_vec();
        let minus_one = Cplx::new(-R::one(), R::zero());
        let ax = a.apply(&x);
        for (ri, ai) in res.iter_mut().zip(&ax) {
            *ri += minus_one * *ai;
        }
        let dx = self.solve(&res);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += *di;
        }
        x
    }
}

/// Direct solve of `A x = b` with the contracted relative residual `≤ 1e−10`.
///
/// Factorizes, solves, applies up to two refinement steps, and verifies the
/// residual; a residual above the contract is reported as an error rather than
/// returned silently.
pub fn solve_sparse<R: Real>(a: &Csr<R>, b: &[Cplx<R>]) -> Result<Vec<Cplx<R>>, SparseError> {
    if a.nrows() != b.len() {
        return Err(SparseError::DimensionMismatch { nrows: a.nrows(), ncols: a.ncols(), len: b.len() });
    }
    let bnorm = vec_norm(b);
    if bnorm.is_zero() {
        return Ok(vec![Cplx::zero(); a.ncols()]);
    }
    let lu = SparseLu::factor(a)?;
    let mut x = lu.solve(b);
    let required = r::<R>(1e-10);
    for _ in 0..2 {
        let ax = a.apply(&x);
        let mut res = b.to_vec();
        for (ri, ai) in res.iter_mut().zip(&ax) {
            *ri -= *ai;
        }
        let rel = vec_norm(&res) / bnorm;
        if rel <= required {
            return Ok(x);
        }
        let dx = lu.solve(&res);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += *di;
        }
    }
    let ax = a.apply(&x);
    let mut res = b.to_vec();
    for (ri, ai) in res.iter_mut().zip(&ax) {
        *ri -= *ai;
    }
    let rel = vec_norm(&res) / bnorm;
    if rel <= required {
        Ok(x)
    } else {
        Err(SparseError::ResidualTooLarge {
            achieved: rel.to_f64().unwrap_or(f64::NAN),
            required: 1e-10,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use proptest::prelude::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    type C = Complex64;

    fn dense_solve(mut a: Vec<Vec<C>>, mut b: Vec<C>) -> Vec<C> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].norm().total_cmp(&a[j][col].norm())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            let d = a[col][col];
            assert!(d.norm() > 1e-14, "dense oracle hit a singular pivot");
            for i in 0..n {
                if i != col && a[i][col].norm() > 0.0 {
                    let f = a[i][col] / d;
                    for j in col..n {
                        let v = a[col][j];
                        a[i][j] -= f * v;
                    }
                    let bc = b[col];
                    b[i] -= f * bc;
                }
            }
        }
        (0..n).map(|i| b[i] / a[i][i]).collect()
    }

    fn random_dd_matrix(rng: &mut StdRng, n: usize) -> Csr<f64> {
        let mut trips = Vec::new();
        for i in 0..n {
            let mut offdiag = 0.0;
            for _ in 0..3 {
                let j = rng.gen_range(0..n);
                if j != i {
                    let v = C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    offdiag += v.norm();
                    trips.push((i, j, v));
                }
            }
            trips.push((i, i, C::new(offdiag + 1.0 + rng.gen_range(0.0..1.0), rng.gen_range(-0.5..0.5))));
        }
        Csr::from_triplets(n, n, trips)
    }

    #[test]
    fn triplets_sum_duplicates_and_order_columns() {
        let m = Csr::<f64>::from_triplets(
            2,
            3,
            vec![
                (1, 2, C::new(1.0, 0.0)),
                (0, 1, C::new(2.0, 1.0)),
                (1, 2, C::new(0.5, -1.0)),
                (0, 0, C::new(-1.0, 0.0)),
            ],
        );
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 0), C::new(-1.0, 0.0));
        assert_eq!(m.get(0, 1), C::new(2.0, 1.0));
        assert_eq!(m.get(1, 2), C::new(1.5, -1.0));
        let (cols, _) = m.row(0);
        assert_eq!(cols, &[0, 1]);
    }

    #[test]
    fn apply_matches_dense() {
        let mut rng = StdRng::seed_from_u64(7);
        let m = random_dd_matrix(&mut rng, 17);
        let x: Vec<C> = (0..17).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let y = m.apply(&x);
        let d = m.to_dense();
        for i in 0..17 {
            let mut acc = C::new(0.0, 0.0);
            for j in 0..17 {
                acc += d[i][j] * x[j];
            }
            assert!((acc - y[i]).norm() < 1e-12);
        }
        // conjugate transpose apply against dense
        let yh = m.apply_conj_transpose(&x);
        for j in 0..17 {
            let mut acc = C::new(0.0, 0.0);
            for i in 0..17 {
                acc += d[i][j].conj() * x[i];
            }
            assert!((acc - yh[j]).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let a = Csr::<f64>::identity(5);
        let b: Vec<C> = (0..5).map(|i| C::new(i as f64, -1.0)).collect();
        let x = solve_sparse(&a, &b).unwrap();
        for (xi, bi) in x.iter().zip(&b) {
            assert!((xi - bi).norm() < 1e-14);
        }
    }

    #[test]
    fn diagonal_two_i_solve() {
        let n = 4;
        let trips = (0..n).map(|i| (i, i, C::new(0.0, 2.0))).collect();
        let a = Csr::<f64>::from_triplets(n, n, trips);
        let b = vec![C::new(1.0, 0.0); n];
        let x = solve_sparse(&a, &b).unwrap();
        let expect = C::new(1.0, 0.0) / C::new(0.0, 2.0);
        for xi in x {
            assert!((xi - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn random_complex_system_meets_residual_contract() {
        let mut rng = StdRng::seed_from_u64(42);
        let a = random_dd_matrix(&mut rng, 50);
        let b: Vec<C> = (0..50).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let x = solve_sparse(&a, &b).unwrap();
        let ax = a.apply(&x);
        let mut rnorm = 0.0f64;
        for i in 0..50 {
            rnorm += (ax[i] - b[i]).norm_sqr();
        }
        assert!(rnorm.sqrt() / vec_norm(&b) <= 1e-10);
    }

    #[test]
    fn solve_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(3);
        for n in [1usize, 2, 5, 23] {
            let a = random_dd_matrix(&mut rng, n);
            let b: Vec<C> = (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let x = solve_sparse(&a, &b).unwrap();
            let xd = dense_solve(a.to_dense(), b.clone());
            for i in 0..n {
                assert!((x[i] - xd[i]).norm() < 1e-9, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn conj_transpose_solve_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(11);
        let n = 23;
        let a = random_dd_matrix(&mut rng, n);
        let b: Vec<C> = (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let lu = SparseLu::factor(&a).unwrap();
        let x = lu.solve_conj_transpose(&b);
        let d = a.to_dense();
        let mut dh = vec![vec![C::new(0.0, 0.0); n]; n];
        for i in 0..n {
            for j in 0..n {
                dh[i][j] = d[j][i].conj();
            }
        }
        let xd = dense_solve(dh, b.clone());
        for i in 0..n {
            assert!((x[i] - xd[i]).norm() < 1e-9);
        }
    }

    #[test]
    fn indefinite_saddle_point_is_solved() {
        // [[K, c], [c^T, 0]] with K the 1D Laplacian: a bordered system like the
        // zero-mean-constrained cell problems.
        let n = 8;
        let mut trips = Vec::new();
        for i in 0..n {
            trips.push((i, i, C::new(2.0, 0.0)));
            if i + 1 < n {
                trips.push((i, i + 1, C::new(-1.0, 0.0)));
                trips.push((i + 1, i, C::new(-1.0, 0.0)));
            }
            trips.push((i, n, C::new(1.0, 0.0)));
            trips.push((n, i, C::new(1.0, 0.0)));
        }
        let a = Csr::<f64>::from_triplets(n + 1, n + 1, trips);
        let b: Vec<C> = (0..=n).map(|i| C::new(i as f64 - 3.0, 0.5)).collect();
        let x = solve_sparse(&a, &b).unwrap();
        let ax = a.apply(&x);
        for i in 0..=n {
            assert!((ax[i] - b[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn singular_matrix_reports_pivot_column() {
        // third column identically zero
        let trips = vec![
            (0, 0, C::new(1.0, 0.0)),
            (1, 1, C::new(1.0, 0.0)),
            (0, 1, C::new(2.0, 0.0)),
        ];
        let a = Csr::<f64>::from_triplets(3, 3, trips);
        match SparseLu::factor(&a) {
            Err(SparseError::SingularPivot { .. }) => {}
            other => panic!("expected singular pivot, got {:?}", other.map(|_| "factorized")),
        }
    }

    #[test]
    fn symmetry_check_detects_asymmetry() {
        let sym = Csr::<f64>::from_triplets(
            2,
            2,
            vec![(0, 1, C::new(1.0, 2.0)), (1, 0, C::new(1.0, 2.0)), (0, 0, C::new(3.0, 0.0))],
        );
        assert!(sym.is_complex_symmetric(1e-14));
        let asym = Csr::<f64>::from_triplets(
            2,
            2,
            vec![(0, 1, C::new(1.0, 2.0)), (1, 0, C::new(1.0, -2.0)), (0, 0, C::new(3.0, 0.0)), (1, 1, C::new(1.0, 0.0))],
        );
        assert!(!asym.is_complex_symmetric(1e-14));
    }

    #[test]
    fn coordinate_export_format() {
        let m = Csr::<f64>::from_triplets(2, 2, vec![(0, 1, C::new(1.5, -2.0)), (1, 0, C::new(0.25, 0.0))]);
        let mut buf = Vec::new();
        m.write_coordinate_text(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 1 1.5 -2\n1 0 0.25 0\n");
    }

    #[test]
    fn matmul_matches_the_dense_product() {
        let a = Csr::<f64>::from_triplets(
            2,
            3,
            vec![(0, 0, C::new(1.0, 1.0)), (0, 2, C::new(2.0, 0.0)), (1, 1, C::new(0.0, -1.0))],
        );
        let b = Csr::<f64>::from_triplets(
            3,
            2,
            vec![(0, 1, C::new(3.0, 0.0)), (1, 0, C::new(5.0, 0.0)), (2, 0, C::new(1.0, 2.0))],
        );
        let p = matmul(&a, &b);
        assert_eq!(p.nrows(), 2);
        assert_eq!(p.ncols(), 2);
        let (ad, bd) = (a.to_dense(), b.to_dense());
        for i in 0..2 {
            for j in 0..2 {
                let mut want = C::new(0.0, 0.0);
                for k in 0..3 {
                    want += ad[i][k] * bd[k][j];
                }
                assert_eq!(p.get(i, j), want);
            }
        }
    }

    #[test]
    fn row_restriction_keeps_hit_rows_only() {
        let m = Csr::<f64>::from_triplets(
            3,
            4,
            vec![(0, 0, C::new(1.0, 0.0)), (1, 2, C::new(2.0, 0.0)), (2, 0, C::new(3.0, 0.0)), (2, 3, C::new(4.0, 0.0))],
        );
        let (rows, sub) = restrict_rows(&m, &[2, 3]);
        assert_eq!(rows, vec![1, 2]);
        assert_eq!(sub.nrows(), 2);
        assert_eq!(sub.ncols(), 2);
        assert_eq!(sub.get(0, 0), C::new(2.0, 0.0));
        assert_eq!(sub.get(1, 1), C::new(4.0, 0.0));
        assert_eq!(sub.get(1, 0), C::new(0.0, 0.0));
    }

    #[test]
    fn principal_submatrix_renumbers_and_drops() {
        let m = Csr::<f64>::from_triplets(
            4,
            4,
            vec![
                (0, 0, C::new(1.0, 0.0)),
                (1, 3, C::new(2.0, 0.5)),
                (3, 1, C::new(2.0, 0.5)),
                (3, 3, C::new(5.0, 0.0)),
                (2, 3, C::new(9.0, 0.0)),
            ],
        );
        let sub = principal_submatrix(&m, &[1, 3]);
        assert_eq!(sub.nrows(), 2);
        assert_eq!(sub.get(0, 1), C::new(2.0, 0.5));
        assert_eq!(sub.get(1, 0), C::new(2.0, 0.5));
        assert_eq!(sub.get(1, 1), C::new(5.0, 0.0));
        assert_eq!(sub.get(0, 0), C::new(0.0, 0.0));
    }

    proptest! {
        #[test]
        fn random_systems_solve_within_contract(seed in 0u64..200, n in 1usize..40) {
            let mut rng = StdRng::seed_from_u64(seed);
            let a = random_dd_matrix(&mut rng, n);
            let b: Vec<C> = (0..n).map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            let x = solve_sparse(&a, &b).unwrap();
            let ax = a.apply(&x);
            let mut rn = 0.0;
            for i in 0..n {
                rn += (ax[i] - b[i]).norm_sqr();
            }
            prop_assert!(rn.sqrt() <= 1e-10 * vec_norm(&b).max(1e-30));
        }
    }
}
