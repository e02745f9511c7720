//! Dense row-major matrices, covariance, a cyclic Jacobi symmetric
//! eigensolver and Spearman rank correlation.

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics; a zero-column matrix still has rows.
        (0..self.rows).map(move |r| self.row(r))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Copies the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut mean = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.rows.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Adds `v` to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Subtracts `v` from every row.
    pub fn sub_row_vector(&mut self, v: &[f64]) {
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(v) {
                *x -= b;
            }
        }
    }

    /// Column sums, i.e. `1ᵀ·self`.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (acc, v) in s.iter_mut().zip(row) {
                *acc += v;
            }
        }
        s
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            (self.rows, self.cols, other.cols),
            (&self.data, self.cols, 1),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply ({}x{})ᵀ by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            (self.cols, self.rows, other.cols),
            (&self.data, 1, self.cols),
            (&other.data, other.cols, 1),
            &mut out.data,
        );
        Ok(out)
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by ({}x{})ᵀ",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            (self.rows, self.cols, other.rows),
            (&self.data, self.cols, 1),
            (&other.data, 1, other.cols),
            &mut out.data,
        );
        Ok(out)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `c = a · b` for strided operands; `c` is dense row-major `m x n`.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the debug assertions above spell out the bounds every caller
    // satisfies by construction (dimensions are checked before the call).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sample covariance together with the column mean used to center.
#[derive(Clone, Debug)]
pub struct Covariance {
    pub mean: Vec<f64>,
    pub matrix: Matrix,
}

/// `(1/(n−1))·(X−mean)ᵀ(X−mean)`.
pub fn covariance(x: &Matrix) -> Result<Covariance> {
    if x.rows() < 2 {
        return Err(Error::Dimension(format!(
            "covariance needs at least 2 rows, got {}",
            x.rows()
        )));
    }
    let mean = x.column_means();
    let mut centered = x.clone();
    centered.sub_row_vector(&mean);
    let mut cov = centered.t_matmul(&centered)?;
    let scale = 1.0 / (x.rows() - 1) as f64;
    let d = cov.rows();
    for i in 0..d {
        for j in i..d {
            let v = cov.get(i, j) * scale;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok(Covariance { mean, matrix: cov })
}

/// Eigenvalues in descending order with one eigenvector per row.
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

const SYMMETRY_TOL: f64 = 1e-9;
const MAX_SWEEPS: usize = 100;

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Each eigenvector's sign is fixed so its largest-magnitude component is
/// positive, which makes the output reproducible byte for byte.
pub fn eigh(a: &Matrix) -> Result<EigenDecomposition> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::Validation(format!(
            "eigh needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::Validation("eigh input has non-finite entries".into()));
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            let diff = (a.get(i, j) - a.get(j, i)).abs();
            if diff > SYMMETRY_TOL * scale {
                return Err(Error::Validation(format!(
                    "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {diff:e}"
                )));
            }
        }
    }

    // Work on the symmetrized copy.
    let mut w = a.clone();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (w.get(i, j) + w.get(j, i));
            w.set(i, j, v);
            w.set(j, i, v);
        }
    }
    let mut v = Matrix::identity(n);
    let frob = w.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = 1e-15 * frob.max(f64::MIN_POSITIVE);

    let mut converged = n <= 1;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&w) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut w, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off = off_diagonal_norm(&w);
        if off > target * 1e3 {
            return Err(Error::Numeric(format!(
                "Jacobi eigensolver did not converge after {MAX_SWEEPS} sweeps; \
                 off-diagonal residual {off:e}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w.get(j, j).total_cmp(&w.get(i, i)).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| w.get(i, i)).collect();
    let mut eigenvectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let row = eigenvectors.row_mut(dst);
        for (k, slot) in row.iter_mut().enumerate() {
            *slot = v.get(k, src);
        }
        canonicalize_sign(row);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(w: &Matrix) -> f64 {
    let n = w.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += w.get(i, j) * w.get(i, j);
            }
        }
    }
    s.sqrt()
}

/// Applies the Jacobi rotation that annihilates `w[p,q]`.
fn rotate(w: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let n = w.rows();
    let apq = w.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = w.get(p, p);
    let aqq = w.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.is_finite() {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    } else {
        0.5 / theta
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    // Columns p and q.
    for k in 0..n {
        let akp = w.get(k, p);
        let akq = w.get(k, q);
        w.set(k, p, c * akp - s * akq);
        w.set(k, q, s * akp + c * akq);
    }
    // Rows p and q.
    for k in 0..n {
        let apk = w.get(p, k);
        let aqk = w.get(q, k);
        w.set(p, k, c * apk - s * aqk);
        w.set(q, k, s * apk + c * aqk);
    }
    w.set(p, q, 0.0);
    w.set(q, p, 0.0);
    for k in 0..n {
        let vkp = v.get(k, p);
        let vkq = v.get(k, q);
        v.set(k, p, c * vkp - s * vkq);
        v.set(k, q, s * vkp + c * vkq);
    }
}

/// Flips `v` so that its largest-magnitude component is positive.
pub fn canonicalize_sign(v: &mut [f64]) {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Spearman correlation plus a flag for the zero-variance case.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// Set when either input had constant ranks; `rho` is then 0.
    pub degenerate: bool,
}

/// Ranks starting at 1, ties receiving the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1 ..= end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of the average-tie ranks of `v` and `labels`.
pub fn spearman(v: &[f64], labels: &[f64]) -> Result<Spearman> {
    if v.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "spearman inputs differ in length: {} vs {}",
            v.len(),
            labels.len()
        )));
    }
    if v.len() < 3 {
        return Err(Error::Validation(format!(
            "spearman needs at least 3 samples, got {}",
            v.len()
        )));
    }
    let rv = average_ranks(v);
    let rl = average_ranks(labels);
    let n = v.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rv.iter().zip(&rl) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman {
            rho: 0.0,
            degenerate: true,
        });
    }
    let rho = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    Ok(Spearman {
        rho,
        degenerate: false,
    })
}
