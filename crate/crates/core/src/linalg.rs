//! Dense row-major matrices and the spectral routines behind feature-rank
//! estimation.
//!
//! Products go through `matrixmultiply`'s single-threaded kernels, which keep
//! a fixed summation order for a given shape, so every result here is
//! reproducible bit for bit.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Default relative tolerance for [`numerical_rank`]: machine epsilon of
/// single precision, the dtype feature matrices are usually kept in.
pub const DEFAULT_RANK_TOL: f64 = f32::EPSILON as f64;

/// Maximum implicit-QL iterations spent on any one eigenvalue.
const MAX_QL_ITERATIONS: usize = 100;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()
        } else {
            f.write_str("[..]")
        }
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
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

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
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
        // chunks(0) panics, and a zero-column matrix still has `rows` rows.
        let cols = self.cols;
        (0..self.rows).map(move |r| &self.data[r * cols..(r + 1) * cols])
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// Borrowed view of this matrix.
    pub fn view(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.rows,
            cols: self.cols,
            row_stride: self.cols as isize,
            col_stride: 1,
        }
    }

    /// Borrowed view of the transpose, without copying.
    pub fn t(&self) -> View<'_> {
        View {
            data: &self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: 1,
            col_stride: self.cols as isize,
        }
    }

    /// Gathers the given rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::Shape(format!(
                "bias of length {} for {} columns",
                bias.len(),
                self.cols
            )));
        }
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(bias) {
                *x += b;
            }
        }
        Ok(())
    }

    /// Column sums, accumulated top to bottom.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for row in self.row_iter() {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.rows as f64;
        let mut sums = self.column_sums();
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// A strided, read-only window onto matrix storage. Used to feed transposed
/// operands to [`gemm`] without materializing them.
#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: isize,
    col_stride: isize,
}

impl View<'_> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[(r as isize * self.row_stride + c as isize * self.col_stride) as usize]
    }
}

/// `c ← alpha · a·b + beta · c`.
///
/// With `beta == 0` the previous contents of `c` are ignored entirely.
pub fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut Matrix) -> Result<()> {
    if a.cols != b.rows || c.rows != a.rows || c.cols != b.cols {
        return Err(Error::Shape(format!(
            "cannot compute ({}x{})·({}x{}) into {}x{}",
            a.rows, a.cols, b.rows, b.cols, c.rows, c.cols
        )));
    }
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return Ok(());
    }
    if k == 0 {
        if beta == 0.0 {
            c.data.fill(0.0);
        } else {
            c.scale(beta);
        }
        return Ok(());
    }
    // SAFETY: the shape check above guarantees every strided access made by
    // the kernel stays within the three buffers, and `c` is borrowed
    // mutably so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.data.as_mut_ptr(),
            c.cols as isize,
            1,
        );
    }
    Ok(())
}

/// Product of two views into a fresh matrix.
pub fn matmul_views(a: View<'_>, b: View<'_>) -> Result<Matrix> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    gemm(1.0, a, b, 0.0, &mut out)?;
    Ok(out)
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    matmul_views(a.view(), b.view())
}

/// Sample covariance `(X − x̄)ᵀ(X − x̄) / (n − 1)` of an `n × d` matrix whose
/// rows are observations.
pub fn covariance(activations: &Matrix) -> Result<Matrix> {
    let (n, d) = activations.shape();
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    // Shift by the first row before centering: identical rows then cancel
    // exactly, and the subtraction of the mean loses less precision.
    let shift = activations.row(0).to_vec();
    let mut centered = activations.clone();
    for r in 0..n {
        for (x, s) in centered.row_mut(r).iter_mut().zip(&shift) {
            *x -= s;
        }
    }
    let means = centered.column_means();
    for r in 0..n {
        for (x, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *x -= m;
        }
    }
    let mut cov = Matrix::zeros(d, d);
    gemm(
        1.0 / (n - 1) as f64,
        centered.t(),
        centered.view(),
        0.0,
        &mut cov,
    )?;
    // The blocked kernel does not promise c[i][j] == c[j][i] bit for bit.
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = avg;
            cov[(j, i)] = avg;
        }
    }
    Ok(cov)
}

/// Eigenvalues of a symmetric matrix, sorted non-increasing and clamped at
/// zero from below.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    values: Vec<f64>,
}

impl Spectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn largest(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Number of values strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.values.iter().take_while(|&&s| s > threshold).count()
    }
}

/// Eigenvalues of a symmetric positive semi-definite matrix.
///
/// Householder reduction to tridiagonal form followed by implicit QL with
/// Wilkinson shifts. An off-diagonal entry is deflated once it drops below
/// machine epsilon times its two diagonal neighbours.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Spectrum> {
    let n = m.rows();
    if n != m.cols() {
        return Err(Error::Shape(format!(
            "eigenvalues need a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !m.all_finite() {
        return Err(Error::Input("matrix has non-finite entries".into()));
    }
    let scale = m.max_abs();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::Input(format!(
                    "matrix is not symmetric at ({i}, {j}): {} vs {}",
                    m[(i, j)],
                    m[(j, i)]
                )));
            }
        }
    }
    if n == 0 {
        return Ok(Spectrum { values: vec![] });
    }

    let mut a = m.clone();
    let (mut diag, mut off) = tridiagonalize(&mut a);
    tridiagonal_ql(&mut diag, &mut off)?;

    for v in diag.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    diag.sort_by(|x, y| y.total_cmp(x));
    Ok(Spectrum { values: diag })
}

/// Householder reduction of a symmetric matrix (lower triangle used) to
/// tridiagonal form. Returns the diagonal and the sub-diagonal, where
/// `off[i]` couples rows `i - 1` and `i` and `off[0] == 0`.
fn tridiagonalize(a: &mut Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let scale: f64 = (0..=l).map(|k| a[(i, k)].abs()).sum();
            if scale == 0.0 {
                off[i] = a[(i, l)];
            } else {
                for k in 0..=l {
                    a[(i, k)] /= scale;
                    h += a[(i, k)] * a[(i, k)];
                }
                let f = a[(i, l)];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                off[i] = scale * g;
                h -= f * g;
                a[(i, l)] = f - g;
                let mut f = 0.0;
                for j in 0..=l {
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += a[(j, k)] * a[(i, k)];
                    }
                    for k in (j + 1)..=l {
                        g += a[(k, j)] * a[(i, k)];
                    }
                    off[j] = g / h;
                    f += off[j] * a[(i, j)];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = a[(i, j)];
                    let g = off[j] - hh * f;
                    off[j] = g;
                    for k in 0..=j {
                        a[(j, k)] -= f * off[k] + g * a[(i, k)];
                    }
                }
            }
        } else {
            off[i] = a[(i, l)];
        }
    }
    off[0] = 0.0;
    for (i, d) in diag.iter_mut().enumerate() {
        *d = a[(i, i)];
    }
    (diag, off)
}

/// Implicit QL on a symmetric tridiagonal matrix; eigenvalues replace `diag`.
fn tridiagonal_ql(diag: &mut [f64], off: &mut [f64]) -> Result<()> {
    let n = diag.len();
    if n < 2 {
        return Ok(());
    }
    // Shift the sub-diagonal so off[i] couples i and i + 1.
    off.copy_within(1.., 0);
    off[n - 1] = 0.0;

    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m < n - 1 {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > MAX_QL_ITERATIONS {
                return Err(Error::Numeric(format!(
                    "eigenvalue {l} did not converge in {MAX_QL_ITERATIONS} QL iterations"
                )));
            }
            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}

/// Number of covariance eigenvalues of `activations` (`n × d`, rows are
/// samples) above `s_max · max(n, d) · rel_tol`.
///
/// Centering removes one degree of freedom, so the result never exceeds
/// `min(n − 1, d)`. A zero covariance has rank 0.
pub fn numerical_rank(activations: &Matrix, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol.is_finite()) {
        return Err(Error::Argument(format!(
            "relative tolerance must be positive, got {rel_tol}"
        )));
    }
    let (n, d) = activations.shape();
    let spectrum = symmetric_eigenvalues(&covariance(activations)?)?;
    let largest = spectrum.largest();
    if largest == 0.0 {
        return Ok(0);
    }
    let threshold = largest * n.max(d) as f64 * rel_tol;
    Ok(spectrum.count_above(threshold).min(n - 1).min(d))
}
