//! Small dense linear algebra for bandwidth matrices.
//!
//! Everything here works on tiny `d x d` matrices (d is the data dimension,
//! rarely above 4), so plain row-major `Vec<f64>` storage is used throughout.

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const SINGULAR_DET: f64 = 1e-300;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::DimensionMismatch { expected: c, got: row.len() });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { rows: r, cols: c, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols.max(1)).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        self.data
            .chunks(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks symmetry to an absolute tolerance scaled by the largest entry.
    pub fn check_symmetric(&self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, got: self.cols });
        }
        let scale = self.data.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        for i in 0..self.rows {
            for j in 0..i {
                let diff = (self[(i, j)] - self[(j, i)]).abs();
                if diff > tol * scale {
                    return Err(Error::NotSymmetric { row: i, col: j, diff });
                }
            }
        }
        Ok(())
    }

    fn symmetrized(&self) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = m`.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    m.check_symmetric(SYMMETRY_TOL)?;
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Inverse of an SPD matrix from its Cholesky factor.
fn cholesky_inverse(l: &Matrix) -> Matrix {
    let n = l.rows();
    // invert L (lower triangular) by forward substitution
    let mut linv = Matrix::zeros(n, n);
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in col..i {
                s -= l[(i, k)] * linv[(k, col)];
            }
            linv[(i, col)] = s / l[(i, i)];
        }
    }
    // m^-1 = L^-T L^-1
    let mut inv = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[(k, i)] * linv[(k, j)];
            }
            inv[(i, j)] = s;
            inv[(j, i)] = s;
        }
    }
    inv
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted descending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a = m.symmetrized();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        let diag: f64 = (0..n).map(|i| a[(i, i)] * a[(i, i)]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Largest eigenvalue of an SPD matrix by power iteration.
pub fn power_iteration(m: &Matrix, max_iter: usize, tol: f64) -> f64 {
    let n = m.rows();
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m.matvec(&v);
        let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        let next: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            / v.iter().map(|x| x * x).sum::<f64>();
        v = w.into_iter().map(|x| x / norm).collect();
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Largest eigenvalue: Jacobi for d <= 4, power iteration above.
pub fn largest_eigenvalue(m: &Matrix) -> f64 {
    if m.rows() <= 4 {
        symmetric_eigenvalues(m)[0]
    } else {
        power_iteration(m, 10_000, 1e-14)
    }
}

/// Column-stacking `vec` operator.
pub fn vec(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for j in 0..m.cols() {
        for i in 0..m.rows() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Kronecker product of two vectors, `a` varying slowest.
pub fn kron(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().flat_map(|&x| b.iter().map(move |&y| x * y)).collect()
}

/// `r`-th Kronecker power of `v`; `r == 0` gives `[1.0]`.
pub fn kron_power(v: &[f64], r: usize) -> Vec<f64> {
    (0..r).fold(vec![1.0], |acc, _| kron(v, &acc))
}

/// Symmetric positive definite smoothing matrix with eagerly cached factorizations.
#[derive(Debug, Clone, PartialEq)]
pub struct BandwidthMatrix {
    entries: Matrix,
    chol: Matrix,
    inv: Matrix,
    det: f64,
    lambda_max: f64,
}

impl BandwidthMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() || m.rows() == 0 {
            return Err(Error::DimensionMismatch { expected: m.rows(), got: m.cols() });
        }
        m.check_symmetric(SYMMETRY_TOL)?;
        let entries = m.symmetrized();
        let chol = cholesky(&entries)?;
        let det: f64 = (0..entries.rows()).map(|i| chol[(i, i)] * chol[(i, i)]).product();
        if !(det > SINGULAR_DET) || !det.is_finite() {
            return Err(Error::SingularBandwidth { det });
        }
        let inv = cholesky_inverse(&chol);
        let lambda_max = largest_eigenvalue(&entries);
        Ok(Self { entries, chol, inv, det, lambda_max })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Matrix::from_rows(rows)?)
    }

    pub fn identity(d: usize) -> Self {
        Self::new(Matrix::identity(d)).expect("identity is SPD")
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(Matrix::diagonal(diag))
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.entries
    }

    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    pub fn inverse(&self) -> &Matrix {
        &self.inv
    }

    pub fn det(&self) -> f64 {
        self.det
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// `factor * H`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.entries.scale(factor))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Self::new(self.entries.add(&other.entries)?)
    }

    /// Quadratic form `xᵀ H⁻¹ x`.
    pub fn inv_quad_form(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.inv[(i, j)] * x[j];
            }
            s += x[i] * row;
        }
        s
    }
}

/// Log-Cholesky parametrization of an SPD matrix.
///
/// `theta` holds the lower triangle of the Cholesky factor in row-major order
/// `(0,0), (1,0), (1,1), (2,0), ...` with diagonal entries stored as logarithms,
/// so every real vector decodes to a valid SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdParam {
    dim: usize,
    theta: Vec<f64>,
}

impl SpdParam {
    pub fn len_for(dim: usize) -> usize {
        dim * (dim + 1) / 2
    }

    pub fn new(dim: usize, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != Self::len_for(dim) {
            return Err(Error::DimensionMismatch { expected: Self::len_for(dim), got: theta.len() });
        }
        Ok(Self { dim, theta })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    pub fn encode(h: &BandwidthMatrix) -> Self {
        let d = h.dim();
        let l = h.cholesky();
        let mut theta = Vec::with_capacity(Self::len_for(d));
        for i in 0..d {
            for j in 0..=i {
                theta.push(if i == j { l[(i, i)].ln() } else { l[(i, j)] });
            }
        }
        Self { dim: d, theta }
    }

    pub fn factor(&self) -> Matrix {
        let d = self.dim;
        let mut l = Matrix::zeros(d, d);
        let mut it = self.theta.iter();
        for i in 0..d {
            for j in 0..=i {
                let v = *it.next().expect("length checked at construction");
                l[(i, j)] = if i == j { v.exp() } else { v };
            }
        }
        l
    }

    /// Decodes to `L Lᵀ`. Fails only on overflow/underflow of the diagonal.
    pub fn decode(&self) -> Result<BandwidthMatrix> {
        let l = self.factor();
        let h = l.matmul(&l.transpose())?;
        BandwidthMatrix::new(h)
    }
}
