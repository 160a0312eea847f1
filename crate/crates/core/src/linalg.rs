//! Dense linear-algebra helpers shared by the identification and inference code.
//!
//! Everything here works on `nalgebra::DMatrix<f64>`. Factorizations report the
//! failing pivot so callers can surface a useful error.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Relative symmetry tolerance used when validating covariance inputs.
pub const SYMMETRY_RTOL: f64 = 1e-12;

/// Jitter ladder for near-singular auto-covariances, as multiples of `trace / dim`.
const JITTER_START: f64 = 1e-12;
const JITTER_STOP: f64 = 1e-6;

/// Symmetric positive definite matrix with its lower Cholesky factor cached.
#[derive(Debug, Clone, PartialEq)]
pub struct SymPosDef {
    matrix: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SymPosDef {
    /// Validates symmetry (relative 1e-12) and positive definiteness.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension(format!(
                "expected square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let asym = max_asymmetry(&matrix);
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        if asym > SYMMETRY_RTOL * scale {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let mut matrix = matrix;
        symmetrize(&mut matrix);
        let chol = cholesky(&matrix)?;
        Ok(Self { matrix, chol })
    }

    /// Symmetrizes first, then validates positive definiteness.
    pub fn from_symmetrized(mut matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::Dimension("expected square matrix".into()));
        }
        symmetrize(&mut matrix);
        let chol = cholesky(&matrix)?;
        Ok(Self { matrix, chol })
    }

    /// Like [`SymPosDef::from_symmetrized`] but walks the jitter ladder on failure.
    pub fn with_jitter(mut matrix: DMatrix<f64>) -> Result<Self> {
        symmetrize(&mut matrix);
        let (chol, jitter) = cholesky_jitter(&matrix)?;
        if jitter > 0.0 {
            for i in 0..matrix.nrows() {
                matrix[(i, i)] += jitter;
            }
        }
        Ok(Self { matrix, chol })
    }

    /// Builds from a lower-triangular factor `L`, storing `L Lᵀ`.
    pub fn from_lower_factor(chol: DMatrix<f64>) -> Result<Self> {
        for i in 0..chol.nrows() {
            let v = chol[(i, i)];
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: i, value: v });
            }
        }
        let mut matrix = &chol * chol.transpose();
        symmetrize(&mut matrix);
        Ok(Self { matrix, chol })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: DMatrix::identity(dim, dim),
            chol: DMatrix::identity(dim, dim),
        }
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal_element(dim, dim, s))
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.matrix
    }

    /// Lower Cholesky factor `L` with `L Lᵀ = S`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        chol_inverse(&self.chol)
    }

    pub fn inverse_spd(&self) -> Result<SymPosDef> {
        SymPosDef::from_symmetrized(self.inverse())
    }

    pub fn log_det(&self) -> f64 {
        chol_log_det(&self.chol)
    }

    /// Solves `S x = b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        chol_solve(&self.chol, b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self
            .chol
            .solve_lower_triangular(b)
            .expect("cholesky factor has positive diagonal");
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("cholesky factor has positive diagonal")
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Lower Cholesky factor. Only the lower triangle of `m` is read.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != m.nrows() {
        return Err(Error::Dimension("cholesky of non-square matrix".into()));
    }
    if m.iter().all(|v| v.is_finite()) {
        if let Some(c) = m.clone().cholesky() {
            return Ok(c.unpack());
        }
    }
    failing_pivot(m)
}

/// Unblocked factorization, used to name the pivot where it breaks down.
fn failing_pivot(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut diag = m[(j, j)];
        for k in 0..j {
            diag -= l[(j, k)] * l[(j, k)];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
        }
        let ljj = diag.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Cholesky with the jitter ladder `1e-12 .. 1e-6` times `trace / dim`.
///
/// Returns the factor and the jitter that was added to the diagonal (0 when the
/// plain factorization succeeded).
pub fn cholesky_jitter(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if let Ok(l) = cholesky(m) {
        return Ok((l, 0.0));
    }
    let n = m.nrows().max(1);
    let base = (m.trace() / n as f64).abs().max(f64::MIN_POSITIVE);
    let mut level = JITTER_START;
    while level <= JITTER_STOP * (1.0 + 1e-9) {
        let jitter = level * base;
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Ok(l) = cholesky(&shifted) {
            log::debug!("cholesky succeeded with jitter {jitter:e}");
            return Ok((l, jitter));
        }
        level *= 10.0;
    }
    Err(Error::IllConditioned {
        condition: condition_number(m),
    })
}

/// 2-norm condition number from the symmetric eigenvalues (inf when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigenvalues();
    let max = eig.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

pub fn chol_log_det(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

pub fn chol_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let y = l
        .solve_lower_triangular(b)
        .expect("cholesky factor has positive diagonal");
    l.tr_solve_lower_triangular(&y)
        .expect("cholesky factor has positive diagonal")
}

pub fn chol_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = chol_solve(l, &DMatrix::identity(n, n));
    symmetrize(&mut inv);
    inv
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(chol_inverse(&cholesky(m)?))
}

/// Inverse of a lower-triangular matrix with non-zero diagonal.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    l.solve_lower_triangular(&DMatrix::identity(n, n))
        .expect("triangular factor has non-zero diagonal")
}

/// Moore-Penrose pseudo-inverse via SVD, discarding singular values below
/// `rtol * sigma_max`. Returns the pseudo-inverse and the numerical rank.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let smax = svd.singular_values.max();
    let cut = rtol * smax;
    let mut rank = 0;
    let mut out = DMatrix::<f64>::zeros(m.ncols(), m.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            rank += 1;
            out += (vt.row(k).transpose() / s) * u.column(k).transpose();
        }
    }
    (out, rank)
}

/// Eigen-decomposition of a general real matrix.
///
/// Eigenvalues come from the complex Schur form `A = Q T Qᴴ`; eigenvectors by
/// back-substitution on `T`, unit-normalized.
pub fn eig(a: &DMatrix<f64>) -> (Vec<Complex64>, DMatrix<Complex64>) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let (q, t) = nalgebra::Schur::new(ac).unpack();
    let values: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
    let scale = t.iter().fold(0.0_f64, |m, v| m.max(v.norm())).max(1e-300);
    let tiny = f64::EPSILON * scale;

    let mut vecs = DMatrix::<Complex64>::zeros(n, n);
    for k in 0..n {
        let lambda = t[(k, k)];
        let mut y = vec![Complex64::new(0.0, 0.0); n];
        y[k] = Complex64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut s = t[(i, k)];
            for j in (i + 1)..k {
                s += t[(i, j)] * y[j];
            }
            let mut denom = t[(i, i)] - lambda;
            if denom.norm() < tiny {
                denom = Complex64::new(tiny, 0.0);
            }
            y[i] = -s / denom;
        }
        let mut v = DVector::<Complex64>::zeros(n);
        for r in 0..n {
            let mut s = Complex64::new(0.0, 0.0);
            for c in 0..=k {
                s += q[(r, c)] * y[c];
            }
            v[r] = s;
        }
        let norm = v.norm();
        if norm > 0.0 {
            v /= Complex64::new(norm, 0.0);
        }
        vecs.set_column(k, &v);
    }
    (values, vecs)
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.norm()
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().max()
}
