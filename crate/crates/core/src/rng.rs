//! Seeded random streams and the three distribution families used by the model:
//! multivariate Gaussian, Wishart and inverse Wishart.

use nalgebra::{DMatrix, DVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg::{chol_inverse, lower_inverse, SymPosDef};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Reproducible random stream identified by `(seed, stream)`.
///
/// Distinct stream ids give independent ChaCha substreams of the same key, so
/// parallel workers can each own one without coordination.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
    seed: u64,
    stream: u64,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner, seed, stream }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Fresh stream sharing this generator's seed.
    pub fn substream(&self, stream: u64) -> Rng {
        Rng::new(self.seed, stream)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn normal_vector(&mut self, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| self.normal())
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        // column-major fill keeps the draw order independent of nalgebra internals
        let mut m = DMatrix::zeros(rows, cols);
        for c in 0..cols {
            for r in 0..rows {
                m[(r, c)] = self.normal();
            }
        }
        m
    }

    pub fn chi_squared(&mut self, dof: f64) -> f64 {
        ChiSquared::new(dof)
            .expect("chi-squared dof must be positive")
            .sample(&mut self.inner)
    }

    pub fn uniform(&mut self) -> f64 {
        // 53 random mantissa bits in [0, 1)
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Draw from `N(mean, cov)`.
pub fn sample_mvn(rng: &mut Rng, mean: &DVector<f64>, cov: &SymPosDef) -> Result<DVector<f64>> {
    if mean.len() != cov.dim() {
        return Err(Error::Dimension(format!(
            "mean has length {}, covariance is {}x{}",
            mean.len(),
            cov.dim(),
            cov.dim()
        )));
    }
    let e = rng.normal_vector(mean.len());
    Ok(mean + cov.cholesky() * e)
}

/// Draw from `N(mean, cov)` given a raw covariance matrix.
pub fn sample_mvn_dense(rng: &mut Rng, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<DVector<f64>> {
    let cov = SymPosDef::from_symmetrized(cov.clone())?;
    sample_mvn(rng, mean, &cov)
}

fn check_dof(dim: usize, dof: f64) -> Result<()> {
    if !(dof > dim as f64 - 1.0) {
        return Err(Error::InvalidArgument(format!(
            "degrees of freedom {dof} must exceed dimension - 1 = {}",
            dim as f64 - 1.0
        )));
    }
    Ok(())
}

/// Bartlett factor: lower-triangular `A` with `A Aᵀ ~ Wishart(I, dof)`.
fn bartlett_factor(rng: &mut Rng, dim: usize, dof: f64) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        a[(i, i)] = rng.chi_squared(dof - i as f64).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.normal();
        }
    }
    a
}

/// Draw from `Wishart(scale, dof)` (mean `dof * scale`) by Bartlett decomposition.
pub fn sample_wishart(rng: &mut Rng, scale: &SymPosDef, dof: f64) -> Result<SymPosDef> {
    check_dof(scale.dim(), dof)?;
    let a = bartlett_factor(rng, scale.dim(), dof);
    // product of lower-triangular factors stays lower-triangular
    let factor = scale.cholesky() * a;
    SymPosDef::from_lower_factor(factor)
}

/// Draw from `InverseWishart(scale, dof)` as the inverse of a
/// `Wishart(scale⁻¹, dof)` draw. Mean is `scale / (dof - dim - 1)`.
pub fn sample_inverse_wishart(rng: &mut Rng, scale: &SymPosDef, dof: f64) -> Result<SymPosDef> {
    check_dof(scale.dim(), dof)?;
    let precision_scale = scale.inverse_spd()?;
    let w = sample_wishart(rng, &precision_scale, dof)?;
    SymPosDef::from_symmetrized(chol_inverse(w.cholesky()))
}

/// Multivariate log-gamma `ln Γ_p(a)`.
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    let mut s = pf * (pf - 1.0) / 4.0 * std::f64::consts::PI.ln();
    for j in 0..p {
        s += ln_gamma(a - j as f64 / 2.0);
    }
    s
}

/// Multivariate digamma `ψ_p(a) = Σ_j ψ(a - j/2)`.
pub fn multi_digamma(p: usize, a: f64) -> f64 {
    (0..p).map(|j| digamma(a - j as f64 / 2.0)).sum()
}

pub fn mvn_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &SymPosDef) -> f64 {
    let r = x - mean;
    let y = cov
        .cholesky()
        .solve_lower_triangular(&r)
        .expect("cholesky factor has positive diagonal");
    -0.5 * (x.len() as f64 * LN_2PI + cov.log_det() + y.norm_squared())
}

/// `ln Wishart(x | scale, dof)`.
pub fn wishart_log_pdf(x: &SymPosDef, scale: &SymPosDef, dof: f64) -> f64 {
    let p = x.dim() as f64;
    let scale_inv_x = scale.solve(x.matrix());
    0.5 * (dof - p - 1.0) * x.log_det()
        - 0.5 * scale_inv_x.trace()
        - 0.5 * dof * p * std::f64::consts::LN_2
        - 0.5 * dof * scale.log_det()
        - ln_multigamma(x.dim(), dof / 2.0)
}

/// `ln InverseWishart(x | scale, dof)`.
pub fn inverse_wishart_log_pdf(x: &SymPosDef, scale: &SymPosDef, dof: f64) -> f64 {
    let p = x.dim() as f64;
    let scale_x_inv = x.solve(scale.matrix());
    0.5 * dof * scale.log_det()
        - 0.5 * dof * p * std::f64::consts::LN_2
        - ln_multigamma(x.dim(), dof / 2.0)
        - 0.5 * (dof + p + 1.0) * x.log_det()
        - 0.5 * scale_x_inv.trace()
}

/// Inverse of a lower Cholesky factor, exposed for callers that whiten data.
pub fn whitening_factor(cov: &SymPosDef) -> DMatrix<f64> {
    lower_inverse(cov.cholesky())
}
