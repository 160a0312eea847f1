//! Hierarchical Bayesian CCA model shared by the Gibbs and variational engines.
//!
//! The two views are stacked row-wise: rows `0..D₁` hold view 1 (future Hankel
//! block), rows `D₁..D` hold view 2 (past Hankel block). Noise covariance is
//! block-diagonal with one inverse-Wishart block per view.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, SymPosDef};
use crate::rng::{inverse_wishart_log_pdf, mvn_log_pdf};
use crate::subspace::HankelPair;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Data matrix with cached sufficient statistics `Σₙ xₙ` and `Σₙ xₙxₙᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedData {
    x: DMatrix<f64>,
    view_dims: [usize; 2],
    sum: DVector<f64>,
    scatter: DMatrix<f64>,
}

impl StackedData {
    pub fn new(x: DMatrix<f64>, view_dims: [usize; 2]) -> Result<Self> {
        if view_dims[0] + view_dims[1] != x.nrows() || view_dims.contains(&0) {
            return Err(Error::Dimension(format!(
                "view dims {view_dims:?} do not partition {} rows",
                x.nrows()
            )));
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidArgument("data has no columns".into()));
        }
        let sum = x.column_sum();
        let mut scatter = &x * x.transpose();
        symmetrize(&mut scatter);
        Ok(Self {
            x,
            view_dims,
            sum,
            scatter,
        })
    }

    /// Stacks the future block (view 1) over the past block (view 2).
    pub fn from_hankel(hp: &HankelPair) -> Result<Self> {
        let (r, n) = hp.yf.shape();
        let mut x = DMatrix::zeros(2 * r, n);
        x.rows_mut(0, r).copy_from(&hp.yf);
        x.rows_mut(r, r).copy_from(&hp.yp);
        Self::new(x, [r, r])
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn view_dims(&self) -> [usize; 2] {
        self.view_dims
    }

    /// Row offset of view `m`.
    pub fn view_offset(&self, m: usize) -> usize {
        if m == 0 {
            0
        } else {
            self.view_dims[0]
        }
    }

    pub fn sum(&self) -> &DVector<f64> {
        &self.sum
    }

    pub fn scatter(&self) -> &DMatrix<f64> {
        &self.scatter
    }

    /// `Σₙ (xₙ - c)(xₙ - c)ᵀ` from the cached statistics.
    pub fn centered_scatter(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let sc = &self.sum * c.transpose();
        let mut out = &self.scatter - &sc - sc.transpose() + c * c.transpose() * self.n() as f64;
        symmetrize(&mut out);
        out
    }
}

/// Prior hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorHyper {
    pub mu_mean: DVector<f64>,
    pub mu_cov: SymPosDef,
    /// Shared by every column of `W`.
    pub w_mean: DVector<f64>,
    pub w_cov: SymPosDef,
    pub k0: [SymPosDef; 2],
    pub nu0: [f64; 2],
    pub latent_dim: usize,
}

impl PriorHyper {
    pub fn view_dims(&self) -> [usize; 2] {
        [self.k0[0].dim(), self.k0[1].dim()]
    }

    pub fn dim(&self) -> usize {
        self.mu_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.k0[0].dim() + self.k0[1].dim();
        if self.mu_mean.len() != d || self.mu_cov.dim() != d || self.w_mean.len() != d || self.w_cov.dim() != d {
            return Err(Error::Dimension(format!(
                "prior dimensions inconsistent with stacked dimension {d}"
            )));
        }
        for m in 0..2 {
            let dm = self.k0[m].dim() as f64;
            if !(self.nu0[m] > dm - 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "nu0 for view {} is {} but must exceed {}",
                    m + 1,
                    self.nu0[m],
                    dm - 1.0
                )));
            }
        }
        if self.latent_dim == 0 {
            return Err(Error::InvalidArgument("latent dimension must be positive".into()));
        }
        Ok(())
    }

    /// Block-diagonal prior scale `diag(K₀⁽¹⁾, K₀⁽²⁾)`.
    pub fn k0_full(&self) -> DMatrix<f64> {
        block_diag(self.k0[0].matrix(), self.k0[1].matrix())
    }
}

/// Weakly informative defaults: `μ ~ N(0, I)`, `wᵢ ~ N(0, I)`, `K₀ = 100 I`,
/// `ν₀ = D_m + 2` per view.
pub fn default_priors(d1: usize, d2: usize, latent_dim: usize) -> Result<PriorHyper> {
    if d1 == 0 || d2 == 0 || latent_dim == 0 {
        return Err(Error::InvalidArgument("prior dimensions must be positive".into()));
    }
    let d = d1 + d2;
    let priors = PriorHyper {
        mu_mean: DVector::zeros(d),
        mu_cov: SymPosDef::identity(d),
        w_mean: DVector::zeros(d),
        w_cov: SymPosDef::identity(d),
        k0: [
            SymPosDef::scaled_identity(d1, 100.0)?,
            SymPosDef::scaled_identity(d2, 100.0)?,
        ],
        nu0: [d1 as f64 + 2.0, d2 as f64 + 2.0],
        latent_dim,
    };
    priors.validate()?;
    Ok(priors)
}

/// Scalar shorthand (`σ` means `σ I`), explicit vector, or explicit matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl PriorValue {
    fn vector(&self, dim: usize, key: &str) -> Result<DVector<f64>> {
        match self {
            PriorValue::Scalar(s) => Ok(DVector::from_element(dim, *s)),
            PriorValue::Vector(v) if v.len() == dim => Ok(DVector::from_column_slice(v)),
            _ => Err(Error::InvalidArgument(format!("{key}: expected scalar or length-{dim} vector"))),
        }
    }

    fn matrix(&self, dim: usize, key: &str) -> Result<SymPosDef> {
        let m = match self {
            PriorValue::Scalar(s) => DMatrix::from_diagonal_element(dim, dim, *s),
            PriorValue::Vector(v) if v.len() == dim => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            PriorValue::Matrix(rows) if rows.len() == dim && rows.iter().all(|r| r.len() == dim) => {
                DMatrix::from_fn(dim, dim, |i, j| rows[i][j])
            }
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "{key}: expected scalar, diagonal or {dim}x{dim} matrix"
                )))
            }
        };
        SymPosDef::new(m).map_err(|e| Error::InvalidArgument(format!("{key}: {e}")))
    }
}

/// Prior overrides as read from a config file; missing keys keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_mean: Option<PriorValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu_cov: Option<PriorValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_mean: Option<PriorValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_cov: Option<PriorValue>,
    /// Applied to both views unless `k0_view2` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0: Option<PriorValue>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k0_view2: Option<PriorValue>,
    /// Degrees of freedom; `nu0_offset` sets `ν₀ = D_m + offset` instead.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nu0_offset: Option<f64>,
}

impl PriorSpec {
    /// The `K₀ = I` preset used for measured bridge data.
    pub fn unit_k0() -> Self {
        Self {
            k0: Some(PriorValue::Scalar(1.0)),
            ..Default::default()
        }
    }

    pub fn resolve(&self, d1: usize, d2: usize, latent_dim: usize) -> Result<PriorHyper> {
        let mut p = default_priors(d1, d2, latent_dim)?;
        let d = d1 + d2;
        if let Some(v) = &self.mu_mean {
            p.mu_mean = v.vector(d, "mu_mean")?;
        }
        if let Some(v) = &self.mu_cov {
            p.mu_cov = v.matrix(d, "mu_cov")?;
        }
        if let Some(v) = &self.w_mean {
            p.w_mean = v.vector(d, "w_mean")?;
        }
        if let Some(v) = &self.w_cov {
            p.w_cov = v.matrix(d, "w_cov")?;
        }
        if let Some(v) = &self.k0 {
            p.k0 = [v.matrix(d1, "k0")?, v.matrix(d2, "k0")?];
        }
        if let Some(v) = &self.k0_view2 {
            p.k0[1] = v.matrix(d2, "k0_view2")?;
        }
        if let Some(off) = self.nu0_offset {
            p.nu0 = [d1 as f64 + off, d2 as f64 + off];
        }
        if let Some(nu) = self.nu0 {
            p.nu0 = [nu, nu];
        }
        p.validate()?;
        Ok(p)
    }
}

/// One joint configuration of every model variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    /// `D × d`, column `i` is `wᵢ`.
    pub w: DMatrix<f64>,
    pub mu: DVector<f64>,
    pub sigma: [SymPosDef; 2],
    /// `d × N` latent variables.
    pub z: DMatrix<f64>,
}

impl ModelState {
    pub fn latent_dim(&self) -> usize {
        self.w.ncols()
    }

    /// Full block-diagonal noise covariance.
    pub fn sigma_full(&self) -> DMatrix<f64> {
        block_diag(self.sigma[0].matrix(), self.sigma[1].matrix())
    }

    /// Block-diagonal noise precision `Σ⁻¹`.
    pub fn precision_full(&self) -> DMatrix<f64> {
        block_diag(&self.sigma[0].inverse(), &self.sigma[1].inverse())
    }

    /// View-1 rows of `W` (the observability sample).
    pub fn observability(&self) -> DMatrix<f64> {
        self.w.rows(0, self.sigma[0].dim()).into_owned()
    }
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut out = DMatrix::zeros(ra + rb, ca + cb);
    out.view_mut((0, 0), (ra, ca)).copy_from(a);
    out.view_mut((ra, ca), (rb, cb)).copy_from(b);
    out
}

/// Full log joint density `ln p(X, Z, W, Σ, μ)` including all normalizing
/// constants.
pub fn log_joint(state: &ModelState, data: &StackedData, priors: &PriorHyper) -> Result<f64> {
    let (dim, n) = data.x().shape();
    let d = state.latent_dim();
    if state.w.nrows() != dim || state.mu.len() != dim || state.z.shape() != (d, n) || priors.dim() != dim {
        return Err(Error::Dimension("state, data and priors are not conformable".into()));
    }
    let nf = n as f64;

    let mut resid = data.x() - &state.w * &state.z;
    for mut col in resid.column_iter_mut() {
        col -= &state.mu;
    }
    let mut lik = 0.0;
    for m in 0..2 {
        let off = data.view_offset(m);
        let dm = data.view_dims()[m];
        let rm = resid.rows(off, dm);
        let white = state.sigma[m]
            .cholesky()
            .solve_lower_triangular(&rm.into_owned())
            .expect("cholesky factor has positive diagonal");
        lik += -0.5 * nf * (dm as f64 * LN_2PI + state.sigma[m].log_det()) - 0.5 * white.norm_squared();
    }

    let z_prior = -0.5 * (nf * d as f64 * LN_2PI + state.z.norm_squared());
    let sigma_prior: f64 = (0..2)
        .map(|m| inverse_wishart_log_pdf(&state.sigma[m], &priors.k0[m], priors.nu0[m]))
        .sum();
    let mu_prior = mvn_log_pdf(&state.mu, &priors.mu_mean, &priors.mu_cov);
    let w_prior: f64 = (0..d)
        .map(|i| mvn_log_pdf(&state.w.column(i).into_owned(), &priors.w_mean, &priors.w_cov))
        .sum();
    Ok(lik + z_prior + sigma_prior + mu_prior + w_prior)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_priors_match_benchmark_settings() {
        let p = default_priors(4, 4, 2).unwrap();
        assert_eq!(p.w_cov.matrix(), &DMatrix::identity(8, 8));
        assert_eq!(p.mu_cov.matrix(), &DMatrix::identity(8, 8));
        assert_eq!(p.nu0, [6.0, 6.0]);
        assert_eq!(p.k0[0].matrix(), &DMatrix::from_diagonal_element(4, 4, 100.0));
        assert!(p.mu_mean.iter().chain(p.w_mean.iter()).all(|v| *v == 0.0));
    }

    #[test]
    fn unit_k0_preset() {
        let p = PriorSpec::unit_k0().resolve(7, 7, 10).unwrap();
        assert_eq!(p.k0[0].matrix(), &DMatrix::identity(7, 7));
        assert_eq!(p.k0[1].matrix(), &DMatrix::identity(7, 7));
        assert_eq!(p.nu0, [9.0, 9.0]);
    }

    #[test]
    fn prior_spec_parses_scalar_shorthand() {
        let spec: PriorSpec = serde_json::from_str(r#"{"w_cov": 0.5, "k0": [1, 2], "nu0_offset": 5}"#).unwrap();
        let p = spec.resolve(2, 2, 1).unwrap();
        assert_eq!(p.w_cov.matrix(), &DMatrix::from_diagonal_element(4, 4, 0.5));
        assert_eq!(p.k0[0].matrix()[(1, 1)], 2.0);
        assert_eq!(p.nu0, [7.0, 7.0]);
    }

    #[test]
    fn prior_spec_rejects_unknown_keys_and_bad_dof() {
        assert!(serde_json::from_str::<PriorSpec>(r#"{"bogus": 1}"#).is_err());
        let spec = PriorSpec {
            nu0: Some(1.0),
            ..Default::default()
        };
        assert!(spec.resolve(3, 3, 1).is_err());
    }

    #[test]
    fn full_sigma_is_exactly_block_diagonal() {
        let s1 = SymPosDef::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0])).unwrap();
        let s2 = SymPosDef::scaled_identity(1, 4.0).unwrap();
        let state = ModelState {
            w: DMatrix::zeros(3, 1),
            mu: DVector::zeros(3),
            sigma: [s1, s2],
            z: DMatrix::zeros(1, 1),
        };
        let full = state.sigma_full();
        assert_eq!(full[(0, 2)], 0.0);
        assert_eq!(full[(2, 1)], 0.0);
        assert_eq!(full[(2, 2)], 4.0);
        let p = state.precision_full();
        assert_eq!(p[(1, 2)], 0.0);
    }

    #[test]
    fn centered_scatter_matches_direct() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 4.0, -1.0, 0.5, 3.0]);
        let data = StackedData::new(x.clone(), [1, 1]).unwrap();
        let c = DVector::from_vec(vec![0.3, -0.2]);
        let mut direct = DMatrix::zeros(2, 2);
        for col in x.column_iter() {
            let r = col - &c;
            direct += &r * r.transpose();
        }
        approx::assert_relative_eq!(data.centered_scatter(&c), direct, epsilon = 1e-12);
    }
}
