//! Systematic-scan Gibbs sampler: Σ → μ → {wᵢ} → Z per sweep.
//!
//! All data-dependent sums are formed from the cached statistics of
//! [`StackedData`] together with `X Zᵀ`, `Z Zᵀ` and `Z 1`, so a sweep touches the
//! `D × N` data matrix only twice (the Z mean map and `X Zᵀ`).

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{chol_solve, cholesky_jitter, symmetrize, SymPosDef};
use crate::model::{block_diag, ModelState, PriorHyper, StackedData};
use crate::rng::{sample_inverse_wishart, sample_mvn, Rng};
use crate::subspace::cca;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsConfig {
    pub n_samples: usize,
    pub burn_in_fraction: f64,
    pub thinning: usize,
    pub seed: u64,
    /// Start from the classical CCA maximum-likelihood solution instead of prior draws.
    pub warm_start: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            burn_in_fraction: 0.2,
            thinning: 1,
            seed: 0,
            warm_start: false,
        }
    }
}

impl GibbsConfig {
    fn kept(&self) -> usize {
        // small offset so that e.g. 5000 * 0.8 never floors to 3999
        ((self.n_samples as f64) * (1.0 - self.burn_in_fraction) + 1e-9).floor() as usize
    }

    /// Number of retained records, `floor(n (1 - burn) / thin)`.
    pub fn retained(&self) -> usize {
        self.kept() / self.thinning.max(1)
    }

    /// Number of discarded initial sweeps.
    pub fn burn_in(&self) -> usize {
        self.n_samples - self.kept()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            return Err(Error::InvalidArgument(format!(
                "burn-in fraction {} must lie in [0, 1)",
                self.burn_in_fraction
            )));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidArgument("thinning must be at least 1".into()));
        }
        if self.retained() == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} samples with burn-in {} and thinning {} retain nothing",
                self.n_samples, self.burn_in_fraction, self.thinning
            )));
        }
        Ok(())
    }
}

/// Retained sweep records.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsChain {
    pub w: Vec<DMatrix<f64>>,
    pub mu: Vec<DVector<f64>>,
    pub sigma: [Vec<DMatrix<f64>>; 2],
    pub view_dims: [usize; 2],
    pub config: GibbsConfig,
    /// Every conditional draw is accepted.
    pub acceptance_rate: f64,
    pub elapsed_secs: f64,
}

impl GibbsChain {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.w.first().map_or(0, |w| w.ncols())
    }
}

/// Sums over the latent matrix reused by every conditional in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStats {
    /// `Σₙ xₙ zₙᵀ` (`D × d`).
    pub xz: DMatrix<f64>,
    /// `Σₙ zₙ zₙᵀ` (`d × d`).
    pub zz: DMatrix<f64>,
    /// `Σₙ zₙ`.
    pub z_sum: DVector<f64>,
}

impl LatentStats {
    pub fn new(data: &StackedData, z: &DMatrix<f64>) -> Self {
        let mut zz = z * z.transpose();
        symmetrize(&mut zz);
        Self {
            xz: data.x() * z.transpose(),
            zz,
            z_sum: z.column_sum(),
        }
    }
}

/// Gaussian conditional `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianConditional {
    pub mean: DVector<f64>,
    pub cov: SymPosDef,
}

/// `Σₙ rₙ rₙᵀ` with `rₙ = xₙ - μ - W zₙ`, from sufficient statistics.
pub fn residual_scatter(
    data: &StackedData,
    stats: &LatentStats,
    w: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> DMatrix<f64> {
    let cx = data.centered_scatter(mu);
    // Σ (x - μ) zᵀ
    let cz = &stats.xz - mu * stats.z_sum.transpose();
    let cross = &cz * w.transpose();
    let mut k = cx - &cross - cross.transpose() + w * &stats.zz * w.transpose();
    symmetrize(&mut k);
    k
}

/// Inverse-Wishart conditional `(scale, dof)` of each view's noise covariance.
pub fn sigma_conditional(
    state: &ModelState,
    data: &StackedData,
    stats: &LatentStats,
    priors: &PriorHyper,
) -> Result<[(SymPosDef, f64); 2]> {
    let k = residual_scatter(data, stats, &state.w, &state.mu);
    let n = data.n() as f64;
    let view = |m: usize| -> Result<(SymPosDef, f64)> {
        let off = data.view_offset(m);
        let dm = data.view_dims()[m];
        let scale = priors.k0[m].matrix() + k.view((off, off), (dm, dm));
        Ok((SymPosDef::with_jitter(scale)?, priors.nu0[m] + n))
    };
    Ok([view(0)?, view(1)?])
}

pub fn mu_conditional(
    state: &ModelState,
    data: &StackedData,
    stats: &LatentStats,
    priors: &PriorHyper,
) -> Result<GaussianConditional> {
    let p = state.precision_full();
    let (prec, lin) = mu_natural(state, data, stats, priors, &p);
    from_natural(prec, &lin)
}

/// Conditional of column `i` given every other column's current value.
pub fn w_conditional(
    state: &ModelState,
    stats: &LatentStats,
    priors: &PriorHyper,
    i: usize,
) -> Result<GaussianConditional> {
    let p = state.precision_full();
    let (prec, lin) = w_natural(state, stats, priors, &p, &priors.w_cov.inverse(), i)?;
    from_natural(prec, &lin)
}

/// Precision and linear term `(Λ, η)` of the μ conditional, mean `Λ⁻¹η`.
fn mu_natural(
    state: &ModelState,
    data: &StackedData,
    stats: &LatentStats,
    priors: &PriorHyper,
    p: &DMatrix<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let prior_prec = priors.mu_cov.inverse();
    let prec = p * data.n() as f64 + &prior_prec;
    let resid_sum = data.sum() - &state.w * &stats.z_sum;
    (prec, p * resid_sum + prior_prec * &priors.mu_mean)
}

fn w_natural(
    state: &ModelState,
    stats: &LatentStats,
    priors: &PriorHyper,
    p: &DMatrix<f64>,
    prior_prec: &DMatrix<f64>,
    i: usize,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let d = state.latent_dim();
    if i >= d {
        return Err(Error::InvalidArgument(format!("column {i} out of range for d = {d}")));
    }
    let prec = p * stats.zz[(i, i)] + prior_prec;
    // Σₙ z_{i,n} (xₙ - μ - Σ_{k≠i} w_k z_{k,n})
    let mut target = stats.xz.column(i) - &state.mu * stats.z_sum[i];
    for k in (0..d).filter(|&k| k != i) {
        target -= state.w.column(k) * stats.zz[(k, i)];
    }
    Ok((prec, p * target + prior_prec * &priors.w_mean))
}

fn from_natural(mut prec: DMatrix<f64>, lin: &DVector<f64>) -> Result<GaussianConditional> {
    symmetrize(&mut prec);
    let cov = SymPosDef::with_jitter(prec)?.inverse_spd()?;
    let mean = cov.matrix() * lin;
    Ok(GaussianConditional { mean, cov })
}

/// Draw from `N(Λ⁻¹η, Λ⁻¹)` through the Cholesky factor of `Λ`.
fn sample_natural(rng: &mut Rng, mut prec: DMatrix<f64>, lin: &DVector<f64>) -> Result<DVector<f64>> {
    symmetrize(&mut prec);
    let (l, _) = cholesky_jitter(&prec)?;
    let mean = chol_solve(&l, &DMatrix::from_column_slice(lin.len(), 1, lin.as_slice()));
    let e = rng.normal_vector(lin.len());
    let offset = l
        .tr_solve_lower_triangular(&e)
        .expect("cholesky factor has positive diagonal");
    Ok(mean.column(0) + offset)
}

/// Shared covariance and mean map of the latent conditional: column `n` has
/// mean `gain (xₙ - μ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentConditional {
    pub cov: SymPosDef,
    /// `Σ̂_z Wᵀ Σ⁻¹` (`d × D`).
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl LatentConditional {
    pub fn means(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut m = &self.gain * x;
        let shift = &self.gain * &self.offset;
        for mut col in m.column_iter_mut() {
            col -= &shift;
        }
        m
    }
}

pub fn z_conditional(state: &ModelState) -> Result<LatentConditional> {
    let p = state.precision_full();
    let wp = state.w.transpose() * &p;
    let d = state.latent_dim();
    let prec = &wp * &state.w + DMatrix::identity(d, d);
    let cov = SymPosDef::with_jitter(spd_inverse_of(&prec)?)?;
    let gain = cov.matrix() * wp;
    Ok(LatentConditional {
        cov,
        gain,
        offset: state.mu.clone(),
    })
}

fn spd_inverse_of(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut m = m.clone();
    symmetrize(&mut m);
    SymPosDef::with_jitter(m).map(|s| s.inverse())
}

pub fn update_sigma(state: &mut ModelState, data: &StackedData, priors: &PriorHyper, rng: &mut Rng) -> Result<()> {
    let stats = LatentStats::new(data, &state.z);
    update_sigma_with(state, data, &stats, priors, rng)
}

pub fn update_mu(state: &mut ModelState, data: &StackedData, priors: &PriorHyper, rng: &mut Rng) -> Result<()> {
    let stats = LatentStats::new(data, &state.z);
    update_mu_with(state, data, &stats, priors, rng)
}

pub fn update_w_column(
    state: &mut ModelState,
    data: &StackedData,
    priors: &PriorHyper,
    i: usize,
    rng: &mut Rng,
) -> Result<()> {
    let stats = LatentStats::new(data, &state.z);
    let p = state.precision_full();
    update_w_with(state, &stats, priors, &p, &priors.w_cov.inverse(), i, rng)
}

pub fn update_z(state: &mut ModelState, data: &StackedData, rng: &mut Rng) -> Result<()> {
    let cond = z_conditional(state)?;
    let noise = rng.normal_matrix(state.latent_dim(), data.n());
    state.z = cond.means(data.x()) + cond.cov.cholesky() * noise;
    Ok(())
}

fn update_sigma_with(
    state: &mut ModelState,
    data: &StackedData,
    stats: &LatentStats,
    priors: &PriorHyper,
    rng: &mut Rng,
) -> Result<()> {
    let [(s1, n1), (s2, n2)] = sigma_conditional(state, data, stats, priors)?;
    state.sigma = [
        sample_inverse_wishart(rng, &s1, n1)?,
        sample_inverse_wishart(rng, &s2, n2)?,
    ];
    Ok(())
}

fn update_mu_with(
    state: &mut ModelState,
    data: &StackedData,
    stats: &LatentStats,
    priors: &PriorHyper,
    rng: &mut Rng,
) -> Result<()> {
    let p = state.precision_full();
    let (prec, lin) = mu_natural(state, data, stats, priors, &p);
    state.mu = sample_natural(rng, prec, &lin)?;
    Ok(())
}

fn update_w_with(
    state: &mut ModelState,
    stats: &LatentStats,
    priors: &PriorHyper,
    p: &DMatrix<f64>,
    prior_prec: &DMatrix<f64>,
    i: usize,
    rng: &mut Rng,
) -> Result<()> {
    let (prec, lin) = w_natural(state, stats, priors, p, prior_prec, i)?;
    let draw = sample_natural(rng, prec, &lin)?;
    state.w.set_column(i, &draw);
    Ok(())
}

/// One full sweep in the order Σ → μ → w₁…w_d → Z.
pub fn sweep(state: &mut ModelState, data: &StackedData, priors: &PriorHyper, rng: &mut Rng) -> Result<()> {
    let stats = LatentStats::new(data, &state.z);
    update_sigma_with(state, data, &stats, priors, rng)?;
    update_mu_with(state, data, &stats, priors, rng)?;
    let p = state.precision_full();
    let prior_prec = priors.w_cov.inverse();
    for i in 0..state.latent_dim() {
        update_w_with(state, &stats, priors, &p, &prior_prec, i, rng)?;
    }
    update_z(state, data, rng)
}

/// Every variable drawn from its prior.
pub fn prior_state(priors: &PriorHyper, n: usize, rng: &mut Rng) -> Result<ModelState> {
    let sigma = [
        sample_inverse_wishart(rng, &priors.k0[0], priors.nu0[0])?,
        sample_inverse_wishart(rng, &priors.k0[1], priors.nu0[1])?,
    ];
    let mu = sample_mvn(rng, &priors.mu_mean, &priors.mu_cov)?;
    let d = priors.latent_dim;
    let mut w = DMatrix::zeros(priors.dim(), d);
    for i in 0..d {
        w.set_column(i, &sample_mvn(rng, &priors.w_mean, &priors.w_cov)?);
    }
    let z = rng.normal_matrix(d, n);
    Ok(ModelState { w, mu, sigma, z })
}

/// Probabilistic-CCA maximum-likelihood state: `W_m = S_mm^{1/2} U_m Λ^{1/2}`,
/// `Σ_m = S_mm - W_m W_mᵀ`, latent variables drawn from their conditional.
pub fn cca_state(data: &StackedData, d: usize, rng: &mut Rng) -> Result<ModelState> {
    let [d1, d2] = data.view_dims();
    if d == 0 || d > d1.min(d2) {
        return Err(Error::InvalidArgument(format!(
            "latent dimension {d} must be in 1..={}",
            d1.min(d2)
        )));
    }
    let n = data.n() as f64;
    let mean = data.sum() / n;
    let cov = data.centered_scatter(&mean) / n;
    let s11 = cov.view((0, 0), (d1, d1)).into_owned();
    let s22 = cov.view((d1, d1), (d2, d2)).into_owned();
    let s12 = cov.view((0, d1), (d1, d2)).into_owned();
    let c = cca(&s11, &s22, &s12)?;
    let sqrt_l = DMatrix::from_diagonal(&c.correlations.rows(0, d).map(f64::sqrt));
    let w1 = &c.sqrt_xx * c.v1.columns(0, d) * &sqrt_l;
    let w2 = &c.sqrt_yy * c.v2.columns(0, d) * &sqrt_l;
    let noise = |s: DMatrix<f64>, w: &DMatrix<f64>| -> Result<SymPosDef> {
        let mut r = s - w * w.transpose();
        symmetrize(&mut r);
        SymPosDef::with_jitter(r)
    };
    let sigma = [noise(s11, &w1)?, noise(s22, &w2)?];
    let mut w = DMatrix::zeros(d1 + d2, d);
    w.rows_mut(0, d1).copy_from(&w1);
    w.rows_mut(d1, d2).copy_from(&w2);
    let mut state = ModelState {
        w,
        mu: mean,
        sigma,
        z: DMatrix::zeros(d, data.n()),
    };
    update_z(&mut state, data, rng)?;
    Ok(state)
}

pub fn run_gibbs(data: &StackedData, priors: &PriorHyper, config: &GibbsConfig) -> Result<GibbsChain> {
    config.validate()?;
    priors.validate()?;
    if priors.view_dims() != data.view_dims() {
        return Err(Error::Dimension(format!(
            "priors are for views {:?}, data has {:?}",
            priors.view_dims(),
            data.view_dims()
        )));
    }
    let start = Instant::now();
    let mut rng = Rng::new(config.seed, 0);
    let mut state = if config.warm_start {
        cca_state(data, priors.latent_dim, &mut rng)?
    } else {
        prior_state(priors, data.n(), &mut rng)?
    };

    let burn = config.burn_in();
    let retained = config.retained();
    let thin = config.thinning;
    let mut chain = GibbsChain {
        w: Vec::with_capacity(retained),
        mu: Vec::with_capacity(retained),
        sigma: [Vec::with_capacity(retained), Vec::with_capacity(retained)],
        view_dims: data.view_dims(),
        config: config.clone(),
        acceptance_rate: 1.0,
        elapsed_secs: 0.0,
    };
    for t in 0..config.n_samples {
        sweep(&mut state, data, priors, &mut rng)?;
        if t >= burn && (t - burn + 1).is_multiple_of(thin) && chain.len() < retained {
            chain.w.push(state.w.clone());
            chain.mu.push(state.mu.clone());
            chain.sigma[0].push(state.sigma[0].matrix().clone());
            chain.sigma[1].push(state.sigma[1].matrix().clone());
        }
        if (t + 1) % 500 == 0 {
            log::debug!("gibbs sweep {}/{}", t + 1, config.n_samples);
        }
    }
    chain.elapsed_secs = start.elapsed().as_secs_f64();
    Ok(chain)
}

/// Full block-diagonal covariance of a retained record.
pub fn record_sigma(chain: &GibbsChain, r: usize) -> DMatrix<f64> {
    block_diag(&chain.sigma[0][r], &chain.sigma[1][r])
}

/// Effective sample size from the initial positive sequence of autocorrelations.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if var == 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| -> f64 {
        (0..n - lag).map(|t| (x[t] - mean) * (x[t + lag] - mean)).sum::<f64>() / (n as f64 * var)
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acf(lag) + acf(lag + 1);
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    n as f64 / tau
}

/// Split-R̂ over one or more chains of equal length.
pub fn split_rhat(chains: &[&[f64]]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::new();
    for c in chains {
        let h = c.len() / 2;
        halves.push(&c[..h]);
        halves.push(&c[h..2 * h]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h.iter().sum::<f64>() / n).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = n / (m - 1.0) * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, mu)| h.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .sum::<f64>()
        / m;
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}
