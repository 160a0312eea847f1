//! Covariance-driven stochastic subspace identification with canonical-variate
//! weighting, plus the realization and modal-extraction steps shared with the
//! Bayesian engines.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jitter, lower_inverse, pinv, symmetrize};
use crate::timeseries::TimeSeries;

/// Relative singular-value cut-off for the shift-invariance least-squares solve.
pub const PINV_RTOL: f64 = 1e-12;

/// Past and future block-Hankel matrices.
///
/// Row `b·l + c`, column `t` of `yp` is channel `c` at time `t + b`; `yf` is the
/// same layout shifted by `j` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelPair {
    pub yp: DMatrix<f64>,
    pub yf: DMatrix<f64>,
    pub channels: usize,
    pub block_rows: usize,
}

impl HankelPair {
    pub fn n_cols(&self) -> usize {
        self.yp.ncols()
    }

    pub fn rows(&self) -> usize {
        self.yp.nrows()
    }
}

/// Minimum record length accepted for `block_rows` lags on `channels` channels.
pub fn min_samples(channels: usize, block_rows: usize) -> usize {
    2 * block_rows * channels
}

pub fn build_hankel(ts: &TimeSeries, block_rows: usize, center: bool) -> Result<HankelPair> {
    if block_rows == 0 {
        return Err(Error::InvalidArgument("block rows must be at least 1".into()));
    }
    let l = ts.channels();
    let n = ts.n_samples();
    let required = min_samples(l, block_rows).max(2 * block_rows);
    if n < required {
        return Err(Error::TooShort { required, actual: n });
    }
    let cols = n - 2 * block_rows + 1;
    let rows = l * block_rows;
    let y = ts.data();
    let mut yp = DMatrix::zeros(rows, cols);
    let mut yf = DMatrix::zeros(rows, cols);
    for t in 0..cols {
        for b in 0..block_rows {
            for c in 0..l {
                yp[(b * l + c, t)] = y[(c, t + b)];
                yf[(b * l + c, t)] = y[(c, t + block_rows + b)];
            }
        }
    }
    if center {
        center_rows(&mut yp);
        center_rows(&mut yf);
    }
    Ok(HankelPair {
        yp,
        yf,
        channels: l,
        block_rows,
    })
}

fn center_rows(m: &mut DMatrix<f64>) {
    let n = m.ncols() as f64;
    for mut row in m.row_iter_mut() {
        let mean = row.sum() / n;
        row.add_scalar_mut(-mean);
    }
}

/// Auto- and cross-covariance blocks of a [`HankelPair`], scaled by `1/N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlocks {
    pub spp: DMatrix<f64>,
    pub sff: DMatrix<f64>,
    pub sfp: DMatrix<f64>,
}

pub fn covariance_blocks(hp: &HankelPair) -> CovBlocks {
    let n = hp.n_cols() as f64;
    let mut spp = &hp.yp * hp.yp.transpose() / n;
    let mut sff = &hp.yf * hp.yf.transpose() / n;
    let sfp = &hp.yf * hp.yp.transpose() / n;
    symmetrize(&mut spp);
    symmetrize(&mut sff);
    CovBlocks { spp, sff, sfp }
}

/// Lower Cholesky square root `L` with `L Lᵀ = S`, using the jitter ladder.
pub fn matrix_sqrt(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut s = s.clone();
    symmetrize(&mut s);
    Ok(cholesky_jitter(&s)?.0)
}

/// Result of canonical correlation analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct Cca {
    /// Left singular vectors of the normalized cross-covariance.
    pub v1: DMatrix<f64>,
    /// Canonical correlations, descending, clamped to `[0, 1]`.
    pub correlations: DVector<f64>,
    pub v2: DMatrix<f64>,
    /// Square-root factors used for the normalization.
    pub sqrt_xx: DMatrix<f64>,
    pub sqrt_yy: DMatrix<f64>,
}

/// SVD of `Σxx^{-1/2} Σxy Σyy^{-T/2}`.
pub fn cca(sxx: &DMatrix<f64>, syy: &DMatrix<f64>, sxy: &DMatrix<f64>) -> Result<Cca> {
    if sxy.nrows() != sxx.nrows() || sxy.ncols() != syy.nrows() {
        return Err(Error::Dimension(format!(
            "cross-covariance {}x{} does not match auto-covariances {} and {}",
            sxy.nrows(),
            sxy.ncols(),
            sxx.nrows(),
            syy.nrows()
        )));
    }
    let lx = matrix_sqrt(sxx)?;
    let ly = matrix_sqrt(syy)?;
    let normalized = lower_inverse(&lx) * sxy * lower_inverse(&ly).transpose();
    let svd = normalized.svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    let k = svd.singular_values.len();

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let correlations = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i].clamp(0.0, 1.0)));
    let v1 = DMatrix::from_columns(&order.iter().map(|&i| u.column(i)).collect::<Vec<_>>());
    let v2 = DMatrix::from_columns(&order.iter().map(|&i| vt.row(i).transpose()).collect::<Vec<_>>());
    Ok(Cca {
        v1,
        correlations,
        v2,
        sqrt_xx: lx,
        sqrt_yy: ly,
    })
}

/// State-space realization recovered from an extended observability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub observability: DMatrix<f64>,
    pub controllability: Option<DMatrix<f64>>,
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Frobenius residual of the shift-invariance least-squares solve.
    pub residual: f64,
}

impl Realization {
    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

/// Shift invariance: `C` is the first block row of `O`, `A = O↑⁺ O↓`.
pub fn realization_from_observability(o: &DMatrix<f64>, channels: usize) -> Result<Realization> {
    if channels == 0 || !o.nrows().is_multiple_of(channels) {
        return Err(Error::Dimension(format!(
            "observability has {} rows, not a multiple of {channels} channels",
            o.nrows()
        )));
    }
    let blocks = o.nrows() / channels;
    if blocks < 2 {
        return Err(Error::InvalidArgument(
            "observability needs at least two block rows".into(),
        ));
    }
    let d = o.ncols();
    let rows = (blocks - 1) * channels;
    let upper = o.rows(0, rows).into_owned();
    let lower = o.rows(channels, rows).into_owned();
    let (upper_pinv, rank) = pinv(&upper, PINV_RTOL);
    if rank < d {
        return Err(Error::RankDeficient { rank, order: d });
    }
    let a = upper_pinv * &lower;
    let residual = (&upper * &a - &lower).norm();
    Ok(Realization {
        observability: o.clone(),
        controllability: None,
        c: o.rows(0, channels).into_owned(),
        a,
        residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoleKind {
    /// Representative of a complex-conjugate pair.
    Complex,
    /// Real positive discrete eigenvalue (overdamped or integrator pole).
    RealPositive,
    /// Real negative discrete eigenvalue: sits on the Nyquist frequency, non-physical.
    RealNegative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    pub frequency: f64,
    pub damping: f64,
    /// Unit-norm shape, rotated so its largest entry is real and positive.
    pub shape: DVector<Complex64>,
    pub eigenvalue: Complex64,
    pub kind: PoleKind,
}

impl Mode {
    pub fn is_physical(&self) -> bool {
        self.kind == PoleKind::Complex
    }
}

/// Modes from one realization, sorted by frequency.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModalSet {
    pub modes: Vec<Mode>,
    /// Eigenvalues at the origin, which have no continuous-time counterpart.
    pub dropped_zero: usize,
}

impl ModalSet {
    pub fn frequencies(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.frequency).collect()
    }

    pub fn damping_ratios(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.damping).collect()
    }

    pub fn discrete_eigenvalues(&self) -> Vec<Complex64> {
        self.modes.iter().map(|m| m.eigenvalue).collect()
    }

    /// Only the conjugate-pair (physical candidate) modes.
    pub fn physical(&self) -> ModalSet {
        ModalSet {
            modes: self.modes.iter().filter(|m| m.is_physical()).cloned().collect(),
            dropped_zero: self.dropped_zero,
        }
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Unit-normalizes `v` and rotates it so the entry of largest modulus is real positive.
pub fn normalize_shape(v: &DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    if norm == 0.0 {
        return v.clone();
    }
    let (imax, _) = v
        .iter()
        .enumerate()
        .fold((0, -1.0), |(bi, bm), (i, z)| if z.norm() > bm { (i, z.norm()) } else { (bi, bm) });
    let phase = v[imax] / v[imax].norm();
    v.map(|z| z / phase / norm)
}

fn imag_tolerance(mu: Complex64) -> f64 {
    1e-10 * mu.norm().max(1.0)
}

/// Continuous poles `λ = ln(μ)/Δt`, `f = |λ|/2π`, `ζ = -Re λ / |λ|`, shapes `C v`.
pub fn modal_from_state_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>, dt: f64) -> Result<ModalSet> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension("output matrix does not match state dimension".into()));
    }
    let (values, vectors) = crate::linalg::eig(a);
    let cc = c.map(|v| Complex64::new(v, 0.0));
    let mut set = ModalSet::default();
    for (k, mu) in values.iter().enumerate() {
        if mu.norm() == 0.0 {
            set.dropped_zero += 1;
            continue;
        }
        let tol = imag_tolerance(*mu);
        let kind = if mu.im > tol {
            PoleKind::Complex
        } else if mu.im < -tol {
            continue;
        } else if mu.re > 0.0 {
            PoleKind::RealPositive
        } else {
            PoleKind::RealNegative
        };
        let mu_used = if kind == PoleKind::Complex {
            *mu
        } else {
            Complex64::new(mu.re, 0.0)
        };
        let lambda = mu_used.ln() / dt;
        let mag = lambda.norm();
        let frequency = mag / (2.0 * std::f64::consts::PI);
        let damping = if mag > 0.0 { -lambda.re / mag } else { 0.0 };
        let shape = normalize_shape(&(&cc * vectors.column(k)));
        set.modes.push(Mode {
            frequency,
            damping,
            shape,
            eigenvalue: mu_used,
            kind,
        });
    }
    if set.dropped_zero > 0 {
        log::warn!("dropped {} zero eigenvalues", set.dropped_zero);
    }
    set.modes.sort_by(|x, y| x.frequency.total_cmp(&y.frequency));
    Ok(set)
}

/// Canonical-variate weighted factors `(O, Ctrb)` of `Σfp` truncated to `order`.
/// At full order `O · Ctrb = Σfp`.
pub fn factor_cross_covariance(cov: &CovBlocks, order: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let rows = cov.sff.nrows();
    if order == 0 || order > rows {
        return Err(Error::InvalidArgument(format!(
            "model order {order} must be in 1..={rows}"
        )));
    }
    let cca = cca(&cov.sff, &cov.spp, &cov.sfp)?;
    let sqrt_lambda = DMatrix::from_diagonal(&cca.correlations.rows(0, order).map(f64::sqrt));
    let o = &cca.sqrt_xx * cca.v1.columns(0, order) * &sqrt_lambda;
    let ctrb = &sqrt_lambda * cca.v2.columns(0, order).transpose() * cca.sqrt_yy.transpose();
    Ok((o, ctrb))
}

/// Observability/controllability from canonical-variate weighted SSI-Cov at order `d`.
pub fn ssi_cov_from_blocks(cov: &CovBlocks, channels: usize, order: usize) -> Result<Realization> {
    let (o, ctrb) = factor_cross_covariance(cov, order)?;
    let mut real = realization_from_observability(&o, channels)?;
    real.controllability = Some(ctrb);
    Ok(real)
}

/// Classical SSI-Cov: Hankel → covariance blocks → CCA → realization → modes.
pub fn ssi_cov(
    ts: &TimeSeries,
    block_rows: usize,
    order: usize,
    center: bool,
) -> Result<(Realization, ModalSet)> {
    let hp = build_hankel(ts, block_rows, center)?;
    let cov = covariance_blocks(&hp);
    let real = ssi_cov_from_blocks(&cov, ts.channels(), order)?;
    let modes = modal_from_state_matrix(&real.a, &real.c, ts.dt())?;
    Ok((real, modes))
}

/// Modal assurance criterion `|φ₁ᴴ φ₂|² / (‖φ₁‖² ‖φ₂‖²)`.
pub fn mac(a: &DVector<Complex64>, b: &DVector<Complex64>) -> f64 {
    let num = a.dotc(b).norm_sqr();
    let den = a.norm_squared() * b.norm_squared();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}
