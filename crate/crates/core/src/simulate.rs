//! Shear-frame benchmark: assemble (M, C, K), form the continuous stochastic
//! state-space, discretize exactly with Van Loan's construction and simulate
//! noisy floor accelerations.
//!
//! Force noise convention: each floor receives independent continuous white
//! noise with two-sided spectral density `q`, i.e. covariance `q δ(t - t')`.
//! The force enters the velocity states through `M⁻¹`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;
use crate::rng::Rng;
use crate::timeseries::TimeSeries;

/// Damping rule `c_j = k_j / DAMPING_DIVISOR`.
pub const DAMPING_DIVISOR: f64 = 1000.0;

/// Lumped-mass shear frame with per-floor masses and column stiffnesses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShearFrame {
    pub masses: Vec<f64>,
    pub stiffnesses: Vec<f64>,
}

impl ShearFrame {
    pub fn new(masses: Vec<f64>, stiffnesses: Vec<f64>) -> Result<Self> {
        if masses.is_empty() || masses.len() != stiffnesses.len() {
            return Err(Error::InvalidArgument(format!(
                "need equal, non-zero numbers of masses ({}) and stiffnesses ({})",
                masses.len(),
                stiffnesses.len()
            )));
        }
        if masses.iter().chain(&stiffnesses).any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidArgument("masses and stiffnesses must be positive".into()));
        }
        Ok(Self { masses, stiffnesses })
    }

    pub fn uniform(n_floors: usize, mass: f64, stiffness: f64) -> Result<Self> {
        Self::new(vec![mass; n_floors], vec![stiffness; n_floors])
    }

    pub fn n_floors(&self) -> usize {
        self.masses.len()
    }
}

/// Mass, damping and stiffness matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralMatrices {
    pub mass: DMatrix<f64>,
    pub damping: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

/// `M = diag(m)`, `K = 2·tridiag` with each floor's two columns acting in
/// parallel, `C = K / 1000`.
pub fn build_shear_frame(frame: &ShearFrame) -> StructuralMatrices {
    let n = frame.n_floors();
    let k = &frame.stiffnesses;
    let mass = DMatrix::from_diagonal(&DVector::from_column_slice(&frame.masses));
    let mut stiffness = DMatrix::zeros(n, n);
    for j in 0..n {
        let above = if j + 1 < n { k[j + 1] } else { 0.0 };
        stiffness[(j, j)] = 2.0 * (k[j] + above);
        if j + 1 < n {
            stiffness[(j, j + 1)] = -2.0 * k[j + 1];
            stiffness[(j + 1, j)] = -2.0 * k[j + 1];
        }
    }
    let damping = &stiffness / DAMPING_DIVISOR;
    StructuralMatrices {
        mass,
        damping,
        stiffness,
    }
}

/// Continuous-time stochastic state-space with acceleration outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousSS {
    pub ac: DMatrix<f64>,
    /// Maps the floor forces onto the state derivative.
    pub noise_map: DMatrix<f64>,
    /// Two-sided spectral density of each floor force.
    pub q: f64,
    pub cout: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl ContinuousSS {
    /// Natural frequencies (Hz) and damping ratios from the eigenvalues of `Ac`,
    /// one entry per complex-conjugate pair, sorted by frequency.
    pub fn modes(&self) -> Vec<(f64, f64)> {
        let (vals, _) = crate::linalg::eig(&self.ac);
        let mut out: Vec<(f64, f64)> = vals
            .iter()
            .filter(|v| v.im > 0.0)
            .map(|v| {
                let mag = v.norm();
                (mag / (2.0 * std::f64::consts::PI), -v.re / mag)
            })
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }
}

pub fn to_continuous_ss(mats: &StructuralMatrices, q: f64, r_meas: f64) -> Result<ContinuousSS> {
    let n = mats.mass.nrows();
    if mats.damping.shape() != (n, n) || mats.stiffness.shape() != (n, n) {
        return Err(Error::Dimension("M, C and K must be square and the same size".into()));
    }
    if !(q > 0.0) {
        return Err(Error::InvalidArgument(format!("force spectral density must be positive, got {q}")));
    }
    if !(r_meas >= 0.0) {
        return Err(Error::InvalidArgument(format!("measurement noise SD must be >= 0, got {r_meas}")));
    }
    let m_inv = mats
        .mass
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("mass matrix is singular".into()))?;
    let mk = -(&m_inv * &mats.stiffness);
    let mc = -(&m_inv * &mats.damping);

    let mut ac = DMatrix::zeros(2 * n, 2 * n);
    ac.view_mut((0, n), (n, n)).copy_from(&DMatrix::identity(n, n));
    ac.view_mut((n, 0), (n, n)).copy_from(&mk);
    ac.view_mut((n, n), (n, n)).copy_from(&mc);

    let mut noise_map = DMatrix::zeros(2 * n, n);
    noise_map.view_mut((n, 0), (n, n)).copy_from(&m_inv);

    let mut cout = DMatrix::zeros(n, 2 * n);
    cout.view_mut((0, 0), (n, n)).copy_from(&mk);
    cout.view_mut((0, n), (n, n)).copy_from(&mc);

    let r = DMatrix::from_diagonal_element(n, n, r_meas * r_meas);
    Ok(ContinuousSS {
        ac,
        noise_map,
        q,
        cout,
        r,
    })
}

/// Exactly discretized stochastic state-space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSS {
    pub ad: DMatrix<f64>,
    pub qd: DMatrix<f64>,
    pub cout: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub dt: f64,
}

impl DiscreteSS {
    pub fn spectral_radius(&self) -> f64 {
        crate::linalg::eig(&self.ad)
            .0
            .iter()
            .fold(0.0, |m, v| m.max(v.norm()))
    }

    /// Stationary state covariance `P = Ad P Adᵀ + Qd`.
    pub fn stationary_covariance(&self) -> Result<DMatrix<f64>> {
        discrete_lyapunov(&self.ad, &self.qd)
    }
}

/// Van Loan discretization of `dx = Ac x dt + L dβ` with `E[dβ dβᵀ] = q I dt`.
///
/// Returns `(Ad, Qd)` with `Ad = expm(Ac Δt)` and `Qd = ∫₀^Δt e^{Ac s} L q Lᵀ e^{Acᵀ s} ds`.
pub fn van_loan_discretize(
    ac: &DMatrix<f64>,
    noise_map: &DMatrix<f64>,
    q: f64,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let n = ac.nrows();
    let qc = noise_map * noise_map.transpose() * q;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&(-ac));
    block.view_mut((0, n), (n, n)).copy_from(&qc);
    block.view_mut((n, n), (n, n)).copy_from(&ac.transpose());
    let e = (block * dt).exp();
    let ad = e.view((n, n), (n, n)).transpose();
    let mut qd = &ad * e.view((0, n), (n, n));

    let asym = crate::linalg::max_asymmetry(&qd);
    symmetrize(&mut qd);
    let eig = qd.clone().symmetric_eigen();
    let max = eig.eigenvalues.max().max(0.0);
    let min = eig.eigenvalues.min();
    if min < -1e-10 * max {
        log::warn!("Van Loan Qd has min eigenvalue {min:e} (max {max:e}, asymmetry {asym:e})");
    }
    if min < 0.0 {
        qd = psd_clamp(&eig);
    }
    Ok((ad, qd))
}

fn psd_clamp(eig: &nalgebra::SymmetricEigen<f64, nalgebra::Dyn>) -> DMatrix<f64> {
    let d = eig.eigenvalues.map(|v| v.max(0.0));
    let mut m = &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
    symmetrize(&mut m);
    m
}

/// Square-root factor `F` with `F Fᵀ = S` for a symmetric PSD `S`.
pub fn psd_factor(s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut s = s.clone();
    symmetrize(&mut s);
    let eig = s.symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d)
}

/// Solves `P = A P Aᵀ + Q` by the doubling iteration; requires spectral radius < 1.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..200 {
        let delta = &ak * &p * ak.transpose();
        p += &delta;
        ak = &ak * &ak;
        if delta.norm() <= 1e-16 * p.norm().max(f64::MIN_POSITIVE) || ak.norm() < 1e-300 {
            symmetrize(&mut p);
            return Ok(p);
        }
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
    }
    Err(Error::InvalidArgument(
        "discrete Lyapunov iteration did not converge (unstable state matrix?)".into(),
    ))
}

pub fn discretize(css: &ContinuousSS, dt: f64) -> Result<DiscreteSS> {
    let (ad, qd) = van_loan_discretize(&css.ac, &css.noise_map, css.q, dt)?;
    Ok(DiscreteSS {
        ad,
        qd,
        cout: css.cout.clone(),
        r: css.r.clone(),
        dt,
    })
}

/// Simulates `n` samples of `x_{k+1} = Ad x_k + w_k`, `y_k = C x_k + v_k`.
///
/// The initial state is drawn from the stationary distribution. Draw order:
/// initial state, then per step the measurement noise followed by process noise.
pub fn simulate_response(dss: &DiscreteSS, n: usize, rng: &mut Rng) -> Result<TimeSeries> {
    if n == 0 {
        return Err(Error::InvalidArgument("number of samples must be positive".into()));
    }
    let nx = dss.ad.nrows();
    let ny = dss.cout.nrows();
    let p = dss.stationary_covariance()?;
    let p_factor = psd_factor(&p);
    let q_factor = psd_factor(&dss.qd);
    let r_factor = psd_factor(&dss.r);

    let mut x = &p_factor * rng.normal_vector(nx);
    let mut data = DMatrix::zeros(ny, n);
    for k in 0..n {
        let v = rng.normal_vector(ny);
        let y = &dss.cout * &x + &r_factor * v;
        data.set_column(k, &y);
        let w = rng.normal_vector(nx);
        x = &dss.ad * &x + &q_factor * w;
    }
    TimeSeries::new(data, 1.0 / dss.dt)
}

/// Shear-frame simulation settings; defaults reproduce the 4-storey benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub n_floors: usize,
    pub mass: f64,
    pub stiffness: f64,
    pub force_psd: f64,
    pub noise_sd: f64,
    pub fs: f64,
    pub n_samples: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            n_floors: 4,
            mass: 2.0,
            stiffness: 2500.0,
            force_psd: 5e-5,
            noise_sd: 0.05,
            fs: 50.0,
            n_samples: 1 << 16,
        }
    }
}

impl BenchmarkConfig {
    pub fn frame(&self) -> Result<ShearFrame> {
        ShearFrame::uniform(self.n_floors, self.mass, self.stiffness)
    }

    pub fn continuous(&self) -> Result<ContinuousSS> {
        to_continuous_ss(&build_shear_frame(&self.frame()?), self.force_psd, self.noise_sd)
    }

    pub fn discrete(&self) -> Result<DiscreteSS> {
        discretize(&self.continuous()?, 1.0 / self.fs)
    }

    pub fn simulate(&self, rng: &mut Rng) -> Result<TimeSeries> {
        simulate_response(&self.discrete()?, self.n_samples, rng)
    }
}
