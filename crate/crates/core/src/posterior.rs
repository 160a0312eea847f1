//! Posterior weight draws → modal parameter draws, alignment, summaries and
//! multi-order stabilisation data.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::GibbsChain;
use crate::linalg::cholesky;
use crate::model::{PriorSpec, StackedData};
use crate::rng::Rng;
use crate::simulate::psd_factor;
use crate::subspace::{
    build_hankel, mac, modal_from_state_matrix, normalize_shape, realization_from_observability, ModalSet,
};
use crate::timeseries::TimeSeries;
use crate::vb::{run_vb, VbConfig, VbPosterior};

pub const MAC_THRESHOLD: f64 = 0.8;
pub const FREQUENCY_GATE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gibbs,
    Vb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalSample {
    pub index: usize,
    pub source: Source,
    pub order: usize,
    pub modes: ModalSet,
}

/// `n` observability draws from the weight factors of a VB posterior.
pub fn draw_observability_samples(vb: &VbPosterior, n: usize, rng: &mut Rng) -> Result<Vec<DMatrix<f64>>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    let dim = vb.dim();
    let rows = vb.view_dims[0];
    let factors: Vec<DMatrix<f64>> = vb
        .w_cov
        .iter()
        .map(|c| cholesky(c).unwrap_or_else(|_| psd_factor(c)))
        .collect();
    let d = vb.latent_dim();
    let mut draws = Vec::with_capacity(n);
    for _ in 0..n {
        let mut w1 = DMatrix::zeros(rows, d);
        for (i, f) in factors.iter().enumerate() {
            let col = vb.w_mean.column(i) + f * rng.normal_vector(dim);
            w1.set_column(i, &col.rows(0, rows));
        }
        draws.push(w1);
    }
    Ok(draws)
}

/// View-1 rows of every retained weight record.
pub fn chain_observability_samples(chain: &GibbsChain) -> Result<Vec<DMatrix<f64>>> {
    if chain.is_empty() {
        return Err(Error::InvalidArgument("chain has no records".into()));
    }
    let rows = chain.view_dims[0];
    Ok(chain.w.iter().map(|w| w.rows(0, rows).into_owned()).collect())
}

/// Shift-invariance realization and eigen-analysis of one observability draw.
pub fn propagate_to_modal(w1: &DMatrix<f64>, channels: usize, dt: f64) -> Result<ModalSet> {
    let real = realization_from_observability(w1, channels)?;
    modal_from_state_matrix(&real.a, &real.c, dt)
}

/// Propagates every draw in parallel; degenerate draws are excluded and counted.
pub fn propagate_all(
    draws: &[DMatrix<f64>],
    channels: usize,
    dt: f64,
    source: Source,
    order: usize,
) -> (Vec<ModalSample>, usize) {
    let results: Vec<Result<ModalSet>> = draws.par_iter().map(|w| propagate_to_modal(w, channels, dt)).collect();
    let mut samples = Vec::with_capacity(draws.len());
    let mut excluded = 0;
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(modes) => samples.push(ModalSample {
                index,
                source,
                order,
                modes,
            }),
            Err(e) => {
                excluded += 1;
                log::warn!("excluded draw {index}: {e}");
            }
        }
    }
    if excluded > 0 {
        log::warn!("excluded {excluded} of {} draws", draws.len());
    }
    (samples, excluded)
}

/// Draws of one mode matched to a reference mode.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedMode {
    pub reference_frequency: f64,
    pub reference_damping: f64,
    pub reference_shape: DVector<Complex64>,
    pub draw_index: Vec<usize>,
    pub frequency: Vec<f64>,
    pub damping: Vec<f64>,
    pub shapes: Vec<DVector<Complex64>>,
    pub mac: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalPosterior {
    pub modes: Vec<AlignedMode>,
    /// `(frequency, damping)` of physical modes that matched no reference.
    pub unassigned: Vec<(f64, f64)>,
    pub n_draws: usize,
    pub excluded: usize,
}

/// Greedy best-MAC matching of each draw's conjugate-pair modes to the
/// reference modes, subject to the MAC threshold and frequency gate.
pub fn align_modes(samples: &[ModalSample], reference: &ModalSet, excluded: usize) -> Result<ModalPosterior> {
    if samples.is_empty() {
        return Err(Error::EmptyPosterior { excluded });
    }
    let reference = reference.physical();
    let mut modes: Vec<AlignedMode> = reference
        .modes
        .iter()
        .map(|r| AlignedMode {
            reference_frequency: r.frequency,
            reference_damping: r.damping,
            reference_shape: normalize_shape(&r.shape),
            draw_index: Vec::new(),
            frequency: Vec::new(),
            damping: Vec::new(),
            shapes: Vec::new(),
            mac: Vec::new(),
        })
        .collect();
    let mut unassigned = Vec::new();
    for s in samples {
        let phys = s.modes.physical();
        let mut cand: Vec<(usize, usize, f64, f64)> = Vec::new();
        for (ri, r) in reference.modes.iter().enumerate() {
            for (mi, m) in phys.modes.iter().enumerate() {
                let df = (m.frequency - r.frequency).abs();
                if df > FREQUENCY_GATE * r.frequency {
                    continue;
                }
                let v = mac(&r.shape, &m.shape);
                if v >= MAC_THRESHOLD {
                    cand.push((ri, mi, v, df));
                }
            }
        }
        cand.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.3.total_cmp(&b.3)));
        let mut ref_used = vec![false; reference.len()];
        let mut mode_used = vec![false; phys.len()];
        for (ri, mi, v, _) in cand {
            if ref_used[ri] || mode_used[mi] {
                continue;
            }
            ref_used[ri] = true;
            mode_used[mi] = true;
            let m = &phys.modes[mi];
            let a = &mut modes[ri];
            a.draw_index.push(s.index);
            a.frequency.push(m.frequency);
            a.damping.push(m.damping);
            a.shapes.push(normalize_shape(&m.shape));
            a.mac.push(v);
        }
        for (mi, m) in phys.modes.iter().enumerate() {
            if !mode_used[mi] {
                unassigned.push((m.frequency, m.damping));
            }
        }
    }
    Ok(ModalPosterior {
        modes,
        unassigned,
        n_draws: samples.len(),
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(x: &[f64]) -> Option<Summary> {
    if x.is_empty() {
        return None;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Summary {
        mean,
        sd,
        q025: quantile(&s, 0.025),
        q50: quantile(&s, 0.5),
        q975: quantile(&s, 0.975),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub reference_frequency: f64,
    pub reference_damping: f64,
    pub aligned: usize,
    pub discarded: usize,
    pub frequency: Option<Summary>,
    pub damping: Option<Summary>,
    pub negative_damping_fraction: f64,
    pub mean_mac: f64,
    pub min_mac: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub excluded: usize,
    pub unassigned: usize,
    pub modes: Vec<ModeSummary>,
}

impl ModalPosterior {
    pub fn summary(&self) -> PosteriorSummary {
        let modes = self
            .modes
            .iter()
            .map(|m| {
                let k = m.frequency.len();
                ModeSummary {
                    reference_frequency: m.reference_frequency,
                    reference_damping: m.reference_damping,
                    aligned: k,
                    discarded: self.n_draws - k,
                    frequency: summarize(&m.frequency),
                    damping: summarize(&m.damping),
                    negative_damping_fraction: if k == 0 {
                        0.0
                    } else {
                        m.damping.iter().filter(|z| **z < 0.0).count() as f64 / k as f64
                    },
                    mean_mac: if k == 0 { 0.0 } else { m.mac.iter().sum::<f64>() / k as f64 },
                    min_mac: m.mac.iter().copied().fold(f64::INFINITY, f64::min),
                }
            })
            .collect();
        PosteriorSummary {
            n_draws: self.n_draws,
            excluded: self.excluded,
            unassigned: self.unassigned.len(),
            modes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilisationPoint {
    pub order: usize,
    pub frequency: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderFailure {
    pub order: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilisationData {
    pub orders: Vec<usize>,
    pub points: Vec<StabilisationPoint>,
    pub failures: Vec<OrderFailure>,
    pub excluded: Vec<(usize, usize)>,
    /// ELBO trace of the VB run at each completed order.
    pub elbo_traces: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilisationConfig {
    pub block_rows: usize,
    pub center: bool,
    pub orders: Vec<usize>,
    pub n_draws: usize,
    pub priors: PriorSpec,
    pub vb: VbConfig,
    pub seed: u64,
}

/// VB at each order, propagated draws, conjugate-pair poles only.
pub fn stabilisation(ts: &TimeSeries, config: &StabilisationConfig) -> Result<StabilisationData> {
    if config.orders.is_empty() {
        return Err(Error::InvalidArgument("no model orders requested".into()));
    }
    let mut orders = config.orders.clone();
    orders.sort_unstable();
    orders.dedup();
    let hp = build_hankel(ts, config.block_rows, config.center)?;
    let rows = hp.rows();
    if let Some(&bad) = orders.iter().find(|&&d| d == 0 || d > rows) {
        return Err(Error::InvalidArgument(format!("model order {bad} must be in 1..={rows}")));
    }
    let data = StackedData::from_hankel(&hp)?;
    let mut out = StabilisationData {
        orders: orders.clone(),
        points: Vec::new(),
        failures: Vec::new(),
        excluded: Vec::new(),
        elbo_traces: Vec::new(),
    };
    for &d in &orders {
        match stabilisation_order(ts, &data, config, d) {
            Ok((points, excluded, trace)) => {
                out.points.extend(points);
                out.excluded.push((d, excluded));
                out.elbo_traces.push((d, trace));
            }
            Err(e) => {
                log::warn!("order {d} failed: {e}");
                out.failures.push(OrderFailure {
                    order: d,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(out)
}

fn stabilisation_order(
    ts: &TimeSeries,
    data: &StackedData,
    config: &StabilisationConfig,
    d: usize,
) -> Result<(Vec<StabilisationPoint>, usize, Vec<f64>)> {
    let [d1, d2] = data.view_dims();
    let priors = config.priors.resolve(d1, d2, d)?;
    let vb = run_vb(data, &priors, &config.vb)?;
    let mut rng = Rng::new(config.seed, d as u64);
    let draws = draw_observability_samples(&vb, config.n_draws, &mut rng)?;
    let (samples, excluded) = propagate_all(&draws, ts.channels(), ts.dt(), Source::Vb, d);
    if samples.is_empty() {
        return Err(Error::EmptyPosterior { excluded });
    }
    let points = samples
        .iter()
        .flat_map(|s| {
            s.modes.physical().modes.into_iter().map(move |m| StabilisationPoint {
                order: s.order,
                frequency: m.frequency,
                damping: m.damping,
            })
        })
        .collect();
    Ok((points, excluded, vb.elbo_trace))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.q50, 3.0);
        assert_eq!(s.mean, 3.0);
        assert!((s.q025 - 1.1).abs() < 1e-12);
        assert!((s.q975 - 4.9).abs() < 1e-12);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn empty_samples_are_an_error() {
        let r = align_modes(&[], &ModalSet::default(), 3);
        assert!(matches!(r, Err(Error::EmptyPosterior { excluded: 3 })));
    }
}
