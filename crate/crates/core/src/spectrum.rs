//! Welch power spectral density with a Hann window and one-sided density scaling.

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
}

impl Default for WelchParams {
    fn default() -> Self {
        Self {
            segment_len: 1024,
            overlap: 0.5,
        }
    }
}

/// Per-channel and channel-summed PSD in units² / Hz.
#[derive(Debug, Clone, PartialEq)]
pub struct WelchSpectrum {
    pub params: WelchParams,
    pub frequencies: Vec<f64>,
    /// `channels × bins`.
    pub psd: DMatrix<f64>,
    pub sum: Vec<f64>,
    pub segments: usize,
}

impl WelchSpectrum {
    pub fn df(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }
}

fn hann(n: usize) -> Vec<f64> {
    // periodic form, as used for spectral estimation
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn welch_psd(ts: &TimeSeries, params: &WelchParams) -> Result<WelchSpectrum> {
    let seg = params.segment_len;
    let n = ts.n_samples();
    if seg < 2 {
        return Err(Error::InvalidArgument(format!("segment length {seg} is too short")));
    }
    if seg > n {
        return Err(Error::TooShort {
            required: seg,
            actual: n,
        });
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(Error::InvalidArgument(format!(
            "overlap {} must lie in [0, 1)",
            params.overlap
        )));
    }
    let step = ((seg as f64) * (1.0 - params.overlap)).round().max(1.0) as usize;
    let segments = (n - seg) / step + 1;
    let window = hann(seg);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let bins = seg / 2 + 1;
    let fs = ts.fs();

    let fft = FftPlanner::new().plan_fft_forward(seg);
    let mut psd = DMatrix::zeros(ts.channels(), bins);
    let mut buf = vec![Complex::new(0.0, 0.0); seg];
    for c in 0..ts.channels() {
        let row = ts.data().row(c);
        for s in 0..segments {
            let start = s * step;
            let mean = (start..start + seg).map(|t| row[t]).sum::<f64>() / seg as f64;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = Complex::new((row[start + k] - mean) * window[k], 0.0);
            }
            fft.process(&mut buf);
            for k in 0..bins {
                psd[(c, k)] += buf[k].norm_sqr();
            }
        }
        for k in 0..bins {
            let one_sided = if k == 0 || (seg.is_multiple_of(2) && k == seg / 2) { 1.0 } else { 2.0 };
            psd[(c, k)] *= one_sided / (fs * win_power * segments as f64);
        }
    }
    let sum = (0..bins).map(|k| psd.column(k).sum()).collect();
    let frequencies = (0..bins).map(|k| k as f64 * fs / seg as f64).collect();
    Ok(WelchSpectrum {
        params: *params,
        frequencies,
        psd,
        sum,
        segments,
    })
}
