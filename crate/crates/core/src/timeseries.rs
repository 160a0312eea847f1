use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Multichannel record sampled at `fs` Hz, stored channels × samples.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    data: DMatrix<f64>,
    fs: f64,
    names: Vec<String>,
}

impl TimeSeries {
    pub fn new(data: DMatrix<f64>, fs: f64) -> Result<Self> {
        let names = (1..=data.nrows()).map(|c| format!("ch{c}")).collect();
        Self::with_names(data, fs, names)
    }

    pub fn with_names(data: DMatrix<f64>, fs: f64, names: Vec<String>) -> Result<Self> {
        if !(fs > 0.0) || !fs.is_finite() {
            return Err(Error::InvalidArgument(format!("sample rate must be positive, got {fs}")));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidArgument("time series needs at least one channel".into()));
        }
        if names.len() != data.nrows() {
            return Err(Error::Dimension(format!(
                "{} channel names for {} channels",
                names.len(),
                data.nrows()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (ch, t) = (pos % data.nrows(), pos / data.nrows());
            return Err(Error::InvalidArgument(format!(
                "non-finite value at channel {ch}, sample {t}"
            )));
        }
        Ok(Self { data, fs, names })
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fs
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// First `n` samples of every channel.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.n_samples() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate {} samples to {n}",
                self.n_samples()
            )));
        }
        Ok(Self {
            data: self.data.columns(0, n).into_owned(),
            fs: self.fs,
            names: self.names.clone(),
        })
    }
}
