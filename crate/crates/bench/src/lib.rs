//! Shared fixtures for the benchmarks.

use bayssi_core::subspace::{build_hankel, HankelPair};
use bayssi_core::{BenchmarkConfig, Rng, TimeSeries};

/// Simulated benchmark response of length `n`.
pub fn benchmark_series(n: usize, seed: u64) -> TimeSeries {
    let cfg = BenchmarkConfig {
        n_samples: n,
        ..BenchmarkConfig::default()
    };
    cfg.simulate(&mut Rng::new(seed, 0)).expect("benchmark simulation")
}

pub fn benchmark_hankel(n: usize, block_rows: usize) -> HankelPair {
    build_hankel(&benchmark_series(n, 1), block_rows, true).expect("hankel")
}
