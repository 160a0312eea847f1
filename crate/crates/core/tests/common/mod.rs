#![allow(dead_code)]

use nalgebra::DMatrix;

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)).sqrt()
}

/// Standard error of the mean of independent draws.
pub fn iid_se(x: &[f64]) -> f64 {
    sd(x) / (x.len() as f64).sqrt()
}

/// Standard error of the mean of a correlated series from non-overlapping batch means.
pub fn batch_se(x: &[f64], batches: usize) -> f64 {
    let size = x.len() / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&x[b * size..(b + 1) * size])).collect();
    sd(&means) / (batches as f64).sqrt()
}

pub fn within_se(x: &[f64], target: f64, k: f64) -> bool {
    (mean(x) - target).abs() <= k * iid_se(x)
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Random symmetric positive definite matrix with eigenvalues in `[1, 1 + spread]`.
pub fn random_spd(rng: &mut bayssi_core::Rng, n: usize, spread: f64) -> DMatrix<f64> {
    let q = rng.normal_matrix(n, n).qr().q();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(n, |_, _| 1.0 + spread * rng.uniform()));
    let mut m = &q * d * q.transpose();
    bayssi_core::linalg::symmetrize(&mut m);
    m
}
