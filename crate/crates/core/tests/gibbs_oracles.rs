mod common;

use bayssi_core::gibbs::{
    mu_conditional, prior_state, sigma_conditional, sweep, update_sigma, w_conditional, z_conditional, LatentStats,
};
use bayssi_core::model::log_joint;
use bayssi_core::rng::{inverse_wishart_log_pdf, mvn_log_pdf};
use bayssi_core::{default_priors, ModelState, PriorHyper, Rng, StackedData, SymPosDef};
use common::{batch_se, iid_se, mean, random_spd};
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::ln_gamma;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn state(w: DMatrix<f64>, mu: DVector<f64>, s1: DMatrix<f64>, s2: DMatrix<f64>, z: DMatrix<f64>) -> ModelState {
    ModelState {
        w,
        mu,
        sigma: [SymPosDef::new(s1).unwrap(), SymPosDef::new(s2).unwrap()],
        z,
    }
}

fn random_instance(rng: &mut Rng, dims: [usize; 2], d: usize, n: usize) -> (ModelState, StackedData) {
    let dim = dims[0] + dims[1];
    let s = state(
        rng.normal_matrix(dim, d),
        rng.normal_vector(dim),
        random_spd(rng, dims[0], 2.0),
        random_spd(rng, dims[1], 2.0),
        rng.normal_matrix(d, n),
    );
    let data = StackedData::new(rng.normal_matrix(dim, n), dims).unwrap();
    (s, data)
}

#[test]
fn latent_conditional_matches_dense_gaussian_conditioning() {
    let mut rng = Rng::new(41, 0);
    let (s, data) = random_instance(&mut rng, [2, 2], 2, 7);
    let cond = z_conditional(&s).unwrap();

    let sxx = &s.w * s.w.transpose() + s.sigma_full();
    let gain = s.w.transpose() * sxx.try_inverse().unwrap();
    let cov = DMatrix::identity(2, 2) - &gain * &s.w;
    assert!((cond.cov.matrix() - &cov).amax() < 1e-10);
    let means = cond.means(data.x());
    for n in 0..data.n() {
        let expected = &gain * (data.x().column(n) - &s.mu);
        assert!((means.column(n) - expected).amax() < 1e-10);
    }
}

#[test]
fn latent_conditional_identity_case() {
    let s = state(
        DMatrix::identity(2, 2),
        DVector::zeros(2),
        DMatrix::identity(1, 1),
        DMatrix::identity(1, 1),
        DMatrix::zeros(2, 1),
    );
    let cond = z_conditional(&s).unwrap();
    assert!((cond.cov.matrix() - DMatrix::identity(2, 2) * 0.5).amax() < 1e-15);
    let x = DMatrix::from_column_slice(2, 1, &[3.0, -1.0]);
    assert!((cond.means(&x) - &x * 0.5).amax() < 1e-15);
}

#[test]
fn noise_conditional_without_signal_is_the_prior_update() {
    let (n, nu0) = (5, 4.0);
    let k0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
    let mut priors = default_priors(2, 2, 1).unwrap();
    priors.k0 = [SymPosDef::new(k0.clone()).unwrap(), SymPosDef::new(k0.clone()).unwrap()];
    priors.nu0 = [nu0, nu0];
    let data = StackedData::new(DMatrix::zeros(4, n), [2, 2]).unwrap();
    let mut s = state(
        DMatrix::zeros(4, 1),
        DVector::zeros(4),
        DMatrix::identity(2, 2),
        DMatrix::identity(2, 2),
        DMatrix::zeros(1, n),
    );
    let stats = LatentStats::new(&data, &s.z);
    for (scale, dof) in sigma_conditional(&s, &data, &stats, &priors).unwrap() {
        assert_eq!(scale.matrix(), &k0);
        assert_eq!(dof, nu0 + n as f64);
    }

    let mut rng = Rng::new(42, 0);
    let draws: Vec<DMatrix<f64>> = (0..10_000)
        .map(|_| {
            update_sigma(&mut s, &data, &priors, &mut rng).unwrap();
            s.sigma[0].matrix().clone()
        })
        .collect();
    let expected = &k0 / (nu0 + n as f64 - 3.0);
    for r in 0..2 {
        for c in 0..2 {
            let x: Vec<f64> = draws.iter().map(|m| m[(r, c)]).collect();
            assert!((mean(&x) - expected[(r, c)]).abs() <= 3.0 * iid_se(&x), "({r},{c})");
        }
    }
}

#[test]
fn scalar_views_follow_inverse_gamma_conjugacy() {
    let mut rng = Rng::new(43, 0);
    let (s, data) = random_instance(&mut rng, [1, 1], 1, 9);
    let priors = default_priors(1, 1, 1).unwrap();
    let stats = LatentStats::new(&data, &s.z);
    let cond = sigma_conditional(&s, &data, &stats, &priors).unwrap();
    for (m, (scale, dof)) in cond.iter().enumerate() {
        let ss: f64 = (0..data.n())
            .map(|n| (data.x()[(m, n)] - s.mu[m] - (s.w.row(m) * s.z.column(n))[0]).powi(2))
            .sum();
        assert!((scale.matrix()[(0, 0)] - (100.0 + ss)).abs() < 1e-10 * (100.0 + ss));
        assert_eq!(*dof, 3.0 + 9.0);
    }
}

#[test]
fn noise_scale_grows_linearly_with_copies() {
    let mut rng = Rng::new(44, 0);
    let (s, data) = random_instance(&mut rng, [2, 1], 1, 6);
    let priors = default_priors(2, 1, 1).unwrap();
    let twice = StackedData::new(
        DMatrix::from_fn(3, 12, |r, c| data.x()[(r, c % 6)]),
        [2, 1],
    )
    .unwrap();
    let z2 = DMatrix::from_fn(1, 12, |r, c| s.z[(r, c % 6)]);
    let s2 = ModelState { z: z2, ..s.clone() };
    let one = sigma_conditional(&s, &data, &LatentStats::new(&data, &s.z), &priors).unwrap();
    let two = sigma_conditional(&s2, &twice, &LatentStats::new(&twice, &s2.z), &priors).unwrap();
    for m in 0..2 {
        let k0 = priors.k0[m].matrix();
        let a = one[m].0.matrix() - k0;
        let b = two[m].0.matrix() - k0;
        assert!((b - a * 2.0).amax() < 1e-10);
    }
}

#[test]
fn offset_conditional_with_exact_fit() {
    let mut rng = Rng::new(45, 0);
    let w = rng.normal_matrix(3, 2);
    let z = rng.normal_matrix(2, 8);
    let sigma1 = random_spd(&mut rng, 2, 1.0);
    let s = state(w.clone(), rng.normal_vector(3), sigma1, DMatrix::from_element(1, 1, 0.7), z.clone());
    let data = StackedData::new(&w * &z, [2, 1]).unwrap();
    let priors = default_priors(2, 1, 2).unwrap();
    let cond = mu_conditional(&s, &data, &LatentStats::new(&data, &z), &priors).unwrap();
    assert!(cond.mean.amax() < 1e-12);
    let expected = (s.precision_full() * 8.0 + DMatrix::identity(3, 3)).try_inverse().unwrap();
    assert!((cond.cov.matrix() - expected).amax() < 1e-12);
}

#[test]
fn offset_conditional_tracks_sample_mean() {
    let n = 10_000;
    let mut rng = Rng::new(46, 0);
    let w = rng.normal_matrix(2, 1);
    let z = rng.normal_matrix(1, n);
    let truth = DVector::from_vec(vec![1.5, -0.5]);
    let mut x = &w * &z + rng.normal_matrix(2, n);
    for mut c in x.column_iter_mut() {
        c += &truth;
    }
    let data = StackedData::new(x, [1, 1]).unwrap();
    let s = state(w.clone(), DVector::zeros(2), DMatrix::identity(1, 1), DMatrix::identity(1, 1), z.clone());
    let priors = default_priors(1, 1, 1).unwrap();
    let cond = mu_conditional(&s, &data, &LatentStats::new(&data, &z), &priors).unwrap();
    let sample_mean = (data.sum() - &w * z.column_sum()) / n as f64;
    let se = 1.0 / (n as f64).sqrt();
    assert!((&cond.mean - sample_mean).amax() < 3.0 * se);
    assert!((&cond.mean - truth).amax() < 3.0 * se);
}

#[test]
fn weight_column_is_bayesian_linear_regression() {
    let mut rng = Rng::new(47, 0);
    let (mut s, data) = random_instance(&mut rng, [1, 2], 1, 11);
    s.sigma = [SymPosDef::identity(1), SymPosDef::identity(2)];
    let priors = default_priors(1, 2, 1).unwrap();
    let cond = w_conditional(&s, &LatentStats::new(&data, &s.z), &priors, 0).unwrap();
    let zz: f64 = s.z.iter().map(|v| v * v).sum();
    let mut target = DVector::zeros(3);
    for n in 0..11 {
        target += (data.x().column(n) - &s.mu) * s.z[(0, n)];
    }
    assert!((&cond.mean - target / (zz + 1.0)).amax() < 1e-12);
    assert!((cond.cov.matrix() - DMatrix::identity(3, 3) / (zz + 1.0)).amax() < 1e-12);
}

#[test]
fn weight_columns_recover_planted_loadings() {
    let n = 10_000;
    let mut rng = Rng::new(48, 0);
    let q = rng.normal_matrix(n, 2).qr().q();
    let z = q.transpose() * (n as f64).sqrt();
    let w0 = rng.normal_matrix(3, 2);
    let data = StackedData::new(&w0 * &z, [1, 2]).unwrap();
    let s = state(w0.clone(), DVector::zeros(3), DMatrix::identity(1, 1), DMatrix::identity(2, 2), z.clone());
    let priors = default_priors(1, 2, 2).unwrap();
    let stats = LatentStats::new(&data, &z);
    for i in 0..2 {
        let cond = w_conditional(&s, &stats, &priors, i).unwrap();
        for r in 0..3 {
            let sd = cond.cov.matrix()[(r, r)].sqrt();
            assert!((cond.mean[r] - w0[(r, i)]).abs() < 3.0 * sd);
        }
    }
}

#[test]
fn weight_conditional_mean_is_a_local_maximum_of_the_joint() {
    let mut rng = Rng::new(49, 0);
    let (mut s, data) = random_instance(&mut rng, [2, 2], 2, 15);
    let priors = default_priors(2, 2, 2).unwrap();
    let cond = w_conditional(&s, &LatentStats::new(&data, &s.z), &priors, 1).unwrap();
    s.w.set_column(1, &cond.mean);
    let at_mean = log_joint(&s, &data, &priors).unwrap();
    for r in 0..4 {
        for eps in [-1e-3, 1e-3] {
            let mut p = s.clone();
            p.w[(r, 1)] += eps;
            assert!(log_joint(&p, &data, &priors).unwrap() < at_mean);
        }
    }
}

fn scalar_inverse_gamma_log_pdf(x: f64, k: f64, nu: f64) -> f64 {
    let (a, b) = (nu / 2.0, k / 2.0);
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

#[test]
fn log_joint_at_prior_means_by_hand() {
    let priors = default_priors(1, 1, 1).unwrap();
    let sigma = 100.0 / (3.0 - 2.0);
    let s = state(
        DMatrix::zeros(2, 1),
        DVector::zeros(2),
        DMatrix::from_element(1, 1, sigma),
        DMatrix::from_element(1, 1, sigma),
        DMatrix::zeros(1, 1),
    );
    let data = StackedData::new(DMatrix::zeros(2, 1), [1, 1]).unwrap();
    let lik = 2.0 * (-0.5 * (LN_2PI + sigma.ln()));
    let hand = lik - 0.5 * LN_2PI - LN_2PI - LN_2PI + 2.0 * scalar_inverse_gamma_log_pdf(sigma, 100.0, 3.0);
    let lj = log_joint(&s, &data, &priors).unwrap();
    assert!((lj - hand).abs() < 1e-12 * hand.abs(), "{lj} vs {hand}");
}

fn parameter_prior(s: &ModelState, priors: &PriorHyper) -> f64 {
    let mut p = mvn_log_pdf(&s.mu, &priors.mu_mean, &priors.mu_cov);
    for i in 0..s.latent_dim() {
        p += mvn_log_pdf(&s.w.column(i).into_owned(), &priors.w_mean, &priors.w_cov);
    }
    p + (0..2)
        .map(|m| inverse_wishart_log_pdf(&s.sigma[m], &priors.k0[m], priors.nu0[m]))
        .sum::<f64>()
}

#[test]
fn log_joint_is_additive_over_copied_columns() {
    let mut rng = Rng::new(50, 0);
    let (s, data) = random_instance(&mut rng, [2, 1], 2, 5);
    let priors = default_priors(2, 1, 2).unwrap();
    let once = log_joint(&s, &data, &priors).unwrap();
    let copied = StackedData::new(DMatrix::from_fn(3, 10, |r, c| data.x()[(r, c % 5)]), [2, 1]).unwrap();
    let s2 = ModelState {
        z: DMatrix::from_fn(2, 10, |r, c| s.z[(r, c % 5)]),
        ..s.clone()
    };
    let twice = log_joint(&s2, &copied, &priors).unwrap();
    let p = parameter_prior(&s, &priors);
    assert!(((twice - p) - 2.0 * (once - p)).abs() < 1e-10 * twice.abs());
}

/// Forward prior draws against the successive-conditional simulator that
/// alternates a Gibbs sweep with a fresh data draw.
#[test]
fn getting_it_right() {
    let n = 5;
    let mut priors = default_priors(1, 1, 1).unwrap();
    priors.nu0 = [20.0, 20.0];
    priors.k0 = [SymPosDef::scaled_identity(1, 18.0).unwrap(), SymPosDef::scaled_identity(1, 18.0).unwrap()];

    let stats = |s: &ModelState| [s.sigma[0].matrix()[(0, 0)], s.sigma[1].matrix()[(0, 0)], s.mu[0], s.mu[1], s.w[(0, 0)], s.w[(1, 0)]];
    let refresh = |s: &ModelState, rng: &mut Rng| {
        let sd = [s.sigma[0].matrix()[(0, 0)].sqrt(), s.sigma[1].matrix()[(0, 0)].sqrt()];
        let mut x = &s.w * &s.z;
        for c in 0..n {
            for r in 0..2 {
                x[(r, c)] += s.mu[r] + sd[r] * rng.normal();
            }
        }
        StackedData::new(x, [1, 1]).unwrap()
    };

    let forward_draws = 100_000;
    let mut rng = Rng::new(51, 0);
    let forward: Vec<[f64; 6]> = (0..forward_draws)
        .map(|_| stats(&prior_state(&priors, n, &mut rng).unwrap()))
        .collect();

    let sweeps = 200_000;
    let mut rng = Rng::new(51, 1);
    let mut s = prior_state(&priors, n, &mut rng).unwrap();
    let mut data = refresh(&s, &mut rng);
    let mut chain = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        sweep(&mut s, &data, &priors, &mut rng).unwrap();
        data = refresh(&s, &mut rng);
        chain.push(stats(&s));
    }

    let names = ["sigma1", "sigma2", "mu1", "mu2", "w1", "w2"];
    for (k, name) in names.iter().enumerate() {
        for power in [1, 2] {
            let f: Vec<f64> = forward.iter().map(|v| v[k].powi(power)).collect();
            let g: Vec<f64> = chain.iter().map(|v| v[k].powi(power)).collect();
            let se = (iid_se(&f).powi(2) + batch_se(&g, 100).powi(2)).sqrt();
            let diff = (mean(&f) - mean(&g)).abs();
            assert!(diff < 3.0 * se, "{name}^{power}: forward {} gibbs {} (se {se})", mean(&f), mean(&g));
        }
    }
}
