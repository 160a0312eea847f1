use bayssi_core::gibbs::z_conditional;
use bayssi_core::io::fmt_f64;
use bayssi_core::model::block_diag;
use bayssi_core::subspace::{build_hankel, mac, normalize_shape, realization_from_observability};
use bayssi_core::vb::{elbo, initial_posterior, vb_sweep};
use bayssi_core::{
    default_priors, welch_psd, GibbsConfig, ModelState, Rng, StackedData, SymPosDef, TimeSeries, WelchParams,
};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;

fn spd(rng: &mut Rng, n: usize) -> DMatrix<f64> {
    let a = rng.normal_matrix(n, n);
    &a * a.transpose() + DMatrix::identity(n, n)
}

fn complex_vec(rng: &mut Rng, n: usize) -> DVector<Complex64> {
    DVector::from_fn(n, |_, _| Complex64::new(rng.normal(), rng.normal()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn float_text_round_trips(bits in any::<u64>()) {
        let v = f64::from_bits(bits);
        prop_assume!(v.is_finite());
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn mac_is_bounded_symmetric_and_scale_free(seed in any::<u64>(), n in 1usize..8, re in -5.0f64..5.0, im in -5.0f64..5.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let mut rng = Rng::new(seed, 0);
        let (a, b) = (complex_vec(&mut rng, n), complex_vec(&mut rng, n));
        let v = mac(&a, &b);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
        prop_assert!((v - mac(&b, &a)).abs() < 1e-12);
        prop_assert!((v - mac(&(a.clone() * Complex64::new(re, im)), &b)).abs() < 1e-10);
        prop_assert!((mac(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_normalization_is_idempotent(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = Rng::new(seed, 0);
        let s = normalize_shape(&complex_vec(&mut rng, n));
        prop_assert!((s.norm() - 1.0).abs() < 1e-12);
        let k = s.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
        prop_assert!(s[k].im.abs() < 1e-12 && s[k].re > 0.0);
        prop_assert!((normalize_shape(&s) - &s).norm() < 1e-12);
    }

    #[test]
    fn retained_records_follow_the_floor_rule(n in 1usize..20_000, burn in 0.0f64..0.95, thin in 1usize..10) {
        let cfg = GibbsConfig { n_samples: n, burn_in_fraction: burn, thinning: thin, ..GibbsConfig::default() };
        let kept = n - cfg.burn_in();
        prop_assert_eq!(cfg.retained(), kept / thin);
        prop_assert!(kept as f64 <= n as f64 * (1.0 - burn) + 1e-6);
        prop_assert!(kept as f64 > n as f64 * (1.0 - burn) - 1.0);
    }

    #[test]
    fn hankel_rows_are_lagged_channels(seed in any::<u64>(), l in 1usize..4, j in 1usize..5, extra in 0usize..20) {
        let n = 2 * j * l + extra;
        let mut rng = Rng::new(seed, 0);
        let ts = TimeSeries::new(rng.normal_matrix(l, n), 1.0).unwrap();
        let hp = build_hankel(&ts, j, false).unwrap();
        prop_assert_eq!(hp.n_cols(), n - 2 * j + 1);
        for t in 0..hp.n_cols() {
            for b in 0..j {
                for c in 0..l {
                    prop_assert_eq!(hp.yp[(b * l + c, t)], ts.data()[(c, t + b)]);
                    prop_assert_eq!(hp.yf[(b * l + c, t)], ts.data()[(c, t + j + b)]);
                }
            }
        }
    }

    #[test]
    fn welch_density_is_nonnegative_on_the_nyquist_grid(seed in any::<u64>(), seg_pow in 4u32..9, overlap in 0.0f64..0.9, fs in 1.0f64..200.0) {
        let seg = 1usize << seg_pow;
        let mut rng = Rng::new(seed, 0);
        let ts = TimeSeries::new(rng.normal_matrix(2, 4 * seg), fs).unwrap();
        let w = welch_psd(&ts, &WelchParams { segment_len: seg, overlap }).unwrap();
        prop_assert!(w.psd.iter().all(|v| *v >= 0.0));
        prop_assert_eq!(w.frequencies[0], 0.0);
        prop_assert!((w.frequencies.last().unwrap() - fs / 2.0).abs() < 1e-9 * fs);
        for k in 0..w.sum.len() {
            prop_assert!((w.sum[k] - w.psd.column(k).sum()).abs() <= 1e-12 * w.sum[k].max(1e-300));
        }
    }

    #[test]
    fn spd_inverse_and_log_det(seed in any::<u64>(), n in 1usize..7) {
        let mut rng = Rng::new(seed, 0);
        let m = spd(&mut rng, n);
        let s = SymPosDef::new(m.clone()).unwrap();
        prop_assert!((&m * s.inverse() - DMatrix::identity(n, n)).amax() < 1e-8);
        let ld: f64 = m.clone().symmetric_eigen().eigenvalues.iter().map(|v| v.ln()).sum();
        prop_assert!((s.log_det() - ld).abs() < 1e-9 * ld.abs().max(1.0));
    }

    #[test]
    fn block_diagonal_has_zero_off_blocks(seed in any::<u64>(), a in 1usize..5, b in 1usize..5) {
        let mut rng = Rng::new(seed, 0);
        let m = block_diag(&rng.normal_matrix(a, a), &rng.normal_matrix(b, b));
        prop_assert!(m.view((0, a), (a, b)).iter().all(|v| *v == 0.0));
        prop_assert!(m.view((a, 0), (b, a)).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn latent_covariance_is_contracted_identity(seed in any::<u64>(), d in 1usize..4) {
        let mut rng = Rng::new(seed, 0);
        let s = ModelState {
            w: rng.normal_matrix(5, d),
            mu: rng.normal_vector(5),
            sigma: [SymPosDef::new(spd(&mut rng, 3)).unwrap(), SymPosDef::new(spd(&mut rng, 2)).unwrap()],
            z: DMatrix::zeros(d, 1),
        };
        let eig = z_conditional(&s).unwrap().cov.matrix().clone().symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|v| *v > 0.0 && *v <= 1.0 + 1e-12));
    }

    #[test]
    fn shift_invariance_recovers_similar_state_matrices(seed in any::<u64>(), blocks in 3usize..6) {
        let mut rng = Rng::new(seed, 0);
        let a0 = rng.normal_matrix(3, 3);
        let radius = a0.clone().complex_eigenvalues().iter().fold(0.0f64, |m, v| m.max(v.norm()));
        let a0 = a0 / (radius + 0.5);
        let c0 = rng.normal_matrix(2, 3);
        let mut o = DMatrix::zeros(2 * blocks, 3);
        let mut cab = c0.clone();
        for b in 0..blocks {
            o.view_mut((2 * b, 0), (2, 3)).copy_from(&cab);
            cab = &cab * &a0;
        }
        let cond = o.rows(0, 2 * (blocks - 1)).into_owned().svd(false, false).singular_values;
        prop_assume!(cond.min() > 1e-3 * cond.max());
        let real = realization_from_observability(&o, 2).unwrap();
        prop_assert!((real.a.trace() - a0.trace()).abs() < 1e-7);
        prop_assert!((real.a.determinant() - a0.determinant()).abs() < 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_sweep_raises_the_bound(seed in any::<u64>(), n in 10usize..60) {
        let mut rng = Rng::new(seed, 0);
        let x = rng.normal_matrix(4, 2) * rng.normal_matrix(2, n) + rng.normal_matrix(4, n) * 0.5;
        let data = StackedData::new(x, [2, 2]).unwrap();
        let priors = default_priors(2, 2, 2).unwrap();
        let mut post = initial_posterior(&data, &priors, seed).unwrap();
        let mut prev = elbo(&post, &data, &priors).unwrap();
        for _ in 0..20 {
            vb_sweep(&mut post, &data, &priors, false).unwrap();
            let cur = elbo(&post, &data, &priors).unwrap();
            prop_assert!(cur >= prev - 1e-8 * prev.abs(), "{} -> {}", prev, cur);
            prev = cur;
        }
    }
}
