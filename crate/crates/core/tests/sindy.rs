use latentode::signal::{Series, SgConfig};
use latentode::sindy::{self, SindyModel};
use latentode::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stlsq_recovers_exact_sparse_combinations(
        z in prop::collection::vec(-2.0..2.0f64, 40..80),
        c in prop::array::uniform4(0.5..3.0f64),
        mask in prop::array::uniform4(any::<bool>()),
        signs in prop::array::uniform4(any::<bool>()),
    ) {
        let truth: Vec<f64> = (0..4)
            .map(|j| if mask[j] { if signs[j] { c[j] } else { -c[j] } } else { 0.0 })
            .collect();
        let theta = sindy::build_library(&z, 3).unwrap();
        let dzdt: Vec<f64> = (0..z.len())
            .map(|t| theta.row(t).iter().zip(&truth).map(|(a, b)| a * b).sum())
            .collect();
        let fit = sindy::stlsq(&theta, &dzdt, 0.1, 20).unwrap();
        for (got, want) in fit.coefficients.iter().zip(&truth) {
            prop_assert!((got - want).abs() < 1e-8, "{:?} vs {:?}", fit.coefficients, truth);
        }
    }

    #[test]
    fn surviving_coefficients_clear_the_threshold(
        z in prop::collection::vec(-1.0..1.0f64, 30..60),
        y in prop::collection::vec(-1.0..1.0f64, 60),
        threshold in 0.01..1.0f64,
    ) {
        let theta = sindy::build_library(&z, 3).unwrap();
        let fit = sindy::stlsq(&theta, &y[..z.len()], threshold, 20).unwrap();
        for &c in &fit.coefficients {
            prop_assert!(c == 0.0 || c.abs() >= threshold);
        }
    }

    #[test]
    fn rhs_matches_library_row(z in -3.0..3.0f64, c in prop::collection::vec(-2.0..2.0f64, 2..6)) {
        let model = SindyModel::new(c.clone(), 0.0).unwrap();
        let row = sindy::build_library(&[z], c.len() - 1).unwrap();
        let direct: f64 = row.row(0).iter().zip(&c).map(|(a, b)| a * b).sum();
        prop_assert!((model.rhs(z) - direct).abs() < 1e-10 * (1.0 + direct.abs()));
    }
}

#[test]
fn library_columns_are_ascending_powers() {
    let theta = sindy::build_library(&[2.0, -1.0], 3).unwrap();
    assert_eq!(theta, Matrix::from_rows(&[vec![1.0, 2.0, 4.0, 8.0], vec![1.0, -1.0, 1.0, -1.0]]).unwrap());
    assert!(sindy::build_library(&[1.0], 0).is_err());
}

#[test]
fn rank_deficient_library_is_flagged() {
    let theta = sindy::build_library(&[1.0; 10], 2).unwrap();
    let fit = sindy::stlsq(&theta, &[2.0; 10], 0.1, 10).unwrap();
    assert!(fit.rank_deficient);
    let pred: f64 = fit.coefficients.iter().sum();
    assert!((pred - 2.0).abs() < 1e-10);
}

#[test]
fn integration_flags_blow_up() {
    let model = SindyModel::new(vec![0.0, 0.0, 1.0], 0.0).unwrap();
    let sol = sindy::integrate(&model, 1.0, 0.01, 500).unwrap();
    assert!(sol.diverged);
    assert!(sol.z.len() < 501 && sol.z.iter().all(|v| v.is_finite()));
}

#[test]
fn logistic_growth_matches_closed_form() {
    let model = SindyModel::new(vec![0.0, 1.0, -1.0], 0.0).unwrap();
    let sol = sindy::integrate(&model, 0.1, 0.01, 300).unwrap();
    for (k, z) in sol.z.iter().enumerate() {
        let t = k as f64 * 0.01;
        let exact = 1.0 / (1.0 + 9.0 * (-t).exp());
        assert!((z - exact).abs() < 1e-9);
    }
}

#[test]
fn model_text_and_json_round_trip() {
    let model = SindyModel::new(vec![-3.266, 0.0, -1.232, 0.0], 0.1).unwrap();
    assert_eq!(sindy::model_to_text(&model), "dz/dt = -3.266 - 1.232 z^2");
    let back = SindyModel::from_json(&model.to_json().unwrap()).unwrap();
    assert_eq!(back, model);
    assert_eq!(sindy::model_to_text(&SindyModel::new(vec![0.0, 0.0], 0.1).unwrap()), "dz/dt = 0");
}

#[test]
fn series_shorter_than_window_is_rejected() {
    let z = Series::with_dt(vec![0.0; 30], 0.01);
    assert!(sindy::discover(&z, &SgConfig { window: 51, order: 1 }, 3, 0.1).is_err());
}

/// The quadratic reference equation over a horizon where it stays finite:
/// 500 samples at dt = 0.001 take z from 1 down to about -0.79.
#[test]
fn sindy_feasible_horizon() {
    let truth = SindyModel::new(vec![-3.266, 0.0, -1.232, 0.0], 0.0).unwrap();
    let dt = 0.001;
    let clean = sindy::integrate(&truth, 1.0, dt, 499).unwrap();
    assert!(!clean.diverged && clean.z.len() == 500);

    let fit = sindy::discover(&Series::with_dt(clean.z.clone(), dt), &SgConfig::identity(), 3, 0.1).unwrap();
    let c = &fit.coefficients;
    assert_eq!((c[1], c[3]), (0.0, 0.0), "spurious terms in {c:?}");
    assert!(((c[0] + 3.266) / 3.266).abs() < 0.05, "{c:?}");
    assert!(((c[2] + 1.232) / 1.232).abs() < 0.05, "{c:?}");

    // With noise the constant stays tight while z^2 trades off against small
    // odd terms over this short range; the recovered dynamics still track.
    let noise = Normal::new(0.0, 0.01).unwrap();
    for seed in 0..12 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy: Vec<f64> = clean.z.iter().map(|z| z + noise.sample(&mut rng)).collect();
        let fit = sindy::discover(&Series::with_dt(noisy, dt), &SgConfig { window: 51, order: 1 }, 3, 0.1).unwrap();
        let c = &fit.coefficients;
        assert!(((c[0] + 3.266) / 3.266).abs() < 0.05, "seed {seed}: {c:?}");
        assert!(((c[2] + 1.232) / 1.232).abs() < 0.2, "seed {seed}: {c:?}");
        let replay = sindy::integrate(&fit, 1.0, dt, 499).unwrap();
        let worst = replay.z.iter().zip(&clean.z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 0.02, "seed {seed}: trajectory off by {worst}");
    }
}
