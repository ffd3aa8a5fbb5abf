use std::fs;
use std::path::Path;

use latentode::collisim::SimConfig;
use latentode::lstmvae;
use latentode::pipeline::{self, AnomalyConfig, RunConfig, FAILED_MARKER};
use latentode::signal::{SgConfig, Series};
use latentode::sindy;
use latentode::{collisim, Error};

fn small_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.simulation.n_steps = 90;
    cfg.simulation.speed_scale = 0.002;
    cfg.horizons.train = 60;
    cfg.horizons.extrapolate = 90;
    cfg.train.epochs = 15;
    cfg.vae.encoder_hidden = 8;
    cfg.vae.decoder_hidden = 8;
    cfg.latent_filter = SgConfig { window: 11, order: 1 };
    cfg.density.grid_size = 16;
    cfg
}

fn stamp_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn run_writes_stamped_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(5);
    let run = pipeline::run_discovery(&cfg, dir.path()).unwrap();
    let expected_stamp = format!("# seed=5 config_hash={}", run.stamp.config_hash);

    for name in [
        "config.toml",
        "data.csv",
        "scaled.csv",
        "loss_history.csv",
        "latent.csv",
        "model.txt",
        "solution_train.csv",
        "solution_extrapolate.csv",
        "latent_long.csv",
        "anomaly.csv",
        "repaired.csv",
        "density_0.csv",
        "density_89.csv",
    ] {
        assert_eq!(stamp_line(&dir.path().join(name)), expected_stamp, "{name}");
    }
    for name in ["scaler.json", "vae.json", "vae_long.json", "sindy.json", "validation.json", "density.json", "metrics.json"] {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
        assert_eq!(v["seed"], 5, "{name}");
        assert_eq!(v["config_hash"], run.stamp.config_hash.as_str(), "{name}");
    }
    assert!(!dir.path().join(FAILED_MARKER).exists());

    let metrics: pipeline::Metrics =
        serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics, run.metrics);
    assert!(metrics.recon_mse.is_finite());

    let saved = RunConfig::load(dir.path().join("config.toml")).unwrap();
    assert_eq!(saved.hash().unwrap(), run.stamp.config_hash);
    assert_eq!(saved.vae.input_size, 10);
}

#[test]
fn failure_leaves_a_marker_and_success_clears_it() {
    let dir = tempfile::tempdir().unwrap();
    let mut bad = small_config(0);
    bad.vae.input_size = 7;
    let err = pipeline::run_discovery(&bad, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert_eq!(err.exit_code(), 1);
    let marker = fs::read_to_string(dir.path().join(FAILED_MARKER)).unwrap();
    assert!(marker.contains("input_size"));

    let mut cfg = small_config(0);
    cfg.repair.enabled = false;
    pipeline::run_discovery(&cfg, dir.path()).unwrap();
    assert!(!dir.path().join(FAILED_MARKER).exists());
}

#[test]
fn equal_horizons_reuse_the_training_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1);
    cfg.horizons.extrapolate = 60;
    cfg.repair.enabled = false;
    let run = pipeline::run_discovery(&cfg, dir.path()).unwrap();
    assert!(!dir.path().join("vae_long.json").exists());
    assert!(!dir.path().join("repaired.csv").exists());
    assert_eq!(run.long_latent.z, run.trained.latent.z);
    assert_eq!(run.metrics.repair_mse_own, None);
}

#[test]
fn config_validation_catches_inconsistent_horizons() {
    let mut cfg = small_config(0);
    cfg.horizons.extrapolate = 50;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    let mut cfg = small_config(0);
    cfg.simulation.n_steps = 80;
    assert!(cfg.validate().is_err());
    let mut cfg = small_config(0);
    cfg.horizons.train = 11;
    assert!(cfg.validate().is_err(), "training horizon must exceed the latent filter window");
}

#[test]
fn hash_tracks_content_but_not_output_location() {
    let a = small_config(0);
    let mut b = a.clone();
    b.out_dir = Some("elsewhere".into());
    assert_eq!(a.hash().unwrap(), b.hash().unwrap());
    assert_ne!(a.hash().unwrap(), small_config(1).hash().unwrap());
    let reparsed = RunConfig::from_toml_str(&a.to_toml().unwrap()).unwrap();
    assert_eq!(reparsed, a);
}

#[test]
fn model_solutions_score_as_normal() {
    let model = sindy::SindyModel::new(vec![0.4, -1.0, 0.0, -0.2], 0.1).unwrap();
    let filter = SgConfig { window: 21, order: 2 };
    for (z0, dt) in [(-1.0, 0.01), (2.0, 0.005), (0.0, 0.02)] {
        let sol = sindy::integrate(&model, z0, dt, 400).unwrap();
        let report =
            pipeline::anomaly_score(&Series::with_dt(sol.z, dt), &model, &filter, &AnomalyConfig::default()).unwrap();
        assert!(report.flags.is_empty(), "z0 {z0}: flags {:?}", report.flags);
        assert_eq!(report.scored, 11..390);
    }
}

#[test]
fn a_wrong_model_scores_worse_than_the_right_one() {
    let truth = sindy::SindyModel::new(vec![0.0, -1.0], 0.0).unwrap();
    let wrong = sindy::SindyModel::new(vec![0.0, -2.0], 0.0).unwrap();
    let z = Series::with_dt(sindy::integrate(&truth, 1.0, 0.01, 200).unwrap().z, 0.01);
    let filter = SgConfig { window: 11, order: 2 };
    let cfg = AnomalyConfig::default();
    let good = pipeline::anomaly_score(&z, &truth, &filter, &cfg).unwrap();
    let bad = pipeline::anomaly_score(&z, &wrong, &filter, &cfg).unwrap();
    let total = |r: &pipeline::AnomalyReport| r.residual[r.scored.clone()].iter().sum::<f64>();
    assert!(total(&bad) > 100.0 * total(&good));
}

#[test]
fn repair_decodes_the_solved_latent() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(2);
    cfg.repair.enabled = false;
    let run = pipeline::run_discovery(&cfg, dir.path()).unwrap();
    let z0 = run.latent_filtered[0];
    let r = pipeline::repair_states(&run.model, &run.trained.params, z0, 40, cfg.sindy.dt, run.scaler.as_ref(), 1.0)
        .unwrap();
    let sol = sindy::integrate(&run.model, z0, cfg.sindy.dt, 39).unwrap();
    assert_eq!(r.solution, sol);
    assert_eq!(r.scaled, lstmvae::decode(&run.trained.params, &sol.z).unwrap());
    if !r.diverged {
        assert_eq!(r.states.n_frames(), 40);
    }
    assert!(pipeline::repair_states(&run.model, &run.trained.params, f64::NAN, 5, 0.01, None, 1.0).is_err());
}

#[test]
fn density_spreads_out_from_a_clustered_start() {
    let t = collisim::run(&SimConfig {
        n_particles: 12,
        radius: 0.02,
        spawn_fraction: 0.2,
        speed_scale: 0.004,
        n_steps: 300,
        seed: 3,
        ..SimConfig::default()
    })
    .unwrap();
    let cfg = pipeline::DensityConfig {
        grid_size: 48,
        ..Default::default()
    };
    let report = pipeline::density_report(&t, &[0, 299], &cfg).unwrap();
    assert!(report[0].peak > 2.0 * report[1].peak, "{} vs {}", report[0].peak, report[1].peak);
    assert!(pipeline::density_report(&t, &[300], &cfg).is_err());
}

#[test]
fn latent_comparison_handles_sign_and_length() {
    let a: Vec<f64> = (0..50).map(|t| (t as f64 * 0.1).sin()).collect();
    let flipped: Vec<f64> = a.iter().map(|v| -v).collect();
    let v = pipeline::compare_latents(&flipped, &a[..40]).unwrap();
    assert!(v.sign_flipped);
    assert_eq!(v.samples, 40);
    assert!((v.pearson - 1.0).abs() < 1e-12 && v.rmse < 1e-12);
}
