//! The whole discovery workflow with the default configuration: simulate,
//! scale, train, discover, extrapolate, validate, score and repair.
//!
//! cargo run --release --example full_pipeline [out_dir] [seed]
//!
//! Takes about a minute and a half on one core.

use latentode::pipeline::{self, RunConfig};

fn main() {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "out/full_pipeline".into());
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));
    let cfg = RunConfig::default().with_seed(seed);

    let run = match pipeline::run_discovery(&cfg, &out) {
        Ok(run) => run,
        Err(e) => {
            eprintln!("run failed: {e}");
            std::process::exit(e.exit_code());
        }
    };
    let m = &run.metrics;
    println!("artifacts in {out} (config hash {})", m.config_hash);
    println!("discovered   {}", m.model_text);
    println!("recon mse    {:.5}", m.recon_mse);
    println!(
        "extrapolated {} steps: pearson {:.4}, rmse {:.4}{}",
        cfg.horizons.extrapolate,
        m.pearson,
        m.rmse,
        if m.sign_flipped { " (latent sign flipped)" } else { "" }
    );
    println!("anomaly flags on the long latent: {}", m.anomaly_flags);
    if let (Some(own), Some(fixed)) = (m.repair_mse_own, m.repair_mse_repaired) {
        println!("premature decoder: own latent {own:.5}, solved latent {fixed:.5}");
    }
}
