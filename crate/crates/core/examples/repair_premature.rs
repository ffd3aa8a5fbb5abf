//! Premature-stop experiment: a model stopped at 30% of its epoch budget
//! decodes its own latent poorly; decoding the solved latent of the
//! discovered equation instead brings the reconstruction closer.
//!
//! cargo run --release --example repair_premature [seed]

use latentode::pipeline::{self, RunConfig};

fn main() -> latentode::Result<()> {
    let seed = std::env::args().nth(1).map_or(1, |s| s.parse().expect("seed must be an integer"));
    let mut cfg = RunConfig::default().with_seed(seed);
    cfg.train.epochs = 150;
    cfg.train.learning_rate = 1e-3;
    cfg.density.frames = vec![0];

    let dir = std::env::temp_dir().join(format!("latentode-repair-{seed}"));
    let run = pipeline::run_discovery(&cfg, &dir)?;
    println!("equation   {}", run.metrics.model_text);
    println!("validation pearson {:.3}", run.metrics.pearson);
    let p = run.premature.as_ref().expect("repair is enabled");
    println!("premature model trained for {} of {} epochs", p.epochs, cfg.train.epochs);
    println!("  own latent decode    mse {:.5}", p.mse_own);
    println!("  solved latent decode mse {:.5}", p.mse_repaired);
    if run.metrics.pearson <= 0.9 {
        println!("the equation did not validate on this seed; repair is not expected to help");
    }
    Ok(())
}
