//! Train the LSTM VAE on scaled particle positions and inspect the learned
//! one-dimensional latent.
//!
//! cargo run --release --example train_lstm_vae [epochs]

use latentode::collisim::{self, SimConfig};
use latentode::lstmvae::{self, TrainConfig, VaeArch};
use latentode::trajkit;

fn main() -> latentode::Result<()> {
    let epochs = std::env::args().nth(1).map_or(Ok(300), |s| s.parse()).expect("epochs must be an integer");
    let sim = collisim::run(&SimConfig {
        n_steps: 300,
        speed_scale: 0.0005,
        spawn_fraction: 0.3,
        seed: 2,
        ..SimConfig::default()
    })?;
    let (scaled, _) = trajkit::minmax_scale(&sim)?;

    let arch = VaeArch::new(scaled.features.cols(), 1, 32);
    let cfg = TrainConfig {
        epochs,
        learning_rate: 1e-2,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = lstmvae::train(&arch, &scaled, &cfg)?;
    println!("{} parameters", out.params.n_parameters());
    for h in out.history.iter().step_by((epochs / 6).max(1)) {
        println!("epoch {:>4}  recon {:.5}  kl {:.4}", h.epoch, h.recon, h.kl);
    }

    let decoded = lstmvae::decode(&out.params, &out.latent.mu)?;
    println!("reconstruction mse from mu: {:.5}", lstmvae::mse(&decoded, &scaled.features)?);
    let z = &out.latent.mu;
    let (lo, hi) = z.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    println!("latent mu spans [{lo:.3}, {hi:.3}], first {:.3}, last {:.3}", z[0], z[z.len() - 1]);
    Ok(())
}
