//! Kernel density of agent positions as a tight cluster spreads through
//! the box.

use latentode::collisim::{self, SimConfig};
use latentode::pipeline::{self, DensityConfig};
use latentode::signal;

fn main() -> latentode::Result<()> {
    let traj = collisim::run(&SimConfig {
        n_particles: 12,
        radius: 0.02,
        spawn_fraction: 0.2,
        speed_scale: 0.004,
        n_steps: 600,
        seed: 3,
        ..SimConfig::default()
    })?;
    let frames = [0, 50, 150, 300, 599];
    let report = pipeline::density_report(&traj, &frames, &DensityConfig::default())?;
    let msd = signal::mean_square_displacement(&traj);
    for d in &report {
        println!(
            "frame {:>3}: peak density {:>7.2}, bandwidth {:.3}, msd {:.4}",
            d.frame, d.peak, d.bandwidth, msd.values[d.frame]
        );
    }
    Ok(())
}
