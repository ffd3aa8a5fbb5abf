//! Five elastic particles in a unit box: conservation bookkeeping and the
//! mean-square displacement of the resulting trajectories.
//!
//! cargo run --release --example simulate_box [n_steps] [out.csv]

use latentode::collisim::{self, SimConfig};
use latentode::signal;
use latentode::trajkit;

fn main() -> latentode::Result<()> {
    let mut args = std::env::args().skip(1);
    let n_steps = args.next().map_or(Ok(2000), |s| s.parse()).expect("n_steps must be an integer");
    let cfg = SimConfig {
        n_steps,
        speed_scale: 0.01,
        seed: 7,
        ..SimConfig::default()
    };
    let (traj, stats) = collisim::run_with_stats(&cfg)?;

    println!("{} frames of {} particles", traj.n_frames(), traj.n_particles());
    println!("pair collisions     {}", stats.collisions);
    println!("wall reflections    {}", stats.wall_reflections);
    println!("max momentum error  {:.2e}", stats.max_momentum_error);
    println!("max energy error    {:.2e}", stats.max_energy_error);
    println!("kinetic energy drift {:.2e}", stats.max_energy_drift);

    let msd = signal::mean_square_displacement(&traj);
    for t in (0..msd.len()).step_by((msd.len() / 8).max(1)) {
        println!("msd[{t:>5}] = {:.5}", msd.values[t]);
    }

    if let Some(path) = args.next() {
        trajkit::save_trajectories(&path, &traj, Some("simulate_box example"))?;
        println!("wrote {path}");
    }
    Ok(())
}
