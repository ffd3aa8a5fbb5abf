//! Ingest a long-format trajectory CSV (`frame,id,x,y`), smooth each
//! coordinate and min-max scale the features.
//!
//! cargo run --release --example preprocess_csv [tracks.csv]
//!
//! Without an argument a small noisy track set is generated in memory.

use latentode::trajkit::{self, CsvFormat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_csv() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut csv = String::from("frame,id,x,y\n");
    for frame in 0..120 {
        let t = frame as f64 / 30.0;
        for (id, phase) in [("ant-a", 0.0), ("ant-b", 2.0), ("ant-c", 4.0)] {
            let x = 50.0 + 30.0 * (t + phase).cos() + rng.random_range(-1.0..1.0);
            let y = 40.0 + 20.0 * (0.5 * t + phase).sin() + rng.random_range(-1.0..1.0);
            csv.push_str(&format!("{frame},{id},{x:.3},{y:.3}\n"));
        }
    }
    csv
}

fn main() -> latentode::Result<()> {
    let raw = match std::env::args().nth(1) {
        Some(path) => trajkit::load_trajectories(path, CsvFormat::Auto)?,
        None => trajkit::read_trajectories(synthetic_csv().as_bytes(), CsvFormat::Long)?,
    };
    println!(
        "{} frames, particles {:?}, frames start at {}",
        raw.n_frames(),
        raw.particle_ids,
        raw.start_frame
    );

    let smooth = trajkit::smooth_trajectories(&raw, 31, 2)?;
    let jitter = raw.features.max_abs_diff(&smooth.features);
    println!("largest correction from SG(31, 2) smoothing: {jitter:.3}");

    let (scaled, params) = trajkit::minmax_scale(&smooth)?;
    for (k, id) in scaled.particle_ids.iter().enumerate() {
        println!(
            "{id}: x in [{:.2}, {:.2}], y in [{:.2}, {:.2}]",
            params.min[2 * k],
            params.max[2 * k],
            params.min[2 * k + 1],
            params.max[2 * k + 1]
        );
    }
    let mut wide = Vec::new();
    trajkit::write_wide(&mut wide, &scaled.head(3)?, None)?;
    print!("first scaled rows:\n{}", String::from_utf8_lossy(&wide));
    Ok(())
}
