//! Score a latent against its governing equation. The clean latent stays
//! quiet; a step fault injected part-way through is flagged.

use latentode::pipeline::{self, AnomalyConfig};
use latentode::signal::{Series, SgConfig};
use latentode::sindy::{self, SindyModel};

fn main() -> latentode::Result<()> {
    let model = SindyModel::new(vec![1.0, -0.5, 0.0, -0.3], 0.0)?;
    let dt = 0.01;
    let clean = sindy::integrate(&model, -1.5, dt, 599)?.z;
    let filter = SgConfig { window: 51, order: 1 };
    let cfg = AnomalyConfig {
        baseline: Some(300),
        ..AnomalyConfig::default()
    };

    let quiet = pipeline::anomaly_score(&Series::with_dt(clean.clone(), dt), &model, &filter, &cfg)?;
    println!(
        "clean: {} flags, scored samples {:?}, baseline residual {:.2e}",
        quiet.flags.len(),
        quiet.scored,
        quiet.baseline_mean
    );

    for (at, size) in [(420, 0.2), (450, 0.05)] {
        let faulty: Vec<f64> = clean.iter().enumerate().map(|(t, z)| if t >= at { z + size } else { *z }).collect();
        let r = pipeline::anomaly_score(&Series::with_dt(faulty, dt), &model, &filter, &cfg)?;
        let peak = r.zscore.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        println!(
            "step of {size} at {at}: {} flags, first at {:?}, peak z-score {peak:.1}",
            r.flags.len(),
            r.first_flag()
        );
    }
    Ok(())
}
