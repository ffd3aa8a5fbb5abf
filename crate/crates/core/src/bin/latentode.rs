use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use latentode::lstmvae::{self, VaeParams};
use latentode::pipeline::{self, DataSource, RunConfig, Stamp};
use latentode::signal::{self, Series};
use latentode::sindy::{self, SindyModel};
use latentode::trajkit::{self, CsvFormat, ScalerParams};
use latentode::{collisim, Error, Result};

#[derive(Parser)]
#[command(name = "latentode", version, about = "Latent ODE discovery for multi-agent trajectories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate confined elastic particles and write their trajectories.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Load a trajectory CSV, smooth and scale it.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV; defaults to the configured data source.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train the VAE on scaled data.
    Train {
        #[command(flatten)]
        common: Common,
        /// Scaled trajectory CSV; otherwise the configured source is loaded and preprocessed.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Frames to train on; defaults to the training horizon.
        #[arg(long)]
        frames: Option<usize>,
    },
    /// Encode scaled data into a latent series.
    Encode {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fit a sparse polynomial ODE to a latent series.
    Discover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        latent: PathBuf,
    },
    /// Integrate a discovered model.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        z0: f64,
        #[arg(long)]
        steps: usize,
        /// Step size; defaults to the configured latent time step.
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Correlate a solved latent with a reference latent.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long)]
        reference: PathBuf,
    },
    /// Score a latent series against a model.
    Anomaly {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        latent: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Decode a solved latent into states.
    Repair {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        z0: f64,
        #[arg(long)]
        frames: usize,
        /// Scaler parameters for output in data units.
        #[arg(long)]
        scaler: Option<PathBuf>,
    },
    /// Kernel density grids of agent positions.
    Density {
        #[command(flatten)]
        common: Common,
        /// Trajectory CSV; defaults to the configured data source.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
    /// Full pipeline.
    Run {
        #[command(flatten)]
        common: Common,
    },
}

struct Ctx {
    cfg: RunConfig,
    stamp: Stamp,
    out: PathBuf,
}

impl Ctx {
    fn new(common: &Common) -> Result<Self> {
        let cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let seed = common.seed.unwrap_or(cfg.seed);
        let cfg = cfg.with_seed(seed);
        fs::create_dir_all(&common.out)?;
        Ok(Ctx {
            stamp: Stamp::for_config(&cfg)?,
            cfg,
            out: common.out.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn note(&self) -> String {
        self.stamp.comment()
    }
}

fn load_trajectories(path: Option<&Path>, cfg: &RunConfig) -> Result<trajkit::TrajectorySet> {
    match path {
        Some(p) => trajkit::load_trajectories(p, CsvFormat::Auto),
        None => {
            if let DataSource::Simulate = cfg.data {
                cfg.simulation.validate()?;
            }
            pipeline::load_data(cfg)
        }
    }
}

fn execute(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate { common } => {
            let ctx = Ctx::new(&common)?;
            let (t, stats) = collisim::run_with_stats(&ctx.cfg.simulation)?;
            trajkit::save_trajectories(ctx.path("data.csv"), &t, Some(&ctx.note()))?;
            println!(
                "{} frames, {} particles, {} collisions, max energy drift {:.3e}",
                t.n_frames(),
                t.n_particles(),
                stats.collisions,
                stats.max_energy_drift
            );
        }
        Cmd::Ingest { common, input } => {
            let ctx = Ctx::new(&common)?;
            let t = load_trajectories(input.as_deref(), &ctx.cfg)?;
            let (scaled, scaler) = pipeline::preprocess(&ctx.cfg.preprocess, &t, t.n_frames())?;
            trajkit::save_trajectories(ctx.path("data.csv"), &t, Some(&ctx.note()))?;
            trajkit::save_wide(ctx.path("scaled.csv"), &scaled, Some(&ctx.note()))?;
            if let Some(s) = scaler {
                pipeline::write_stamped_json(ctx.path("scaler.json"), &s, &ctx.stamp)?;
            }
            println!("{} frames x {} features", scaled.n_frames(), scaled.features.cols());
        }
        Cmd::Train { common, data, frames } => {
            let ctx = Ctx::new(&common)?;
            let scaled = match &data {
                Some(p) => {
                    let t = trajkit::load_trajectories(p, CsvFormat::Auto)?;
                    t.head(frames.unwrap_or(t.n_frames()))?
                }
                None => {
                    let t = load_trajectories(None, &ctx.cfg)?;
                    let n = frames.unwrap_or(ctx.cfg.horizons.train);
                    let (scaled, scaler) = pipeline::preprocess(&ctx.cfg.preprocess, &t, n)?;
                    if let Some(s) = scaler {
                        pipeline::write_stamped_json(ctx.path("scaler.json"), &s, &ctx.stamp)?;
                    }
                    scaled
                }
            };
            let cfg = pipeline::resolve_config(&ctx.cfg, scaled.features.cols())?;
            let outcome = lstmvae::train(&cfg.vae, &scaled, &cfg.train)?;
            pipeline::write_stamped_json(ctx.path("vae.json"), &outcome.params, &ctx.stamp)?;
            let mut hist = Vec::new();
            lstmvae::write_loss_history(&mut hist, &outcome.history, Some(&ctx.note()))?;
            fs::write(ctx.path("loss_history.csv"), hist)?;
            let filtered = filtered_latent(&outcome.latent.z, &cfg)?;
            pipeline::write_latent_csv(
                ctx.path("latent.csv"),
                &outcome.latent,
                filtered.as_deref(),
                Some(&ctx.note()),
            )?;
            println!("final recon loss {:.6}", outcome.final_recon());
        }
        Cmd::Encode { common, model, data } => {
            let ctx = Ctx::new(&common)?;
            let params = VaeParams::load(model)?;
            let t = trajkit::load_trajectories(data, CsvFormat::Auto)?;
            let latent = lstmvae::encode_latent(&params, &t.features)?;
            let filtered = filtered_latent(&latent.z, &ctx.cfg)?;
            pipeline::write_latent_csv(ctx.path("latent.csv"), &latent, filtered.as_deref(), Some(&ctx.note()))?;
            println!("{} latent samples", latent.len());
        }
        Cmd::Discover { common, latent } => {
            let ctx = Ctx::new(&common)?;
            let s = &ctx.cfg.sindy;
            let z = Series::with_dt(pipeline::read_series_csv(latent)?, s.dt);
            let mut model = sindy::discover_with(&z, &ctx.cfg.latent_filter, s.degree, s.threshold, s.max_iter)?;
            model.provenance.seed = Some(ctx.stamp.seed);
            model.provenance.config_hash = Some(ctx.stamp.config_hash.clone());
            pipeline::write_stamped_json(ctx.path("sindy.json"), &model, &ctx.stamp)?;
            let text = sindy::model_to_text(&model);
            fs::write(ctx.path("model.txt"), format!("# {}\n{text}\n", ctx.note()))?;
            println!("{text}");
        }
        Cmd::Solve { common, model, z0, steps, dt } => {
            let ctx = Ctx::new(&common)?;
            let model = SindyModel::load(model)?;
            let sol = sindy::integrate(&model, z0, dt.unwrap_or(ctx.cfg.sindy.dt), steps)?;
            pipeline::write_series_csv(ctx.path("solution.csv"), &sol.z, Some(&ctx.note()))?;
            if sol.diverged {
                return Err(Error::Numerical(format!("solution diverged after {} samples", sol.z.len())));
            }
            println!("{} samples, final z = {}", sol.z.len(), sol.z[sol.z.len() - 1]);
        }
        Cmd::Validate { common, solution, reference } => {
            let ctx = Ctx::new(&common)?;
            let v = pipeline::compare_latents(
                &pipeline::read_series_csv(solution)?,
                &pipeline::read_series_csv(reference)?,
            )?;
            pipeline::write_stamped_json(ctx.path("validation.json"), &v, &ctx.stamp)?;
            println!(
                "pearson {:.4} rmse {:.4} over {} samples{}",
                v.pearson,
                v.rmse,
                v.samples,
                if v.sign_flipped { " (sign flipped)" } else { "" }
            );
        }
        Cmd::Anomaly { common, latent, model } => {
            let ctx = Ctx::new(&common)?;
            let z = Series::with_dt(pipeline::read_series_csv(latent)?, ctx.cfg.sindy.dt);
            let model = SindyModel::load(model)?;
            let r = pipeline::anomaly_score(&z, &model, &ctx.cfg.latent_filter, &ctx.cfg.anomaly)?;
            pipeline::write_anomaly_csv(ctx.path("anomaly.csv"), &r, Some(&ctx.note()))?;
            match r.first_flag() {
                Some(t) => println!("{} flagged frames, first at {t}", r.flags.len()),
                None => println!("no anomalies above z-score {}", r.threshold),
            }
        }
        Cmd::Repair { common, model, vae, z0, frames, scaler } => {
            let ctx = Ctx::new(&common)?;
            let model = SindyModel::load(model)?;
            let params = VaeParams::load(vae)?;
            let scaler = scaler.map(ScalerParams::load).transpose()?;
            let r = pipeline::repair_states(&model, &params, z0, frames, ctx.cfg.sindy.dt, scaler.as_ref(), 1.0)?;
            trajkit::save_wide(ctx.path("repaired.csv"), &r.states, Some(&ctx.note()))?;
            pipeline::write_series_csv(ctx.path("solution.csv"), &r.solution.z, Some(&ctx.note()))?;
            if r.diverged {
                return Err(Error::Numerical(format!(
                    "solution diverged; {} of {frames} frames decoded",
                    r.solution.z.len()
                )));
            }
            println!("{} frames decoded", r.states.n_frames());
        }
        Cmd::Density { common, data, frames } => {
            let ctx = Ctx::new(&common)?;
            let t = load_trajectories(data.as_deref(), &ctx.cfg)?;
            let frames = if frames.is_empty() { ctx.cfg.density.frames.clone() } else { frames };
            let report = pipeline::density_report(&t, &frames, &ctx.cfg.density)?;
            for d in &report {
                pipeline::write_matrix_csv(ctx.path(&format!("density_{}.csv", d.frame)), &d.grid, Some(&ctx.note()))?;
                println!("frame {}: peak {:.4} (bandwidth {:.4})", d.frame, d.peak, d.bandwidth);
            }
            pipeline::write_stamped_json(ctx.path("density.json"), &report, &ctx.stamp)?;
        }
        Cmd::Run { common } => {
            let ctx = Ctx::new(&common)?;
            let a = pipeline::run_discovery(&ctx.cfg, &ctx.out)?;
            let m = &a.metrics;
            println!("{}", m.model_text);
            println!("recon mse {:.5}, pearson {:.4}, rmse {:.4}", m.recon_mse, m.pearson, m.rmse);
            if let (Some(own), Some(fixed)) = (m.repair_mse_own, m.repair_mse_repaired) {
                println!("premature decoder: own latent mse {own:.5}, solved latent mse {fixed:.5}");
            }
        }
    }
    Ok(())
}

fn filtered_latent(z: &[f64], cfg: &RunConfig) -> Result<Option<Vec<f64>>> {
    if z.len() < cfg.latent_filter.window {
        return Ok(None);
    }
    Ok(Some(signal::sg_filter(&Series::new(z.to_vec()), &cfg.latent_filter)?.values))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
