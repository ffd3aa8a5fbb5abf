//! Run configuration and orchestration: data, preprocessing, VAE training,
//! latent discovery, extrapolation checks, anomaly scoring, repair and
//! density reports.
//!
//! Every artifact a run writes carries the run seed and a config hash, either
//! as a leading `# seed=… config_hash=…` line (CSV, text) or as top-level
//! `seed` / `config_hash` keys (JSON).

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collisim::{self, SimConfig};
use crate::error::{Error, Result};
use crate::lstmvae::{self, LatentSeries, TrainConfig, TrainOutcome, VaeArch, VaeParams};
use crate::matrix::Matrix;
use crate::signal::{self, Bandwidth, Grid, Series, SgConfig};
use crate::sindy::{self, OdeSolution, SindyModel};
use crate::trajkit::{self, CsvFormat, ScalerParams, TrajectorySet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulate,
    Csv {
        path: PathBuf,
        #[serde(default)]
        format: CsvFormat,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Per-coordinate trajectory smoothing, applied before scaling.
    pub smooth: Option<SgConfig>,
    pub scale: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            smooth: None,
            scale: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindyConfig {
    pub degree: usize,
    pub threshold: f64,
    pub max_iter: usize,
    /// Model time between consecutive latent samples. One solver step is
    /// taken per frame, so solution indices line up with frame indices.
    pub dt: f64,
}

impl Default for SindyConfig {
    fn default() -> Self {
        SindyConfig {
            degree: 3,
            threshold: 0.1,
            max_iter: 20,
            dt: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Horizons {
    /// Frames used to train the model the equation is discovered from.
    pub train: usize,
    /// Frames the equation is solved for and validated against.
    pub extrapolate: usize,
}

impl Default for Horizons {
    fn default() -> Self {
        Horizons {
            train: 500,
            extrapolate: 750,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub threshold: f64,
    /// Rolling window; defaults to the latent filter window.
    pub window: Option<usize>,
    /// Leading samples that define the normal residual distribution; defaults
    /// to the training horizon in a run and to the whole series otherwise.
    pub baseline: Option<usize>,
    /// Lower bound on the baseline spread, so near-perfect fits do not turn
    /// rounding noise into huge scores.
    pub sigma_floor: f64,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        AnomalyConfig {
            threshold: 3.0,
            window: None,
            baseline: None,
            sigma_floor: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LatentAlign {
    /// Feed the solved latent to the decoder unchanged.
    #[default]
    None,
    /// Map the solved latent onto the target model's latent scale by a least
    /// squares fit `a z + b` over the training horizon.
    Affine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepairConfig {
    pub enabled: bool,
    /// Share of the epoch budget the premature model is trained for.
    pub premature_fraction: f64,
    pub align: LatentAlign,
}

impl Default for RepairConfig {
    fn default() -> Self {
        RepairConfig {
            enabled: true,
            premature_fraction: 0.3,
            align: LatentAlign::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    /// Frames to report; empty means first and last.
    pub frames: Vec<usize>,
    pub grid_size: usize,
    /// Fixed kernel bandwidth; Scott's rule when absent.
    pub bandwidth: Option<f64>,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            frames: Vec::new(),
            grid_size: 64,
            bandwidth: None,
        }
    }
}

impl DensityConfig {
    fn bandwidth(&self) -> Bandwidth {
        self.bandwidth.map_or(Bandwidth::Auto, Bandwidth::Fixed)
    }
}

/// Everything a run needs. `seed` is the single source of randomness: it is
/// copied into the simulation and training sections before a run starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub data: DataSource,
    pub simulation: SimConfig,
    pub preprocess: PreprocessConfig,
    pub vae: VaeArch,
    pub train: TrainConfig,
    pub latent_filter: SgConfig,
    pub sindy: SindyConfig,
    pub horizons: Horizons,
    pub anomaly: AnomalyConfig,
    pub repair: RepairConfig,
    pub density: DensityConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: None,
            data: DataSource::Simulate,
            // Slow particles released from a central cluster drift apart
            // for the whole horizon without reaching the walls.
            simulation: SimConfig {
                n_steps: 750,
                speed_scale: 0.0003,
                spawn_fraction: 0.3,
                ..SimConfig::default()
            },
            preprocess: PreprocessConfig::default(),
            vae: VaeArch::default(),
            train: TrainConfig {
                epochs: 800,
                learning_rate: 1e-2,
                ..TrainConfig::default()
            },
            latent_filter: SgConfig { window: 51, order: 1 },
            sindy: SindyConfig::default(),
            horizons: Horizons::default(),
            anomaly: AnomalyConfig::default(),
            repair: RepairConfig::default(),
            density: DensityConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Toml(e.to_string()))
    }

    /// Copies the master seed into every seeded section.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.simulation.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.horizons;
        if h.train < 2 || h.extrapolate < h.train {
            return Err(Error::Config(format!(
                "horizons must satisfy 2 <= train <= extrapolate, got {} and {}",
                h.train, h.extrapolate
            )));
        }
        if h.train <= self.latent_filter.window {
            return Err(Error::Config(format!(
                "train horizon {} must exceed the latent filter window {}",
                h.train, self.latent_filter.window
            )));
        }
        self.latent_filter.validate()?;
        if let Some(sg) = &self.preprocess.smooth {
            sg.validate()?;
        }
        self.train.validate()?;
        let s = &self.sindy;
        if s.degree == 0 || !(s.threshold >= 0.0) || s.max_iter == 0 || !(s.dt > 0.0) {
            return Err(Error::Config(format!("invalid sindy settings {:?}", self.sindy)));
        }
        let f = self.repair.premature_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("premature_fraction must be in (0, 1], got {f}")));
        }
        if !(self.anomaly.threshold > 0.0) || !(self.anomaly.sigma_floor >= 0.0) {
            return Err(Error::Config("anomaly threshold must be positive".into()));
        }
        if self.anomaly.window == Some(0) {
            return Err(Error::Config("anomaly window must be positive".into()));
        }
        if self.density.grid_size < 2 {
            return Err(Error::Config("density grid_size must be at least 2".into()));
        }
        match &self.data {
            DataSource::Simulate => {
                self.simulation.validate()?;
                if self.simulation.n_steps < h.extrapolate {
                    return Err(Error::Config(format!(
                        "simulation yields {} frames, extrapolation horizon needs {}",
                        self.simulation.n_steps,
                        h.extrapolate
                    )));
                }
            }
            DataSource::Csv { path, .. } => {
                if !path.exists() {
                    return Err(Error::Config(format!("data file {} does not exist", path.display())));
                }
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form, with the
    /// output directory left out.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.out_dir = None;
        let json = serde_json::to_string(&canon)?;
        let digest = Sha256::digest(json.as_bytes());
        Ok(hex::encode(digest)[..16].to_string())
    }
}

/// Seed and config hash attached to every artifact of a run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stamp {
    pub seed: u64,
    pub config_hash: String,
}

impl Stamp {
    pub fn for_config(cfg: &RunConfig) -> Result<Self> {
        Ok(Stamp {
            seed: cfg.seed,
            config_hash: cfg.hash()?,
        })
    }

    pub fn comment(&self) -> String {
        format!("seed={} config_hash={}", self.seed, self.config_hash)
    }
}

/// Writes `value` as JSON with top-level `seed` and `config_hash` keys.
/// Values that are not objects are nested under `value`.
pub fn write_stamped_json<T: Serialize>(path: impl AsRef<Path>, value: &T, stamp: &Stamp) -> Result<()> {
    let mut v = match serde_json::to_value(value)? {
        serde_json::Value::Object(map) => serde_json::Value::Object(map),
        other => serde_json::json!({ "value": other }),
    };
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("seed".into(), stamp.seed.into());
        map.insert("config_hash".into(), stamp.config_hash.clone().into());
    }
    fs::write(path, serde_json::to_string_pretty(&v)? + "\n")?;
    Ok(())
}

fn write_lines(path: &Path, header: &str, comment: Option<&str>, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str("# ");
        out.push_str(c);
        out.push('\n');
    }
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// `frame,z` CSV.
pub fn write_series_csv(path: impl AsRef<Path>, values: &[f64], comment: Option<&str>) -> Result<()> {
    write_lines(
        path.as_ref(),
        "frame,z",
        comment,
        values.iter().enumerate().map(|(t, v)| format!("{t},{v}")),
    )
}

/// Latent CSV: `frame,z,mu,logvar` plus `z_filtered` when given.
pub fn write_latent_csv(
    path: impl AsRef<Path>,
    latent: &LatentSeries,
    filtered: Option<&[f64]>,
    comment: Option<&str>,
) -> Result<()> {
    let header = if filtered.is_some() {
        "frame,z,mu,logvar,z_filtered"
    } else {
        "frame,z,mu,logvar"
    };
    write_lines(
        path.as_ref(),
        header,
        comment,
        (0..latent.len()).map(|t| {
            let base = format!("{t},{},{},{}", latent.z[t], latent.mu[t], latent.logvar[t]);
            match filtered {
                Some(f) => format!("{base},{}", f[t]),
                None => base,
            }
        }),
    )
}

/// Reads the `z` column of any CSV with a `z` header (latent or solution files).
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "z")
        .ok_or_else(|| Error::Ingest(format!("{} has no `z` column", path.display())))?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = rec.get(col).unwrap_or("");
        let v: f64 = field.parse().map_err(|_| Error::Parse {
            row: i + 1,
            column: "z".into(),
            message: format!("not a number: {field:?}"),
        })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Ingest(format!("{} has no rows", path.display())));
    }
    Ok(out)
}

/// Writes a matrix as plain CSV rows.
pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Matrix, comment: Option<&str>) -> Result<()> {
    let mut out = String::new();
    if let Some(c) = comment {
        out.push_str(&format!("# {c}\n"));
    }
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Simulates or loads the configured trajectories.
pub fn load_data(cfg: &RunConfig) -> Result<TrajectorySet> {
    match &cfg.data {
        DataSource::Simulate => {
            let mut sim = cfg.simulation.clone();
            sim.seed = cfg.seed;
            collisim::run(&sim)
        }
        DataSource::Csv { path, format } => trajkit::load_trajectories(path, *format),
    }
}

/// Optional smoothing, then min-max scaling of the first `frames` frames.
pub fn preprocess(
    cfg: &PreprocessConfig,
    data: &TrajectorySet,
    frames: usize,
) -> Result<(TrajectorySet, Option<ScalerParams>)> {
    let smoothed = match &cfg.smooth {
        Some(sg) => trajkit::smooth_trajectories(data, sg.window, sg.order)?,
        None => data.clone(),
    };
    let window = smoothed.head(frames)?;
    if cfg.scale {
        let (scaled, params) = trajkit::minmax_scale(&window)?;
        Ok((scaled, Some(params)))
    } else {
        Ok((window, None))
    }
}

/// Pearson correlation and RMSE after optional sign flip of the candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Validation {
    pub pearson: f64,
    pub rmse: f64,
    pub sign_flipped: bool,
    pub samples: usize,
}

/// Compares the common prefix of two latents. The candidate is negated when
/// that raises the correlation; a latent and its negation describe the same
/// dynamics.
pub fn compare_latents(candidate: &[f64], reference: &[f64]) -> Result<Validation> {
    let n = candidate.len().min(reference.len());
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 common samples, have {n}")));
    }
    let (c, r) = (&candidate[..n], &reference[..n]);
    let raw = signal::pearson(c, r)?;
    let flip = raw < 0.0;
    let s = if flip { -1.0 } else { 1.0 };
    let rmse = (c.iter().zip(r).map(|(a, b)| (s * a - b).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(Validation {
        pearson: raw.abs(),
        rmse,
        sign_flipped: flip,
        samples: n,
    })
}

/// Solves the model over `t_extrapolate` frames from `z0` and compares the
/// result with the latent a longer-horizon model assigns to `data_long`.
pub fn validate_extrapolation(
    model: &SindyModel,
    z0: f64,
    params_long: &VaeParams,
    data_long: &Matrix,
    t_extrapolate: usize,
    dt: f64,
) -> Result<(Validation, OdeSolution, LatentSeries)> {
    if data_long.rows() < t_extrapolate {
        return Err(Error::Input(format!(
            "long-horizon data has {} frames, need {t_extrapolate}",
            data_long.rows()
        )));
    }
    let solution = sindy::integrate(model, z0, dt, t_extrapolate.saturating_sub(1))?;
    if solution.diverged {
        warn!("extrapolated solution diverged after {} samples", solution.z.len());
    }
    let long = lstmvae::encode_latent(params_long, &data_long.slice_rows(0, t_extrapolate))?;
    let v = compare_latents(&solution.z, &long.z)?;
    Ok((v, solution, long))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    /// `|dz/dt - f(z)|` with both sides filtered.
    pub residual: Vec<f64>,
    /// Trailing mean of the residual over `window` scored samples; zero
    /// outside `scored`.
    pub rolling: Vec<f64>,
    pub zscore: Vec<f64>,
    /// Indices where `zscore > threshold`.
    pub flags: Vec<usize>,
    pub window: usize,
    /// Samples far enough from both ends for a centred filter window.
    pub scored: std::ops::Range<usize>,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub threshold: f64,
}

impl AnomalyReport {
    pub fn first_flag(&self) -> Option<usize> {
        self.flags.first().copied()
    }
}

/// Scores how far an observed latent strays from the model's prediction.
/// The observed series is filtered with `filter` (shrunk to an odd window
/// that fits when the series is short), differentiated, and compared with
/// the equally filtered `f(z)`. The trailing rolling mean of the residual is
/// turned into a z-score against its own distribution on the first
/// `baseline` samples. Half a filter window at each end is left unscored.
pub fn anomaly_score(
    z_obs: &Series,
    model: &SindyModel,
    filter: &SgConfig,
    cfg: &AnomalyConfig,
) -> Result<AnomalyReport> {
    let n = z_obs.len();
    if n < 2 {
        return Err(Error::Input(format!("anomaly scoring needs at least 2 samples, got {n}")));
    }
    let window = if filter.window <= n {
        *filter
    } else {
        let w = if n % 2 == 1 { n } else { n - 1 };
        SgConfig {
            window: w,
            order: filter.order.min(w - 1),
        }
    };
    let smooth = signal::sg_filter(z_obs, &window)?;
    let dzdt = if n >= 3 {
        signal::estimate_derivative(&smooth)?.values
    } else {
        let d = (smooth.values[1] - smooth.values[0]) / smooth.dt;
        vec![d, d]
    };
    // The model prediction goes through the same filter as the observation so
    // that smoothing bias on curved stretches cancels instead of scoring.
    let predicted = Series::with_dt(z_obs.values.iter().map(|&z| model.rhs(z)).collect(), z_obs.dt);
    let predicted = signal::sg_filter(&predicted, &window)?;
    let residual: Vec<f64> = predicted
        .values
        .iter()
        .zip(&dzdt)
        .map(|(&p, &d)| (d - p).abs())
        .collect();

    // Near either end the filter fits a one-sided window, which the
    // derivative stencil and the prediction do not share, so those samples
    // are not scored.
    let edge = if window.window + 2 < n { window.window / 2 + 1 } else { 0 };
    let scored = edge..n - edge;
    let w = cfg.window.unwrap_or(filter.window).max(1);
    let mut rolling = vec![0.0; n];
    let mut acc = 0.0;
    for t in scored.clone() {
        acc += residual[t];
        if t >= scored.start + w {
            acc -= residual[t - w];
        }
        rolling[t] = acc / (t + 1 - scored.start).min(w) as f64;
    }
    let b_end = cfg.baseline.unwrap_or(n).clamp(scored.start + 1, scored.end);
    let base = &rolling[scored.start..b_end];
    let mean = base.iter().sum::<f64>() / base.len() as f64;
    let std = (base.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / base.len() as f64).sqrt();
    let sigma = std.max(cfg.sigma_floor).max(f64::MIN_POSITIVE);
    let mut zscore = vec![0.0; n];
    for t in scored.clone() {
        zscore[t] = (rolling[t] - mean) / sigma;
    }
    let flags = scored.clone().filter(|&t| zscore[t] > cfg.threshold).collect();
    Ok(AnomalyReport {
        residual,
        rolling,
        zscore,
        flags,
        window: w,
        scored,
        baseline_mean: mean,
        baseline_std: std,
        threshold: cfg.threshold,
    })
}

/// Reconstructed states decoded from a solved latent.
#[derive(Clone, Debug)]
pub struct Repair {
    /// Decoder output, inverse-scaled when scaler parameters were supplied.
    pub states: TrajectorySet,
    /// Decoder output in scaled units.
    pub scaled: Matrix,
    pub solution: OdeSolution,
    pub diverged: bool,
}

/// Solves the model for `n_frames` samples from `z0` and decodes the result.
/// A diverging solution yields the decoded finite prefix with `diverged` set.
pub fn repair_states(
    model: &SindyModel,
    params: &VaeParams,
    z0: f64,
    n_frames: usize,
    dt: f64,
    scaler: Option<&ScalerParams>,
    frame_rate: f64,
) -> Result<Repair> {
    if !z0.is_finite() {
        return Err(Error::Input(format!("z0 must be finite, got {z0}")));
    }
    if n_frames == 0 {
        return Err(Error::Input("repair needs at least one frame".into()));
    }
    let solution = sindy::integrate(model, z0, dt, n_frames - 1)?;
    decode_solution(params, solution, None, scaler, frame_rate)
}

fn decode_solution(
    params: &VaeParams,
    solution: OdeSolution,
    map: Option<(f64, f64)>,
    scaler: Option<&ScalerParams>,
    frame_rate: f64,
) -> Result<Repair> {
    let z: Vec<f64> = match map {
        Some((a, b)) => solution.z.iter().map(|v| a * v + b).collect(),
        None => solution.z.clone(),
    };
    let scaled = lstmvae::decode(params, &z)?;
    let set = TrajectorySet::with_default_ids(scaled.clone(), frame_rate)?;
    let states = match scaler {
        Some(s) => trajkit::inverse_scale(&set, s)?,
        None => set,
    };
    Ok(Repair {
        states,
        scaled,
        diverged: solution.diverged,
        solution,
    })
}

/// Least-squares `a, b` with `target ≈ a x + b`.
fn affine_fit(x: &[f64], target: &[f64]) -> (f64, f64) {
    let n = x.len().min(target.len()) as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mt = target.iter().take(x.len()).sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxt: f64 = x.iter().zip(target).map(|(a, b)| (a - mx) * (b - mt)).sum();
    if sxx <= f64::EPSILON * n {
        return (0.0, mt);
    }
    let a = sxt / sxx;
    (a, mt - a * mx)
}

/// Outcome of the premature-stop experiment.
#[derive(Clone, Debug)]
pub struct PrematureReport {
    pub epochs: usize,
    pub premature: TrainOutcome,
    /// Premature model decoding its own latent.
    pub mse_own: f64,
    /// Premature decoder fed the solved latent.
    pub mse_repaired: f64,
    pub repair: Repair,
    pub align: Option<(f64, f64)>,
}

/// Trains a model on `scaled_long` for a fraction of the epoch budget, then
/// compares its reconstruction from its own latent against reconstruction
/// from the solved latent `solution` of the equation. With affine alignment
/// the solution is first mapped onto the premature model's latent scale
/// using the first `t_train` samples.
pub fn premature_stop_experiment(
    arch: &VaeArch,
    train: &TrainConfig,
    scaled_long: &TrajectorySet,
    solution: &OdeSolution,
    repair: &RepairConfig,
    t_train: usize,
    scaler: Option<&ScalerParams>,
) -> Result<PrematureReport> {
    let epochs = ((train.epochs as f64 * repair.premature_fraction).round() as usize).max(1);
    let cfg = TrainConfig {
        epochs,
        ..train.clone()
    };
    let premature = lstmvae::train(arch, scaled_long, &cfg)?;
    let x = &scaled_long.features;
    // A diverged solution is shorter; both errors use the same frames.
    let n = x.rows().min(solution.z.len());
    let own = lstmvae::decode(&premature.params, &premature.latent.z[..n])?;
    let mse_own = lstmvae::mse(&own, &x.slice_rows(0, n))?;

    let map = match repair.align {
        LatentAlign::None => None,
        LatentAlign::Affine => {
            let k = t_train.min(n);
            Some(affine_fit(&solution.z[..k], &premature.latent.z[..k]))
        }
    };
    let mut sol = solution.clone();
    sol.z.truncate(n);
    let fixed = decode_solution(&premature.params, sol, map, scaler, scaled_long.frame_rate)?;
    let mse_repaired = lstmvae::mse(&fixed.scaled, &x.slice_rows(0, n))?;
    Ok(PrematureReport {
        epochs,
        premature,
        mse_own,
        mse_repaired,
        repair: fixed,
        align: map,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DensityFrame {
    pub frame: usize,
    pub peak: f64,
    pub bandwidth: f64,
    #[serde(skip)]
    pub grid: Matrix,
}

/// Grid covering every position of every frame, so frames are comparable.
pub fn density_grid(t: &TrajectorySet, size: usize) -> Grid {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for f in 0..t.n_frames() {
        for [x, y] in t.positions(f) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
    }
    let pad = |lo: f64, hi: f64| {
        let p = ((hi - lo) * 0.05).max(1e-3);
        (lo - p, hi + p)
    };
    let (x_min, x_max) = pad(x0, x1);
    let (y_min, y_max) = pad(y0, y1);
    Grid {
        x_min,
        x_max,
        y_min,
        y_max,
        size,
    }
}

/// Gaussian kernel density of agent positions at each requested frame.
pub fn density_report(t: &TrajectorySet, frames: &[usize], cfg: &DensityConfig) -> Result<Vec<DensityFrame>> {
    let grid = density_grid(t, cfg.grid_size);
    let frames: Vec<usize> = if frames.is_empty() {
        vec![0, t.n_frames() - 1]
    } else {
        frames.to_vec()
    };
    frames
        .iter()
        .map(|&f| {
            if f >= t.n_frames() {
                return Err(Error::Input(format!(
                    "frame {f} out of range (0..{})",
                    t.n_frames()
                )));
            }
            let pos = t.positions(f);
            let bandwidth = signal::resolve_bandwidth(&pos, cfg.bandwidth(), &grid)?;
            let grid_vals = signal::kde_density(&pos, &grid, Bandwidth::Fixed(bandwidth))?;
            let peak = grid_vals.as_slice().iter().copied().fold(0.0, f64::max);
            Ok(DensityFrame {
                frame: f,
                peak,
                bandwidth,
                grid: grid_vals,
            })
        })
        .collect()
}

/// Fixed-key summary of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub pearson: f64,
    pub rmse: f64,
    pub recon_mse: f64,
    pub model_text: String,
    pub sign_flipped: bool,
    pub train_pearson: f64,
    pub extrapolation_diverged: bool,
    pub anomaly_flags: usize,
    pub repair_mse_own: Option<f64>,
    pub repair_mse_repaired: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub dir: PathBuf,
    pub stamp: Stamp,
    pub config: RunConfig,
    pub data: TrajectorySet,
    pub scaled: TrajectorySet,
    pub scaler: Option<ScalerParams>,
    pub trained: TrainOutcome,
    pub latent_filtered: Vec<f64>,
    pub model: SindyModel,
    pub solution_train: OdeSolution,
    pub solution_extrapolate: OdeSolution,
    pub long_latent: LatentSeries,
    pub validation: Validation,
    pub anomaly: AnomalyReport,
    pub premature: Option<PrematureReport>,
    pub density: Vec<DensityFrame>,
    pub metrics: Metrics,
}

/// Name of the marker file left in a run directory that failed.
pub const FAILED_MARKER: &str = "FAILED";

/// Fills in data-dependent architecture fields and the master seed.
pub fn resolve_config(cfg: &RunConfig, n_features: usize) -> Result<RunConfig> {
    let mut cfg = cfg.clone().with_seed(cfg.seed);
    if cfg.vae.input_size == 0 {
        cfg.vae.input_size = n_features;
    } else if cfg.vae.input_size != n_features {
        return Err(Error::Config(format!(
            "vae.input_size is {} but the data has {n_features} features",
            cfg.vae.input_size
        )));
    }
    cfg.vae.validate()?;
    Ok(cfg)
}

/// Runs the whole workflow and writes every artifact under `out`. On failure
/// the artifacts written so far stay in place next to a `FAILED` marker.
pub fn run_discovery(cfg: &RunConfig, out: impl AsRef<Path>) -> Result<RunArtifacts> {
    let out = out.as_ref();
    fs::create_dir_all(out)?;
    let marker = out.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker)?;
    }
    let result = run_inner(cfg, out);
    if let Err(e) = &result {
        fs::write(&marker, format!("{e}\n"))?;
    }
    result
}

fn run_inner(cfg: &RunConfig, out: &Path) -> Result<RunArtifacts> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let cfg = resolve_config(cfg, data.features.cols())?;
    let stamp = Stamp::for_config(&cfg)?;
    let note = stamp.comment();
    let mut saved = cfg.clone();
    saved.out_dir = None;
    fs::write(out.join("config.toml"), format!("# {note}\n{}", saved.to_toml()?))?;

    let h = &cfg.horizons;
    if data.n_frames() < h.extrapolate {
        return Err(Error::Config(format!(
            "data has {} frames, extrapolation horizon needs {}",
            data.n_frames(),
            h.extrapolate
        )));
    }
    let data = data.head(h.extrapolate)?;
    trajkit::save_trajectories(out.join("data.csv"), &data, Some(&note))?;

    let (scaled, scaler) = preprocess(&cfg.preprocess, &data, h.train)?;
    trajkit::save_wide(out.join("scaled.csv"), &scaled, Some(&note))?;
    if let Some(s) = &scaler {
        write_stamped_json(out.join("scaler.json"), s, &stamp)?;
    }

    info!("training on {} frames for {} epochs", h.train, cfg.train.epochs);
    let trained = lstmvae::train(&cfg.vae, &scaled, &cfg.train)?;
    write_stamped_json(out.join("vae.json"), &trained.params, &stamp)?;
    let mut hist = Vec::new();
    lstmvae::write_loss_history(&mut hist, &trained.history, Some(&note))?;
    fs::write(out.join("loss_history.csv"), hist)?;
    let recon = lstmvae::decode(&trained.params, &trained.latent.z)?;
    let recon_mse = lstmvae::mse(&recon, &scaled.features)?;

    let latent = Series::with_dt(trained.latent.z.clone(), cfg.sindy.dt);
    let filtered = signal::sg_filter(&latent, &cfg.latent_filter)?.values;
    write_latent_csv(out.join("latent.csv"), &trained.latent, Some(&filtered), Some(&note))?;

    let mut model = sindy::discover_with(
        &latent,
        &cfg.latent_filter,
        cfg.sindy.degree,
        cfg.sindy.threshold,
        cfg.sindy.max_iter,
    )?;
    model.provenance.source = format!("run:{}", stamp.config_hash);
    model.provenance.seed = Some(stamp.seed);
    model.provenance.config_hash = Some(stamp.config_hash.clone());
    write_stamped_json(out.join("sindy.json"), &model, &stamp)?;
    let text = sindy::model_to_text(&model);
    fs::write(out.join("model.txt"), format!("# {note}\n{text}\n"))?;
    info!("discovered {text}");

    let z0 = filtered[0];
    let solution_train = sindy::integrate(&model, z0, cfg.sindy.dt, h.train - 1)?;
    write_series_csv(out.join("solution_train.csv"), &solution_train.z, Some(&note))?;
    let train_pearson = compare_latents(&solution_train.z, &filtered).map_or(f64::NAN, |v| v.pearson);

    let (scaled_long, scaler_long) = if h.extrapolate == h.train {
        (scaled.clone(), scaler.clone())
    } else {
        preprocess(&cfg.preprocess, &data, h.extrapolate)?
    };
    let long_params = if h.extrapolate == h.train {
        trained.params.clone()
    } else {
        info!("training the long-horizon model on {} frames", h.extrapolate);
        let long = lstmvae::train(&cfg.vae, &scaled_long, &cfg.train)?;
        write_stamped_json(out.join("vae_long.json"), &long.params, &stamp)?;
        long.params
    };
    let (validation, solution_extrapolate, long_latent) =
        validate_extrapolation(
        &model,
        z0,
        &long_params,
        &scaled_long.features,
        h.extrapolate,
        cfg.sindy.dt,
    )?;
    write_series_csv(out.join("solution_extrapolate.csv"), &solution_extrapolate.z, Some(&note))?;
    write_latent_csv(out.join("latent_long.csv"), &long_latent, None, Some(&note))?;
    write_stamped_json(out.join("validation.json"), &validation, &stamp)?;

    let anomaly_cfg = AnomalyConfig {
        baseline: cfg.anomaly.baseline.or(Some(h.train)),
        ..cfg.anomaly.clone()
    };
    let anomaly = anomaly_score(&latent, &model, &cfg.latent_filter, &anomaly_cfg)?;
    write_anomaly_csv(out.join("anomaly.csv"), &anomaly, Some(&note))?;

    let premature = if cfg.repair.enabled {
        info!("premature-stop experiment");
        let p = premature_stop_experiment(
            &cfg.vae,
            &cfg.train,
            &scaled_long,
            &solution_extrapolate,
            &cfg.repair,
            h.train,
            scaler_long.as_ref(),
        )?;
        trajkit::save_wide(out.join("repaired.csv"), &p.repair.states, Some(&note))?;
        Some(p)
    } else {
        None
    };

    let density = density_report(&data, &cfg.density.frames, &cfg.density)?;
    for d in &density {
        write_matrix_csv(out.join(format!("density_{}.csv", d.frame)), &d.grid, Some(&note))?;
    }
    write_stamped_json(out.join("density.json"), &density, &stamp)?;

    let metrics = Metrics {
        pearson: validation.pearson,
        rmse: validation.rmse,
        recon_mse,
        model_text: text,
        sign_flipped: validation.sign_flipped,
        train_pearson,
        extrapolation_diverged: solution_extrapolate.diverged,
        anomaly_flags: anomaly.flags.len(),
        repair_mse_own: premature.as_ref().map(|p| p.mse_own),
        repair_mse_repaired: premature.as_ref().map(|p| p.mse_repaired),
        seed: stamp.seed,
        config_hash: stamp.config_hash.clone(),
    };
    write_stamped_json(out.join("metrics.json"), &metrics, &stamp)?;

    Ok(RunArtifacts {
        dir: out.to_path_buf(),
        stamp,
        config: cfg,
        data,
        scaled,
        scaler,
        trained,
        latent_filtered: filtered,
        model,
        solution_train,
        solution_extrapolate,
        long_latent,
        validation,
        anomaly,
        premature,
        density,
        metrics,
    })
}

pub fn write_anomaly_csv(path: impl AsRef<Path>, r: &AnomalyReport, comment: Option<&str>) -> Result<()> {
    let flagged: std::collections::HashSet<usize> = r.flags.iter().copied().collect();
    write_lines(
        path.as_ref(),
        "frame,residual,rolling,zscore,flag",
        comment,
        (0..r.residual.len()).map(|t| {
            format!(
                "{t},{},{},{},{}",
                r.residual[t],
                r.rolling[t],
                r.zscore[t],
                u8::from(flagged.contains(&t))
            )
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(coeffs: &[f64]) -> SindyModel {
        SindyModel::new(coeffs.to_vec(), 0.0).unwrap()
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_toml_uses_defaults() {
        let cfg = RunConfig::from_toml_str("seed = 7\n[train]\nepochs = 3\n[horizons]\ntrain = 100\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.kl_weight, 1e-3);
        assert_eq!(cfg.horizons.extrapolate, 750);
        assert_eq!(cfg.sindy.degree, 3);
    }

    #[test]
    fn csv_source_parses() {
        let cfg = RunConfig::from_toml_str("[data]\nsource = \"csv\"\npath = \"x.csv\"\nformat = \"wide\"\n").unwrap();
        assert_eq!(
            cfg.data,
            DataSource::Csv {
                path: "x.csv".into(),
                format: CsvFormat::Wide
            }
        );
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_and_bad_horizons_rejected() {
        assert!(matches!(RunConfig::from_toml_str("sed = 1\n"), Err(Error::Toml(_))));
        let mut cfg = RunConfig::default();
        cfg.horizons = Horizons {
            train: 500,
            extrapolate: 400,
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn hash_ignores_out_dir_and_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.out_dir = Some("/tmp/elsewhere".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 16);
        let c = a.clone().with_seed(1);
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.simulation.seed, 1);
        assert_eq!(c.train.seed, 1);
    }

    #[test]
    fn compare_self_and_flipped() {
        let z: Vec<f64> = (0..50).map(|t| (t as f64 * 0.1).sin() + 0.01 * t as f64).collect();
        let v = compare_latents(&z, &z).unwrap();
        assert!((v.pearson - 1.0).abs() < 1e-12);
        assert!(v.rmse < 1e-12);
        assert!(!v.sign_flipped);
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let f = compare_latents(&neg, &z).unwrap();
        assert!((f.pearson - 1.0).abs() < 1e-12);
        assert!(f.rmse < 1e-12);
        assert!(f.sign_flipped);
        assert!(matches!(
            compare_latents(&[1.0; 5], &z),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn constant_latent_with_empty_model_scores_zero() {
        let r = anomaly_score(
            &Series::new(vec![0.7; 80]),
            &model(&[0.0, 0.0]),
            &SgConfig { window: 11, order: 1 },
            &AnomalyConfig::default(),
        )
        .unwrap();
        assert!(r.residual.iter().all(|&v| v.abs() < 1e-12));
        assert!(r.flags.is_empty());
    }

    #[test]
    fn anomaly_handles_short_series() {
        let sg = SgConfig { window: 51, order: 1 };
        let r = anomaly_score(&Series::new(vec![0.0, 1.0]), &model(&[1.0, 0.0]), &sg, &AnomalyConfig::default()).unwrap();
        assert_eq!(r.residual.len(), 2);
        assert!(r.residual.iter().all(|v| v.abs() < 1e-12));
        assert!(anomaly_score(&Series::new(vec![0.0]), &model(&[1.0, 0.0]), &sg, &AnomalyConfig::default()).is_err());
        let r = anomaly_score(&Series::new(vec![0.0, 1.0, 2.0, 3.0]), &model(&[1.0, 0.0]), &sg, &AnomalyConfig::default()).unwrap();
        assert_eq!(r.residual.len(), 4);
    }

    #[test]
    fn affine_fit_recovers_map() {
        let x: Vec<f64> = (0..20).map(|v| v as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 0.5).collect();
        let (a, b) = affine_fit(&x, &y);
        assert!((a + 2.0).abs() < 1e-12 && (b - 0.5).abs() < 1e-12);
        assert_eq!(affine_fit(&[1.0; 4], &[2.0, 2.0, 4.0, 4.0]), (0.0, 3.0));
    }

    #[test]
    fn density_frames_validated() {
        let t = TrajectorySet::with_default_ids(
            Matrix::from_rows(&[vec![0.5, 0.5, 0.5, 0.5], vec![0.1, 0.1, 0.9, 0.9]]).unwrap(),
            1.0,
        )
        .unwrap();
        let cfg = DensityConfig::default();
        let d = density_report(&t, &[], &cfg).unwrap();
        assert_eq!(d.iter().map(|f| f.frame).collect::<Vec<_>>(), vec![0, 1]);
        assert!(d[0].peak > d[1].peak);
        assert!(d.iter().all(|f| f.grid.as_slice().iter().all(|&v| v >= 0.0)));
        assert!(matches!(density_report(&t, &[2], &cfg), Err(Error::Input(_))));
    }
}
