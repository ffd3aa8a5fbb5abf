//! LSTM variational autoencoder that maps the `2k`-feature state at every
//! timestep to one scalar latent and back.
//!
//! Encoder: stacked LSTM over the sequence, then two linear heads giving a
//! per-step mean and log-variance. A latent `z_t = mu_t + exp(logvar_t / 2) eps_t`
//! is drawn per step. Decoder: a linear expansion of `z_t`, a stacked LSTM,
//! and a linear projection back to `2k` features.
//!
//! Gate weights follow the `w [h_{t-1}, x_t] + b` convention: each gate
//! matrix is `hidden x (hidden + input)`.

use std::io::Write;
use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcore::{Graph, NodeId};
use crate::matrix::Matrix;
use crate::trajkit::TrajectorySet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VaeArch {
    /// Feature count `2k`. The run pipeline treats 0 as "take it from the data".
    pub input_size: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub latent_size: usize,
    pub decoder_layers: usize,
    pub decoder_hidden: usize,
}

impl Default for VaeArch {
    fn default() -> Self {
        VaeArch::new(0, 1, 32)
    }
}

impl VaeArch {
    /// Decoder mirrors the encoder.
    pub fn new(input_size: usize, layers: usize, hidden: usize) -> Self {
        VaeArch {
            input_size,
            encoder_layers: layers,
            encoder_hidden: hidden,
            latent_size: 1,
            decoder_layers: layers,
            decoder_hidden: hidden,
        }
    }

    /// 20 agents (40 features), two stacked layers, embedding size 32.
    pub fn ants() -> Self {
        Self::new(40, 2, 32)
    }

    /// 5 agents (10 features), one layer, embedding size 64.
    pub fn fish() -> Self {
        Self::new(10, 1, 64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_size != 1 {
            return Err(Error::Config(format!(
                "latent size must be 1, got {}",
                self.latent_size
            )));
        }
        if self.input_size == 0
            || self.encoder_hidden == 0
            || self.decoder_hidden == 0
            || self.encoder_layers == 0
            || self.decoder_layers == 0
        {
            return Err(Error::Config(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconLoss {
    #[default]
    Mse,
    SmoothL1,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Weight of the KL term relative to the reconstruction term.
    pub kl_weight: f64,
    pub recon_loss: ReconLoss,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 500,
            learning_rate: 1e-3,
            kl_weight: 1e-3,
            recon_loss: ReconLoss::Mse,
            seed: 0,
            clip_norm: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config("kl_weight must be >= 0".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmLayer<T> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: T,
    pub w_f: T,
    pub w_o: T,
    pub w_c: T,
    pub b_i: T,
    pub b_f: T,
    pub b_o: T,
    pub b_c: T,
}

/// Row-vector affine map `x W + b`; `weight` is `in x out`, `bias` is `1 x out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeWeights<T> {
    pub encoder: Vec<LstmLayer<T>>,
    pub mu_head: Linear<T>,
    pub logvar_head: Linear<T>,
    pub latent_in: Linear<T>,
    pub decoder: Vec<LstmLayer<T>>,
    pub output: Linear<T>,
}

impl<T> LstmLayer<T> {
    fn tensors(&self) -> [&T; 8] {
        [&self.w_i, &self.w_f, &self.w_o, &self.w_c, &self.b_i, &self.b_f, &self.b_o, &self.b_c]
    }

    fn tensors_mut(&mut self) -> [&mut T; 8] {
        [
            &mut self.w_i,
            &mut self.w_f,
            &mut self.w_o,
            &mut self.w_c,
            &mut self.b_i,
            &mut self.b_f,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LstmLayer<U> {
        LstmLayer {
            input_size: self.input_size,
            hidden_size: self.hidden_size,
            w_i: f(&self.w_i),
            w_f: f(&self.w_f),
            w_o: f(&self.w_o),
            w_c: f(&self.w_c),
            b_i: f(&self.b_i),
            b_f: f(&self.b_f),
            b_o: f(&self.b_o),
            b_c: f(&self.b_c),
        }
    }
}

impl<T> Linear<T> {
    fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: f(&self.bias),
        }
    }
}

impl<T> VaeWeights<T> {
    /// Every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&T> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.extend(l.tensors());
        }
        for lin in [&self.mu_head, &self.logvar_head, &self.latent_in] {
            out.push(&lin.weight);
            out.push(&lin.bias);
        }
        for l in &self.decoder {
            out.extend(l.tensors());
        }
        out.push(&self.output.weight);
        out.push(&self.output.bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut T> {
        let mut out = Vec::new();
        for l in &mut self.encoder {
            out.extend(l.tensors_mut());
        }
        for lin in [&mut self.mu_head, &mut self.logvar_head, &mut self.latent_in] {
            out.push(&mut lin.weight);
            out.push(&mut lin.bias);
        }
        for l in &mut self.decoder {
            out.extend(l.tensors_mut());
        }
        out.push(&mut self.output.weight);
        out.push(&mut self.output.bias);
        out
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> VaeWeights<U> {
        VaeWeights {
            encoder: self.encoder.iter().map(|l| l.map(&mut f)).collect(),
            mu_head: self.mu_head.map(&mut f),
            logvar_head: self.logvar_head.map(&mut f),
            latent_in: self.latent_in.map(&mut f),
            decoder: self.decoder.iter().map(|l| l.map(&mut f)).collect(),
            output: self.output.map(&mut f),
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Matrix::from_vec(rows, cols, data).expect("sized by construction")
}

fn init_lstm(rng: &mut ChaCha8Rng, input: usize, hidden: usize) -> LstmLayer<Matrix> {
    let bound = 1.0 / ((hidden + input) as f64).sqrt();
    let mut w = || uniform(rng, hidden, hidden + input, bound);
    let (w_i, w_f, w_o, w_c) = (w(), w(), w(), w());
    let mut b = || uniform(rng, 1, hidden, bound);
    let (b_i, b_f, b_o, b_c) = (b(), b(), b(), b());
    LstmLayer {
        input_size: input,
        hidden_size: hidden,
        w_i,
        w_f,
        w_o,
        w_c,
        b_i,
        b_f,
        b_o,
        b_c,
    }
}

fn init_linear(rng: &mut ChaCha8Rng, input: usize, output: usize) -> Linear<Matrix> {
    let bound = 1.0 / (input as f64).sqrt();
    Linear {
        weight: uniform(rng, input, output, bound),
        bias: uniform(rng, 1, output, bound),
    }
}

/// All weights of one model plus the records needed to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub arch: VaeArch,
    pub weights: VaeWeights<Matrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub seed: u64,
}

impl VaeParams {
    /// Seeded uniform initialisation in `±1/sqrt(fan_in)`.
    pub fn init(arch: &VaeArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(arch.encoder_layers);
        let mut input = arch.input_size;
        for _ in 0..arch.encoder_layers {
            encoder.push(init_lstm(&mut rng, input, arch.encoder_hidden));
            input = arch.encoder_hidden;
        }
        let mu_head = init_linear(&mut rng, arch.encoder_hidden, 1);
        let logvar_head = init_linear(&mut rng, arch.encoder_hidden, 1);
        let latent_in = init_linear(&mut rng, 1, arch.decoder_hidden);
        let mut decoder = Vec::with_capacity(arch.decoder_layers);
        for _ in 0..arch.decoder_layers {
            decoder.push(init_lstm(&mut rng, arch.decoder_hidden, arch.decoder_hidden));
        }
        let output = init_linear(&mut rng, arch.decoder_hidden, arch.input_size);
        Ok(VaeParams {
            arch: arch.clone(),
            weights: VaeWeights {
                encoder,
                mu_head,
                logvar_head,
                latent_in,
                decoder,
                output,
            },
            train_config: None,
            seed,
        })
    }

    pub fn n_parameters(&self) -> usize {
        self.weights.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn bind(&self, g: &mut Graph) -> VaeWeights<NodeId> {
        self.weights.map(|m| g.leaf(m.clone()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let p: VaeParams = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        p.arch.validate()?;
        Ok(p)
    }
}

/// One LSTM step written exactly as the gate equations:
/// `g = act(w_g [h_{t-1}, x_t] + b_g)`, `c_t = f c_{t-1} + i tanh(w_c [h, x] + b_c)`,
/// `h_t = o tanh(c_t)`. All operands are row vectors.
pub fn lstm_cell_step(
    g: &mut Graph,
    layer: &LstmLayer<NodeId>,
    x_t: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hx = g.concat_cols(&[h_prev, x_t])?;
    let gate = |g: &mut Graph, w: NodeId, b: NodeId| -> Result<NodeId> {
        let wt = g.transpose(w);
        let pre = g.matmul(hx, wt)?;
        g.add(pre, b)
    };
    let i_pre = gate(g, layer.w_i, layer.b_i)?;
    let f_pre = gate(g, layer.w_f, layer.b_f)?;
    let o_pre = gate(g, layer.w_o, layer.b_o)?;
    let c_pre = gate(g, layer.w_c, layer.b_c)?;
    let i = g.sigmoid(i_pre);
    let f = g.sigmoid(f_pre);
    let o = g.sigmoid(o_pre);
    let cand = g.tanh(c_pre);
    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let tc = g.tanh(c);
    let h = g.mul(o, tc)?;
    Ok((h, c))
}

/// Runs one layer over a `T x input` sequence and returns the `T x hidden`
/// hidden states. The input projection is computed for all steps at once;
/// only the recurrent part is stepped.
pub fn lstm_sequence(g: &mut Graph, layer: &LstmLayer<NodeId>, input: NodeId) -> Result<NodeId> {
    let (steps, in_size) = g.shape(input);
    let h = layer.hidden_size;
    if in_size != layer.input_size {
        return Err(Error::shape(
            "lstm_sequence",
            format!("layer expects {} inputs, sequence has {in_size}", layer.input_size),
        ));
    }
    let stacked = g.concat_rows(&[layer.w_i, layer.w_f, layer.w_o, layer.w_c])?;
    let wt = g.transpose(stacked);
    let w_h = g.slice_rows(wt, 0, h)?;
    let w_x = g.slice_rows(wt, h, h + in_size)?;
    let bias = g.concat_cols(&[layer.b_i, layer.b_f, layer.b_o, layer.b_c])?;
    let xw = g.matmul(input, w_x)?;
    let proj = g.add(xw, bias)?;

    let mut h_t = g.leaf(Matrix::zeros(1, h));
    let mut c_t = g.leaf(Matrix::zeros(1, h));
    let mut outputs = Vec::with_capacity(steps);
    for t in 0..steps {
        let xp = g.slice_rows(proj, t, t + 1)?;
        let hp = g.matmul(h_t, w_h)?;
        let pre = g.add(xp, hp)?;
        let i_pre = g.slice_cols(pre, 0, h)?;
        let f_pre = g.slice_cols(pre, h, 2 * h)?;
        let o_pre = g.slice_cols(pre, 2 * h, 3 * h)?;
        let c_pre = g.slice_cols(pre, 3 * h, 4 * h)?;
        let i = g.sigmoid(i_pre);
        let f = g.sigmoid(f_pre);
        let o = g.sigmoid(o_pre);
        let cand = g.tanh(c_pre);
        let keep = g.mul(f, c_t)?;
        let write = g.mul(i, cand)?;
        c_t = g.add(keep, write)?;
        let tc = g.tanh(c_t);
        h_t = g.mul(o, tc)?;
        outputs.push(h_t);
    }
    g.concat_rows(&outputs)
}

fn stack(g: &mut Graph, layers: &[LstmLayer<NodeId>], input: NodeId) -> Result<NodeId> {
    layers.iter().try_fold(input, |x, layer| lstm_sequence(g, layer, x))
}

fn linear(g: &mut Graph, lin: &Linear<NodeId>, x: NodeId) -> Result<NodeId> {
    let y = g.matmul(x, lin.weight)?;
    g.add(y, lin.bias)
}

/// Encoder half: per-step `(mu, logvar)` as `T x 1` nodes.
pub fn encode_graph(g: &mut Graph, w: &VaeWeights<NodeId>, x: NodeId) -> Result<(NodeId, NodeId)> {
    let hidden = stack(g, &w.encoder, x)?;
    let mu = linear(g, &w.mu_head, hidden)?;
    let logvar = linear(g, &w.logvar_head, hidden)?;
    Ok((mu, logvar))
}

/// `z = mu + exp(logvar / 2) * eps`.
pub fn reparameterize_graph(g: &mut Graph, mu: NodeId, logvar: NodeId, eps: NodeId) -> Result<NodeId> {
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let noise = g.mul(std, eps)?;
    g.add(mu, noise)
}

/// Decoder half: `T x 1` latent to `T x input_size` reconstruction.
pub fn decode_graph(g: &mut Graph, w: &VaeWeights<NodeId>, z: NodeId) -> Result<NodeId> {
    let expanded = linear(g, &w.latent_in, z)?;
    let hidden = stack(g, &w.decoder, expanded)?;
    linear(g, &w.output, hidden)
}

/// Loss nodes of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ElboTerms {
    pub total: NodeId,
    pub recon: NodeId,
    pub kl: NodeId,
}

/// `recon(x, x_recon) + beta * KL`, with
/// `KL = -0.5 mean(1 + logvar - mu^2 - exp(logvar))`.
pub fn elbo_loss(
    g: &mut Graph,
    x: NodeId,
    x_recon: NodeId,
    mu: NodeId,
    logvar: NodeId,
    cfg: &TrainConfig,
) -> Result<ElboTerms> {
    let recon = match cfg.recon_loss {
        ReconLoss::Mse => g.mse_loss(x_recon, x)?,
        ReconLoss::SmoothL1 => g.smooth_l1_loss(x_recon, x)?,
    };
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let a = g.add_scalar(logvar, 1.0);
    let b = g.sub(a, mu2)?;
    let c = g.sub(b, var)?;
    let m = g.mean(c);
    let kl = g.scale(m, -0.5);
    let weighted = g.scale(kl, cfg.kl_weight);
    let total = g.add(recon, weighted)?;
    Ok(ElboTerms { total, recon, kl })
}

/// Full training-mode forward pass with externally supplied noise.
pub fn vae_loss_graph(
    g: &mut Graph,
    w: &VaeWeights<NodeId>,
    x: NodeId,
    eps: NodeId,
    cfg: &TrainConfig,
) -> Result<ElboTerms> {
    let (mu, logvar) = encode_graph(g, w, x)?;
    let z = reparameterize_graph(g, mu, logvar, eps)?;
    let recon = decode_graph(g, w, z)?;
    elbo_loss(g, x, recon, mu, logvar, cfg)
}

fn check_input(params: &VaeParams, states: &Matrix) -> Result<()> {
    if states.rows() == 0 {
        return Err(Error::Input("empty sequence".into()));
    }
    if states.cols() != params.arch.input_size {
        return Err(Error::shape(
            "encode",
            format!(
                "model expects {} features, data has {}",
                params.arch.input_size,
                states.cols()
            ),
        ));
    }
    Ok(())
}

/// Per-step mean and log-variance of the latent.
pub fn encode(params: &VaeParams, states: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
    check_input(params, states)?;
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let x = g.leaf(states.clone());
    let (mu, logvar) = encode_graph(&mut g, &w, x)?;
    Ok((g.value(mu).as_slice().to_vec(), g.value(logvar).as_slice().to_vec()))
}

pub fn reparameterize(mu: &[f64], logvar: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if mu.len() != logvar.len() || mu.len() != eps.len() {
        return Err(Error::shape(
            "reparameterize",
            format!("lengths {}, {}, {}", mu.len(), logvar.len(), eps.len()),
        ));
    }
    Ok(mu
        .iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect())
}

/// Reconstructs `T x input_size` states from a per-step latent.
pub fn decode(params: &VaeParams, z: &[f64]) -> Result<Matrix> {
    if z.is_empty() {
        return Err(Error::Input("empty latent".into()));
    }
    let mut g = Graph::new();
    let w = params.bind(&mut g);
    let zn = g.leaf(Matrix::column(z));
    let out = decode_graph(&mut g, &w, zn)?;
    Ok(g.value(out).clone())
}

/// One scalar latent per frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSeries {
    pub z: Vec<f64>,
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl LatentSeries {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Inference-mode latent: `z = mu`.
pub fn encode_latent(params: &VaeParams, data: &Matrix) -> Result<LatentSeries> {
    let (mu, logvar) = encode(params, data)?;
    Ok(LatentSeries {
        z: mu.clone(),
        mu,
        logvar,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn write_loss_history<W: Write>(mut w: W, history: &[EpochLoss], comment: Option<&str>) -> Result<()> {
    if let Some(c) = comment {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "epoch,recon,kl,total")?;
    for e in history {
        writeln!(w, "{},{},{},{}", e.epoch, e.recon, e.kl, e.total)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: VaeParams,
    pub latent: LatentSeries,
    pub history: Vec<EpochLoss>,
}

impl TrainOutcome {
    pub fn final_recon(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |e| e.recon)
    }
}

/// Adaptive-moment optimiser state, one slot per tensor.
#[derive(Clone, Debug)]
struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(shapes: &[&Matrix]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    fn step(&mut self, params: Vec<&mut Matrix>, grads: &[Matrix], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, p) in params.into_iter().enumerate() {
            let g = grads[k].as_slice();
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (idx, w) in p.as_mut_slice().iter_mut().enumerate() {
                m[idx] = self.beta1 * m[idx] + (1.0 - self.beta1) * g[idx];
                v[idx] = self.beta2 * v[idx] + (1.0 - self.beta2) * g[idx] * g[idx];
                let mh = m[idx] / bc1;
                let vh = v[idx] / bc2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Full-sequence gradient training. Deterministic for a fixed config.
pub fn train(arch: &VaeArch, data: &TrajectorySet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let params = VaeParams::init(arch, cfg.seed)?;
    train_from(params, data, cfg)
}

/// Continues training from existing weights.
pub fn train_from(mut params: VaeParams, data: &TrajectorySet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let x = &data.features;
    check_input(&params, x)?;
    if x.as_slice().iter().any(|&v| !(-1e-9..=1.0 + 1e-9).contains(&v)) {
        warn!("training data has values outside [0, 1]; min-max scaling is expected");
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    let mut adam = Adam::new(&params.weights.tensors());
    let mut history = Vec::with_capacity(cfg.epochs);
    let steps = x.rows();

    for epoch in 0..cfg.epochs {
        let eps: Vec<f64> = (0..steps).map(|_| noise_rng.sample(StandardNormal)).collect();
        let mut g = Graph::new();
        let w = params.bind(&mut g);
        let xn = g.leaf(x.clone());
        let en = g.leaf(Matrix::column(&eps));
        let terms = vae_loss_graph(&mut g, &w, xn, en, cfg)?;
        let record = EpochLoss {
            epoch,
            recon: g.value(terms.recon).as_slice()[0],
            kl: g.value(terms.kl).as_slice()[0],
            total: g.value(terms.total).as_slice()[0],
        };
        if !record.total.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        history.push(record);

        let mut grads = g.backward(terms.total)?;
        let mut flat: Vec<Matrix> = w.tensors().into_iter().map(|id| grads.take(*id)).collect();
        let norm = flat.iter().map(Matrix::squared_norm).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if let Some(max) = cfg.clip_norm {
            if norm > max {
                let s = max / norm;
                flat.iter_mut().for_each(|m| m.scale_in_place(s));
            }
        }
        adam.step(params.weights.tensors_mut(), &flat, cfg.learning_rate);
    }

    params.train_config = Some(cfg.clone());
    let latent = encode_latent(&params, x)?;
    Ok(TrainOutcome {
        params,
        latent,
        history,
    })
}

/// Mean squared error between two equally shaped matrices.
pub fn mse(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mse", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64)
}
