//! Non-parametric (free coordinates) and parametric (MLP encoder) training.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Embedding};
use crate::error::{invalid, Error, Result};
use crate::loss::{evaluate, LossSpec, Progress};
use crate::neighbor_graph::NeighborGraph;
use crate::sampler::{BatchSampler, PairBatch, SamplerConfig, DEFAULT_BATCH_SIZE, DEFAULT_MIDNEAR_POOL};

/// Per-dimension standard deviation of the PCA initialization.
pub const INIT_SCALE: f64 = 1e-2;

/// Per-pair force bound, as in UMAP's gradient clipping.
pub const DEFAULT_GRAD_CLIP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nonparametric,
    Parametric,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonparametric" | "non-parametric" => Ok(Mode::Nonparametric),
            "parametric" => Ok(Mode::Parametric),
            other => Err(invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub mode: Mode,
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Mid-nears per anchor for losses that use them.
    pub midnears: usize,
    pub midnear_pool: usize,
    /// Bound on the force any single pair may exert on a coordinate. Batch
    /// gradient entries are clipped to `±grad_clip / batch_size` before the
    /// momentum update (non-parametric only); infinity disables clipping.
    pub grad_clip: f64,
}

impl OptimConfig {
    pub fn nonparametric() -> Self {
        Self {
            epochs: 250,
            learning_rate: 1.0,
            momentum: 0.9,
            batch_size: DEFAULT_BATCH_SIZE,
            seed: 0,
            deterministic: true,
            mode: Mode::Nonparametric,
            dim: 2,
            midnears: 1,
            midnear_pool: DEFAULT_MIDNEAR_POOL,
            grad_clip: DEFAULT_GRAD_CLIP,
        }
    }

    pub fn parametric() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.01,
            mode: Mode::Parametric,
            ..Self::nonparametric()
        }
    }

    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Nonparametric => Self::nonparametric(),
            Mode::Parametric => Self::parametric(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(invalid("epochs must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(invalid("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if !(self.grad_clip > 0.0) {
            return Err(invalid("gradient clip must be > 0"));
        }
        if self.batch_size < 1 || self.dim < 1 {
            return Err(invalid("batch size and dimension must be >= 1"));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub wall_ms: f64,
    pub w_u: f64,
}

pub fn write_log<W: Write>(log: &[EpochRecord], mut w: W) -> Result<()> {
    for rec in log {
        serde_json::to_writer(&mut w, rec)?;
        writeln!(w)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub embedding: Embedding,
    pub log: Vec<EpochRecord>,
    /// Present for parametric fits.
    pub encoder: Option<Encoder>,
}

fn steps_per_epoch(graph: &NeighborGraph, batch_size: usize) -> usize {
    graph.n_edges().div_ceil(batch_size).max(1)
}

fn make_sampler<'a>(
    data: &'a Dataset,
    graph: &'a NeighborGraph,
    spec: &LossSpec,
    cfg: &OptimConfig,
) -> Result<BatchSampler<'a>> {
    spec.validate()?;
    cfg.validate()?;
    if graph.n() != data.len() {
        return Err(invalid("graph was built from a different dataset"));
    }
    let labels = if spec.kind.is_supervised() {
        Some(data.require_supervision()?)
    } else {
        None
    };
    let scfg = SamplerConfig {
        batch_size: cfg.batch_size,
        m: spec.m,
        midnears: if spec.kind.uses_midnears() { cfg.midnears } else { 0 },
        midnear_pool: cfg.midnear_pool,
    };
    BatchSampler::new(data, graph, scfg, labels, cfg.seed)
}

/// Top-`d` principal components of the data, each scaled to standard
/// deviation [`INIT_SCALE`]. Eigenvector signs are fixed so the largest
/// absolute loading is positive.
pub fn pca_init(data: &Dataset, d: usize) -> Result<Embedding> {
    let (n, dim) = (data.len(), data.dim());
    if d > dim {
        return Err(invalid(format!("embedding dimension {d} exceeds data dimension {dim}")));
    }
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (m, x) in mean.iter_mut().zip(data.point(i)) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, dim, |i, c| data.point(i)[c] - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut coords = vec![0.0; n * d];
    for (out_c, &ev) in order.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(ev).into_owned();
        let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v = -v;
        }
        let proj = &centered * v;
        let m = proj.mean();
        let sd = (proj.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let s = if sd > 0.0 { INIT_SCALE / sd } else { 0.0 };
        for i in 0..n {
            coords[i * d + out_c] = (proj[i] - m) * s;
        }
    }
    Embedding::new(coords, d)
}

/// Fits free embedding coordinates by SGD with momentum.
pub fn fit_nonparametric(
    data: &Dataset,
    graph: &NeighborGraph,
    spec: &LossSpec,
    cfg: &OptimConfig,
) -> Result<FitResult> {
    let sampler = make_sampler(data, graph, spec, cfg)?;
    let mut coords = pca_init(data, cfg.dim)?;
    let mut velocity = vec![0.0; coords.coords().len()];
    let steps = steps_per_epoch(graph, cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let progress = Progress {
            epoch,
            total_epochs: cfg.epochs,
        };
        let mut total = 0.0;
        for step in 0..steps {
            let batch = sampler.batch((epoch * steps + step) as u64)?;
            let lg = evaluate(spec, &batch, &coords, progress)?;
            total += lg.value;
            let mut grad = lg.to_dense(coords.len());
            let bound = cfg.grad_clip / cfg.batch_size as f64;
            grad.iter_mut().for_each(|g| *g = g.clamp(-bound, bound));
            sgd_step(coords.coords_mut(), &mut velocity, &grad, cfg.learning_rate, cfg.momentum);
            if !coords.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
        }
        log.push(EpochRecord {
            epoch,
            mean_loss: total / steps as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            w_u: spec.schedule.w_u(epoch, cfg.epochs),
        });
    }
    Ok(FitResult {
        embedding: coords,
        log,
        encoder: None,
    })
}

/// `v ← μ v − λ g; θ ← θ + v`.
pub fn sgd_step(params: &mut [f64], velocity: &mut [f64], grad: &[f64], lr: f64, momentum: f64) {
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grad) {
        *v = momentum * *v - lr * g;
        *p += *v;
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"CNEMLP01";

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `out × in`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
    n_in: usize,
    n_out: usize,
}

/// Fully connected network `D → 64 → 64 → d`; ReLU on hidden layers,
/// identity on the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    layers: Vec<Layer>,
}

/// Activations kept for the backward pass.
struct Trace {
    /// Input to each layer, `rows × n_in`.
    inputs: Vec<Vec<f64>>,
    output: Vec<f64>,
    rows: usize,
}

pub const HIDDEN_WIDTH: usize = 64;

impl Encoder {
    /// Uniform fan-in initialization `U(-1/√fan_in, 1/√fan_in)` for weights
    /// and biases.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid("encoder needs at least two non-zero layer sizes"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = 1.0 / (n_in as f64).sqrt();
                let weights = (0..n_in * n_out).map(|_| rng.random_range(-bound..bound)).collect();
                let bias = (0..n_out).map(|_| rng.random_range(-bound..bound)).collect();
                Layer {
                    weights,
                    bias,
                    n_in,
                    n_out,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn for_data(input_dim: usize, output_dim: usize, seed: u64) -> Result<Self> {
        Self::new(&[input_dim, HIDDEN_WIDTH, HIDDEN_WIDTH, output_dim], seed)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].n_in];
        s.extend(self.layers.iter().map(|l| l.n_out));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.n_out)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer: weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(invalid("parameter vector has the wrong length"));
        }
        let mut off = 0;
        for l in self.layers.iter_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    fn forward_trace(&self, input: &[f64], rows: usize) -> Trace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let mut y = vec![0.0; rows * l.n_out];
            for r in 0..rows {
                let xr = &x[r * l.n_in..(r + 1) * l.n_in];
                for o in 0..l.n_out {
                    let w = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                    let mut acc = l.bias[o];
                    for (a, b) in w.iter().zip(xr) {
                        acc += a * b;
                    }
                    y[r * l.n_out + o] = if li < last { acc.max(0.0) } else { acc };
                }
            }
            inputs.push(std::mem::replace(&mut x, y));
        }
        Trace {
            inputs,
            output: x,
            rows,
        }
    }

    /// Gradient of the loss with respect to the flat parameter vector, given
    /// `∂L/∂output` for every traced row.
    fn backward(&self, trace: &Trace, grad_out: &[f64]) -> Vec<f64> {
        let rows = trace.rows;
        let mut layer_grads: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            let x = &trace.inputs[li];
            let mut gw = vec![0.0; l.weights.len()];
            let mut gb = vec![0.0; l.n_out];
            let mut dx = vec![0.0; rows * l.n_in];
            for r in 0..rows {
                let xr = &x[r * l.n_in..(r + 1) * l.n_in];
                for o in 0..l.n_out {
                    let d = delta[r * l.n_out + o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let w = &l.weights[o * l.n_in..(o + 1) * l.n_in];
                    let gwr = &mut gw[o * l.n_in..(o + 1) * l.n_in];
                    let dxr = &mut dx[r * l.n_in..(r + 1) * l.n_in];
                    for k in 0..l.n_in {
                        gwr[k] += d * xr[k];
                        dxr[k] += d * w[k];
                    }
                }
            }
            if li > 0 {
                // the input of this layer is the ReLU output of the previous one
                for (g, a) in dx.iter_mut().zip(x) {
                    if *a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            layer_grads.push((gw, gb));
            delta = dx;
        }
        layer_grads.reverse();
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in layer_grads {
            flat.extend(gw);
            flat.extend(gb);
        }
        flat
    }

    /// Row-wise forward pass.
    pub fn transform(&self, points: &[f64], input_dim: usize) -> Result<Embedding> {
        if input_dim != self.input_dim() {
            return Err(invalid(format!(
                "encoder expects {} input features, got {input_dim}",
                self.input_dim()
            )));
        }
        if points.len() % input_dim != 0 {
            return Err(invalid("input does not form whole rows"));
        }
        let rows = points.len() / input_dim;
        Embedding::new(self.forward_trace(points, rows).output, self.output_dim())
    }

    pub fn transform_dataset(&self, data: &Dataset) -> Result<Embedding> {
        self.transform(data.points(), data.dim())
    }

    /// Binary checkpoint, little-endian:
    /// magic `CNEMLP01`, `u64` layer-size count, `u64` sizes, then per layer
    /// the `out × in` row-major weights followed by the biases as `f64`.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let sizes = self.sizes();
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(sizes.len() as u64).to_le_bytes())?;
        for s in &sizes {
            w.write_all(&(*s as u64).to_le_bytes())?;
        }
        for v in self.params() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let count = u64::from_le_bytes(word) as usize;
        if !(2..=64).contains(&count) {
            return Err(Error::Checkpoint(format!("implausible layer count {count}")));
        }
        let mut sizes = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut word)?;
            sizes.push(u64::from_le_bytes(word) as usize);
        }
        let mut enc = Encoder::new(&sizes, 0).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut flat = Vec::with_capacity(enc.n_params());
        for _ in 0..enc.n_params() {
            r.read_exact(&mut word)?;
            flat.push(f64::from_le_bytes(word));
        }
        enc.set_params(&flat)?;
        Ok(enc)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Loss value and parameter gradient of `encoder` on one batch.
pub fn encoder_loss_grad(
    encoder: &Encoder,
    data: &Dataset,
    batch: &PairBatch,
    spec: &LossSpec,
    progress: Progress,
) -> Result<(f64, Vec<f64>)> {
    let members = batch.members();
    let dim = data.dim();
    let mut input = Vec::with_capacity(members.len() * dim);
    for &i in &members {
        input.extend_from_slice(data.point(i));
    }
    let trace = encoder.forward_trace(&input, members.len());
    let d = encoder.output_dim();
    // scatter member outputs into a full-size embedding the loss can index
    let mut coords = Embedding::zeros(data.len(), d);
    for (r, &i) in members.iter().enumerate() {
        coords.row_mut(i).copy_from_slice(&trace.output[r * d..(r + 1) * d]);
    }
    let lg = evaluate(spec, batch, &coords, progress)?;
    let mut grad_out = vec![0.0; members.len() * d];
    for (r, &i) in members.iter().enumerate() {
        if let Some(g) = lg.get(i) {
            grad_out[r * d..(r + 1) * d].copy_from_slice(g);
        }
    }
    Ok((lg.value, encoder.backward(&trace, &grad_out)))
}

/// Central finite-difference check of [`encoder_loss_grad`] over every
/// parameter; returns `max |analytic − numeric| / max(1, |numeric|)`.
pub fn encoder_grad_check(
    encoder: &Encoder,
    data: &Dataset,
    batch: &PairBatch,
    spec: &LossSpec,
    progress: Progress,
    eps: f64,
) -> Result<f64> {
    let (_, analytic) = encoder_loss_grad(encoder, data, batch, spec, progress)?;
    let base = encoder.params();
    let mut work = encoder.clone();
    let mut worst: f64 = 0.0;
    let mut flat = base.clone();
    for p in 0..base.len() {
        flat[p] = base[p] + eps;
        work.set_params(&flat)?;
        let plus = encoder_loss_grad(&work, data, batch, spec, progress)?.0;
        flat[p] = base[p] - eps;
        work.set_params(&flat)?;
        let minus = encoder_loss_grad(&work, data, batch, spec, progress)?.0;
        flat[p] = base[p];
        let numeric = (plus - minus) / (2.0 * eps);
        worst = worst.max((analytic[p] - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

/// Trains an encoder `f_θ: R^D → R^d` and embeds the full dataset with it.
pub fn fit_parametric(
    data: &Dataset,
    graph: &NeighborGraph,
    spec: &LossSpec,
    cfg: &OptimConfig,
) -> Result<FitResult> {
    let sampler = make_sampler(data, graph, spec, cfg)?;
    let mut encoder = Encoder::for_data(data.dim(), cfg.dim, cfg.seed)?;
    let mut params = encoder.params();
    let mut velocity = vec![0.0; params.len()];
    let steps = steps_per_epoch(graph, cfg.batch_size);
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let progress = Progress {
            epoch,
            total_epochs: cfg.epochs,
        };
        let mut total = 0.0;
        for step in 0..steps {
            let batch = sampler.batch((epoch * steps + step) as u64)?;
            let (value, grad) = encoder_loss_grad(&encoder, data, &batch, spec, progress)?;
            total += value;
            sgd_step(&mut params, &mut velocity, &grad, cfg.learning_rate, cfg.momentum);
            encoder.set_params(&params)?;
            if !encoder.is_finite() {
                return Err(Error::Diverged { epoch, step });
            }
        }
        log.push(EpochRecord {
            epoch,
            mean_loss: total / steps as f64,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            w_u: spec.schedule.w_u(epoch, cfg.epochs),
        });
    }
    let embedding = encoder.transform_dataset(data)?;
    if !embedding.is_finite() {
        return Err(Error::Diverged {
            epoch: cfg.epochs,
            step: 0,
        });
    }
    Ok(FitResult {
        embedding,
        log,
        encoder: Some(encoder),
    })
}

/// Dispatches on `cfg.mode`.
pub fn fit(data: &Dataset, graph: &NeighborGraph, spec: &LossSpec, cfg: &OptimConfig) -> Result<FitResult> {
    match cfg.mode {
        Mode::Nonparametric => fit_nonparametric(data, graph, spec, cfg),
        Mode::Parametric => fit_parametric(data, graph, spec, cfg),
    }
}
