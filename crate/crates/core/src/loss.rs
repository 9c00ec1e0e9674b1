//! The contrastive neighbor-embedding loss family and its analytic gradients.
//!
//! Every loss is a function of pairwise log-similarities `l = log k(z_a, z_b)`
//! between batch members. Each evaluator computes the batch value together
//! with `∂L/∂l` for every pair it touched, and the kernel turns those into
//! coordinate gradients by the chain rule.
//!
//! Kernels: `tsne`, `umap`, `nce`, `trimap`, `pacmap`, `infonce` and `tscne`
//! use the Cauchy kernel `φ = 1/(1 + d²)`; `sscl`, `snn`, `supcon` and
//! `sup_snn` use the temperature kernel `exp(sim/τ)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Embedding;
use crate::error::{invalid, Error, Result};
use crate::kernel::{cauchy_unnormalized, sq_dist_unchecked, KernelSpec, Similarity, MIN_SQ_DIST};
use crate::sampler::{PairBatch, ScheduleSpec, DEFAULT_NEGATIVES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Tsne,
    Umap,
    Nce,
    Trimap,
    Pacmap,
    Infonce,
    Sscl,
    Snn,
    Supcon,
    SupSnn,
    Tscne,
}

impl LossKind {
    pub const ALL: [LossKind; 11] = [
        LossKind::Tsne,
        LossKind::Umap,
        LossKind::Nce,
        LossKind::Trimap,
        LossKind::Pacmap,
        LossKind::Infonce,
        LossKind::Sscl,
        LossKind::Snn,
        LossKind::Supcon,
        LossKind::SupSnn,
        LossKind::Tscne,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Tsne => "tsne",
            LossKind::Umap => "umap",
            LossKind::Nce => "nce",
            LossKind::Trimap => "trimap",
            LossKind::Pacmap => "pacmap",
            LossKind::Infonce => "infonce",
            LossKind::Sscl => "sscl",
            LossKind::Snn => "snn",
            LossKind::Supcon => "supcon",
            LossKind::SupSnn => "sup_snn",
            LossKind::Tscne => "tscne",
        }
    }

    /// Needs class labels (label-positive sets).
    pub fn is_supervised(self) -> bool {
        matches!(self, LossKind::Supcon | LossKind::SupSnn | LossKind::Tscne)
    }

    pub fn uses_midnears(self) -> bool {
        matches!(self, LossKind::Trimap | LossKind::Pacmap | LossKind::Tscne)
    }

    pub fn uses_temperature(self) -> bool {
        matches!(
            self,
            LossKind::Sscl | LossKind::Snn | LossKind::Supcon | LossKind::SupSnn
        )
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == norm || (norm == "t_sne" && *k == LossKind::Tsne))
            .ok_or_else(|| invalid(format!("unknown loss kind {s:?}")))
    }
}

/// Optional departures from the as-written loss forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantFlags {
    /// Forces the literal forms: overrides `log_ratio` and `corrected_pacmap_sign`.
    pub paper_as_written: bool,
    /// TriMap and t-SCNE ratios become InfoNCE-style log-ratios.
    pub log_ratio: bool,
    /// PaCMAP negatives contribute `+φ/(φ+1)` instead of `-(1 - φ/(φ+1))`.
    pub corrected_pacmap_sign: bool,
    /// Temperature-kernel denominators also contain the positive.
    pub denominator_includes_positive: bool,
}

impl Default for VariantFlags {
    fn default() -> Self {
        Self {
            paper_as_written: false,
            log_ratio: false,
            corrected_pacmap_sign: true,
            denominator_includes_positive: false,
        }
    }
}

impl VariantFlags {
    pub fn effective_log_ratio(&self) -> bool {
        self.log_ratio && !self.paper_as_written
    }

    pub fn effective_corrected_pacmap_sign(&self) -> bool {
        self.corrected_pacmap_sign && !self.paper_as_written
    }
}

pub const DEFAULT_TAU: f64 = 1.0;

/// A fully specified member of the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// Negatives per positive pair.
    pub m: usize,
    /// Temperature of the exponential kernel.
    pub tau: f64,
    pub similarity: Similarity,
    pub schedule: ScheduleSpec,
    pub flags: VariantFlags,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            m: DEFAULT_NEGATIVES,
            tau: DEFAULT_TAU,
            similarity: Similarity::NegativeDistance,
            schedule: ScheduleSpec::default(),
            flags: VariantFlags::default(),
        }
    }

    pub fn with_log_ratio(mut self, on: bool) -> Self {
        self.flags.log_ratio = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("m must be >= 1"));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(invalid("tau must be > 0"));
        }
        self.schedule.validate()
    }

    fn kernel(&self) -> KernelSpec {
        if self.kind.uses_temperature() {
            KernelSpec::exp(self.tau, self.similarity).unwrap_or_else(|_| KernelSpec::cauchy())
        } else {
            KernelSpec::cauchy()
        }
    }
}

/// Where in training the loss is evaluated; drives `w_u(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Progress {
    pub epoch: usize,
    pub total_epochs: usize,
}

impl Progress {
    pub fn start(total_epochs: usize) -> Self {
        Self {
            epoch: 0,
            total_epochs,
        }
    }
}

/// Batch loss value with sparse per-sample gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    indices: Vec<usize>,
    grads: Vec<f64>,
    dim: usize,
    /// Anchors that entered the batch average.
    pub contributing_anchors: usize,
    /// Supervised anchors dropped for having no label positive.
    pub skipped_anchors: usize,
}

impl LossGrad {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn get(&self, i: usize) -> Option<&[f64]> {
        let pos = self.indices.binary_search(&i).ok()?;
        Some(&self.grads[pos * self.dim..(pos + 1) * self.dim])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.indices
            .iter()
            .copied()
            .zip(self.grads.chunks_exact(self.dim.max(1)))
    }

    /// Gradient scattered into a dense `n × d` buffer.
    pub fn to_dense(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.dim];
        for (i, g) in self.iter() {
            out[i * self.dim..(i + 1) * self.dim].copy_from_slice(g);
        }
        out
    }
}

/// Dense gradient accumulator over the embedding rows.
struct Accum<'a> {
    coords: &'a Embedding,
    kernel: KernelSpec,
    grad: Vec<f64>,
    touched: Vec<bool>,
    scratch_a: Vec<f64>,
    scratch_b: Vec<f64>,
}

impl<'a> Accum<'a> {
    fn new(coords: &'a Embedding, kernel: KernelSpec) -> Self {
        let d = coords.dim();
        Self {
            coords,
            kernel,
            grad: vec![0.0; coords.len() * d],
            touched: vec![false; coords.len()],
            scratch_a: vec![0.0; d],
            scratch_b: vec![0.0; d],
        }
    }

    fn log_sim(&self, i: usize, j: usize) -> f64 {
        self.kernel.log_sim(self.coords.row(i), self.coords.row(j))
    }

    /// Clamped squared distance.
    fn sq(&self, i: usize, j: usize) -> f64 {
        sq_dist_unchecked(self.coords.row(i), self.coords.row(j)).max(MIN_SQ_DIST)
    }

    /// Adds `g · ∂ log k_ij / ∂z` for both endpoints.
    fn push(&mut self, i: usize, j: usize, g: f64) {
        self.touched[i] = true;
        self.touched[j] = true;
        if g == 0.0 {
            return;
        }
        let d = self.coords.dim();
        self.scratch_a.iter_mut().for_each(|v| *v = 0.0);
        self.scratch_b.iter_mut().for_each(|v| *v = 0.0);
        self.kernel.add_log_sim_grad(
            self.coords.row(i),
            self.coords.row(j),
            g,
            &mut self.scratch_a,
            &mut self.scratch_b,
        );
        for c in 0..d {
            self.grad[i * d + c] += self.scratch_a[c];
            self.grad[j * d + c] += self.scratch_b[c];
        }
    }

    /// Log-similarity and its radial coefficient (NaN when not radial).
    fn pair(&self, i: usize, j: usize) -> (f64, f64) {
        let (a, b) = (self.coords.row(i), self.coords.row(j));
        self.kernel
            .log_sim_radial(a, b)
            .unwrap_or_else(|| (self.kernel.log_sim(a, b), f64::NAN))
    }

    /// Similarity and radial coefficient for Cauchy-family kernels.
    fn pair_sim(&self, i: usize, j: usize) -> (f64, f64) {
        self.kernel.sim_radial(self.coords.row(i), self.coords.row(j))
    }

    /// [`Accum::push`] given the coefficient from [`Accum::pair`].
    fn push_radial(&mut self, i: usize, j: usize, g: f64, coef: f64) {
        if coef.is_nan() {
            return self.push(i, j, g);
        }
        self.touched[i] = true;
        self.touched[j] = true;
        let w = g * coef;
        if w == 0.0 {
            return;
        }
        let d = self.coords.dim();
        let (zi, zj) = (self.coords.row(i), self.coords.row(j));
        for c in 0..d {
            let t = w * (zi[c] - zj[c]);
            self.grad[i * d + c] += t;
            self.grad[j * d + c] -= t;
        }
    }

    fn touch(&mut self, i: usize) {
        self.touched[i] = true;
    }

    fn finish(self, value: f64, contributing: usize, skipped: usize) -> LossGrad {
        let d = self.coords.dim();
        let mut indices = Vec::new();
        let mut grads = Vec::new();
        for (i, &t) in self.touched.iter().enumerate() {
            if t {
                indices.push(i);
                grads.extend_from_slice(&self.grad[i * d..(i + 1) * d]);
            }
        }
        LossGrad {
            value,
            indices,
            grads,
            dim: d,
            contributing_anchors: contributing,
            skipped_anchors: skipped,
        }
    }
}

fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}


fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(v: f64, i: usize, j: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { i, j })
    }
}

fn check_batch(batch: &PairBatch, coords: &Embedding) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    if batch.max_index() >= coords.len() {
        return Err(invalid(format!(
            "batch references sample {} but the embedding has {} rows",
            batch.max_index(),
            coords.len()
        )));
    }
    Ok(())
}

/// How per-positive log-ratios `ρ_p = log(k_p / denominator)` combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Aggregate {
    /// `-log Σ_p exp(ρ_p)`
    LogOfSum,
    /// `-(1/|P|) Σ_p ρ_p`
    MeanOfLogs,
    /// `-log((1/|P|) Σ_p exp(ρ_p))`
    LogOfMean,
    /// `-(1/|P|) Σ_p exp(ρ_p)`: raw ratios, no log.
    MeanOfRatios,
}

/// One anchor's contrastive term against a shared denominator set.
///
/// The denominator is `Σ_{k∈den} k_ik`, plus `k_ip` for each positive when
/// `include_positive`. Returns the unscaled value; gradients are pushed with
/// weight `scale`.
fn contrast_anchor(
    acc: &mut Accum<'_>,
    anchor: usize,
    positives: &[usize],
    den: &[usize],
    include_positive: bool,
    agg: Aggregate,
    scale: f64,
) -> f64 {
    let mut rho = Vec::with_capacity(positives.len());
    // dρ_p/dl_p; dρ_p/dL_den is its negation
    let mut drho = Vec::with_capacity(positives.len());
    let cp: Vec<f64>;
    let cd: Vec<f64>;
    // softmax weight of each denominator term
    let soft: Vec<f64>;
    if acc.kernel.is_cauchy_family() {
        // similarities directly; avoids a log per pair
        let (kp, c): (Vec<f64>, Vec<f64>) = positives.iter().map(|&p| acc.pair_sim(anchor, p)).unzip();
        let (kd, c2): (Vec<f64>, Vec<f64>) = den.iter().map(|&k| acc.pair_sim(anchor, k)).unzip();
        let total: f64 = kd.iter().sum();
        let l_den = total.ln();
        for &k in &kp {
            if include_positive {
                let x = total / k;
                rho.push(-x.ln_1p());
                drho.push(x / (1.0 + x));
            } else {
                rho.push(k.ln() - l_den);
                drho.push(1.0);
            }
        }
        soft = kd.iter().map(|k| k / total).collect();
        (cp, cd) = (c, c2);
    } else {
        let (lp, c): (Vec<f64>, Vec<f64>) = positives.iter().map(|&p| acc.pair(anchor, p)).unzip();
        let (ld, c2): (Vec<f64>, Vec<f64>) = den.iter().map(|&k| acc.pair(anchor, k)).unzip();
        let l_den = logsumexp(&ld);
        for &l in &lp {
            if include_positive {
                // ρ = -softplus(L - l), dρ/dl = σ(L - l)
                let x = l_den - l;
                let (r, q) = if x > 0.0 {
                    let t = (-x).exp();
                    (-x - t.ln_1p(), 1.0 / (1.0 + t))
                } else {
                    let t = x.exp();
                    (-t.ln_1p(), t / (1.0 + t))
                };
                rho.push(r);
                drho.push(q);
            } else {
                rho.push(l - l_den);
                drho.push(1.0);
            }
        }
        soft = ld.iter().map(|l| (l - l_den).exp()).collect();
        (cp, cd) = (c, c2);
    }
    let np = rho.len() as f64;
    let (value, dv_drho): (f64, Vec<f64>) = match agg {
        Aggregate::MeanOfLogs => (-rho.iter().sum::<f64>() / np, vec![-1.0 / np; rho.len()]),
        Aggregate::LogOfSum | Aggregate::LogOfMean => {
            let lse = logsumexp(&rho);
            let v = if agg == Aggregate::LogOfMean {
                -(lse - np.ln())
            } else {
                -lse
            };
            (v, rho.iter().map(|r| -(r - lse).exp()).collect())
        }
        Aggregate::MeanOfRatios => {
            let ratios: Vec<f64> = rho.iter().map(|r| r.exp()).collect();
            (
                -ratios.iter().sum::<f64>() / np,
                ratios.iter().map(|r| -r / np).collect(),
            )
        }
    };
    let mut g_den = 0.0;
    for (p, &pos) in positives.iter().enumerate() {
        acc.push_radial(anchor, pos, scale * dv_drho[p] * drho[p], cp[p]);
        g_den -= dv_drho[p] * drho[p];
    }
    for (k, &neg) in den.iter().enumerate() {
        acc.push_radial(anchor, neg, scale * g_den * soft[k], cd[k]);
    }
    value
}

/// Batch loss and gradient for any member of the family.
pub fn evaluate(spec: &LossSpec, batch: &PairBatch, coords: &Embedding, progress: Progress) -> Result<LossGrad> {
    match spec.kind {
        LossKind::Tsne => loss_tsne(batch, coords, spec, progress),
        LossKind::Umap | LossKind::Nce => loss_umap_nce(batch, coords, spec, progress),
        LossKind::Trimap => loss_trimap(batch, coords, spec, progress),
        LossKind::Pacmap => loss_pacmap(batch, coords, spec, progress),
        LossKind::Infonce => loss_infonce(batch, coords, spec, progress),
        LossKind::Sscl => loss_sscl(batch, coords, spec, progress),
        LossKind::Snn => loss_snn(batch, coords, spec, progress),
        LossKind::Supcon => loss_supcon(batch, coords, spec, progress),
        LossKind::SupSnn => loss_sup_snn(batch, coords, spec, progress),
        LossKind::Tscne => loss_tscne(batch, coords, spec, progress),
    }
}

/// Expected negative log-likelihood with the partition function estimated
/// over the batch's positive pairs, averaged per pair:
/// `-(1/B) Σ log φ_ij + log Σ φ_kl`.
pub fn loss_tsne(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, spec.kernel());
    let b = batch.len() as f64;
    let l: Vec<f64> = (0..batch.len())
        .map(|p| acc.log_sim(batch.anchors[p], batch.positives[p]))
        .collect();
    let lse = logsumexp(&l);
    let value = -l.iter().sum::<f64>() / b + lse;
    check_finite(value, batch.anchors[0], batch.positives[0])?;
    for (p, lp) in l.iter().enumerate() {
        let g = -1.0 / b + (lp - lse).exp();
        acc.push(batch.anchors[p], batch.positives[p], g);
    }
    for neg in &batch.negatives {
        acc.touch(*neg);
    }
    Ok(acc.finish(value, batch.len(), 0))
}

/// UMAP's effective loss, identical to NCE with the Cauchy kernel:
/// `-(1/B)[Σ log φ_ij + Σ log(1 - φ_ik)]`.
pub fn loss_umap_nce(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, KernelSpec::cauchy());
    let _ = spec;
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for p in 0..batch.len() {
        let (i, j) = (batch.anchors[p], batch.positives[p]);
        let mut v = -acc.log_sim(i, j);
        acc.push(i, j, -scale);
        for &k in batch.negatives_of(p) {
            let u = acc.sq(i, k);
            // log(1 - φ) = log u - log(1 + u); d/dlogφ = -1/u
            v -= u.ln() - u.ln_1p();
            acc.push(i, k, scale / u);
        }
        total += check_finite(v, i, j)?;
    }
    Ok(acc.finish(total * scale, batch.len(), 0))
}

/// Value of [`loss_umap_nce`] computed through the unnormalized kernel
/// `φ̃ = 1/d²`, using `φ = φ̃/(φ̃+1)` and `1 - φ = 1/(φ̃+1)`.
pub fn umap_value_via_unnormalized(batch: &PairBatch, coords: &Embedding) -> Result<f64> {
    check_batch(batch, coords)?;
    let sq = |i: usize, j: usize| sq_dist_unchecked(coords.row(i), coords.row(j)).max(MIN_SQ_DIST);
    let mut total = 0.0;
    for p in 0..batch.len() {
        let i = batch.anchors[p];
        let t = cauchy_unnormalized(sq(i, batch.positives[p]))?;
        total -= t.ln() - t.ln_1p();
        for &k in batch.negatives_of(p) {
            let t = cauchy_unnormalized(sq(i, k))?;
            total -= -t.ln_1p();
        }
    }
    Ok(total / batch.len() as f64)
}

/// Triplet ratios `φ_ij / (φ_ij + φ_ik)` over (positive, negative) and
/// (mid-near, negative) triplets, each group averaged over its triplets.
pub fn loss_trimap(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, KernelSpec::cauchy());
    let w_u = spec.schedule.w_u(progress.epoch, progress.total_epochs);
    let log_ratio = spec.flags.effective_log_ratio();
    let n_main = (batch.len() * batch.m) as f64;
    let n_mid = batch
        .midnears
        .iter()
        .map(|u| u.len() * batch.m)
        .sum::<usize>() as f64;

    // contribution -(term), term = σ(x - y) or log σ(x - y)
    let triplet = |acc: &mut Accum<'_>, i: usize, j: usize, k: usize, weight: f64| -> f64 {
        let lj = acc.log_sim(i, j);
        let lk = acc.log_sim(i, k);
        let r = sigmoid(lj - lk);
        let (term, dterm) = if log_ratio {
            ((lj - lk).min(0.0) - (-(lj - lk).abs()).exp().ln_1p(), 1.0 - r)
        } else {
            (r, r * (1.0 - r))
        };
        acc.push(i, j, -weight * dterm);
        acc.push(i, k, weight * dterm);
        -term * weight
    };

    let mut value = 0.0;
    for p in 0..batch.len() {
        let (i, j) = (batch.anchors[p], batch.positives[p]);
        let mut v = 0.0;
        for &k in batch.negatives_of(p) {
            v += triplet(&mut acc, i, j, k, 1.0 / n_main);
        }
        if n_mid > 0.0 {
            for &u in &batch.midnears[p] {
                for &k in batch.negatives_of(p) {
                    v += triplet(&mut acc, i, u, k, w_u / n_mid);
                }
            }
        }
        value += check_finite(v, i, j)?;
    }
    Ok(acc.finish(value, batch.len(), 0))
}

/// `-w_P Σ s(φ_ij) - w_U(t) Σ s(φ_iu) + Σ neg(φ_ik)`, `s(φ) = φ/(φ+1)`,
/// averaged over anchors; `neg = s` (corrected) or `-(1 - s)` (as written).
pub fn loss_pacmap(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, KernelSpec::cauchy());
    let w_p = spec.schedule.w_p;
    let w_u = spec.schedule.w_u(progress.epoch, progress.total_epochs);
    let corrected = spec.flags.effective_corrected_pacmap_sign();
    let scale = 1.0 / batch.len() as f64;

    // s = φ/(φ+1) and ds/dlogφ = φ/(φ+1)²
    let s_of = |acc: &Accum<'_>, i: usize, j: usize| {
        let phi = acc.log_sim(i, j).exp();
        (phi / (phi + 1.0), phi / ((phi + 1.0) * (phi + 1.0)))
    };

    let mut value = 0.0;
    for p in 0..batch.len() {
        let (i, j) = (batch.anchors[p], batch.positives[p]);
        let (s, ds) = s_of(&acc, i, j);
        let mut v = -w_p * s;
        acc.push(i, j, -w_p * ds * scale);
        for &u in &batch.midnears[p] {
            let (s, ds) = s_of(&acc, i, u);
            v -= w_u * s;
            acc.push(i, u, -w_u * ds * scale);
        }
        for &k in batch.negatives_of(p) {
            let (s, ds) = s_of(&acc, i, k);
            v += if corrected { s } else { -(1.0 - s) };
            acc.push(i, k, ds * scale);
        }
        value += check_finite(v, i, j)?;
    }
    Ok(acc.finish(value * scale, batch.len(), 0))
}

/// `-(1/B) Σ log(φ_ij / (φ_ij + Σ_k φ_ik))` with per-anchor negatives.
pub fn loss_infonce(batch: &PairBatch, coords: &Embedding, _spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, KernelSpec::cauchy());
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    for p in 0..batch.len() {
        let (i, j) = (batch.anchors[p], batch.positives[p]);
        let v = contrast_anchor(&mut acc, i, &[j], batch.negatives_of(p), true, Aggregate::MeanOfLogs, scale);
        value += check_finite(v, i, j)?;
    }
    Ok(acc.finish(value * scale, batch.len(), 0))
}

/// `-(1/B) Σ log(e_ij / Σ_k e_ik)` with `e = exp(sim/τ)`.
pub fn loss_sscl(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, spec.kernel());
    let include = spec.flags.denominator_includes_positive;
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    for p in 0..batch.len() {
        let (i, j) = (batch.anchors[p], batch.positives[p]);
        let v = contrast_anchor(&mut acc, i, &[j], batch.negatives_of(p), include, Aggregate::MeanOfLogs, scale);
        value += check_finite(v, i, j)?;
    }
    Ok(acc.finish(value * scale, batch.len(), 0))
}

/// `-(1/B) Σ log(Σ_{j∈P_i} e_ij / Σ_k e_ik)`, where `P_i` collects the
/// positives of every batch row sharing row `i`'s anchor.
pub fn loss_snn(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, spec.kernel());
    let include = spec.flags.denominator_includes_positive;
    let mut groups: HashMap<usize, Vec<usize>> = HashMap::new();
    for p in 0..batch.len() {
        groups.entry(batch.anchors[p]).or_default().push(batch.positives[p]);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut value = 0.0;
    for p in 0..batch.len() {
        let i = batch.anchors[p];
        let positives = &groups[&i];
        let v = contrast_anchor(&mut acc, i, positives, batch.negatives_of(p), include, Aggregate::LogOfSum, scale);
        value += check_finite(v, i, batch.positives[p])?;
    }
    Ok(acc.finish(value * scale, batch.len(), 0))
}

/// Shared driver for the label-supervised temperature losses.
fn supervised_exp(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, agg: Aggregate) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, spec.kernel());
    let include = spec.flags.denominator_includes_positive;
    let contributing = batch.label_positives.iter().filter(|s| !s.is_empty()).count();
    let skipped = batch.len() - contributing;
    if contributing == 0 {
        return Ok(acc.finish(0.0, 0, skipped));
    }
    let scale = 1.0 / contributing as f64;
    let mut value = 0.0;
    for p in 0..batch.len() {
        if batch.label_positives[p].is_empty() {
            continue;
        }
        let i = batch.anchors[p];
        let positives: Vec<usize> = batch.label_positives[p].iter().map(|&q| batch.anchors[q]).collect();
        let v = contrast_anchor(&mut acc, i, &positives, batch.negatives_of(p), include, agg, scale);
        value += check_finite(v, i, positives[0])?;
    }
    Ok(acc.finish(value * scale, contributing, skipped))
}

/// `-(1/B) Σ_i (1/|P̃_i|) Σ_{j∈P̃_i} log(e_ij / Σ_k e_ik)` over label positives.
pub fn loss_supcon(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    supervised_exp(batch, coords, spec, Aggregate::MeanOfLogs)
}

/// `-(1/B) Σ_i log((1/|P̃_i|) Σ_{j∈P̃_i} e_ij / Σ_k e_ik)`.
pub fn loss_sup_snn(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, _progress: Progress) -> Result<LossGrad> {
    supervised_exp(batch, coords, spec, Aggregate::LogOfMean)
}

/// Supervised t-SCNE with the Cauchy kernel:
/// `(1/B) Σ_i [-(1/|P̃_i|) Σ_j φ_ij/Σ_k φ_ik - w_U(t) φ_ij*/Σ_{u∈U_i} φ_iu]`,
/// `j*` being the anchor's graph positive. With `log_ratio` every ratio
/// becomes `log(φ_ij / (φ_ij + Σ φ))`.
pub fn loss_tscne(batch: &PairBatch, coords: &Embedding, spec: &LossSpec, progress: Progress) -> Result<LossGrad> {
    check_batch(batch, coords)?;
    let mut acc = Accum::new(coords, KernelSpec::cauchy());
    let w_u = spec.schedule.w_u(progress.epoch, progress.total_epochs);
    let log_ratio = spec.flags.effective_log_ratio();
    let agg = if log_ratio {
        Aggregate::MeanOfLogs
    } else {
        Aggregate::MeanOfRatios
    };
    let contributing = batch.label_positives.iter().filter(|s| !s.is_empty()).count();
    let skipped = batch.len() - contributing;
    if contributing == 0 {
        return Ok(acc.finish(0.0, 0, skipped));
    }
    let scale = 1.0 / contributing as f64;
    let mut value = 0.0;
    for p in 0..batch.len() {
        if batch.label_positives[p].is_empty() {
            continue;
        }
        let i = batch.anchors[p];
        let positives: Vec<usize> = batch.label_positives[p].iter().map(|&q| batch.anchors[q]).collect();
        let mut v = contrast_anchor(&mut acc, i, &positives, batch.negatives_of(p), log_ratio, agg, scale);
        if !batch.midnears[p].is_empty() {
            v += w_u
                * contrast_anchor(
                    &mut acc,
                    i,
                    &[batch.positives[p]],
                    &batch.midnears[p],
                    log_ratio,
                    agg,
                    scale * w_u,
                );
        }
        value += check_finite(v, i, positives[0])?;
    }
    Ok(acc.finish(value * scale, contributing, skipped))
}

/// Central finite-difference check of the analytic gradient over every
/// coordinate of every batch member. Returns
/// `max |analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check(spec: &LossSpec, batch: &PairBatch, coords: &Embedding, progress: Progress, eps: f64) -> Result<f64> {
    grad_check_biased(spec, batch, coords, progress, eps, 0.0)
}

/// [`grad_check`] with `bias` added to every analytic gradient entry; a
/// non-zero bias is a negative control for the checker itself.
pub fn grad_check_biased(
    spec: &LossSpec,
    batch: &PairBatch,
    coords: &Embedding,
    progress: Progress,
    eps: f64,
    bias: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(invalid(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let analytic = evaluate(spec, batch, coords, progress)?;
    let d = coords.dim();
    let mut work = coords.clone();
    let mut worst: f64 = 0.0;
    for i in batch.members() {
        for c in 0..d {
            let orig = coords.row(i)[c];
            work.row_mut(i)[c] = orig + eps;
            let plus = evaluate(spec, batch, &work, progress)?.value;
            work.row_mut(i)[c] = orig - eps;
            let minus = evaluate(spec, batch, &work, progress)?.value;
            work.row_mut(i)[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.get(i).map_or(0.0, |g| g[c]) + bias;
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
    }
    Ok(worst)
}
