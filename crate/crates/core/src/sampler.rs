//! Minibatches of anchor–positive edges with negative, mid-near and
//! label-positive companions.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Result};
use crate::neighbor_graph::NeighborGraph;

pub const DEFAULT_NEGATIVES: usize = 5;
pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const DEFAULT_MIDNEAR_POOL: usize = 6;

/// Weights for the attractive (`w_p`) and mid-near (`w_u(t)`) terms.
///
/// `w_u` moves linearly from `w_u_init` to `w_u_final` over the first
/// `anneal_fraction` of training and stays at `w_u_final` afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub w_p: f64,
    pub w_u_init: f64,
    pub w_u_final: f64,
    pub anneal_fraction: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            w_p: 1.0,
            w_u_init: 1.0,
            w_u_final: 0.0,
            anneal_fraction: 0.5,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_p > 0.0) || !self.w_p.is_finite() {
            return Err(invalid("w_p must be > 0"));
        }
        if !(self.w_u_init >= 0.0 && self.w_u_final >= 0.0)
            || !self.w_u_init.is_finite()
            || !self.w_u_final.is_finite()
        {
            return Err(invalid("w_u endpoints must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.anneal_fraction) {
            return Err(invalid("anneal_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Mid-near weight at `epoch` of `total_epochs`.
    pub fn w_u(&self, epoch: usize, total_epochs: usize) -> f64 {
        let end = self.anneal_fraction * total_epochs as f64;
        let t = epoch as f64;
        if t >= end {
            self.w_u_final
        } else {
            self.w_u_init + (self.w_u_final - self.w_u_init) * (t / end)
        }
    }
}

/// One minibatch. Positions `0..len()` index anchors; `positives`,
/// `midnears` and `label_positives` are parallel to `anchors`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub anchors: Vec<usize>,
    /// Graph positive of each anchor (sample index).
    pub positives: Vec<usize>,
    /// `m` negatives per anchor, flattened row by row (sample indices).
    pub negatives: Vec<usize>,
    pub m: usize,
    /// Mid-near sample indices per anchor; empty when unused.
    pub midnears: Vec<Vec<usize>>,
    /// Batch positions sharing the anchor's label; empty when unsupervised.
    pub label_positives: Vec<Vec<usize>>,
}

impl PairBatch {
    pub fn new(anchors: Vec<usize>, positives: Vec<usize>, negatives: Vec<usize>, m: usize) -> Result<Self> {
        if anchors.is_empty() {
            return Err(invalid("batch must contain at least one anchor"));
        }
        if positives.len() != anchors.len() {
            return Err(invalid("one positive per anchor required"));
        }
        if negatives.len() != anchors.len() * m {
            return Err(invalid(format!("expected {} negatives", anchors.len() * m)));
        }
        for (b, &a) in anchors.iter().enumerate() {
            if positives[b] == a {
                return Err(invalid(format!("anchor {a} paired with itself")));
            }
            if negatives[b * m..(b + 1) * m].contains(&a) {
                return Err(invalid(format!("anchor {a} sampled as its own negative")));
            }
        }
        let len = anchors.len();
        Ok(Self {
            anchors,
            positives,
            negatives,
            m,
            midnears: vec![Vec::new(); len],
            label_positives: vec![Vec::new(); len],
        })
    }

    pub fn with_midnears(mut self, midnears: Vec<Vec<usize>>) -> Result<Self> {
        if midnears.len() != self.anchors.len() {
            return Err(invalid("one mid-near list per anchor required"));
        }
        for (b, list) in midnears.iter().enumerate() {
            if list.contains(&self.anchors[b]) {
                return Err(invalid("anchor listed as its own mid-near"));
            }
        }
        self.midnears = midnears;
        Ok(self)
    }

    pub fn with_label_positives(mut self, label_positives: Vec<Vec<usize>>) -> Result<Self> {
        if label_positives.len() != self.anchors.len() {
            return Err(invalid("one label-positive list per anchor required"));
        }
        if label_positives.iter().flatten().any(|&p| p >= self.anchors.len()) {
            return Err(invalid("label positive position outside the batch"));
        }
        self.label_positives = label_positives;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn negatives_of(&self, b: usize) -> &[usize] {
        &self.negatives[b * self.m..(b + 1) * self.m]
    }

    /// Every sample index touched by the batch, sorted and deduplicated.
    pub fn members(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .anchors
            .iter()
            .chain(&self.positives)
            .chain(&self.negatives)
            .chain(self.midnears.iter().flatten())
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    pub fn max_index(&self) -> usize {
        self.members().last().copied().unwrap_or(0)
    }
}

/// Uniform sample from `{0..n} \ {exclude}`.
fn sample_other<R: Rng>(rng: &mut R, n: usize, exclude: usize) -> usize {
    let r = rng.random_range(0..n - 1);
    if r >= exclude {
        r + 1
    } else {
        r
    }
}

/// `batch_size` edges drawn uniformly with replacement, each in a random
/// orientation, plus `m` uniform non-anchor negatives per edge.
pub fn sample_edge_batch<R: Rng>(
    graph: &NeighborGraph,
    batch_size: usize,
    m: usize,
    rng: &mut R,
) -> Result<PairBatch> {
    if graph.n_edges() == 0 {
        return Err(invalid("cannot sample from an empty graph"));
    }
    if batch_size == 0 || m == 0 {
        return Err(invalid("batch_size and m must be >= 1"));
    }
    let n = graph.n();
    let edges = graph.edges();
    let mut anchors = Vec::with_capacity(batch_size);
    let mut positives = Vec::with_capacity(batch_size);
    let mut negatives = Vec::with_capacity(batch_size * m);
    for _ in 0..batch_size {
        let (a, b) = edges[rng.random_range(0..edges.len())];
        let (i, j) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
        anchors.push(i);
        positives.push(j);
        for _ in 0..m {
            negatives.push(sample_other(rng, n, i));
        }
    }
    PairBatch::new(anchors, positives, negatives, m)
}

/// Draws `pool` distinct non-anchor samples and returns the second-nearest
/// to the anchor in input space (ties by ascending index).
pub fn sample_midnear<R: Rng>(data: &Dataset, anchor: usize, pool: usize, rng: &mut R) -> Result<usize> {
    let n = data.len();
    if pool < 2 {
        return Err(invalid("mid-near pool must be >= 2"));
    }
    if n <= pool {
        return Err(invalid(format!("mid-near pool {pool} needs more than {pool} samples, have {n}")));
    }
    if anchor >= n {
        return Err(invalid(format!("anchor {anchor} out of range")));
    }
    let x = data.point(anchor);
    let mut cand: Vec<(f64, usize)> = index::sample(rng, n - 1, pool)
        .into_iter()
        .map(|r| if r >= anchor { r + 1 } else { r })
        .map(|j| {
            let d: f64 = x.iter().zip(data.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, j)
        })
        .collect();
    cand.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(cand[1].1)
}

/// Batch positions whose sample shares the label of the sample at
/// `anchor_pos`, excluding positions holding that same sample.
pub fn label_positive_set(labels: &[usize], batch: &[usize], anchor_pos: usize) -> Result<Vec<usize>> {
    let anchor = *batch
        .get(anchor_pos)
        .ok_or_else(|| invalid(format!("anchor position {anchor_pos} outside batch")))?;
    let label = *labels
        .get(anchor)
        .ok_or_else(|| invalid(format!("no label for sample {anchor}")))?;
    let mut out = Vec::new();
    for (p, &s) in batch.iter().enumerate() {
        let l = *labels.get(s).ok_or_else(|| invalid(format!("no label for sample {s}")))?;
        if s != anchor && l == label {
            out.push(p);
        }
    }
    Ok(out)
}

/// Label-positive sets for every batch position.
pub fn label_positive_sets(labels: &[usize], batch: &[usize]) -> Result<Vec<Vec<usize>>> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut by_label: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (p, &s) in batch.iter().enumerate() {
        let l = *labels.get(s).ok_or_else(|| invalid(format!("no label for sample {s}")))?;
        by_label[l].push(p);
    }
    Ok(batch
        .iter()
        .map(|&s| {
            by_label[labels[s]]
                .iter()
                .copied()
                .filter(|&p| batch[p] != s)
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub m: usize,
    /// Mid-nears per anchor; 0 disables mid-near sampling.
    pub midnears: usize,
    pub midnear_pool: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            m: DEFAULT_NEGATIVES,
            midnears: 1,
            midnear_pool: DEFAULT_MIDNEAR_POOL,
        }
    }
}

/// Seeded batch source. Batch `s` is drawn from its own ChaCha stream, so
/// the batch sequence depends only on the master seed.
pub struct BatchSampler<'a> {
    data: &'a Dataset,
    graph: &'a NeighborGraph,
    cfg: SamplerConfig,
    labels: Option<&'a [usize]>,
    seed: u64,
}

impl<'a> BatchSampler<'a> {
    /// `labels` switches on label-positive sets; `cfg.midnears > 0` on mid-nears.
    pub fn new(
        data: &'a Dataset,
        graph: &'a NeighborGraph,
        cfg: SamplerConfig,
        labels: Option<&'a [usize]>,
        seed: u64,
    ) -> Result<Self> {
        if graph.n() != data.len() {
            return Err(invalid("graph and dataset sizes differ"));
        }
        if cfg.midnears > 0 && data.len() <= cfg.midnear_pool {
            return Err(invalid(format!(
                "mid-near pool {} needs more than {} samples",
                cfg.midnear_pool, cfg.midnear_pool
            )));
        }
        Ok(Self {
            data,
            graph,
            cfg,
            labels,
            seed,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn batch(&self, stream: u64) -> Result<PairBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut batch = sample_edge_batch(self.graph, self.cfg.batch_size, self.cfg.m, &mut rng)?;
        if self.cfg.midnears > 0 {
            let mids = batch
                .anchors
                .iter()
                .map(|&a| {
                    (0..self.cfg.midnears)
                        .map(|_| sample_midnear(self.data, a, self.cfg.midnear_pool, &mut rng))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            batch = batch.with_midnears(mids)?;
        }
        if let Some(labels) = self.labels {
            let lp = label_positive_sets(labels, &batch.anchors)?;
            batch = batch.with_label_positives(lp)?;
        }
        Ok(batch)
    }
}
