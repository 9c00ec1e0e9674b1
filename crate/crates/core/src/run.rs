//! Configured runs: data sources, layered configuration, embedding runs,
//! benchmarks and batch gradient checks. Everything the command line does
//! lives here so it can be driven from tests.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{load_csv, make_blobs, make_moons, Dataset, Embedding, LabelColumn};
use crate::error::{invalid, Error, Result};
use crate::kernel::Similarity;
use crate::loss::{grad_check_biased, LossKind, LossSpec, Progress, VariantFlags};
use crate::metrics::{quality_report, QualityReport, DEFAULT_K_ACCURACY, DEFAULT_K_RECALL};
use crate::neighbor_graph::{knn_graph, NeighborGraph, DEFAULT_K};
use crate::optimize::{fit, write_log, FitResult, Mode, OptimConfig};
use crate::plot::emit_svg;
use crate::sampler::{BatchSampler, SamplerConfig};

pub const EMBEDDING_FILE: &str = "embedding.csv";
pub const LOG_FILE: &str = "training_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const QUALITY_FILE: &str = "quality.json";
pub const PLOT_FILE: &str = "plot.svg";
pub const ENCODER_FILE: &str = "encoder.bin";

/// Where samples come from: a CSV file or a seeded generator.
///
/// Generators are written `blobs:n_per_class=200,n_classes=3,dim=10,separation=20,seed=7`
/// or `moons:n=400,noise=0.05,seed=0`; omitted keys take those values.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    File(PathBuf),
    Blobs {
        n_per_class: usize,
        n_classes: usize,
        dim: usize,
        separation: f64,
        seed: u64,
    },
    Moons {
        n: usize,
        noise: f64,
        seed: u64,
    },
}

fn parse_kv<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for generator key {key:?}")))
}

impl FromStr for DataSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, rest) = match s.split_once(':') {
            Some((n, r)) if n == "blobs" || n == "moons" => (n, r),
            _ if s == "blobs" || s == "moons" => (s, ""),
            _ => return Ok(DataSource::File(PathBuf::from(s))),
        };
        let pairs: Vec<(&str, &str)> = rest
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| {
                p.split_once('=')
                    .map(|(k, v)| (k.trim(), v.trim()))
                    .ok_or_else(|| Error::Config(format!("generator argument {p:?} is not key=value")))
            })
            .collect::<Result<_>>()?;
        if name == "blobs" {
            let (mut n_per_class, mut n_classes, mut dim, mut separation, mut seed) = (200, 3, 10, 20.0, 7);
            for (k, v) in pairs {
                match k {
                    "n_per_class" => n_per_class = parse_kv(k, v)?,
                    "n_classes" => n_classes = parse_kv(k, v)?,
                    "dim" => dim = parse_kv(k, v)?,
                    "separation" => separation = parse_kv(k, v)?,
                    "seed" => seed = parse_kv(k, v)?,
                    _ => return Err(Error::Config(format!("unknown blobs key {k:?}"))),
                }
            }
            Ok(DataSource::Blobs {
                n_per_class,
                n_classes,
                dim,
                separation,
                seed,
            })
        } else {
            let (mut n, mut noise, mut seed) = (400, 0.05, 0);
            for (k, v) in pairs {
                match k {
                    "n" => n = parse_kv(k, v)?,
                    "noise" => noise = parse_kv(k, v)?,
                    "seed" => seed = parse_kv(k, v)?,
                    _ => return Err(Error::Config(format!("unknown moons key {k:?}"))),
                }
            }
            Ok(DataSource::Moons { n, noise, seed })
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::File(p) => write!(f, "{}", p.display()),
            DataSource::Blobs {
                n_per_class,
                n_classes,
                dim,
                separation,
                seed,
            } => write!(
                f,
                "blobs:n_per_class={n_per_class},n_classes={n_classes},dim={dim},separation={separation:?},seed={seed}"
            ),
            DataSource::Moons { n, noise, seed } => write!(f, "moons:n={n},noise={noise:?},seed={seed}"),
        }
    }
}

impl DataSource {
    /// Loads or generates the dataset. Files without an explicit label
    /// column use a header column named `label` when there is one.
    pub fn load(&self, label_column: Option<&LabelColumn>) -> Result<Dataset> {
        match self {
            DataSource::File(path) => {
                let auto;
                let col = match label_column {
                    Some(c) => Some(c),
                    None if header_has_label(path)? => {
                        auto = LabelColumn::Name("label".into());
                        Some(&auto)
                    }
                    None => None,
                };
                load_csv(path, col)
            }
            DataSource::Blobs {
                n_per_class,
                n_classes,
                dim,
                separation,
                seed,
            } => make_blobs(*n_per_class, *n_classes, *dim, *separation, *seed),
            DataSource::Moons { n, noise, seed } => make_moons(*n, *noise, *seed),
        }
    }
}

fn header_has_label(path: &Path) -> Result<bool> {
    let mut first = String::new();
    BufReader::new(File::open(path)?).read_line(&mut first)?;
    Ok(first.trim_end().split(',').any(|c| c.trim() == "label"))
}

/// `[data]` section; keys match the command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DataSection {
    pub data: Option<String>,
    pub label_column: Option<String>,
    pub standardize: Option<bool>,
    pub k: Option<usize>,
}

/// `[loss]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct LossSection {
    pub loss: Option<String>,
    pub m: Option<usize>,
    pub tau: Option<f64>,
    pub similarity: Option<String>,
    pub w_p: Option<f64>,
    pub w_u_init: Option<f64>,
    pub w_u_final: Option<f64>,
    pub anneal_fraction: Option<f64>,
    pub log_ratio: Option<bool>,
    pub paper_as_written: Option<bool>,
    pub corrected_pacmap_sign: Option<bool>,
    pub denominator_includes_positive: Option<bool>,
}

/// `[optim]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OptimSection {
    pub mode: Option<String>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub deterministic: Option<bool>,
    pub dim: Option<usize>,
    pub midnears: Option<usize>,
    pub midnear_pool: Option<usize>,
    pub grad_clip: Option<f64>,
}

/// `[output]` section.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct OutputSection {
    pub out: Option<String>,
    pub plot: Option<bool>,
}

/// A possibly partial configuration, as read from a TOML file or collected
/// from command-line flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigLayer {
    pub data: DataSection,
    pub loss: LossSection,
    pub optim: OptimSection,
    pub output: OutputSection,
}

macro_rules! overlay {
    ($base:expr, $top:expr; $($field:ident),* $(,)?) => {
        $( if $top.$field.is_some() { $base.$field = $top.$field.clone(); } )*
    };
}

impl ConfigLayer {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Values set in `top` win.
    pub fn overlay(mut self, top: &ConfigLayer) -> Self {
        overlay!(self.data, top.data; data, label_column, standardize, k);
        overlay!(self.loss, top.loss; loss, m, tau, similarity, w_p, w_u_init, w_u_final,
            anneal_fraction, log_ratio, paper_as_written, corrected_pacmap_sign,
            denominator_includes_positive);
        overlay!(self.optim, top.optim; mode, epochs, lr, momentum, batch_size, seed,
            deterministic, dim, midnears, midnear_pool, grad_clip);
        overlay!(self.output, top.output; out, plot);
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fills every unset key with its default and validates the result.
    pub fn resolve(&self) -> Result<RunConfig> {
        let cfg_err = |e: Error| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        };
        let source: DataSource = self
            .data
            .data
            .as_deref()
            .ok_or_else(|| Error::Config("no data source given".into()))?
            .parse()?;
        let label_column = self.data.label_column.as_deref().map(|s| s.parse().unwrap_or_else(|e| match e {}));

        let kind: LossKind = self.loss.loss.as_deref().unwrap_or("umap").parse().map_err(cfg_err)?;
        let mut loss = LossSpec::new(kind);
        let l = &self.loss;
        loss.m = l.m.unwrap_or(loss.m);
        loss.tau = l.tau.unwrap_or(loss.tau);
        if let Some(s) = &l.similarity {
            loss.similarity = s.parse().map_err(cfg_err)?;
        }
        loss.schedule.w_p = l.w_p.unwrap_or(loss.schedule.w_p);
        loss.schedule.w_u_init = l.w_u_init.unwrap_or(loss.schedule.w_u_init);
        loss.schedule.w_u_final = l.w_u_final.unwrap_or(loss.schedule.w_u_final);
        loss.schedule.anneal_fraction = l.anneal_fraction.unwrap_or(loss.schedule.anneal_fraction);
        let d = VariantFlags::default();
        loss.flags = VariantFlags {
            paper_as_written: l.paper_as_written.unwrap_or(d.paper_as_written),
            log_ratio: l.log_ratio.unwrap_or(d.log_ratio),
            corrected_pacmap_sign: l.corrected_pacmap_sign.unwrap_or(d.corrected_pacmap_sign),
            denominator_includes_positive: l
                .denominator_includes_positive
                .unwrap_or(d.denominator_includes_positive),
        };
        loss.validate().map_err(cfg_err)?;

        let o = &self.optim;
        let mode: Mode = o.mode.as_deref().unwrap_or("nonparametric").parse().map_err(cfg_err)?;
        let mut optim = OptimConfig::for_mode(mode);
        optim.epochs = o.epochs.unwrap_or(optim.epochs);
        optim.learning_rate = o.lr.unwrap_or(optim.learning_rate);
        optim.momentum = o.momentum.unwrap_or(optim.momentum);
        optim.batch_size = o.batch_size.unwrap_or(optim.batch_size);
        optim.seed = o.seed.unwrap_or(optim.seed);
        optim.deterministic = o.deterministic.unwrap_or(optim.deterministic);
        optim.dim = o.dim.unwrap_or(optim.dim);
        optim.midnears = o.midnears.unwrap_or(optim.midnears);
        optim.midnear_pool = o.midnear_pool.unwrap_or(optim.midnear_pool);
        optim.grad_clip = o.grad_clip.unwrap_or(optim.grad_clip);
        optim.validate().map_err(cfg_err)?;
        if optim.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }

        Ok(RunConfig {
            source,
            label_column,
            standardize: self.data.standardize.unwrap_or(false),
            k: self.data.k.unwrap_or(DEFAULT_K),
            loss,
            optim,
            out: PathBuf::from(self.output.out.as_deref().unwrap_or("cne-out")),
            plot: self.output.plot.unwrap_or(true),
        })
    }
}

/// A fully specified run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub source: DataSource,
    pub label_column: Option<LabelColumn>,
    pub standardize: bool,
    pub k: usize,
    pub loss: LossSpec,
    pub optim: OptimConfig,
    pub out: PathBuf,
    pub plot: bool,
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::Nonparametric => "nonparametric",
        Mode::Parametric => "parametric",
    }
}

impl RunConfig {
    /// Every key set explicitly; reading it back resolves to `self`.
    pub fn to_layer(&self) -> ConfigLayer {
        let (l, o) = (&self.loss, &self.optim);
        ConfigLayer {
            data: DataSection {
                data: Some(self.source.to_string()),
                label_column: self.label_column.as_ref().map(|c| match c {
                    LabelColumn::Name(n) => n.clone(),
                    LabelColumn::Index(i) => i.to_string(),
                }),
                standardize: Some(self.standardize),
                k: Some(self.k),
            },
            loss: LossSection {
                loss: Some(l.kind.name().into()),
                m: Some(l.m),
                tau: Some(l.tau),
                similarity: Some(l.similarity.name().into()),
                w_p: Some(l.schedule.w_p),
                w_u_init: Some(l.schedule.w_u_init),
                w_u_final: Some(l.schedule.w_u_final),
                anneal_fraction: Some(l.schedule.anneal_fraction),
                log_ratio: Some(l.flags.log_ratio),
                paper_as_written: Some(l.flags.paper_as_written),
                corrected_pacmap_sign: Some(l.flags.corrected_pacmap_sign),
                denominator_includes_positive: Some(l.flags.denominator_includes_positive),
            },
            optim: OptimSection {
                mode: Some(mode_name(o.mode).into()),
                epochs: Some(o.epochs),
                lr: Some(o.learning_rate),
                momentum: Some(o.momentum),
                batch_size: Some(o.batch_size),
                seed: Some(o.seed),
                deterministic: Some(o.deterministic),
                dim: Some(o.dim),
                midnears: Some(o.midnears),
                midnear_pool: Some(o.midnear_pool),
                grad_clip: Some(o.grad_clip),
            },
            output: OutputSection {
                out: Some(self.out.display().to_string()),
                plot: Some(self.plot),
            },
        }
    }

    /// Loads the dataset and checks it against the loss before any training.
    pub fn load_data(&self) -> Result<Dataset> {
        let data = self.source.load(self.label_column.as_ref())?;
        let data = if self.standardize { data.standardized() } else { data };
        if self.loss.kind.is_supervised() {
            data.require_supervision()?;
        }
        if self.optim.dim > data.dim() {
            return Err(Error::Config(format!(
                "embedding dimension {} exceeds data dimension {}",
                self.optim.dim,
                data.dim()
            )));
        }
        if self.k < 1 || self.k >= data.len() {
            return Err(Error::Config(format!("k = {} out of range 1..={}", self.k, data.len() - 1)));
        }
        Ok(data)
    }
}

/// What an embedding run produced.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fit: FitResult,
    pub quality: QualityReport,
    pub seconds: f64,
}

/// Trains on an already loaded dataset and graph and writes all outputs
/// into `cfg.out`.
pub fn embed_with(cfg: &RunConfig, data: &Dataset, graph: &NeighborGraph) -> Result<RunOutcome> {
    let start = Instant::now();
    let fit = fit(data, graph, &cfg.loss, &cfg.optim)?;
    let seconds = start.elapsed().as_secs_f64();
    let quality = quality_report(data, &fit.embedding, DEFAULT_K_RECALL, DEFAULT_K_ACCURACY)?;

    fs::create_dir_all(&cfg.out)?;
    let mut w = BufWriter::new(File::create(cfg.out.join(EMBEDDING_FILE))?);
    fit.embedding.write_csv(&mut w, data.ids(), data.labels())?;
    w.flush()?;
    let mut w = BufWriter::new(File::create(cfg.out.join(LOG_FILE))?);
    write_log(&fit.log, &mut w)?;
    w.flush()?;
    fs::write(cfg.out.join(CONFIG_FILE), cfg.to_layer().to_toml()?)?;
    fs::write(cfg.out.join(QUALITY_FILE), serde_json::to_string_pretty(&quality)? + "\n")?;
    if cfg.plot {
        emit_svg(&fit.embedding, data.labels(), cfg.out.join(PLOT_FILE))?;
    }
    if let Some(enc) = &fit.encoder {
        enc.save(cfg.out.join(ENCODER_FILE))?;
    }
    Ok(RunOutcome { fit, quality, seconds })
}

/// Full embedding run: load, build the graph, train, write outputs.
pub fn embed(cfg: &RunConfig) -> Result<RunOutcome> {
    let data = cfg.load_data()?;
    let graph = knn_graph(&data, cfg.k)?;
    embed_with(cfg, &data, &graph)
}

/// One `(loss, seed)` entry of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub loss: String,
    pub seed: u64,
    pub ok: bool,
    pub knn_recall: Option<f64>,
    pub knn_accuracy: Option<f64>,
    pub silhouette: Option<f64>,
    pub seconds: Option<f64>,
    pub error: Option<String>,
}

/// Mean and sample standard deviation of one metric over a loss's
/// successful runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub loss: String,
    pub runs: usize,
    pub succeeded: usize,
    pub knn_recall: Option<Spread>,
    pub knn_accuracy: Option<Spread>,
    pub silhouette: Option<Spread>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: Vec<LossSummary>,
}

fn spread(values: &[f64]) -> Option<Spread> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some(Spread { mean, std })
}

impl BenchReport {
    fn from_rows(rows: Vec<BenchRow>) -> Self {
        let mut order: Vec<String> = Vec::new();
        for r in &rows {
            if !order.contains(&r.loss) {
                order.push(r.loss.clone());
            }
        }
        let summary = order
            .into_iter()
            .map(|loss| {
                let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.loss == loss).collect();
                let pick = |f: fn(&BenchRow) -> Option<f64>| -> Vec<f64> { mine.iter().filter_map(|r| f(r)).collect() };
                LossSummary {
                    runs: mine.len(),
                    succeeded: mine.iter().filter(|r| r.ok).count(),
                    knn_recall: spread(&pick(|r| r.knn_recall)),
                    knn_accuracy: spread(&pick(|r| r.knn_accuracy)),
                    silhouette: spread(&pick(|r| r.silhouette)),
                    loss,
                }
            })
            .collect();
        Self { rows, summary }
    }

    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| !r.ok)
    }

    /// One line per row; the per-loss mean/std columns repeat on every row
    /// of that loss.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "loss",
            "seed",
            "status",
            "knn_recall",
            "knn_accuracy",
            "silhouette",
            "seconds",
            "knn_recall_mean",
            "knn_recall_std",
            "knn_accuracy_mean",
            "knn_accuracy_std",
            "silhouette_mean",
            "silhouette_std",
            "error",
        ])?;
        let num = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
        for r in &self.rows {
            let s = self.summary.iter().find(|s| s.loss == r.loss);
            let mean = |f: fn(&LossSummary) -> Option<Spread>| num(s.and_then(f).map(|p| p.mean));
            let std = |f: fn(&LossSummary) -> Option<Spread>| num(s.and_then(f).map(|p| p.std));
            out.write_record([
                r.loss.clone(),
                r.seed.to_string(),
                if r.ok { "ok".into() } else { "error".into() },
                num(r.knn_recall),
                num(r.knn_accuracy),
                num(r.silhouette),
                num(r.seconds),
                mean(|s| s.knn_recall),
                std(|s| s.knn_recall),
                mean(|s| s.knn_accuracy),
                std(|s| s.knn_accuracy),
                mean(|s| s.silhouette),
                std(|s| s.silhouette),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub const BENCH_CSV: &str = "bench.csv";
pub const BENCH_JSON: &str = "bench.json";

/// Runs every `(loss, seed)` pair against the dataset described by `base`,
/// up to `jobs` at a time. Each run writes into `<out>/<loss>-seed<seed>`;
/// the table goes to `<out>/bench.csv` and `<out>/bench.json`.
pub fn bench(base: &RunConfig, losses: &[LossKind], seeds: &[u64], jobs: usize) -> Result<BenchReport> {
    if losses.is_empty() || seeds.is_empty() {
        return Err(Error::Config("benchmark grid is empty".into()));
    }
    if jobs < 1 {
        return Err(Error::Config("jobs must be >= 1".into()));
    }
    // labels are optional here: supervised rows fail individually
    let data = base.source.load(base.label_column.as_ref())?;
    let data = if base.standardize { data.standardized() } else { data };
    let graph = knn_graph(&data, base.k)?;
    let grid: Vec<(LossKind, u64)> = losses
        .iter()
        .flat_map(|&l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| invalid(e.to_string()))?;
    let rows: Vec<BenchRow> = pool.install(|| {
        grid.par_iter()
            .map(|&(kind, seed)| {
                let mut cfg = base.clone();
                cfg.loss.kind = kind;
                cfg.optim.seed = seed;
                cfg.out = base.out.join(format!("{}-seed{seed}", kind.name()));
                let result = (|| {
                    if kind.is_supervised() {
                        data.require_supervision()?;
                    }
                    embed_with(&cfg, &data, &graph)
                })();
                match result {
                    Ok(o) => BenchRow {
                        loss: kind.name().into(),
                        seed,
                        ok: true,
                        knn_recall: Some(o.quality.knn_recall),
                        knn_accuracy: o.quality.knn_accuracy,
                        silhouette: o.quality.silhouette,
                        seconds: Some(o.seconds),
                        error: None,
                    },
                    Err(e) => BenchRow {
                        loss: kind.name().into(),
                        seed,
                        ok: false,
                        knn_recall: None,
                        knn_accuracy: None,
                        silhouette: None,
                        seconds: None,
                        error: Some(e.to_string()),
                    },
                }
            })
            .collect()
    });
    let report = BenchReport::from_rows(rows);
    fs::create_dir_all(&base.out)?;
    report.write_csv(File::create(base.out.join(BENCH_CSV))?)?;
    fs::write(base.out.join(BENCH_JSON), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Largest acceptable relative finite-difference error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

/// A named loss configuration to check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCase {
    pub name: String,
    pub spec: LossSpec,
}

/// Each kind in its default form plus every variant flag that changes its
/// formula.
pub fn gradcheck_cases(kinds: &[LossKind]) -> Vec<GradcheckCase> {
    let mut out = Vec::new();
    for &kind in kinds {
        let base = LossSpec::new(kind);
        out.push(GradcheckCase {
            name: kind.name().into(),
            spec: base,
        });
        let mut variant = |suffix: &str, f: &dyn Fn(&mut LossSpec)| {
            let mut spec = base;
            f(&mut spec);
            out.push(GradcheckCase {
                name: format!("{}+{suffix}", kind.name()),
                spec,
            });
        };
        match kind {
            LossKind::Trimap | LossKind::Tscne => {
                variant("log-ratio", &|s| s.flags.log_ratio = true);
            }
            LossKind::Pacmap => {
                variant("as-written-sign", &|s| s.flags.corrected_pacmap_sign = false);
            }
            LossKind::Sscl | LossKind::Supcon | LossKind::SupSnn => {
                variant("denominator-includes-positive", &|s| s.flags.denominator_includes_positive = true);
                variant("cosine", &|s| s.similarity = Similarity::Cosine);
            }
            LossKind::Snn => {
                variant("denominator-includes-positive", &|s| s.flags.denominator_includes_positive = true);
            }
            _ => {}
        }
    }
    out
}

/// Shape of the random problems a gradient check runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckSetup {
    pub n: usize,
    pub input_dim: usize,
    pub dim: usize,
    pub m: usize,
    pub batch_size: usize,
    pub batches: usize,
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            n: 64,
            input_dim: 5,
            dim: 2,
            m: 5,
            batch_size: 16,
            batches: 20,
            n_classes: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckResult {
    pub name: String,
    pub max_error: f64,
    pub passed: bool,
}

/// Runs each case on `setup.batches` random batches over random data and
/// random embedding coordinates. `bias` is added to every analytic
/// gradient entry; any non-zero value should make every case fail.
pub fn gradcheck(cases: &[GradcheckCase], setup: &GradcheckSetup, bias: f64) -> Result<Vec<GradcheckResult>> {
    let mut results: Vec<GradcheckResult> = cases
        .iter()
        .map(|c| GradcheckResult {
            name: c.name.clone(),
            max_error: 0.0,
            passed: true,
        })
        .collect();
    for b in 0..setup.batches {
        let seed = setup.seed.wrapping_add(b as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..setup.n * setup.input_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let labels: Vec<usize> = (0..setup.n).map(|i| i % setup.n_classes).collect();
        let data = Dataset::new(points, setup.input_dim, Some(labels), None)?;
        let graph = knn_graph(&data, 5.min(setup.n - 1))?;
        let coords: Vec<f64> = (0..setup.n * setup.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let coords = Embedding::new(coords, setup.dim)?;
        // mid-point of the schedule so w_U is strictly between its endpoints
        let progress = Progress {
            epoch: 1,
            total_epochs: 8,
        };
        for (case, res) in cases.iter().zip(results.iter_mut()) {
            let mut spec = case.spec;
            spec.m = setup.m;
            let scfg = SamplerConfig {
                batch_size: setup.batch_size,
                m: setup.m,
                midnears: if spec.kind.uses_midnears() { 2 } else { 0 },
                ..SamplerConfig::default()
            };
            let labels = if spec.kind.is_supervised() { data.labels() } else { None };
            let sampler = BatchSampler::new(&data, &graph, scfg, labels, seed)?;
            let batch = sampler.batch(b as u64)?;
            let err = grad_check_biased(&spec, &batch, &coords, progress, GRADCHECK_EPS, bias)?;
            res.max_error = res.max_error.max(err);
        }
    }
    for r in &mut results {
        r.passed = r.max_error < GRADCHECK_TOLERANCE;
    }
    Ok(results)
}
