use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cne::data::{load_csv, Embedding, LabelColumn};
use cne::loss::LossKind;
use cne::run::{self, ConfigLayer, DataSource, GradcheckSetup};
use cne::Error;

#[derive(Parser)]
#[command(name = "cne", version, about = "Contrastive neighbor embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated dataset to CSV.
    Gen {
        /// Generator spec, e.g. blobs:n_per_class=200,n_classes=3,dim=10,separation=20,seed=7
        #[arg(long)]
        data: String,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        standardize: bool,
    },
    /// Train one embedding and write it with its log, config, quality report and plot.
    Embed(RunArgs),
    /// Run a grid of losses and seeds on one dataset.
    Bench {
        #[command(flatten)]
        run: RunArgs,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare analytic loss gradients with central finite differences.
    Gradcheck {
        /// Comma-separated loss kinds; all when omitted.
        #[arg(long)]
        loss: Option<String>,
        /// Random batches per loss.
        #[arg(long, default_value_t = 20)]
        batches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Adds this value to every analytic gradient entry (checker self-test).
        #[arg(long, hide = true, default_value_t = 0.0)]
        corrupt_gradient: f64,
    },
    /// Render an embedding CSV as an SVG scatter plot.
    Plot {
        /// Embedding CSV as written by `embed`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label_column: Option<String>,
        /// Output SVG file.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags shared by `embed` and `bench`; each mirrors a config-file key.
#[derive(Args)]
struct RunArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV file or generator spec.
    #[arg(long)]
    data: Option<String>,
    /// Label column, by header name or zero-based index.
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    standardize: Option<bool>,
    /// Neighbors per sample in the kNN graph.
    #[arg(long)]
    k: Option<usize>,
    /// Loss kind (comma-separated list for bench).
    #[arg(long)]
    loss: Option<String>,
    /// Negatives per positive pair.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// negative_distance or cosine.
    #[arg(long)]
    similarity: Option<String>,
    #[arg(long)]
    w_p: Option<f64>,
    #[arg(long)]
    w_u_init: Option<f64>,
    #[arg(long)]
    w_u_final: Option<f64>,
    #[arg(long)]
    anneal_fraction: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    log_ratio: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    paper_as_written: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    corrected_pacmap_sign: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    denominator_includes_positive: Option<bool>,
    /// nonparametric or parametric.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed (comma-separated list for bench).
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<bool>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    midnears: Option<usize>,
    #[arg(long)]
    midnear_pool: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    plot: Option<bool>,
}

impl RunArgs {
    /// Config file overlaid with the flags. `seed` is left to the caller
    /// because bench accepts a list.
    fn layer(&self) -> Result<ConfigLayer, Error> {
        let base = match &self.config {
            Some(p) => ConfigLayer::load(p)?,
            None => ConfigLayer::default(),
        };
        let mut top = ConfigLayer::default();
        top.data.data = self.data.clone();
        top.data.label_column = self.label_column.clone();
        top.data.standardize = self.standardize;
        top.data.k = self.k;
        top.loss.loss = self.loss.clone();
        top.loss.m = self.m;
        top.loss.tau = self.tau;
        top.loss.similarity = self.similarity.clone();
        top.loss.w_p = self.w_p;
        top.loss.w_u_init = self.w_u_init;
        top.loss.w_u_final = self.w_u_final;
        top.loss.anneal_fraction = self.anneal_fraction;
        top.loss.log_ratio = self.log_ratio;
        top.loss.paper_as_written = self.paper_as_written;
        top.loss.corrected_pacmap_sign = self.corrected_pacmap_sign;
        top.loss.denominator_includes_positive = self.denominator_includes_positive;
        top.optim.mode = self.mode.clone();
        top.optim.epochs = self.epochs;
        top.optim.lr = self.lr;
        top.optim.momentum = self.momentum;
        top.optim.batch_size = self.batch_size;
        top.optim.deterministic = self.deterministic;
        top.optim.dim = self.dim;
        top.optim.midnears = self.midnears;
        top.optim.midnear_pool = self.midnear_pool;
        top.optim.grad_clip = self.grad_clip;
        top.output.out = self.out.clone();
        top.output.plot = self.plot;
        Ok(base.overlay(&top))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Error> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse().map_err(|_| Error::Config(format!("bad {what} {p:?}"))))
        .collect()
}

fn cmd_embed(args: RunArgs) -> Result<(), Error> {
    let mut layer = args.layer()?;
    if let Some(s) = &args.seed {
        layer.optim.seed = Some(s.trim().parse().map_err(|_| Error::Config(format!("bad seed {s:?}")))?);
    }
    let cfg = layer.resolve()?;
    let outcome = run::embed(&cfg)?;
    let q = &outcome.quality;
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    println!(
        "{}: knn_recall@{} {:.4}, knn_accuracy {}, silhouette {}, {:.1}s -> {}",
        cfg.loss.kind,
        q.k_recall,
        q.knn_recall,
        opt(q.knn_accuracy),
        opt(q.silhouette),
        outcome.seconds,
        cfg.out.display()
    );
    Ok(())
}

fn cmd_bench(args: RunArgs, jobs: usize) -> Result<(), Failure> {
    let mut layer = args.layer()?;
    let losses: Vec<LossKind> = match layer.loss.loss.take() {
        Some(l) => parse_list(&l, "loss")?,
        None => vec![
            LossKind::Umap,
            LossKind::Infonce,
            LossKind::Tsne,
            LossKind::Supcon,
            LossKind::Tscne,
        ],
    };
    let seeds: Vec<u64> = match &args.seed {
        Some(s) => parse_list(s, "seed")?,
        None => vec![layer.optim.seed.unwrap_or(0)],
    };
    let base = layer.resolve()?;
    let report = run::bench(&base, &losses, &seeds, jobs)?;
    for r in &report.rows {
        match &r.error {
            None => println!(
                "{} seed {}: knn_recall {:.4}, knn_accuracy {}, silhouette {}",
                r.loss,
                r.seed,
                r.knn_recall.unwrap_or(f64::NAN),
                r.knn_accuracy.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
                r.silhouette.map_or_else(|| "n/a".into(), |v| format!("{v:.4}")),
            ),
            Some(e) => println!("{} seed {}: failed: {e}", r.loss, r.seed),
        }
    }
    println!("table written to {}", base.out.join(run::BENCH_CSV).display());
    if report.all_failed() {
        return Err(Failure::Runtime("every benchmark run failed".into()));
    }
    Ok(())
}

enum Failure {
    Error(Error),
    /// Ran to completion but the outcome is a failure.
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn cmd_gradcheck(loss: Option<String>, batches: usize, seed: u64, corrupt: f64) -> Result<(), Failure> {
    let kinds: Vec<LossKind> = match loss {
        Some(l) => parse_list(&l, "loss")?,
        None => LossKind::ALL.to_vec(),
    };
    if kinds.is_empty() || batches == 0 {
        return Err(Error::Config("nothing to check".into()).into());
    }
    let setup = GradcheckSetup {
        batches,
        seed,
        ..GradcheckSetup::default()
    };
    let results = run::gradcheck(&run::gradcheck_cases(&kinds), &setup, corrupt)?;
    for r in &results {
        println!(
            "{:<40} max relative error {:.3e}  {}",
            r.name,
            r.max_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    if results.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check failed".into()))
    }
}

fn cmd_plot(data: PathBuf, label_column: Option<String>, out: PathBuf) -> Result<(), Error> {
    let col: Option<LabelColumn> = label_column.map(|s| s.parse().unwrap_or_else(|e| match e {}));
    let ds = match &col {
        Some(_) => load_csv(&data, col.as_ref())?,
        None => DataSource::File(data).load(None)?,
    };
    let emb = Embedding::new(ds.points().to_vec(), ds.dim())?;
    cne::plot::emit_svg(&emb, ds.labels(), &out)?;
    Ok(())
}

fn cmd_gen(data: String, out: PathBuf, standardize: bool) -> Result<(), Error> {
    let source: DataSource = data.parse()?;
    if matches!(source, DataSource::File(_)) {
        return Err(Error::Config(format!("{data:?} is not a generator spec (blobs:... or moons:...)")));
    }
    let ds = source.load(None)?;
    let ds = if standardize { ds.standardized() } else { ds };
    ds.save_csv(&out)?;
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), Failure> = match cli.command {
        Command::Gen { data, out, standardize } => cmd_gen(data, out, standardize).map_err(Failure::from),
        Command::Embed(args) => cmd_embed(args).map_err(Failure::from),
        Command::Bench { run, jobs } => cmd_bench(run, jobs),
        Command::Gradcheck {
            loss,
            batches,
            seed,
            corrupt_gradient,
        } => cmd_gradcheck(loss, batches, seed, corrupt_gradient),
        Command::Plot {
            data,
            label_column,
            out,
        } => cmd_plot(data, label_column, out).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
