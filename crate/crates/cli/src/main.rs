//! `ewi`: early-warning indicators for volatility from transaction-graph
//! snapshots.
//!
//! Exit status: 0 success, 2 usage, 3 configuration, 4 missing or malformed
//! data, 5 computation failure, 1 anything else.

mod config;
mod output;
mod report;

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ewi_core::evaluation::{evaluate_fold_pool, ScoredLabels};
use ewi_core::indicator::{self, EwiParams, NnlsOptions, SvdLrParams};
use ewi_core::io::{self, ModelArchive};
use ewi_core::ledger::{self, EncodingMode, LongTermFilter};
use ewi_core::linalg::{self, SolverOptions};
use ewi_core::pipeline::{self, IndicatorKind, SweepRow, SweepTable};
use ewi_core::synth::{self, SynthSpec};
use ewi_core::volatility::{self, VolatilitySeries};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_SEED};
use crate::output::{Manifest, Staging};


#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug)]
pub struct MissingData(pub PathBuf);

impl fmt::Display for MissingData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "missing data: {}", self.0.display())
    }
}

impl std::error::Error for MissingData {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<ConfigError>() {
            return 3;
        }
        if cause.is::<MissingData>() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<ewi_core::Error>() {
            return match e {
                ewi_core::Error::Io(_) | ewi_core::Error::Csv(_) | ewi_core::Error::Json(_) | ewi_core::Error::Parse(_) => 4,
                _ => 5,
            };
        }
    }
    1
}

#[derive(Parser, Debug)]
#[command(name = "ewi", version, about = "Early-warning indicators of volatility from daily transaction snapshots")]
struct Cli {
    /// Run configuration (TOML); keys can be overridden with EWI_<SECTION>__<KEY>
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every randomized step (default: config seed, else 42)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; created atomically, must not exist or be empty
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Merge addresses, keep long-term users and encode daily snapshots
    Ingest(IngestArgs),
    /// Garman-Klass volatility and extreme-event labels from OHLC bars
    Label(LabelArgs),
    /// Robust NMF of an evolution matrix, with its singular spectrum
    Decompose(DecomposeArgs),
    /// Fit an indicator on a training window and save the model
    Train(TrainArgs),
    /// Rolling-window backtest of the configured indicators (needs --config)
    Backtest,
    /// Sensitivity sweep over alpha, horizon and model shape (needs --config)
    Sweep,
    /// ROC and PR curves for a score file against a label file
    Evaluate(EvaluateArgs),
    /// Generate a synthetic dataset with planted structure
    Synth(SynthArgs),
    /// Render sweep tables and curve summaries as text
    Report(ReportArgs),
}

#[derive(Args, Debug, Serialize)]
struct IngestArgs {
    /// Line-delimited JSON ledger
    #[arg(long)]
    ledger: PathBuf,
    /// Row encoding: node (per user) or edge (per user pair)
    #[arg(long, default_value = "node")]
    encoding: EncodingMode,
    /// Minimum number of transactions per kept user
    #[arg(long, default_value_t = 100)]
    min_tx: usize,
    /// Minimum days between a kept user's first and last transaction
    #[arg(long, default_value_t = 600)]
    min_span: i64,
    /// Keep only users first seen strictly before this day
    #[arg(long)]
    active_before: Option<i64>,
    /// First encoded day (default: first ledger day)
    #[arg(long)]
    from_day: Option<i64>,
    /// Last encoded day, inclusive (default: last ledger day)
    #[arg(long)]
    to_day: Option<i64>,
}

#[derive(Args, Debug, Serialize)]
struct LabelArgs {
    /// OHLC file with columns date, open, high, low, close
    #[arg(long)]
    ohlc: PathBuf,
    /// Volatility threshold of an extreme day
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// Days after the anchor inspected for an extreme day
    #[arg(long = "h", default_value_t = 1)]
    horizon: usize,
}

#[derive(Args, Debug, Serialize)]
struct DecomposeArgs {
    /// Directory holding X.csv, X.rows, X.cols
    #[arg(long = "in")]
    input: PathBuf,
    /// Number of factors
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Weight of the column-sparsity penalty on H
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    /// Relative objective change that stops the iteration
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    /// Directory holding X.csv, X.rows, X.cols
    #[arg(long)]
    x: PathBuf,
    /// OHLC file with columns date, open, high, low, close
    #[arg(long)]
    ohlc: PathBuf,
    /// nmf_nlr or svd_lr
    #[arg(long, default_value = "nmf_nlr")]
    indicator: IndicatorKind,
    /// Number of factors
    #[arg(long, default_value_t = 10)]
    k: usize,
    /// Number of lags
    #[arg(long, default_value_t = 5)]
    delta: usize,
    /// NMF sparsity weight
    #[arg(long, default_value_t = 1.0)]
    lambda_enc: f64,
    /// L1 weight on the lag coefficients
    #[arg(long, default_value_t = 1e-3)]
    lambda_c: f64,
    /// Ridge weight of the svd_lr baseline
    #[arg(long, default_value_t = 1.0)]
    ridge: f64,
    /// Train on the last N days only (default: every day)
    #[arg(long)]
    train_days: Option<usize>,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// CSV with columns day, score
    #[arg(long)]
    scores: PathBuf,
    /// CSV with columns day, label (0 or 1)
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    /// TOML generator spec; omitted keys take their defaults
    #[arg(long)]
    spec: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct ReportArgs {
    /// Directory produced by backtest or sweep
    #[arg(long = "in")]
    input: PathBuf,
}

fn require_out(cli_out: &Option<PathBuf>) -> Result<PathBuf> {
    cli_out.clone().ok_or_else(|| anyhow!(ConfigError("--out is required".into())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(anyhow!(MissingData(path.to_path_buf())))
    }
}

fn load_sigma(ohlc: &Path) -> Result<VolatilitySeries> {
    require_file(ohlc)?;
    let bars = io::read_ohlc(ohlc)?;
    Ok(VolatilitySeries::from_bars(&bars)?)
}

fn load_matrix(dir: &Path) -> Result<ledger::EvolutionMatrix> {
    require_file(&dir.join(format!("{}.csv", io::MATRIX_STEM)))?;
    Ok(io::read_evolution(dir)?)
}

fn ingest(args: &IngestArgs, out: &Path) -> Result<Manifest> {
    require_file(&args.ledger)?;
    let events = io::read_ledger(&args.ledger)?;
    if events.is_empty() {
        bail!(ewi_core::Error::Parse(format!("{}: ledger is empty", args.ledger.display())));
    }
    let mapping = ledger::merge_addresses(&events);
    let filter = LongTermFilter { min_tx: args.min_tx, min_span: args.min_span, active_before: args.active_before };
    let users = ledger::filter_long_term_users(&events, &mapping, &filter)?;
    let first = args.from_day.unwrap_or_else(|| events.iter().map(|e| e.day).min().expect("non-empty"));
    let last = args.to_day.unwrap_or_else(|| events.iter().map(|e| e.day).max().expect("non-empty"));
    let x = ledger::encode_snapshots(&events, &mapping, &users, args.encoding, first..last + 1)?;
    io::write_evolution(out, &x)?;

    let mut w = csv::Writer::from_path(out.join("users.csv"))?;
    w.write_record(["address", "user"])?;
    for (address, user) in mapping.sorted_entries() {
        w.write_record([address, user.to_string().as_str()])?;
    }
    w.flush()?;
    eprintln!("{} addresses, {} users, {} kept, {}x{} matrix", mapping.n_addresses(), mapping.n_users(), users.len(), x.nrows(), x.ncols());
    Manifest::new("ingest", args)?.input(&args.ledger)
}

fn label(args: &LabelArgs, out: &Path) -> Result<Manifest> {
    let sigma = load_sigma(&args.ohlc)?;
    let labels = volatility::label_extremes(&sigma, args.alpha, args.horizon)?;
    let (days, values): (Vec<i64>, Vec<f64>) =
        sigma.values.iter().enumerate().filter_map(|(i, v)| v.map(|v| (sigma.start_day + i as i64, v))).unzip();
    io::write_day_values(&out.join("sigma.csv"), "sigma", &days, &values)?;
    io::write_labels(&out.join("labels.csv"), &labels)?;
    let defined: Vec<bool> = labels.iter_defined().map(|(_, l)| l).collect();
    let epsilon = volatility::positive_rate(&defined)?;
    io::write_json(&out.join("metrics.json"), &serde_json::json!({ "anchors": defined.len(), "epsilon": epsilon }))?;
    eprintln!("{} labelled anchors, positive rate {epsilon:.4}", defined.len());
    Manifest::new("label", args)?.input(&args.ohlc)
}

fn decompose(args: &DecomposeArgs, seed: u64, out: &Path) -> Result<Manifest> {
    let x = load_matrix(&args.input)?;
    let opts = SolverOptions { max_iters: args.max_iters, rel_tol: args.tol, seed, ..Default::default() };
    let f = linalg::robust_nmf(&x.values, args.k, args.lambda, &opts)?;
    let factors: Vec<String> = (0..args.k).map(|j| format!("f{j}")).collect();
    let days: Vec<String> = x.days.iter().map(i64::to_string).collect();
    io::write_matrix(out, "W", &f.w, &x.row_labels, &factors)?;
    io::write_matrix(out, "H", &f.h, &factors, &days)?;
    let spectrum = linalg::singular_values(&x.values)?;
    let idx: Vec<i64> = (0..spectrum.len() as i64).collect();
    io::write_day_values(&out.join("spectrum.csv"), "singular_value", &idx, &spectrum)?;
    let rank = linalg::rank_from_spectrum(&spectrum)?;
    let score = linalg::reconstruction_score(&x.values, &f.w, &f.h)?;
    io::write_json(
        &out.join("metrics.json"),
        &serde_json::json!({
            "objective": f.objective,
            "iterations": f.iterations,
            "reconstruction_score": score,
            "estimated_rank": rank,
        }),
    )?;
    eprintln!("objective {:.6e} after {} iterations, reconstruction {score:.4}, estimated rank {rank}", f.objective, f.iterations);
    Manifest::new("decompose", args)?.seed("nmf", seed).input(&args.input)
}

fn train(args: &TrainArgs, seed: u64, out: &Path) -> Result<Manifest> {
    let x = load_matrix(&args.x)?;
    let sigma = load_sigma(&args.ohlc)?;
    let n = x.ncols();
    let days = args.train_days.unwrap_or(n);
    if days == 0 || days > n {
        bail!(ConfigError(format!("--train-days must lie in 1..={n}")));
    }
    let start = n - days;
    let segment = x.values.columns(start, days).into_owned();
    let first_day = x.days[start];
    let (archive, report) = match args.indicator {
        IndicatorKind::NmfNlr => {
            let params = EwiParams { k: args.k, delta: args.delta, lambda_enc: args.lambda_enc, lambda_c: args.lambda_c };
            let nmf = SolverOptions { seed, ..Default::default() };
            let nnls = NnlsOptions { seed, ..Default::default() };
            let (model, report) = indicator::train_ewi(&segment, first_day, &sigma, &params, &nmf, &nnls)?;
            (ModelArchive::from_ewi(&model, x.row_labels.clone()), report)
        }
        IndicatorKind::SvdLr => {
            let params = SvdLrParams { k: args.k, delta: args.delta, ridge: args.ridge };
            let (model, report) = indicator::baseline_svd_lr(&segment, first_day, &sigma, &params)?;
            (ModelArchive::from_svd_lr(&model, x.row_labels.clone()), report)
        }
        IndicatorKind::Volume => bail!(ConfigError("the volume indicator has no model to train".into())),
    };
    io::write_model(&out.join("model.json"), &archive)?;
    io::write_json(&out.join("train.json"), &report)?;
    eprintln!("trained {} on days {}..{} ({} rows)", args.indicator, archive.train_days.0, archive.train_days.1, report.rows);
    Manifest::new("train", args)?.seed("solver", seed).input(&args.x)?.input(&args.ohlc)
}

fn load_run_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| anyhow!(ConfigError("--config is required".into())))?;
    require_file(path)?;
    let mut cfg = RunConfig::load(path).map_err(|e| anyhow!(ConfigError(format!("{}: {e:#}", path.display()))))?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.check_paths()?;
    Ok(cfg)
}

fn run_out(cli: &Cli, cfg: &RunConfig) -> Result<PathBuf> {
    cli.out.clone().or_else(|| cfg.out.clone()).ok_or_else(|| anyhow!(ConfigError("no output directory (--out or out = ...)".into())))
}

fn cell_dir(alpha: f64, horizon: usize) -> String {
    format!("alpha_{alpha}_h_{horizon}")
}

fn backtest(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let x = load_matrix(&cfg.data.matrix)?;
    let sigma = load_sigma(&cfg.data.ohlc)?;
    let params = cfg.backtest_params();
    let mut rows = Vec::new();
    for &kind in &cfg.evaluation.indicators {
        let scores = pipeline::score_holdouts(&x, &sigma, kind, &params)?;
        let (days, values): (Vec<i64>, Vec<f64>) =
            scores.iter().flat_map(|f| f.days.iter().copied().zip(f.scores.iter().copied())).unzip();
        let kind_dir = out.join(kind.as_str());
        io::write_day_values(&kind_dir.join("scores.csv"), "score", &days, &values)?;
        for &alpha in &cfg.evaluation.alphas {
            for &h in &cfg.evaluation.horizons {
                let result = pipeline::evaluate_scores(&scores, &sigma, kind, alpha, h, None)?;
                io::write_backtest(&kind_dir.join(cell_dir(alpha, h)), &result)?;
                let pooled = &result.pooled;
                rows.push(SweepRow {
                    indicator: kind,
                    alpha,
                    horizon: h,
                    k: kind.uses_model().then_some(params.ewi.k),
                    delta: kind.uses_model().then_some(params.ewi.delta),
                    pr_auc: pooled.pr_auc(),
                    roc_auc: pooled.roc_auc(),
                    epsilon: pooled.epsilon,
                    pooled_epsilon: pooled.pooled_epsilon,
                    pr_minus_epsilon: pooled.pr_auc().map(|p| p - pooled.epsilon),
                    degenerate_folds: pooled.degenerate_folds().len(),
                });
            }
        }
    }
    let table = SweepTable { rows };
    io::write_sweep(&out.join("summary.csv"), &table)?;
    print!("{}", report::render_table(&table));
    Manifest::new("backtest", cfg)?
        .seed("seed", cfg.seed)
        .input(&cfg.data.matrix)?
        .input(&cfg.data.ohlc)
}

fn sweep(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let x = load_matrix(&cfg.data.matrix)?;
    let sigma = load_sigma(&cfg.data.ohlc)?;
    let table =
        pipeline::sensitivity_sweep(&x, &sigma, &cfg.sweep_grid(), &cfg.evaluation.indicators, &cfg.backtest_params())?;
    io::write_sweep(&out.join("sweep.csv"), &table)?;
    print!("{}", report::render_table(&table));
    Manifest::new("sweep", cfg)?
        .seed("seed", cfg.seed)
        .input(&cfg.data.matrix)?
        .input(&cfg.data.ohlc)
}

fn evaluate(args: &EvaluateArgs, out: &Path) -> Result<Manifest> {
    require_file(&args.scores)?;
    require_file(&args.labels)?;
    let (days, scores) = io::read_day_values(&args.scores)?;
    let labels: HashMap<i64, bool> = io::read_labels(&args.labels)?.into_iter().collect();
    let mut joined = (Vec::new(), Vec::new(), Vec::new());
    for (d, s) in days.into_iter().zip(scores) {
        if let Some(&l) = labels.get(&d) {
            joined.0.push(d);
            joined.1.push(s);
            joined.2.push(l);
        }
    }
    if joined.0.is_empty() {
        bail!(ewi_core::Error::Parse("scores and labels share no day".into()));
    }
    let sl = ScoredLabels::new(joined.0, joined.1, joined.2)?;
    let pooled = evaluate_fold_pool(&[sl])?;
    for (name, curve) in [("roc.csv", &pooled.roc), ("pr.csv", &pooled.pr)] {
        if let Some(c) = curve {
            io::write_curve(&out.join(name), c)?;
        }
    }
    io::write_json(
        &out.join("metrics.json"),
        &serde_json::json!({
            "n": pooled.n_total,
            "positives": pooled.per_fold[0].positives,
            "epsilon": pooled.epsilon,
            "roc_auc": pooled.roc_auc(),
            "pr_auc": pooled.pr_auc(),
        }),
    )?;
    eprintln!(
        "n {} eps {:.4} AUC ROC {} AUC PR {}",
        pooled.n_total,
        pooled.epsilon,
        pooled.roc_auc().map_or("-".into(), |v| format!("{v:.4}")),
        pooled.pr_auc().map_or("-".into(), |v| format!("{v:.4}"))
    );
    Manifest::new("evaluate", args)?.input(&args.scores)?.input(&args.labels)
}

fn synth_cmd(args: &SynthArgs, seed: Option<u64>, out: &Path) -> Result<Manifest> {
    let mut spec = match &args.spec {
        Some(path) => {
            require_file(path)?;
            let text = std::fs::read_to_string(path)?;
            toml::from_str::<SynthSpec>(&text).map_err(|e| anyhow!(ConfigError(format!("{}: {e}", path.display()))))?
        }
        None => SynthSpec::default(),
    };
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    spec.validate().map_err(|e| anyhow!(ConfigError(e.to_string())))?;
    let data = synth::generate(&spec)?;
    io::write_synth(out, &data)?;
    eprintln!("{}x{} matrix, {} bars", data.x.nrows(), data.x.ncols(), data.bars.len());
    Ok(Manifest::new("synth", &spec)?.seed("synth", spec.seed))
}

fn report_cmd(args: &ReportArgs, out: Option<&Path>) -> Result<Option<Manifest>> {
    if !args.input.is_dir() {
        bail!(MissingData(args.input.clone()));
    }
    let text = report::render_dir(&args.input)?;
    print!("{text}");
    match out {
        Some(out) => {
            std::fs::write(out.join("report.txt"), &text)?;
            Ok(Some(Manifest::new("report", args)?.input(&args.input)?))
        }
        None => Ok(None),
    }
}

fn configure_threads(threads: usize) -> Result<()> {
    if threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().context("configuring thread pool")?;
    }
    Ok(())
}

/// Runs `body` inside a staging directory and publishes it on success.
fn staged(out: &Path, body: impl FnOnce(&Path) -> Result<Manifest>) -> Result<()> {
    let staging = Staging::new(out)?;
    let manifest = body(staging.path())?;
    let target = staging.commit(manifest)?;
    eprintln!("wrote {}", target.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Backtest | Command::Sweep => {
            let cfg = load_run_config(&cli)?;
            configure_threads(cfg.threads)?;
            let out = run_out(&cli, &cfg)?;
            match cli.command {
                Command::Backtest => staged(&out, |dir| backtest(&cfg, dir)),
                _ => staged(&out, |dir| sweep(&cfg, dir)),
            }
        }
        command => {
            configure_threads(cli.threads.unwrap_or(0))?;
            let seed = cli.seed.unwrap_or(DEFAULT_SEED);
            match command {
                Command::Ingest(a) => staged(&require_out(&cli.out)?, |dir| ingest(a, dir)),
                Command::Label(a) => staged(&require_out(&cli.out)?, |dir| label(a, dir)),
                Command::Decompose(a) => staged(&require_out(&cli.out)?, |dir| decompose(a, seed, dir)),
                Command::Train(a) => staged(&require_out(&cli.out)?, |dir| train(a, seed, dir)),
                Command::Evaluate(a) => staged(&require_out(&cli.out)?, |dir| evaluate(a, dir)),
                Command::Synth(a) => staged(&require_out(&cli.out)?, |dir| synth_cmd(a, cli.seed, dir)),
                Command::Report(a) => match &cli.out {
                    Some(out) => staged(out, |dir| {
                        report_cmd(a, Some(dir)).map(|m| m.expect("manifest for written report"))
                    }),
                    None => report_cmd(a, None).map(|_| ()),
                },
                Command::Backtest | Command::Sweep => unreachable!(),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
