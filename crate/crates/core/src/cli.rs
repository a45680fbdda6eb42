//! Batch experiment runner behind the `civae` binary.
//!
//! Every command validates its configuration before touching the file
//! system and writes only below its `--out` directory. Each artifact embeds
//! the resolved [`ExperimentConfig`].

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::metrics::{self, evaluate, EvalOptions, MetricReport};
use crate::models::{train_restarts, Checkpoint, CiModel, EpochRecord, Fusion, Mode, ModelConfig, TrainConfig, TrainOutcome};
use crate::objective::{alpha_record, contingency, AlphaRecord};
use crate::rng::{self, normals, tags};
use crate::synthdata::{fmt_f64, generate, generate_with, write_json, LabeledDataset, Manifest, Scheme, SplitTag, DEFAULT_D_X};

pub const REPORT_VERSION: u32 = 1;
pub const FAILURE_FILE: &str = "FAILED.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Parser)]
#[command(name = "civae", version, about = "Covariate-informed identifiable VAE laboratory")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split.
    Eval(EvalArgs),
    /// Compare grid-search and closed-form mixture weights.
    AlphaReport(AlphaArgs),
    /// Sweep the observation noise and record posterior collapse.
    Collapse(CollapseArgs),
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct GenArgs {
    #[arg(long, value_enum)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Seed of the mixing function; defaults to `--seed`.
    #[arg(long)]
    pub flow_seed: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_D_X)]
    pub d_x: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Optimizer and schedule flags shared by `train` and `collapse`.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainFlags {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = 2)]
    pub restarts: usize,
    /// Reparameterized draws per sample and step.
    #[arg(long, default_value_t = 1)]
    pub k_train: usize,
    #[arg(long, default_value_t = TrainConfig::default().alpha_grid_train)]
    pub alpha_grid_train: usize,
    /// Comma-separated decoder hidden widths; defaults to the scheme's.
    #[arg(long, value_delimiter = ',')]
    pub decoder_hidden: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = Fusion::Product)]
    pub fusion: Fusion,
}

impl TrainFlags {
    fn train_config(&self, seed: u64, obs_noise_fixed: bool) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            seed,
            k_train: self.k_train,
            alpha_grid_train: self.alpha_grid_train,
            obs_noise_fixed,
        }
    }
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Ci)]
    pub mode: Mode,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Observation noise variance; the log-std is half its logarithm.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long)]
    pub learn_obs_noise: bool,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct MetricFlags {
    /// Prior draws per sample for the log-likelihood.
    #[arg(long = "loglik-draws", default_value_t = 512)]
    pub s: usize,
    /// Shared reparameterized draws per sample for ELBO curves.
    #[arg(long, default_value_t = 64)]
    pub k_eval: usize,
    #[arg(long, default_value_t = 1001)]
    pub grid_size_eval: usize,
    #[arg(long, default_value_t = 0)]
    pub eval_seed: u64,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

pub type AlphaArgs = EvalArgs;

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
pub struct CollapseArgs {
    #[arg(long, value_enum, default_value_t = Scheme::Sine)]
    pub scheme: Scheme,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    /// Comma-separated observation noise variances.
    #[arg(long, value_delimiter = ',', default_value = "0.1,1,10")]
    pub gammas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
    #[command(flatten)]
    pub metrics: MetricFlags,
}

/// Resolved settings of one command, echoed into its artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub command: String,
    pub scheme: Option<Scheme>,
    pub mode: Option<Mode>,
    pub seed: u64,
    pub train: Option<TrainConfig>,
    pub model: Option<ModelConfig>,
    pub restarts: usize,
    pub loglik_draws: usize,
    pub k_eval: usize,
    pub grid_size_eval: usize,
    pub gammas: Vec<f64>,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
}

impl ExperimentConfig {
    fn new(command: &str, out: &Path) -> Self {
        ExperimentConfig {
            command: command.into(),
            scheme: None,
            mode: None,
            seed: 0,
            train: None,
            model: None,
            restarts: 1,
            loglik_draws: 0,
            k_eval: 0,
            grid_size_eval: 0,
            gammas: Vec::new(),
            data: None,
            checkpoint: None,
            out: out.to_path_buf(),
        }
    }

    fn with_metrics(mut self, m: &MetricFlags) -> Self {
        self.loglik_draws = m.s;
        self.k_eval = m.k_eval;
        self.grid_size_eval = m.grid_size_eval;
        self.seed = m.eval_seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restart count must be >= 1".into()));
        }
        if let Some(t) = &self.train {
            if t.epochs == 0 || t.batch_size == 0 || t.k_train == 0 {
                return Err(Error::Config("epochs, batch size and draw count must be positive".into()));
            }
            if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
                return Err(Error::Config(format!("learning rate {} must be positive", t.learning_rate)));
            }
            if t.alpha_grid_train < 2 {
                return Err(Error::Config("training grid needs at least two points".into()));
            }
        }
        if let Some(m) = &self.model {
            m.validate()?;
        }
        if self.command != "gen" && self.command != "train" {
            if self.loglik_draws < 2 && self.command != "alpha-report" {
                return Err(Error::Config("--loglik-draws must be >= 2".into()));
            }
            if self.k_eval < 2 {
                return Err(Error::Config("--k-eval must be >= 2".into()));
            }
            if self.grid_size_eval < 2 {
                return Err(Error::Config("--grid-size-eval must be >= 2".into()));
            }
        }
        if self.command == "collapse" {
            if self.gammas.is_empty() {
                return Err(Error::Config("gamma list is empty".into()));
            }
            if let Some(g) = self.gammas.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
                return Err(Error::Config(format!("gamma {g} must be positive")));
            }
        }
        Ok(())
    }

    fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes through a temporary file so readers never see partial output.
fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let tmp = path.with_extension("json.partial");
    write_json(&tmp, value)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn model_config(scheme: Scheme, ds: &LabeledDataset, mode: Mode, flags: &TrainFlags, obs_log_std: f64) -> ModelConfig {
    let mut m = ModelConfig::for_scheme(scheme, ds.d_x(), ds.d_u(), mode);
    if let Some(h) = &flags.decoder_hidden {
        m.decoder_hidden = h.clone();
    }
    m.fusion = flags.fusion;
    m.obs_log_std = obs_log_std;
    m
}

pub fn cmd_gen(args: &GenArgs) -> Result<Manifest> {
    if args.n == 0 {
        return Err(Error::Config("--n must be >= 1".into()));
    }
    if args.scheme == Scheme::External {
        return Err(Error::Config("external datasets are supplied, not generated".into()));
    }
    let ds = generate_with(args.scheme, args.n, args.d_x, args.seed, args.flow_seed.unwrap_or(args.seed))?;
    let m = ds.save(&args.out)?;
    info!("wrote {} rows to {}", m.n, args.out.display());
    Ok(m)
}

/// Result of `train`: the kept model and where it was written.
#[derive(Debug)]
pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub checkpoint: PathBuf,
    pub history: PathBuf,
}

#[derive(Serialize)]
struct FailureRecord<'a> {
    format_version: u32,
    error: String,
    exit_code: i32,
    config: &'a ExperimentConfig,
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,split,loss,mean_alpha,skipped\n");
    for r in history {
        s += &format!("{},train,{},{},{}\n", r.epoch, fmt_f64(r.train_loss), fmt_f64(r.mean_alpha), r.skipped);
        s += &format!("{},val,{},{},{}\n", r.epoch, fmt_f64(r.val_loss), fmt_f64(r.mean_alpha), r.skipped);
    }
    s
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary> {
    if !(args.gamma > 0.0 && args.gamma.is_finite()) {
        return Err(Error::Config(format!("gamma {} must be positive", args.gamma)));
    }
    let ds = LabeledDataset::load(&args.data)?;
    let scheme = ds.provenance.scheme;
    let mut model = model_config(scheme, &ds, args.mode, &args.flags, 0.5 * args.gamma.ln());
    model.learn_obs_noise = args.learn_obs_noise;
    let cfg = ExperimentConfig {
        scheme: Some(scheme),
        mode: Some(args.mode),
        seed: args.seed,
        train: Some(args.flags.train_config(args.seed, !args.learn_obs_noise)),
        model: Some(model.clone()),
        restarts: args.flags.restarts,
        data: Some(args.data.clone()),
        ..ExperimentConfig::new("train", &args.out)
    };
    cfg.validate()?;
    ensure_dir(&args.out)?;
    let failure = args.out.join(FAILURE_FILE);
    if failure.exists() {
        fs::remove_file(&failure).map_err(|e| Error::io(&failure, e))?;
    }
    let train_cfg = cfg.train.clone().expect("set above");
    let result = train_restarts(&model, &ds, &train_cfg, cfg.restarts, &mut |r, rec| {
        info!(
            "restart {r} epoch {:>3}: train {:.4} val {:.4} alpha {:.3}",
            rec.epoch, rec.train_loss, rec.val_loss, rec.mean_alpha
        );
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            warn!("training failed: {e}");
            let record = FailureRecord {
                format_version: REPORT_VERSION,
                error: e.to_string(),
                exit_code: e.exit_code(),
                config: &cfg,
            };
            write_json(&failure, &record)?;
            return Err(e);
        }
    };
    let history = args.out.join(HISTORY_FILE);
    write_text(&history, &history_csv(&outcome.history))?;
    let checkpoint = args.out.join(CHECKPOINT_FILE);
    let ck = Checkpoint::from_model(&outcome.model, &model, outcome.init_seed, cfg.echo());
    write_json_atomic(&checkpoint, &ck)?;
    info!("kept model from seed {} (best val {:.4})", outcome.init_seed, outcome.best_val);
    Ok(TrainSummary {
        outcome,
        checkpoint,
        history,
    })
}

fn load_pair(checkpoint: &Path, data: &Path) -> Result<(Checkpoint, CiModel, LabeledDataset)> {
    let ck = Checkpoint::load(checkpoint)?;
    let model = ck.to_model()?;
    let ds = LabeledDataset::load(data)?;
    if ds.d_x() != model.d_x() {
        return Err(Error::dim("dataset observation width", model.d_x(), ds.d_x()));
    }
    if ds.d_u() != model.d_u() {
        return Err(Error::dim("dataset covariate width", model.d_u(), ds.d_u()));
    }
    Ok((ck, model, ds))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub split: SplitTag,
    pub metrics: MetricReport,
    pub config: ExperimentConfig,
    /// Configuration echoed by the checkpoint.
    pub training: serde_json::Value,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let cfg = ExperimentConfig {
        checkpoint: Some(args.checkpoint.clone()),
        data: Some(args.data.clone()),
        ..ExperimentConfig::new("eval", &args.out).with_metrics(&args.metrics)
    };
    cfg.validate()?;
    let (ck, model, ds) = load_pair(&args.checkpoint, &args.data)?;
    let opts = EvalOptions {
        loglik_draws: cfg.loglik_draws,
        seed: cfg.seed,
    };
    let metrics = evaluate(&model, &ds, SplitTag::Test, &opts)?;
    ensure_dir(&args.out)?;
    let report = EvalReport {
        format_version: REPORT_VERSION,
        split: SplitTag::Test,
        metrics,
        config: cfg,
        training: ck.config,
    };
    write_json(&args.out.join("metrics.json"), &report)?;
    let values: Vec<String> = report.metrics.csv_values().into_iter().map(fmt_f64).collect();
    write_text(
        &args.out.join("metrics.csv"),
        &format!("{}\n{}\n", MetricReport::CSV_HEADER.join(","), values.join(",")),
    )?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AlphaSummary {
    pub format_version: u32,
    pub n: usize,
    /// Rows grid bucket, columns formula bucket, each over {0, interior, 1}.
    pub contingency: [[usize; 3]; 3],
    /// `None` when either column is constant.
    pub correlation: Option<f64>,
    pub config: ExperimentConfig,
}

/// Per-sample grid and closed-form weights on the test rows of `ds`.
pub fn alpha_records(model: &CiModel, ds: &LabeledDataset, grid_size: usize, k: usize, seed: u64) -> Result<Vec<AlphaRecord>> {
    let sub = ds.subset(SplitTag::Test);
    let mut out = Vec::with_capacity(sub.rows.len());
    for (i, &row) in sub.rows.iter().enumerate() {
        let mut r = rng::stream(seed, tags::EVAL_NOISE, row as u64);
        let noise = Tensor::matrix(k, model.d_z(), normals(&mut r, k * model.d_z()))?;
        out.push(alpha_record(model, row, sub.x.row(i), sub.u.row(i), grid_size, &noise)?);
    }
    Ok(out)
}

pub fn alpha_correlation(records: &[AlphaRecord]) -> Option<f64> {
    let g: Vec<f64> = records.iter().map(|r| r.alpha_grid).collect();
    let f: Vec<f64> = records.iter().map(|r| r.alpha_formula).collect();
    metrics::pearson(&g, &f)
}

pub fn cmd_alpha_report(args: &AlphaArgs) -> Result<AlphaSummary> {
    let cfg = ExperimentConfig {
        checkpoint: Some(args.checkpoint.clone()),
        data: Some(args.data.clone()),
        ..ExperimentConfig::new("alpha-report", &args.out).with_metrics(&args.metrics)
    };
    cfg.validate()?;
    let (ck, model, ds) = load_pair(&args.checkpoint, &args.data)?;
    if ck.model.mode != Mode::Ci {
        return Err(Error::Config(format!(
            "alpha report needs a ci checkpoint, got {}",
            ck.model.mode.name()
        )));
    }
    let records = alpha_records(&model, &ds, cfg.grid_size_eval, cfg.k_eval, cfg.seed)?;
    ensure_dir(&args.out)?;
    let path = args.out.join("alpha_records.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|source| Error::Csv { path: path.clone(), source })?;
    w.write_record(["sample_id", "delta_1_0", "epsilon", "alpha_grid", "alpha_formula", "elbo_0", "elbo_1", "elbo_star"])
        .and_then(|_| {
            for r in &records {
                let v = [r.delta_1_0, r.epsilon, r.alpha_grid, r.alpha_formula, r.elbo_0, r.elbo_1, r.elbo_star];
                let mut rec = vec![r.sample_id.to_string()];
                rec.extend(v.into_iter().map(fmt_f64));
                w.write_record(rec)?;
            }
            Ok(())
        })
        .map_err(|source| Error::Csv { path: path.clone(), source })?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    let correlation = alpha_correlation(&records);
    if correlation.is_none() {
        warn!("one of the alpha columns is constant; correlation undefined");
    }
    let summary = AlphaSummary {
        format_version: REPORT_VERSION,
        n: records.len(),
        contingency: contingency(&records),
        correlation,
        config: cfg,
    };
    write_json(&args.out.join("alpha_summary.json"), &summary)?;
    Ok(summary)
}

/// One (mode, gamma) cell of the collapse experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseRow {
    pub mode: Mode,
    pub gamma: f64,
    pub status: String,
    pub collapse_score: f64,
    pub collapse_score_se: f64,
    pub mcc_post: f64,
    pub cod_post: f64,
    pub loglik: f64,
    pub best_val: f64,
}

/// Trains `mode` with the observation log-std fixed at `ln(gamma) / 2` and
/// reports its test metrics.
pub fn collapse_cell(
    ds: &LabeledDataset,
    mode: Mode,
    gamma: f64,
    flags: &TrainFlags,
    seed: u64,
    opts: &EvalOptions,
) -> Result<CollapseRow> {
    let model = model_config(ds.provenance.scheme, ds, mode, flags, 0.5 * gamma.ln());
    let out = train_restarts(&model, ds, &flags.train_config(seed, true), flags.restarts, &mut |_, _| {})?;
    let r = evaluate(&out.model, ds, SplitTag::Test, opts)?;
    Ok(CollapseRow {
        mode,
        gamma,
        status: "ok".into(),
        collapse_score: r.collapse_score.value,
        collapse_score_se: r.collapse_score.se,
        mcc_post: r.mcc_post.map_or(f64::NAN, |m| m.value),
        cod_post: r.cod_post.map_or(f64::NAN, |m| m.value),
        loglik: r.loglik.value,
        best_val: out.best_val,
    })
}

pub fn cmd_collapse_experiment(args: &CollapseArgs) -> Result<Vec<CollapseRow>> {
    let cfg = ExperimentConfig {
        scheme: Some(args.scheme),
        seed: args.seed,
        train: Some(args.flags.train_config(args.seed, true)),
        restarts: args.flags.restarts,
        gammas: args.gammas.clone(),
        ..ExperimentConfig::new("collapse", &args.out).with_metrics(&args.metrics)
    };
    let cfg = ExperimentConfig { seed: args.seed, ..cfg };
    cfg.validate()?;
    if args.scheme == Scheme::External {
        return Err(Error::Config("the collapse experiment needs a synthetic scheme".into()));
    }
    let ds = generate(args.scheme, args.n, args.seed, args.seed)?;
    let opts = EvalOptions {
        loglik_draws: cfg.loglik_draws,
        seed: args.metrics.eval_seed,
    };
    let mut rows = Vec::new();
    for &gamma in &args.gammas {
        for mode in [Mode::Ivae, Mode::Ci] {
            info!("collapse: {} at gamma {gamma}", mode.name());
            let row = collapse_cell(&ds, mode, gamma, &args.flags, args.seed, &opts).unwrap_or_else(|e| {
                warn!("{} at gamma {gamma} failed: {e}", mode.name());
                CollapseRow {
                    mode,
                    gamma,
                    status: format!("failed: {e}"),
                    collapse_score: f64::NAN,
                    collapse_score_se: f64::NAN,
                    mcc_post: f64::NAN,
                    cod_post: f64::NAN,
                    loglik: f64::NAN,
                    best_val: f64::NAN,
                }
            });
            rows.push(row);
        }
    }
    ensure_dir(&args.out)?;
    let path = args.out.join("collapse.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|source| Error::Csv { path: path.clone(), source })?;
    let header = ["mode", "gamma", "status", "collapse_score", "collapse_score_se", "mcc_post", "cod_post", "loglik", "best_val"];
    w.write_record(header)
        .and_then(|_| {
            for r in &rows {
                let mut rec = vec![r.mode.name().to_string(), fmt_f64(r.gamma), r.status.clone()];
                rec.extend(
                    [r.collapse_score, r.collapse_score_se, r.mcc_post, r.cod_post, r.loglik, r.best_val]
                        .into_iter()
                        .map(fmt_f64),
                );
                w.write_record(rec)?;
            }
            Ok(())
        })
        .map_err(|source| Error::Csv { path: path.clone(), source })?;
    w.flush().map_err(|e| Error::io(&path, e))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        format_version: u32,
        rows: &'a [CollapseRow],
        config: &'a ExperimentConfig,
    }
    write_json(
        &args.out.join("collapse.json"),
        &Summary {
            format_version: REPORT_VERSION,
            rows: &rows,
            config: &cfg,
        },
    )?;
    Ok(rows)
}

/// Dispatches a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Gen(a) => {
            let m = cmd_gen(a)?;
            println!(
                "{} rows ({} train / {} val / {} test) in {}",
                m.n,
                m.split_counts.train,
                m.split_counts.val,
                m.split_counts.test,
                a.out.display()
            );
        }
        Command::Train(a) => {
            let s = cmd_train(a)?;
            println!(
                "best val loss {:.4} at epoch {}; checkpoint {}",
                s.outcome.best_val,
                s.outcome.best_epoch,
                s.checkpoint.display()
            );
        }
        Command::Eval(a) => {
            let r = cmd_eval(a)?;
            let show = |m: Option<metrics::Metric>| m.map_or("n/a".to_string(), |m| format!("{:.4} ({:.4})", m.value, m.se));
            println!("mcc_post {}", show(r.metrics.mcc_post));
            println!("cod_post {}", show(r.metrics.cod_post));
            println!("loglik   {}", show(Some(r.metrics.loglik)));
            println!("collapse {}", show(Some(r.metrics.collapse_score)));
        }
        Command::AlphaReport(a) => {
            let s = cmd_alpha_report(a)?;
            println!("{} samples, correlation {:?}", s.n, s.correlation);
            for (label, row) in ["0", "interior", "1"].iter().zip(s.contingency) {
                println!("grid {label:>8}: {row:?}");
            }
        }
        Command::Collapse(a) => {
            for r in cmd_collapse_experiment(a)? {
                println!(
                    "{:<6} gamma {:>6}: collapse {:.4} ({})",
                    r.mode.name(),
                    r.gamma,
                    r.collapse_score,
                    r.status
                );
            }
        }
    }
    Ok(())
}
