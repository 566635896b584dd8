//! Command-line front end: configure, run, compare, analyze, and export
//! plot data for experiments.
//!
//! Configuration is a flat JSON document; every key is optional and CLI
//! flags override file values. Each training run gets a fresh directory
//! under `--out` named by timestamp and config hash — an existing directory
//! is never overwritten, a numeric suffix is appended instead. All outputs
//! are CSV plus the JSON manifest/model files, so plotting stays external.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage/config error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data::{gen_blobs, gen_spirals, load_csv, load_idx, Dataset, Standardizer};
use crate::error::{Error, Result};
use crate::grad::{hard_example_report, ExampleEpochRecord, HardExampleReport};
use crate::metrics::{ensemble_predict, EvalRecord, MetricsReport, DEFAULT_ECE_BINS};
use crate::nn::{MlpParams, RealMatrix};
use crate::targets::{ProbVector, SofteningMethod};
use crate::trainer::{
    predict_probs, split_train_val, train, AlphaMode, TeacherStrategy, TrainConfig, TrainOutput,
};
use crate::util::fnv1a64;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "pskd",
    version,
    about = "Train small classifiers with progressively self-distilled targets and measure calibration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one training experiment and write a run directory.
    Train(SharedArgs),
    /// Evaluate saved model(s) and export metrics CSVs. Multiple --model
    /// flags form a probability-averaging ensemble.
    Eval(EvalArgs),
    /// Produce hard-example and curve CSVs from a finished run.
    Analyze(AnalyzeArgs),
    /// Train one arm per alpha_T (times seeds) and write a comparison CSV.
    SweepAlpha(SweepArgs),
}

#[derive(Debug, Clone, Args, Default)]
pub struct SharedArgs {
    /// JSON config file; flags below override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory that run directories are created under.
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Final mixing weight alpha_T for the pskd method.
    #[arg(long = "alpha-T", alias = "alpha-t")]
    pub alpha_t: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_enum)]
    pub teacher: Option<TeacherArg>,
    /// Number of ECE bins.
    #[arg(long)]
    pub bins: Option<usize>,
    /// Record per-example probabilities each epoch (needed by analyze).
    #[arg(long)]
    pub per_example_log: Option<bool>,
    /// Pin alpha_t to alpha_T instead of growing it linearly.
    #[arg(long)]
    pub fixed_alpha: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Model file(s); more than one forms an ensemble.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Dataset config override; defaults to the dataset stored in the
    /// first model file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Which split to evaluate (split is reconstructed from the first
    /// model's seed and val fraction).
    #[arg(long, value_enum, default_value_t = SplitArg::Val)]
    pub split: SplitArg,
    #[arg(long)]
    pub bins: Option<usize>,
    /// Directory the metrics CSVs are written into.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Run directory produced by `pskd train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Correctness fraction below which an example counts as hard.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub shared: SharedArgs,
    /// alpha_T values, comma separated; at least two.
    #[arg(long, value_delimiter = ',', required = true)]
    pub alphas: Vec<f64>,
    /// Seeds per arm: base seed, base+1, ...
    #[arg(long, default_value_t = 1)]
    pub num_seeds: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hard,
    Ls,
    Kd,
    Pskd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TeacherArg {
    Snapshot,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Val,
    Train,
    All,
}

/// Dataset description as it appears in config files and manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_blob_n")]
        n_per_class: usize,
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default = "default_spread")]
        spread: f64,
        #[serde(default)]
        seed: u64,
    },
    Spirals {
        #[serde(default = "default_k")]
        k: usize,
        #[serde(default = "default_spiral_n")]
        n_per_class: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

fn default_k() -> usize {
    3
}
fn default_blob_n() -> usize {
    200
}
fn default_dim() -> usize {
    2
}
fn default_spread() -> f64 {
    1.0
}
fn default_spiral_n() -> usize {
    100
}
fn default_noise() -> f64 {
    0.2
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Spirals {
            k: default_k(),
            n_per_class: default_spiral_n(),
            noise: default_noise(),
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn build(&self) -> Result<Dataset> {
        match self {
            DatasetConfig::Blobs {
                k,
                n_per_class,
                dim,
                spread,
                seed,
            } => gen_blobs(*seed, *k, *n_per_class, *dim, *spread),
            DatasetConfig::Spirals {
                k,
                n_per_class,
                noise,
                seed,
            } => gen_spirals(*seed, *k, *n_per_class, *noise),
            DatasetConfig::Csv { path } => load_csv(path),
            DatasetConfig::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

/// Config file schema. Every key is optional; unknown keys are rejected
/// with the offending field named in the error.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// One of "hard", "ls", "kd", "pskd".
    pub method: Option<String>,
    /// Final alpha for pskd.
    pub alpha_t: Option<f64>,
    /// Pin alpha_t constant (ablation) instead of linear growth.
    pub fixed_alpha: Option<bool>,
    /// Label-smoothing strength for ls.
    pub epsilon: Option<f64>,
    /// Mixing weight for kd.
    pub kd_alpha: Option<f64>,
    /// Teacher temperature for kd.
    pub kd_tau: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_decay_factor: Option<f64>,
    pub lr_decay_epochs: Option<Vec<usize>>,
    pub momentum: Option<f64>,
    pub weight_decay: Option<f64>,
    pub seed: Option<u64>,
    /// "snapshot" or "disk".
    pub teacher: Option<String>,
    pub hidden_dims: Option<Vec<usize>>,
    pub val_fraction: Option<f64>,
    pub standardize: Option<bool>,
    pub per_example_log: Option<bool>,
    pub bins: Option<usize>,
    pub dataset: Option<DatasetConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub bins: usize,
}

/// Merge config file values and CLI overrides onto the defaults.
pub fn resolve_config(shared: &SharedArgs) -> Result<ResolvedConfig> {
    let file = match &shared.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let method_name = shared
        .method
        .map(|m| {
            match m {
                MethodArg::Hard => "hard",
                MethodArg::Ls => "ls",
                MethodArg::Kd => "kd",
                MethodArg::Pskd => "pskd",
            }
            .to_string()
        })
        .or(file.method.clone())
        .unwrap_or_else(|| "pskd".to_string());
    let alpha_t = shared.alpha_t.or(file.alpha_t).unwrap_or(0.8);
    let method = match method_name.as_str() {
        "hard" => SofteningMethod::HardTarget,
        "ls" => SofteningMethod::LabelSmoothing {
            epsilon: file.epsilon.unwrap_or(0.1),
        },
        "kd" => SofteningMethod::ClassicKd {
            alpha: file.kd_alpha.unwrap_or(0.5),
            tau: file.kd_tau.unwrap_or(4.0),
        },
        "pskd" => SofteningMethod::Pskd {
            alpha_t_final: alpha_t,
        },
        other => {
            return Err(Error::Config(format!(
                "method must be one of hard, ls, kd, pskd; got '{other}'"
            )))
        }
    };

    let teacher_strategy = match shared.teacher {
        Some(TeacherArg::Snapshot) => TeacherStrategy::Snapshot,
        Some(TeacherArg::Disk) => TeacherStrategy::Disk,
        None => match file.teacher.as_deref() {
            Some("snapshot") | None => TeacherStrategy::Snapshot,
            Some("disk") => TeacherStrategy::Disk,
            Some(other) => {
                return Err(Error::Config(format!(
                    "teacher must be 'snapshot' or 'disk', got '{other}'"
                )))
            }
        },
    };

    let fixed = shared.fixed_alpha || file.fixed_alpha.unwrap_or(false);
    let defaults = TrainConfig::default();
    let train = TrainConfig {
        method,
        total_epochs: shared.epochs.or(file.epochs).unwrap_or(defaults.total_epochs),
        batch_size: file.batch_size.unwrap_or(defaults.batch_size),
        lr_initial: file.lr.unwrap_or(defaults.lr_initial),
        lr_decay_factor: file.lr_decay_factor.unwrap_or(defaults.lr_decay_factor),
        lr_decay_epochs: file
            .lr_decay_epochs
            .unwrap_or_else(|| default_decay_epochs(shared.epochs.or(file.epochs).unwrap_or(defaults.total_epochs))),
        momentum: file.momentum.unwrap_or(defaults.momentum),
        weight_decay: file.weight_decay.unwrap_or(defaults.weight_decay),
        seed: shared.seed.or(file.seed).unwrap_or(defaults.seed),
        teacher_strategy,
        hidden_dims: file.hidden_dims.unwrap_or(defaults.hidden_dims),
        val_fraction: file.val_fraction.unwrap_or(defaults.val_fraction),
        alpha_mode: if fixed {
            AlphaMode::Fixed
        } else {
            AlphaMode::LinearGrowth
        },
        standardize: file.standardize.unwrap_or(defaults.standardize),
        per_example_log: shared
            .per_example_log
            .or(file.per_example_log)
            .unwrap_or(defaults.per_example_log),
        cache_dir: None,
    };
    // The commands assign the real cache directory per run; validate with
    // a placeholder so a disk-strategy config is not rejected here.
    let mut probe = train.clone();
    if probe.uses_teacher() && probe.teacher_strategy == TeacherStrategy::Disk {
        probe.cache_dir = Some(PathBuf::from("."));
    }
    probe.validate()?;

    Ok(ResolvedConfig {
        train,
        dataset: file.dataset.unwrap_or_default(),
        bins: shared.bins.or(file.bins).unwrap_or(DEFAULT_ECE_BINS),
    })
}

/// Decay at 1/2 and 3/4 of the run, mirroring the 150/225-of-300 recipe.
fn default_decay_epochs(total_epochs: usize) -> Vec<usize> {
    [total_epochs / 2, total_epochs * 3 / 4]
        .into_iter()
        .filter(|&e| e >= 1 && e < total_epochs)
        .collect()
}

/// Written into every run directory before training starts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_utc: String,
    pub tool_version: String,
    pub config: ResolvedConfig,
    pub out_dir: PathBuf,
}

/// Hash of the resolved config. Stable under key reordering in the input
/// file because the resolved struct serializes with a fixed field order.
pub fn config_hash(config: &ResolvedConfig) -> u64 {
    let canonical = serde_json::to_string(config).expect("config serializes");
    fnv1a64(canonical.as_bytes())
}

/// Create `base/<stem>`, or `base/<stem>-2`, `-3`, ... if taken.
fn fresh_dir(base: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(base)?;
    let first = base.join(stem);
    if !first.exists() {
        fs::create_dir(&first)?;
        return Ok(first);
    }
    for n in 2.. {
        let candidate = base.join(format!("{stem}-{n}"));
        if !candidate.exists() {
            fs::create_dir(&candidate)?;
            return Ok(candidate);
        }
    }
    unreachable!()
}

/// Saved model: parameters plus everything needed to reproduce its
/// evaluation context (dataset, split seed, standardization).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub tool_version: String,
    pub dataset: DatasetConfig,
    pub seed: u64,
    pub val_fraction: f64,
    pub standardizer: Standardizer,
    pub layer_dims: Vec<usize>,
    /// Row-major weight matrix per layer, shape `(dims[l+1], dims[l])`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl ModelFile {
    pub fn from_output(output: &TrainOutput, dataset: &DatasetConfig, config: &TrainConfig) -> Self {
        Self {
            format_version: 1,
            tool_version: TOOL_VERSION.to_string(),
            dataset: dataset.clone(),
            seed: config.seed,
            val_fraction: config.val_fraction,
            standardizer: output.standardizer.clone(),
            layer_dims: output.params.layer_dims().to_vec(),
            weights: output
                .params
                .weights()
                .iter()
                .map(|w| w.values().to_vec())
                .collect(),
            biases: output.params.biases().to_vec(),
        }
    }

    pub fn params(&self) -> Result<MlpParams> {
        let mut weights = Vec::new();
        for (l, values) in self.weights.iter().enumerate() {
            if l + 1 >= self.layer_dims.len() {
                return Err(Error::Config("model file: too many weight layers".into()));
            }
            weights.push(RealMatrix::new(
                self.layer_dims[l + 1],
                self.layer_dims[l],
                values.clone(),
            )?);
        }
        MlpParams::from_parts(self.layer_dims.clone(), weights, self.biases.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn write_history_csv(path: &Path, output: &TrainOutput) -> Result<()> {
    let mut out = String::from("epoch,alpha,lr,train_loss,val_nll,val_top1_error\n");
    for e in &output.history.epochs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.epoch,
            e.alpha,
            e.lr,
            e.train_loss,
            e.val_nll.map(|v| v.to_string()).unwrap_or_default(),
            e.val_top1_error.map(|v| v.to_string()).unwrap_or_default(),
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_per_example_csv(path: &Path, records: &[Vec<ExampleEpochRecord>]) -> Result<()> {
    let mut out = String::from("epoch,example_id,gt_prob,max_prob,correct\n");
    for (e, epoch_records) in records.iter().enumerate() {
        for r in epoch_records {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e + 1,
                r.example_id,
                r.gt_prob,
                r.max_prob,
                u8::from(r.correct)
            ));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_summary_csv(path: &Path, split: &str, report: &MetricsReport) -> Result<()> {
    let out = format!(
        "metric,value\nsplit,{split}\nn,{}\ntop1_error,{}\ntop5_error,{}\nnll,{}\nece,{}\naurc,{}\n",
        report.n, report.top1_error, report.top5_error, report.nll, report.ece, report.aurc
    );
    fs::write(path, out)?;
    Ok(())
}

fn write_reliability_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = String::from("bin_low,bin_high,count,accuracy,mean_confidence\n");
    for b in &report.bins {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            b.low, b.high, b.count, b.accuracy, b.mean_confidence
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_risk_coverage_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let mut out = String::from("coverage,risk\n");
    for (coverage, risk) in &report.risk_coverage {
        out.push_str(&format!("{coverage},{risk}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Metrics for a trained model on the given ids of a (raw, unstandardized)
/// dataset. Applies the stored standardizer first.
pub fn evaluate_ids(
    params: &MlpParams,
    standardizer: &Standardizer,
    dataset: &Dataset,
    ids: &[u64],
    bins: usize,
) -> Result<MetricsReport> {
    if ids.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let mut work = dataset.clone();
    standardizer.apply(&mut work.features)?;
    let probs = predict_probs(params, &work, ids)?;
    let (_, labels) = work.gather(ids)?;
    let records: Vec<EvalRecord> = ids
        .iter()
        .zip(probs)
        .zip(&labels)
        .map(|((&id, p), &label)| EvalRecord::new(id, p, label))
        .collect::<Result<_>>()?;
    MetricsReport::compute(&records, bins)
}

/// Run one experiment: write the manifest, train, and fill the run
/// directory. Returns the run directory path.
pub fn cmd_train(shared: &SharedArgs) -> Result<PathBuf> {
    let resolved = resolve_config(shared)?;
    let dataset = resolved.dataset.build()?;

    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let hash = config_hash(&resolved);
    let run_dir = fresh_dir(&shared.out, &format!("{stamp}-{hash:08x}"))?;

    let mut train_config = resolved.train.clone();
    if train_config.uses_teacher() && train_config.teacher_strategy == TeacherStrategy::Disk {
        train_config.cache_dir = Some(run_dir.join("caches"));
    }

    let manifest = RunManifest {
        run_id: run_dir.file_name().unwrap().to_string_lossy().into_owned(),
        created_utc: chrono::Utc::now().to_rfc3339(),
        tool_version: TOOL_VERSION.to_string(),
        config: resolved.clone(),
        out_dir: run_dir.clone(),
    };
    fs::write(
        run_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    fs::write(
        run_dir.join("config.json"),
        serde_json::to_string_pretty(&resolved).expect("config serializes"),
    )?;

    let output = train(&train_config, &dataset)?;

    write_history_csv(&run_dir.join("history.csv"), &output)?;
    if let Some(records) = &output.history.per_example {
        write_per_example_csv(&run_dir.join("per_example.csv"), records)?;
    }
    ModelFile::from_output(&output, &resolved.dataset, &train_config)
        .save(&run_dir.join("model.json"))?;

    // Final metrics on the validation split (training split when there is
    // no validation data).
    let (split, ids) = if output.val_ids.is_empty() {
        ("train", &output.train_ids)
    } else {
        ("val", &output.val_ids)
    };
    let report = evaluate_ids(
        &output.params,
        &output.standardizer,
        &dataset,
        ids,
        resolved.bins,
    )?;
    write_summary_csv(&run_dir.join("summary.csv"), split, &report)?;

    Ok(run_dir)
}

/// Evaluate one or more saved models (ensembled) and export metrics CSVs.
pub fn cmd_eval(args: &EvalArgs) -> Result<PathBuf> {
    let models: Vec<ModelFile> = args
        .models
        .iter()
        .map(|p| ModelFile::load(p))
        .collect::<Result<_>>()?;
    let first = &models[0];

    let dataset_config = match &args.config {
        Some(path) => {
            let file = FileConfig::load(path)?;
            file.dataset.unwrap_or_else(|| first.dataset.clone())
        }
        None => first.dataset.clone(),
    };
    let dataset = dataset_config.build()?;

    // Reconstruct the first model's split for val/train evaluation.
    let ids = match args.split {
        SplitArg::All => dataset.ids(),
        SplitArg::Val => {
            let (_, val) = split_train_val(&dataset, first.val_fraction, first.seed)?;
            if val.is_empty() {
                return Err(Error::Config(
                    "model was trained without a validation split; use --split train or all".into(),
                ));
            }
            val
        }
        SplitArg::Train => split_train_val(&dataset, first.val_fraction, first.seed)?.0,
    };

    // Per-model predictions (each with its own standardizer), then the
    // probability-averaging ensemble.
    let mut per_model: Vec<Vec<ProbVector>> = Vec::new();
    for m in &models {
        let params = m.params()?;
        if params.input_dim() != dataset.dim() || params.n_classes() != dataset.n_classes {
            return Err(Error::Shape(format!(
                "model expects {} features / {} classes, dataset has {} / {}",
                params.input_dim(),
                params.n_classes(),
                dataset.dim(),
                dataset.n_classes
            )));
        }
        let mut work = dataset.clone();
        m.standardizer.apply(&mut work.features)?;
        per_model.push(predict_probs(&params, &work, &ids)?);
    }
    let (_, labels) = dataset.gather(&ids)?;
    let records: Vec<EvalRecord> = (0..ids.len())
        .map(|i| {
            let outputs: Vec<ProbVector> = per_model.iter().map(|m| m[i].clone()).collect();
            EvalRecord::new(ids[i], ensemble_predict(&outputs)?, labels[i])
        })
        .collect::<Result<_>>()?;

    let bins = args.bins.unwrap_or(DEFAULT_ECE_BINS);
    let report = MetricsReport::compute(&records, bins)?;

    fs::create_dir_all(&args.out)?;
    let split = match args.split {
        SplitArg::Val => "val",
        SplitArg::Train => "train",
        SplitArg::All => "all",
    };
    write_summary_csv(&args.out.join("summary.csv"), split, &report)?;
    write_reliability_csv(&args.out.join("reliability.csv"), &report)?;
    write_risk_coverage_csv(&args.out.join("risk_coverage.csv"), &report)?;
    Ok(args.out.clone())
}

fn parse_history_alphas(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    let mut alphas = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(Error::CsvFormat {
                line: i + 1,
                message: "history row needs at least epoch and alpha".into(),
            });
        }
        alphas.push(fields[1].parse().map_err(|_| Error::CsvFormat {
            line: i + 1,
            message: format!("invalid alpha '{}'", fields[1]),
        })?);
    }
    Ok(alphas)
}

fn parse_per_example_csv(path: &Path) -> Result<Vec<Vec<ExampleEpochRecord>>> {
    let text = fs::read_to_string(path)?;
    let mut by_epoch: Vec<Vec<ExampleEpochRecord>> = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let line_no = i + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::CsvFormat {
                line: line_no,
                message: format!("expected 5 fields, got {}", fields.len()),
            });
        }
        let bad = |what: &str| Error::CsvFormat {
            line: line_no,
            message: format!("invalid {what}"),
        };
        let epoch: usize = fields[0].parse().map_err(|_| bad("epoch"))?;
        let record = ExampleEpochRecord {
            example_id: fields[1].parse().map_err(|_| bad("example_id"))?,
            gt_prob: fields[2].parse().map_err(|_| bad("gt_prob"))?,
            max_prob: fields[3].parse().map_err(|_| bad("max_prob"))?,
            correct: fields[4] == "1",
        };
        if epoch == 0 {
            return Err(bad("epoch (must be >= 1)"));
        }
        while by_epoch.len() < epoch {
            by_epoch.push(Vec::new());
        }
        by_epoch[epoch - 1].push(record);
    }
    Ok(by_epoch)
}

/// Produce the hard-example report and the per-epoch curve CSV for a run.
pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<HardExampleReport> {
    let history_path = args.run.join("history.csv");
    if !history_path.exists() {
        return Err(Error::Config(format!(
            "{} does not look like a run directory (no history.csv)",
            args.run.display()
        )));
    }
    let per_example_path = args.run.join("per_example.csv");
    if !per_example_path.exists() {
        return Err(Error::Config(
            "run has no per-example history; re-run train with --per-example-log true".into(),
        ));
    }
    let alphas = parse_history_alphas(&history_path)?;
    let per_example = parse_per_example_csv(&per_example_path)?;
    if per_example.len() != alphas.len() {
        return Err(Error::Config(format!(
            "per-example history covers {} epochs but history.csv has {}",
            per_example.len(),
            alphas.len()
        )));
    }

    let report = hard_example_report(&per_example, &alphas, args.threshold)?;
    fs::write(args.run.join("hard_examples.csv"), report.to_csv())?;

    // Curve CSV: the per-epoch schedule and loss columns of history.csv.
    let text = fs::read_to_string(&history_path)?;
    let mut curves = String::from("epoch,alpha,lr,train_loss,val_nll\n");
    for line in text.lines().skip(1) {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        curves.push_str(&format!(
            "{},{},{},{},{}\n",
            fields[0], fields[1], fields[2], fields[3], fields[4]
        ));
    }
    fs::write(args.run.join("curves.csv"), curves)?;
    Ok(report)
}

/// One row of a sweep comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha_t: f64,
    pub fixed_alpha: bool,
    pub n_seeds: usize,
    pub val_top1_mean: f64,
    pub val_top1_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub aurc_mean: f64,
    pub aurc_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Train one arm per (alpha, seed) and aggregate validation metrics per
/// alpha. Rows depend only on the arm parameters, never on execution
/// order. Requires a non-empty validation split.
pub fn sweep_alpha(
    base: &TrainConfig,
    dataset: &Dataset,
    alphas: &[f64],
    seeds: &[u64],
    bins: usize,
) -> Result<Vec<SweepRow>> {
    if alphas.len() < 2 {
        return Err(Error::Config("sweep needs at least two alpha values".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one seed".into()));
    }
    if base.val_fraction <= 0.0 {
        return Err(Error::Config("sweep requires val_fraction > 0".into()));
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut top1 = Vec::new();
        let mut nll = Vec::new();
        let mut ece = Vec::new();
        let mut aurc = Vec::new();
        for &seed in seeds {
            let mut config = base.clone();
            config.method = SofteningMethod::Pskd {
                alpha_t_final: alpha,
            };
            config.seed = seed;
            if let Some(dir) = &base.cache_dir {
                config.cache_dir = Some(dir.join(format!("alpha{alpha}-seed{seed}")));
            }
            let output = train(&config, dataset)?;
            let report = evaluate_ids(
                &output.params,
                &output.standardizer,
                dataset,
                &output.val_ids,
                bins,
            )?;
            top1.push(report.top1_error);
            nll.push(report.nll);
            ece.push(report.ece);
            aurc.push(report.aurc);
        }
        let (t_m, t_s) = mean_std(&top1);
        let (n_m, n_s) = mean_std(&nll);
        let (e_m, e_s) = mean_std(&ece);
        let (a_m, a_s) = mean_std(&aurc);
        rows.push(SweepRow {
            alpha_t: alpha,
            fixed_alpha: base.alpha_mode == AlphaMode::Fixed,
            n_seeds: seeds.len(),
            val_top1_mean: t_m,
            val_top1_std: t_s,
            nll_mean: n_m,
            nll_std: n_s,
            ece_mean: e_m,
            ece_std: e_s,
            aurc_mean: a_m,
            aurc_std: a_s,
        });
    }
    Ok(rows)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from(
        "alpha_t,fixed_alpha,n_seeds,val_top1_mean,val_top1_std,nll_mean,nll_std,ece_mean,ece_std,aurc_mean,aurc_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.alpha_t,
            u8::from(r.fixed_alpha),
            r.n_seeds,
            r.val_top1_mean,
            r.val_top1_std,
            r.nll_mean,
            r.nll_std,
            r.ece_mean,
            r.ece_std,
            r.aurc_mean,
            r.aurc_std
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Run a sweep and write `sweep.csv` into a fresh directory under --out.
pub fn cmd_sweep_alpha(args: &SweepArgs) -> Result<PathBuf> {
    let resolved = resolve_config(&args.shared)?;
    if args.num_seeds == 0 {
        return Err(Error::Config("num_seeds must be >= 1".into()));
    }
    let dataset = resolved.dataset.build()?;
    let seeds: Vec<u64> = (0..args.num_seeds as u64)
        .map(|i| resolved.train.seed + i)
        .collect();

    let stamp = chrono::Utc::now().format("%Y%m%d-%H%M%S");
    let hash = config_hash(&resolved);
    let sweep_dir = fresh_dir(&args.shared.out, &format!("sweep-{stamp}-{hash:08x}"))?;

    let mut base = resolved.train.clone();
    if base.teacher_strategy == TeacherStrategy::Disk {
        base.cache_dir = Some(sweep_dir.join("caches"));
    }
    let rows = sweep_alpha(&base, &dataset, &args.alphas, &seeds, resolved.bins)?;
    write_sweep_csv(&sweep_dir.join("sweep.csv"), &rows)?;
    Ok(sweep_dir)
}

/// Dispatch a parsed command line. Prints the primary output path of each
/// command to stdout.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(shared) => {
            let dir = cmd_train(&shared)?;
            println!("{}", dir.display());
        }
        Command::Eval(args) => {
            let dir = cmd_eval(&args)?;
            println!("{}", dir.display());
        }
        Command::Analyze(args) => {
            cmd_analyze(&args)?;
            println!("{}", args.run.display());
        }
        Command::SweepAlpha(args) => {
            let dir = cmd_sweep_alpha(&args)?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}
