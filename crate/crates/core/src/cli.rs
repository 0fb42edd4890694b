//! `dmae <synth|mask|pretrain|finetune|eval|trace> [flags]`.
//!
//! Every command validates its flags before reading or writing anything, and
//! every output directory gets exactly one `manifest.json`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::csvio::fmt_float;
use crate::data::{
    dataset_from_csv, load_dataset, make_synthetic, mask_dataset, save_dataset, Dataset, MaskPlan, MissingPattern,
    Sample, SyntheticSpec, DEFAULT_SPAN,
};
use crate::error::DmaeError;
use crate::nn::Tensor;
use crate::train::finetune::persistence_mae;
use crate::train::{
    evaluate_head, finetune, load_checkpoint, mean_imputation, prepare, pretrain, reconstruct,
    reconstruction_metrics, save_checkpoint, CheckpointMeta, EpochRecord, HeadSpec, Pooling, Pretrained, Task,
    TrainConfig,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.dmae";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] DmaeError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Run(e) => e.code(),
        }
    }

    /// 2 usage, 3 data, 4 config, 5 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(e) => e.exit_code(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

#[derive(Debug, Parser)]
#[command(name = "dmae", version, about = "Masked auto-encoder pretraining for multivariate time series")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a labeled synthetic dataset directory.
    Synth(SynthArgs),
    /// Hide observed entries, keeping the originals as ground truth.
    Mask(MaskArgs),
    /// Self-supervised pretraining; writes checkpoint, metrics and manifest.
    Pretrain(PretrainArgs),
    /// Train a prediction or classification head from a checkpoint.
    Finetune(FinetuneArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Per-time-step embedding and attention weights for one window.
    Trace(TraceArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Mask(_) => "mask",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Eval(_) => "eval",
            Command::Trace(_) => "trace",
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub n: usize,
    /// Window length.
    #[arg(long = "t", default_value_t = 64)]
    pub len: usize,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 5)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Dataset directory to mask.
    #[arg(long, conflicts_with = "csv", required_unless_present = "csv")]
    pub input: Option<PathBuf>,
    /// Plain CSV (one column per attribute, empty cells missing), cut into windows.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Window length when reading `--csv`.
    #[arg(long = "t", requires = "csv")]
    pub len: Option<usize>,
    /// Window stride when reading `--csv` (defaults to the window length).
    #[arg(long, requires = "csv")]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, value_enum, default_value_t = MissingPattern::Point)]
    pub pattern: MissingPattern,
    #[arg(long, default_value_t = DEFAULT_SPAN)]
    pub span: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Dpe,
    Rm,
    Dk,
    Asf,
}

/// Training settings; any flag given overrides the config file, which in turn
/// overrides the built-in defaults (or the checkpoint's settings).
#[derive(Debug, Args, Default, Clone)]
pub struct TrainFlags {
    /// JSON object with training-config fields, or a run manifest.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warm_up_epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub mask_ratio: Option<f64>,
    #[arg(long, value_enum)]
    pub mask_pattern: Option<MissingPattern>,
    #[arg(long)]
    pub mask_span: Option<usize>,
    /// Three comma-separated kernel sizes.
    #[arg(long, value_delimiter = ',')]
    pub kernel_sizes: Option<Vec<usize>>,
    #[arg(long)]
    pub num_kernels: Option<usize>,
    #[arg(long)]
    pub kernel_temperature: Option<f64>,
    #[arg(long)]
    pub fusion_temperature: Option<f64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Remove components; repeat or comma-separate.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<Ablation>,
    #[arg(long)]
    pub finetune_epochs: Option<usize>,
    #[arg(long)]
    pub finetune_learning_rate: Option<f64>,
    #[arg(long)]
    pub freeze_encoder: bool,
    #[arg(long, value_enum)]
    pub pooling: Option<Pooling>,
}

impl TrainFlags {
    /// Range checks that need no other input.
    pub fn check(&self) -> CliResult<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch-size", self.batch_size),
            ("hidden", self.hidden),
            ("mask-span", self.mask_span),
            ("num-kernels", self.num_kernels),
            ("finetune-epochs", self.finetune_epochs),
        ];
        for (name, v) in positive {
            if v == Some(0) {
                return usage(format!("--{name} must be positive"));
            }
        }
        for (name, v) in [("learning-rate", self.learning_rate), ("finetune-learning-rate", self.finetune_learning_rate)] {
            if v.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return usage(format!("--{name} must be a positive number"));
            }
        }
        for (name, v) in [("kernel-temperature", self.kernel_temperature), ("fusion-temperature", self.fusion_temperature)] {
            if v.is_some_and(|v| !(v > 1.0 && v.is_finite())) {
                return usage(format!("--{name} must exceed 1"));
            }
        }
        if self.mask_ratio.is_some_and(|r| !(0.0..1.0).contains(&r)) {
            return usage("--mask-ratio must lie in [0, 1)");
        }
        if self.noise_std.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            return usage("--noise-std must be >= 0");
        }
        if let Some(ks) = &self.kernel_sizes {
            if ks.len() != 3 || ks.contains(&0) {
                return usage("--kernel-sizes takes three positive sizes, e.g. 3,5,7");
            }
        }
        Ok(())
    }

    /// `base`, overlaid with the config file, overlaid with the flags.
    pub fn resolve(&self, base: &TrainConfig) -> CliResult<TrainConfig> {
        let mut merged = serde_json::to_value(base).expect("config serializes");
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| DmaeError::Config(format!("{}: {e}", path.display())))?;
            let mut file: Value = serde_json::from_str(&text)
                .map_err(|e| DmaeError::Config(format!("{}: {e}", path.display())))?;
            // A run manifest carries its resolved config under "config".
            if file.get("command").is_some() {
                file = file.get("config").cloned().unwrap_or(Value::Null);
            }
            let Value::Object(fields) = file else {
                return Err(DmaeError::Config(format!("{}: expected a JSON object", path.display())).into());
            };
            let target = merged.as_object_mut().expect("config is an object");
            for (k, v) in fields {
                target.insert(k, v);
            }
        }
        let mut c: TrainConfig = serde_json::from_value(merged).map_err(|e| DmaeError::Config(e.to_string()))?;
        macro_rules! take {
            ($($f:ident),*) => { $(if let Some(v) = self.$f.clone() { c.$f = v; })* };
        }
        take!(
            seed,
            epochs,
            warm_up_epochs,
            batch_size,
            learning_rate,
            hidden,
            mask_ratio,
            mask_pattern,
            mask_span,
            num_kernels,
            kernel_temperature,
            fusion_temperature,
            finetune_epochs,
            finetune_learning_rate,
            pooling
        );
        if let Some(v) = self.noise_std {
            c.noise_std = v;
        }
        if let Some(ks) = &self.kernel_sizes {
            c.kernel_sizes = [ks[0], ks[1], ks[2]];
        }
        for a in &self.ablate {
            match a {
                Ablation::Dpe => c.ablate.dpe = true,
                Ablation::Rm => c.ablate.rm = true,
                Ablation::Dk => c.ablate.dk = true,
                Ablation::Asf => c.ablate.asf = true,
            }
        }
        c.freeze_encoder |= self.freeze_encoder;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskKind {
    Predict,
    Classify,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub task: TaskKind,
    /// Prediction horizon `s`.
    #[arg(long, default_value_t = 1)]
    pub steps: usize,
    /// Predicted attribute index.
    #[arg(long)]
    pub target: Option<usize>,
    /// Class count (defaults to the dataset's).
    #[arg(long)]
    pub classes: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalSplit {
    /// The validation split the checkpoint was trained against.
    Val,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalSplit::Val)]
    pub split: EvalSplit,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Window index in dataset order.
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to re-run a command: the arguments, the fully
/// resolved training config, inputs and produced artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub tool_version: String,
    pub seed: u64,
    pub config: Option<TrainConfig>,
    pub inputs: BTreeMap<String, PathBuf>,
    pub artifacts: BTreeMap<String, PathBuf>,
    /// Command-specific settings and headline results.
    pub details: Value,
}

impl RunManifest {
    fn new(command: &str, args: &[String], seed: u64) -> Self {
        RunManifest {
            command: command.to_string(),
            args: args.to_vec(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config: None,
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            details: Value::Null,
        }
    }

    fn write(&self, dir: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_file(&dir.join(MANIFEST_FILE), &text)
    }
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    fs::write(path, body).map_err(|e| DmaeError::Io { path: path.to_path_buf(), source: e }.into())
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| DmaeError::Io { path: dir.to_path_buf(), source: e }.into())
}

fn csv_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        fmt_float(v)
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors print one `E_CODE: text` line to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let mut lines = text.lines();
            let first = lines.next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("E_USAGE: {first}");
            for l in lines.filter(|l| !l.trim().is_empty()) {
                eprintln!("{l}");
            }
            return 2;
        }
    };
    let rest: Vec<String> = args.iter().skip(2).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &rest) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

/// `args` are the command's own arguments, recorded in the manifest.
pub fn run(cli: Cli, args: &[String]) -> CliResult<()> {
    let name = cli.command.name();
    match cli.command {
        Command::Synth(a) => cmd_synth(a, args),
        Command::Mask(a) => cmd_mask(a, args),
        Command::Pretrain(a) => cmd_pretrain(a, args),
        Command::Finetune(a) => cmd_finetune(a, args),
        Command::Eval(a) => cmd_eval(a, args),
        Command::Trace(a) => cmd_trace(a, args),
    }
    .map(|()| log::info!("{name} done"))
}

fn cmd_synth(a: SynthArgs, args: &[String]) -> CliResult<()> {
    if a.n == 0 || a.len == 0 || a.count == 0 || a.classes == 0 {
        return usage("--n, --t, --count and --classes must be positive");
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return usage("--noise must be >= 0");
    }
    let spec = SyntheticSpec {
        n: a.n,
        len: a.len,
        count: a.count,
        classes: a.classes,
        noise: a.noise,
        horizon: a.horizon,
        seed: a.seed,
    };
    let d = make_synthetic(&spec)?;
    save_dataset(&a.out, &d)?;
    let mut m = RunManifest::new("synth", args, a.seed);
    m.artifacts.insert("dataset".into(), a.out.clone());
    m.details = json!({ "synthetic": spec });
    m.write(&a.out)
}

fn cmd_mask(a: MaskArgs, args: &[String]) -> CliResult<()> {
    if !(0.0..1.0).contains(&a.ratio) {
        return usage("--ratio must lie in [0, 1)");
    }
    if a.span == 0 {
        return usage("--span must be positive");
    }
    if a.csv.is_some() && a.len.is_none_or(|t| t == 0) {
        return usage("--csv needs a positive window length --t");
    }
    if a.stride == Some(0) {
        return usage("--stride must be positive");
    }
    let plan = MaskPlan::new(a.ratio, a.pattern, a.span, a.seed)?;
    let (d, input) = match (&a.input, &a.csv) {
        (Some(dir), _) => (load_dataset(dir)?, dir.clone()),
        (None, Some(csv)) => {
            let len = a.len.expect("checked above");
            (dataset_from_csv(csv, len, a.stride.unwrap_or(len))?, csv.clone())
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let masked = mask_dataset(&d, &plan)?;
    save_dataset(&a.out, &masked)?;
    let mut m = RunManifest::new("mask", args, a.seed);
    m.inputs.insert("dataset".into(), input);
    m.artifacts.insert("dataset".into(), a.out.clone());
    m.details = json!({ "mask": plan, "achieved_missing_ratio": missing_ratio(&masked) });
    m.write(&a.out)
}

fn missing_ratio(d: &Dataset) -> f64 {
    let (missing, total) = d.samples.iter().fold((0.0, 0usize), |(m, t), s| {
        let mask = s.window.mask().data();
        (m + mask.iter().filter(|&&v| v == 0.0).count() as f64, t + mask.len())
    });
    missing / total.max(1) as f64
}

/// Checkpoint metadata written by `pretrain`.
pub fn pretrained_meta(run: &Pretrained) -> CheckpointMeta {
    CheckpointMeta {
        model: run.model.config().clone(),
        train: run.config.clone(),
        normalizer: run.normalizer.clone(),
        head: None,
        warm_up: false,
    }
}

/// Body of the pretraining `metrics.csv`.
pub fn pretrain_metrics_csv(history: &[EpochRecord]) -> String {
    let mut csv = String::from("epoch,train_loss,val_mse_v,val_mse_m,val_loss,warm_up\n");
    for r in history {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            csv_float(r.train_loss),
            csv_float(r.val_mse_v),
            csv_float(r.val_mse_m),
            csv_float(r.val_loss),
            r.warm_up as u8
        ));
    }
    csv
}

fn cmd_pretrain(a: PretrainArgs, args: &[String]) -> CliResult<()> {
    a.train.check()?;
    let config = a.train.resolve(&TrainConfig::default())?;
    let dataset = load_dataset(&a.data)?;
    let run = pretrain(&dataset, &config)?;
    create_dir(&a.out)?;

    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &run.model, None, &pretrained_meta(&run))?;
    write_file(&a.out.join(METRICS_FILE), &pretrain_metrics_csv(&run.history))?;

    let data = prepare(&dataset, config.seed, Some(&run.normalizer))?;
    let (base_v, base_m) = reconstruction_metrics(&data.val, &mean_imputation(&data.val));
    let last = run.history.last();
    let mut m = RunManifest::new("pretrain", args, config.seed);
    m.config = Some(config);
    m.inputs.insert("data".into(), a.data.clone());
    m.artifacts.insert("checkpoint".into(), a.out.join(CHECKPOINT_FILE));
    m.artifacts.insert("metrics".into(), a.out.join(METRICS_FILE));
    m.details = json!({
        "val_mse_v": last.map(|r| r.val_mse_v),
        "val_mse_m": last.map(|r| r.val_mse_m),
        "mean_imputation_mse_v": base_v,
        "mean_imputation_mse_m": base_m,
    });
    m.write(&a.out)
}

fn cmd_finetune(a: FinetuneArgs, args: &[String]) -> CliResult<()> {
    a.train.check()?;
    if a.task == TaskKind::Predict && a.steps == 0 {
        return usage("--steps must be >= 1");
    }
    if a.classes.is_some_and(|c| c < 2) {
        return usage("--classes must be >= 2");
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let mut config = a.train.resolve(&ckpt.meta.train)?;
    if let Some(t) = a.target {
        config.target = t;
    }
    let dataset = load_dataset(&a.data)?;
    let task = match a.task {
        TaskKind::Predict => Task::Predict { steps: a.steps, target: config.target },
        TaskKind::Classify => {
            let classes = a.classes.or(dataset.num_classes).ok_or_else(|| {
                DmaeError::Data("classification needs labels (dataset has none and --classes is unset)".into())
            })?;
            Task::Classify { classes }
        }
    };
    let normalizer = ckpt.meta.normalizer.clone();
    let tuned = finetune(ckpt.model, &normalizer, &dataset, task, &config)?;
    create_dir(&a.out)?;

    let meta = CheckpointMeta {
        model: tuned.model.config().clone(),
        train: config.clone(),
        normalizer: tuned.normalizer.clone(),
        head: Some(HeadSpec { task, pooling: config.pooling }),
        warm_up: false,
    };
    save_checkpoint(&a.out.join(CHECKPOINT_FILE), &tuned.model, Some(&tuned.head), &meta)?;

    let column = metric_column(task);
    let mut csv = format!("epoch,train_loss,{column}\n");
    for r in &tuned.history {
        csv.push_str(&format!("{},{},{}\n", r.epoch, csv_float(r.train_loss), csv_float(r.val_metric)));
    }
    write_file(&a.out.join(METRICS_FILE), &csv)?;

    let mut details = json!({ "task": task, column.clone(): tuned.final_metric() });
    if let Task::Predict { steps, target } = task {
        let data = prepare(&dataset, config.seed, Some(&normalizer))?;
        details["persistence_mae"] = json!(persistence_mae(&data.val, steps, target)?);
    }
    let mut m = RunManifest::new("finetune", args, config.seed);
    m.config = Some(config);
    m.inputs.insert("checkpoint".into(), a.checkpoint.clone());
    m.inputs.insert("data".into(), a.data.clone());
    m.artifacts.insert("checkpoint".into(), a.out.join(CHECKPOINT_FILE));
    m.artifacts.insert("metrics".into(), a.out.join(METRICS_FILE));
    m.details = details;
    m.write(&a.out)
}

/// `val_mae_<s>` or `val_precision`.
pub fn metric_column(task: Task) -> String {
    match task {
        Task::Predict { steps, .. } => format!("val_mae_{steps}"),
        Task::Classify { .. } => "val_precision".into(),
    }
}

fn cmd_eval(a: EvalArgs, args: &[String]) -> CliResult<()> {
    let mut ckpt = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    check_shape(&ckpt.meta, &dataset)?;
    let config = ckpt.meta.train.clone();
    let data = prepare(&dataset, config.seed, Some(&ckpt.meta.normalizer))?;
    let samples: Vec<Sample> = match a.split {
        EvalSplit::Val => data.val,
        EvalSplit::All => data.train.into_iter().chain(data.val).collect(),
    };
    let recon = reconstruct(&mut ckpt.model, &samples)?;
    let (mse_v, mse_m) = reconstruction_metrics(&samples, &recon);
    let (base_v, base_m) = reconstruction_metrics(&samples, &mean_imputation(&samples));
    let mut header = vec!["split", "windows", "mse_v", "mse_m", "mean_imputation_mse_v", "mean_imputation_mse_m"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    let split = match a.split {
        EvalSplit::Val => "val",
        EvalSplit::All => "all",
    };
    let mut row = vec![split.to_string(), samples.len().to_string()];
    row.extend([mse_v, mse_m, base_v, base_m].map(csv_float));
    let mut details = json!({ "split": split, "mse_v": mse_v, "mse_m": mse_m,
        "mean_imputation_mse_v": base_v, "mean_imputation_mse_m": base_m });
    if let Some(head) = &ckpt.head {
        let score = evaluate_head(&mut ckpt.model, head, &samples)?;
        let column = metric_column(head.task).trim_start_matches("val_").to_string();
        details[column.as_str()] = json!(score);
        header.push(column);
        row.push(csv_float(score));
    }
    create_dir(&a.out)?;
    write_file(&a.out.join(METRICS_FILE), &format!("{}\n{}\n", header.join(","), row.join(",")))?;
    let mut m = RunManifest::new("eval", args, config.seed);
    m.config = Some(config);
    m.inputs.insert("checkpoint".into(), a.checkpoint.clone());
    m.inputs.insert("data".into(), a.data.clone());
    m.artifacts.insert("metrics".into(), a.out.join(METRICS_FILE));
    m.details = details;
    m.write(&a.out)
}

fn check_shape(meta: &CheckpointMeta, d: &Dataset) -> CliResult<()> {
    let (n, len) = (meta.model.n, meta.model.len);
    if d.num_attributes() != n || d.window_len() != len {
        return Err(DmaeError::Config(format!(
            "checkpoint expects windows of [{n}, {len}], dataset has [{}, {}]",
            d.num_attributes(),
            d.window_len()
        ))
        .into());
    }
    Ok(())
}

fn cmd_trace(a: TraceArgs, args: &[String]) -> CliResult<()> {
    let mut ckpt = load_checkpoint(&a.checkpoint)?;
    let dataset = load_dataset(&a.data)?;
    check_shape(&ckpt.meta, &dataset)?;
    let sample = dataset.samples.get(a.window).ok_or_else(|| {
        DmaeError::Config(format!("window {} out of range ({} windows)", a.window, dataset.len()))
    })?;
    let sample = ckpt.meta.normalizer.apply_sample(sample)?;
    let to_f32 = |t: &Tensor<f64>| Tensor::from_vec(t.shape(), t.data().iter().map(|&v| v as f32).collect());
    let x = to_f32(sample.window.values())?;
    let keep = to_f32(sample.window.mask())?;
    let trace = ckpt.model.trace(&x, &keep, &dataset.names)?;

    let mut csv = trace.header().join(",") + "\n";
    for (t, row) in trace.rows().iter().enumerate() {
        let cells: Vec<String> = row[1..].iter().map(|&v| csv_float(v)).collect();
        csv.push_str(&format!("{t},{}\n", cells.join(",")));
    }
    create_dir(&a.out)?;
    write_file(&a.out.join(TRACE_FILE), &csv)?;
    let mut m = RunManifest::new("trace", args, ckpt.meta.train.seed);
    m.config = Some(ckpt.meta.train.clone());
    m.inputs.insert("checkpoint".into(), a.checkpoint.clone());
    m.inputs.insert("data".into(), a.data.clone());
    m.artifacts.insert("trace".into(), a.out.join(TRACE_FILE));
    m.details = json!({ "window": a.window, "warm_up": ckpt.meta.warm_up });
    m.write(&a.out)
}
