//! Batch command-line surface: `synth`, `train`, `eval`, `sweep`, `cross`
//! and `verify`.

mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::dataio::{
    manifest_path, synth_generate, ClassCounts, Manifest, SynthConfig, SynthStyle,
};
use crate::error::{Error, Result};
use crate::eval::{
    check_thresholds, cross_dataset_run, dataset_order, evaluate, read_scores, report_from_scores,
    write_scores, EvalReport, ReportMeta, DEFAULT_THRESHOLDS,
};
use crate::io_util::write_atomic;
use crate::spoofnet::{load_model, model_digest, save_model, NetworkSpec, DEFAULT_GATE};
use crate::training::{train_cascade, EpochRecord, HyperParams, Stage, TrainHistory};
use crate::verify;

pub use config::{ConfigFile, Echo};

/// Name of the resolved-configuration echo written into every output directory.
pub const CONFIG_ECHO: &str = "run_config.txt";
pub const MODEL_FILE: &str = "model.spn";
pub const REPORT_FILE: &str = "report.csv";
pub const SCORES_FILE: &str = "scores.csv";
/// Per-fold list of every image used for training or validation.
pub const TRAIN_PATHS_FILE: &str = "train_paths.txt";

#[derive(Debug, Parser)]
#[command(
    name = "spoofnet",
    version,
    about = "Two-stage iris presentation-attack detector"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic live/printed/contact-lens dataset.
    Synth(SynthArgs),
    /// Train both cascade stages on the train subset of a manifest.
    Train(TrainArgs),
    /// Score the test subset and write the threshold report and score dump.
    Eval(EvalArgs),
    /// Recompute the threshold report from an existing score dump.
    Sweep(SweepArgs),
    /// Leave-one-dataset-out training and evaluation.
    Cross(CrossArgs),
    /// Run the gradient checks and oracle suites.
    Verify(VerifyArgs),
}

/// `live:printed:contact` image counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Counts(pub ClassCounts);

impl FromStr for Counts {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected live:printed:contact, got `{s}`"));
        }
        let n = |p: &str| {
            p.trim()
                .parse::<usize>()
                .map_err(|e| format!("count `{p}`: {e}"))
        };
        Ok(Counts(ClassCounts::new(
            n(parts[0])?,
            n(parts[1])?,
            n(parts[2])?,
        )))
    }
}

impl fmt::Display for Counts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.0.live, self.0.printed, self.0.contact)
    }
}

/// Comma-separated liveness thresholds.
#[derive(Clone, Debug, PartialEq)]
pub struct Thresholds(pub Vec<f64>);

impl FromStr for Thresholds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| format!("threshold `{t}`: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Thresholds)
    }
}

impl fmt::Display for Thresholds {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(f64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for images and manifests.
    #[arg(long)]
    pub out: PathBuf,
    /// Train images per class as live:printed:contact [default: 200:200:200].
    #[arg(long)]
    pub counts: Option<Counts>,
    /// Test images per class as live:printed:contact [default: half of --counts].
    #[arg(long)]
    pub test_counts: Option<Counts>,
    /// Number of parameter-varied pseudo-datasets [default: 1].
    #[arg(long)]
    pub datasets: Option<usize>,
    /// Generator seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flat `key = value` file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Maximum epochs per stage [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size [default: 8].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// SGD learning rate [default: 1e-5].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Coupled L2 weight decay on weights [default: 1e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs without validation improvement before stopping [default: 5].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Dropout rate before the head [default: 0.2].
    #[arg(long)]
    pub dropout: Option<f64>,
    /// SGD momentum [default: 0.9].
    #[arg(long)]
    pub momentum: Option<f64>,
    /// Train fraction of the stratified split [default: 0.8].
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Run seed for split, init, shuffling and dropout [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Network input side in pixels [default: 96].
    #[arg(long)]
    pub input_size: Option<usize>,
    /// Stage-1 probability below which stage 2 is skipped [default: 0.5].
    #[arg(long)]
    pub gate: Option<f64>,
}

const HYPER_KEYS: [&str; 11] = [
    "epochs",
    "batch-size",
    "learning-rate",
    "weight-decay",
    "patience",
    "dropout",
    "momentum",
    "split-ratio",
    "seed",
    "input-size",
    "gate",
];

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Manifest CSV.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for the model, histories and config echo.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Flat `key = value` file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest CSV; its test subset is scored.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Model file written by `train`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output directory for the report and score dump.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated thresholds [default: 30,40,50,70,80,90].
    #[arg(long)]
    pub thresholds: Option<Thresholds>,
    /// Flat `key = value` file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Score dump written by `eval`.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Output directory for the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated thresholds [default: 30,40,50,70,80,90].
    #[arg(long)]
    pub thresholds: Option<Thresholds>,
    /// Flat `key = value` file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CrossArgs {
    /// Manifest CSV spanning at least two datasets.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for the report and per-fold artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Comma-separated thresholds [default: 30,40,50,70,80,90].
    #[arg(long)]
    pub thresholds: Option<Thresholds>,
    /// Flat `key = value` file; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Optional directory for `verify.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code: 0 success, 1 runtime failure, 2 usage.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error kind={} message={message}", e.kind());
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Argument(_) => 2,
        _ => 1,
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Cross(a) => cmd_cross(a),
        Command::Verify(a) => cmd_verify(a),
    }
}

fn required(key: &str, value: Option<PathBuf>) -> Result<PathBuf> {
    value.ok_or_else(|| Error::Config(format!("--{key} is required (flag or config key)")))
}

fn write_echo(out: &Path, echo: &Echo) -> Result<()> {
    write_atomic(&out.join(CONFIG_ECHO), echo.render().as_bytes())
}

pub fn cmd_synth(a: SynthArgs) -> Result<i32> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    cfg.check_keys(&["counts", "test-counts", "datasets", "seed"])?;
    let train = cfg.pick("counts", a.counts, Counts(ClassCounts::new(200, 200, 200)))?;
    let half = ClassCounts::new(train.0.live / 2, train.0.printed / 2, train.0.contact / 2);
    let test = cfg.pick("test-counts", a.test_counts, Counts(half))?;
    let datasets = cfg.pick("datasets", a.datasets, 1usize)?;
    let seed = cfg.pick("seed", a.seed, 0u64)?;
    if datasets == 0 {
        return Err(Error::Config("--datasets must be at least 1".into()));
    }
    let mut sc = SynthConfig::new(&a.out, train.0, test.0, seed);
    sc.styles = (0..datasets).map(SynthStyle::variant).collect();
    let manifest = synth_generate(&sc)?;
    let mut echo = Echo::default();
    echo.push("counts", train)
        .push("test-counts", test)
        .push("datasets", datasets)
        .push("seed", seed);
    write_echo(&a.out, &echo)?;
    eprintln!(
        "synth: wrote {} images to {}",
        manifest.len(),
        manifest_path(&a.out).display()
    );
    Ok(0)
}

/// Hyperparameters, network spec and gate resolved from flags and file.
struct Resolved {
    hp: HyperParams,
    spec: NetworkSpec,
    gate: f64,
}

fn resolve_hyper(h: &HyperArgs, cfg: &ConfigFile) -> Result<Resolved> {
    let d = HyperParams::default();
    let hp = HyperParams {
        max_epochs: cfg.pick("epochs", h.epochs, d.max_epochs)?,
        batch_size: cfg.pick("batch-size", h.batch_size, d.batch_size)?,
        learning_rate: cfg.pick("learning-rate", h.learning_rate, d.learning_rate)?,
        weight_decay: cfg.pick("weight-decay", h.weight_decay, d.weight_decay)?,
        patience: cfg.pick("patience", h.patience, d.patience)?,
        dropout_rate: cfg.pick("dropout", h.dropout, d.dropout_rate)?,
        momentum: cfg.pick("momentum", h.momentum, d.momentum)?,
        split_ratio: cfg.pick("split-ratio", h.split_ratio, d.split_ratio)?,
        seed: cfg.pick("seed", h.seed, d.seed)?,
        ..d
    };
    hp.validate()?;
    let mut spec = NetworkSpec::default();
    spec.input_size = cfg.pick("input-size", h.input_size, spec.input_size)?;
    spec.dropout_rate = hp.dropout_rate;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    let gate = cfg.pick("gate", h.gate, DEFAULT_GATE)?;
    if !(gate > 0.0 && gate < 1.0) {
        return Err(Error::Config(format!(
            "gate must lie in (0, 1), got {gate}"
        )));
    }
    Ok(Resolved { hp, spec, gate })
}

fn echo_hyper(echo: &mut Echo, r: &Resolved) {
    echo.push("epochs", r.hp.max_epochs)
        .push("batch-size", r.hp.batch_size)
        .push("learning-rate", r.hp.learning_rate)
        .push("weight-decay", r.hp.weight_decay)
        .push("patience", r.hp.patience)
        .push("dropout", r.hp.dropout_rate)
        .push("momentum", r.hp.momentum)
        .push("split-ratio", r.hp.split_ratio)
        .push("seed", r.hp.seed)
        .push("input-size", r.spec.input_size)
        .push("gate", r.gate);
}

fn progress_line(stage: Stage, e: &EpochRecord) {
    eprintln!(
        "stage {} epoch {} train_loss={:.6} val_loss={:.6} val_accuracy={:.4}",
        stage.index(),
        e.epoch,
        e.train_loss,
        e.val_loss,
        e.val_accuracy
    );
}

fn write_histories(out: &Path, h1: &TrainHistory, h2: &TrainHistory) -> Result<()> {
    write_atomic(&out.join("history_stage1.csv"), h1.to_csv().as_bytes())?;
    write_atomic(&out.join("history_stage2.csv"), h2.to_csv().as_bytes())
}

pub fn cmd_train(a: TrainArgs) -> Result<i32> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut keys = vec!["manifest", "out"];
    keys.extend(HYPER_KEYS);
    cfg.check_keys(&keys)?;
    let manifest_file = required("manifest", cfg.pick_opt("manifest", a.manifest)?)?;
    let out = required("out", cfg.pick_opt("out", a.out)?)?;
    let r = resolve_hyper(&a.hyper, &cfg)?;
    let manifest = Manifest::load(&manifest_file)?;

    let mut echo = Echo::default();
    echo.push("manifest", manifest_file.display())
        .push("out", out.display());
    echo_hyper(&mut echo, &r);

    let trained = train_cascade(&manifest, &r.spec, &r.hp, r.gate, &mut |s, e| {
        progress_line(s, e)
    })?;
    save_model(&trained.model, &out.join(MODEL_FILE))?;
    write_histories(&out, &trained.stage1, &trained.stage2)?;
    write_echo(&out, &echo)?;
    eprintln!(
        "train: model {} ({})",
        out.join(MODEL_FILE).display(),
        model_digest(&trained.model)?
    );
    Ok(0)
}

fn resolve_thresholds(cfg: &ConfigFile, flag: Option<Thresholds>) -> Result<Thresholds> {
    let t = cfg.pick("thresholds", flag, Thresholds(DEFAULT_THRESHOLDS.to_vec()))?;
    check_thresholds(&t.0).map_err(|e| Error::Config(e.to_string()))?;
    Ok(t)
}

pub fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    cfg.check_keys(&["manifest", "model", "out", "thresholds"])?;
    let manifest_file = required("manifest", cfg.pick_opt("manifest", a.manifest)?)?;
    let model_file = required("model", cfg.pick_opt("model", a.model)?)?;
    let out = required("out", cfg.pick_opt("out", a.out)?)?;
    let thresholds = resolve_thresholds(&cfg, a.thresholds)?;

    let manifest = Manifest::load(&manifest_file)?;
    let model = load_model(&model_file)?;
    let (mut report, scored) = evaluate(&model, &manifest, &thresholds.0)?;
    report.meta.model_checksum = Some(model_digest(&model)?);
    write_scores(&out.join(SCORES_FILE), &scored)?;
    report.write(&out.join(REPORT_FILE))?;
    let mut echo = Echo::default();
    echo.push("manifest", manifest_file.display())
        .push("model", model_file.display())
        .push("out", out.display())
        .push("thresholds", &thresholds);
    write_echo(&out, &echo)?;
    print_summary(&report);
    Ok(0)
}

fn print_summary(report: &EvalReport) {
    let na = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.2}"));
    for r in &report.rows {
        eprintln!(
            "{} tau={} apcer={} bpcer={}",
            r.dataset,
            r.threshold,
            na(r.apcer),
            na(r.bpcer)
        );
    }
}

pub fn cmd_sweep(a: SweepArgs) -> Result<i32> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    cfg.check_keys(&["scores", "out", "thresholds"])?;
    let scores_file = required("scores", cfg.pick_opt("scores", a.scores)?)?;
    let out = required("out", cfg.pick_opt("out", a.out)?)?;
    let thresholds = resolve_thresholds(&cfg, a.thresholds)?;
    let scored = read_scores(&scores_file)?;
    if scored.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no scores",
            scores_file.display()
        )));
    }
    let combined = dataset_order(&scored).len() > 1;
    let report = EvalReport {
        meta: ReportMeta {
            protocol: "sweep".into(),
            ..Default::default()
        },
        rows: report_from_scores(&scored, &thresholds.0, combined)?,
    };
    report.write(&out.join(REPORT_FILE))?;
    let mut echo = Echo::default();
    echo.push("scores", scores_file.display())
        .push("out", out.display())
        .push("thresholds", &thresholds);
    write_echo(&out, &echo)?;
    print_summary(&report);
    Ok(0)
}

pub fn cmd_cross(a: CrossArgs) -> Result<i32> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut keys = vec!["manifest", "out", "thresholds"];
    keys.extend(HYPER_KEYS);
    cfg.check_keys(&keys)?;
    let manifest_file = required("manifest", cfg.pick_opt("manifest", a.manifest)?)?;
    let out = required("out", cfg.pick_opt("out", a.out)?)?;
    let r = resolve_hyper(&a.hyper, &cfg)?;
    let thresholds = resolve_thresholds(&cfg, a.thresholds)?;
    let manifest = Manifest::load(&manifest_file)?;

    let run = cross_dataset_run(
        &manifest,
        &r.spec,
        &r.hp,
        r.gate,
        &thresholds.0,
        &mut |s, e| progress_line(s, e),
    )?;
    for fold in &run.folds {
        let dir = out.join(format!("heldout_{}", fold.held_out));
        save_model(&fold.training.model, &dir.join(MODEL_FILE))?;
        write_histories(&dir, &fold.training.stage1, &fold.training.stage2)?;
        write_scores(&dir.join(SCORES_FILE), &fold.scores)?;
        let mut used = fold.training.used_paths.join("\n");
        used.push('\n');
        write_atomic(&dir.join(TRAIN_PATHS_FILE), used.as_bytes())?;
    }
    run.report.write(&out.join(REPORT_FILE))?;
    let mut echo = Echo::default();
    echo.push("manifest", manifest_file.display())
        .push("out", out.display())
        .push("thresholds", &thresholds);
    echo_hyper(&mut echo, &r);
    write_echo(&out, &echo)?;
    print_summary(&run.report);
    Ok(0)
}

pub fn cmd_verify(a: VerifyArgs) -> Result<i32> {
    let suites = verify::run_all()?;
    let mut failed = 0;
    let stderr = std::io::stderr();
    let mut err = stderr.lock();
    for s in &suites {
        let detail = match &s.grad {
            Some(g) => format!(
                "checked={} skipped={} failed={} max_rel_err={:.3e}",
                g.checked, g.skipped, g.failed, g.max_rel_err
            ),
            None => format!("mismatches={}", s.mismatches),
        };
        let verdict = if s.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(err, "{verdict} {} cases={} {detail}", s.name, s.cases);
        failed += usize::from(!s.passed);
    }
    let _ = writeln!(
        err,
        "verify: {} passed, {failed} failed",
        suites.len() - failed
    );
    if let Some(out) = a.out {
        let json = serde_json::to_string_pretty(&suites)
            .map_err(|e| Error::Data(format!("verify json: {e}")))?;
        write_atomic(&out.join("verify.json"), json.as_bytes())?;
    }
    Ok(if failed == 0 { 0 } else { 1 })
}
