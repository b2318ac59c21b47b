//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error. Values resolve as
//! command-line flag, then `--config` file, then built-in default. The config
//! file is TOML: global keys (`seed`, `sample-rate`, `threads`, `log-level`)
//! at top level, command keys in a table named after the command, spelled
//! like the flags (e.g. `[synthesize] bin-width = 8.0`).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::audio::CANONICAL_SAMPLE_RATE;
use crate::beat::{self, TempoPrior};
use crate::corpus::{self, IngestOptions, DEFAULT_BPM_BIN_WIDTH, NUM_CLASSES};
use crate::dsp::{self, DspParams};
use crate::error::Error;
use crate::features::FeatureParams;
use crate::metrics::{self, Averaging, EvalBatch};
use crate::model::{self, HeadModel, TrainConfig};
use crate::pipeline;
use crate::synth::{self, DiskClips, MixtureRecord, Strategy, SynthConfig, ValidateOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "dastmix", version, about = "Mode- and tempo-constrained polyphonic augmentation and instrument classification")]
pub struct Cli {
    /// Master random seed
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Canonical sample rate in Hz [default: 22050]
    #[arg(long, global = true)]
    pub sample_rate: Option<u32>,
    /// Worker threads (0 = all cores); output does not depend on it
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// error|warn|info|debug|trace [default: info]
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    /// TOML config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Source manifest + audio -> trimmed, segmented, normalized clip corpus
    Ingest(IngestArgs),
    /// Estimate tempo for every clip and write it into the manifest
    AnalyzeBpm(AnalyzeArgs),
    /// Generate labeled polyphonic mixtures
    Synthesize(SynthArgs),
    /// Extract pseudo-encoder layer stacks (LSTK files)
    Features(FeaturesArgs),
    /// Train the classifier head
    Train(TrainArgs),
    /// Evaluate a model (or precomputed scores) and write a JSON report
    Evaluate(EvalArgs),
    /// Accuracy over a threshold grid, as CSV
    Sweep(SweepArgs),
    /// Re-check every mixture invariant on a synthesized set
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Source manifest (JSON Lines)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output corpus directory
    #[arg(long)]
    pub out: PathBuf,
    /// Silence threshold in dBFS [default: -40]
    #[arg(long, allow_negative_numbers = true)]
    pub silence_db: Option<f64>,
    /// Silence analysis window in ms [default: 100]
    #[arg(long)]
    pub silence_window_ms: Option<f64>,
    /// Segment length in seconds [default: 5]
    #[arg(long)]
    pub segment_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Output manifest; relative clip paths are rewritten if the directory changes
    #[arg(long)]
    pub out: PathBuf,
    /// Tempo prior center [default: 120]
    #[arg(long)]
    pub prior_bpm: Option<f64>,
    /// Tempo prior spread in octaves [default: 1]
    #[arg(long)]
    pub prior_spread: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Corpus manifest with bpm filled in
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// random|bpm|dastgah|dastgah-bpm [default: dastgah-bpm]
    #[arg(long)]
    pub strategy: Option<String>,
    /// Number of mixtures, a multiple of 5 [default: 50000]
    #[arg(long)]
    pub total: Option<usize>,
    /// BPM bin width [default: 8]
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Retry budget per sample [default: 20]
    #[arg(long)]
    pub max_attempts: Option<usize>,
    /// Leave percussion stems at their own tempo
    #[arg(long)]
    pub no_stretch_percussion: bool,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    /// Any manifest with `id` and `path` fields
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Embedding width D [default: 64]
    #[arg(long)]
    pub n_mels: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Mixture manifest (labels)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory of `<id>.lstk` files
    #[arg(long)]
    pub features: PathBuf,
    /// Checkpoint path
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 16]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 0.01]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Hidden width [default: 256]
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Optional CSV of per-epoch mean loss
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreSource {
    /// Mixture manifest (labels)
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to score with (needs --features)
    #[arg(long, conflicts_with = "scores")]
    pub model: Option<PathBuf>,
    #[arg(long, requires = "model")]
    pub features: Option<PathBuf>,
    /// Precomputed scores: JSON Lines `{"id": .., "scores": [10 floats]}`
    #[arg(long, required_unless_present = "model")]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    /// Report path (JSON)
    #[arg(long)]
    pub out: PathBuf,
    /// [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Micro-average ROC-AUC instead of macro
    #[arg(long)]
    pub micro: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub source: ScoreSource,
    /// CSV path
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated thresholds [default: 0.05,0.10,...,0.95]
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Output manifest of `synthesize`
    #[arg(long)]
    pub manifest: PathBuf,
    /// Corpus manifest the mixtures were drawn from
    #[arg(long)]
    pub corpus: PathBuf,
    /// BPM bin width [default: from run.json, else 8]
    #[arg(long)]
    pub bin_width: Option<f64>,
    /// Write the full report as JSON
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Skip reading audio (clipping/length checks)
    #[arg(long)]
    pub skip_audio: bool,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Settings {
    table: toml::Table,
}

impl Settings {
    fn load(path: Option<&Path>) -> CliResult<Self> {
        let table = match path {
            None => toml::Table::new(),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| CliError::Data(Error::io(p, e)))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?
            }
        };
        Ok(Self { table })
    }

    fn lookup<T: DeserializeOwned>(&self, section: Option<&str>, key: &str) -> CliResult<Option<T>> {
        let scope = match section {
            None => Some(&self.table),
            Some(s) => self.table.get(s).and_then(|v| v.as_table()),
        };
        let Some(value) = scope.and_then(|t| t.get(key)) else {
            return Ok(None);
        };
        T::deserialize(value.clone())
            .map(Some)
            .map_err(|e| CliError::Usage(format!("config key `{key}`: {e}")))
    }

    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, section: Option<&str>, key: &str, default: T) -> CliResult<T> {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.lookup(section, key)?.unwrap_or(default)),
        }
    }
}

struct Globals {
    seed: u64,
    sample_rate: u32,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let level: String = settings.pick(cli.log_level.clone(), None, "log-level", "info".into())?;
    let filter: log::LevelFilter = level
        .parse()
        .map_err(|_| CliError::Usage(format!("bad log level `{level}`")))?;
    let _ = env_logger::Builder::new().filter_level(filter).format_timestamp(None).try_init();

    let globals = Globals {
        seed: settings.pick(cli.seed, None, "seed", 0)?,
        sample_rate: settings.pick(cli.sample_rate, None, "sample-rate", CANONICAL_SAMPLE_RATE)?,
    };
    if globals.sample_rate == 0 {
        return Err(CliError::Usage("--sample-rate must be positive".into()));
    }
    let threads: usize = settings.pick(cli.threads, None, "threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;

    pool.install(|| match cli.command {
        Command::Ingest(a) => ingest(&settings, &globals, a),
        Command::AnalyzeBpm(a) => analyze_bpm(&settings, &globals, a),
        Command::Synthesize(a) => synthesize(&settings, &globals, a),
        Command::Features(a) => features(&settings, &globals, a),
        Command::Train(a) => train(&settings, &globals, a),
        Command::Evaluate(a) => evaluate(&settings, a),
        Command::Sweep(a) => sweep(&settings, a),
        Command::Validate(a) => validate(&settings, &globals, a),
    })
}

fn ingest(s: &Settings, g: &Globals, a: IngestArgs) -> CliResult<()> {
    let sec = Some("ingest");
    let defaults = IngestOptions::default();
    let opts = IngestOptions {
        sample_rate: g.sample_rate,
        silence_db: s.pick(a.silence_db, sec, "silence-db", defaults.silence_db)?,
        silence_window_ms: s.pick(a.silence_window_ms, sec, "silence-window-ms", defaults.silence_window_ms)?,
        seg_seconds: s.pick(a.segment_seconds, sec, "segment-seconds", defaults.seg_seconds)?,
    };
    let sources = corpus::load_manifest(&a.manifest)?;
    let records = corpus::ingest(&sources, &a.out, &opts)?;
    log::info!("ingested {} sources into {} clips", sources.len(), records.len());
    Ok(())
}

fn analyze_bpm(s: &Settings, g: &Globals, a: AnalyzeArgs) -> CliResult<()> {
    use rayon::prelude::*;
    let sec = Some("analyze-bpm");
    let prior = TempoPrior {
        center_bpm: s.pick(a.prior_bpm, sec, "prior-bpm", 120.0)?,
        spread: s.pick(a.prior_spread, sec, "prior-spread", 1.0)?,
        ..TempoPrior::default()
    };
    prior.validate()?;
    let index = corpus::load_manifest(&a.manifest)?;
    let params = DspParams::default();
    let mut records = index.records().to_vec();
    let tempi: Vec<Option<f64>> = records
        .par_iter()
        .map(|r| {
            let clip = crate::audio::load_resampled(&index.resolve(r), g.sample_rate)?;
            let env = dsp::onset_envelope_from_clip(&clip, &params)?;
            match beat::estimate_tempo(&env, &prior) {
                Ok(bpm) => Ok(Some(bpm)),
                Err(e @ (Error::NoPeriodicity | Error::EnvelopeTooShort { .. })) => {
                    log::warn!("{}: {e}; bpm left empty", r.id);
                    Ok(None)
                }
                Err(e) => Err(e),
            }
        })
        .collect::<crate::Result<_>>()?;
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    for (r, bpm) in records.iter_mut().zip(tempi) {
        r.bpm = bpm;
        let resolved = index.resolve(r);
        r.path = relative_to(&resolved, &out_dir);
    }
    corpus::write_manifest(&a.out, &records)?;
    log::info!("wrote {} records to {}", records.len(), a.out.display());
    Ok(())
}

/// Path of `target` as seen from `base`, when `target` lies under `base`.
fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let (t, b) = (absolute(target), absolute(base));
    t.strip_prefix(&b).map(Path::to_path_buf).unwrap_or(t)
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn synthesize(s: &Settings, g: &Globals, a: SynthArgs) -> CliResult<()> {
    let sec = Some("synthesize");
    let defaults = SynthConfig::default();
    let strategy_name: String = s.pick(a.strategy, sec, "strategy", defaults.strategy.as_str().into())?;
    let strategy: Strategy = strategy_name.parse().map_err(|e: Error| CliError::Usage(e.to_string()))?;
    let priors = s.lookup(sec, "priors")?.unwrap_or(defaults.priors);
    let gain = s.lookup(sec, "gain")?.unwrap_or(defaults.gain);
    let no_stretch: bool = a.no_stretch_percussion || s.lookup(sec, "no-stretch-percussion")?.unwrap_or(false);
    let config = SynthConfig {
        total_samples: s.pick(a.total, sec, "total", defaults.total_samples)?,
        strategy,
        bpm_bin_width: s.pick(a.bin_width, sec, "bin-width", defaults.bpm_bin_width)?,
        master_seed: g.seed,
        gain,
        priors,
        max_attempts: s.pick(a.max_attempts, sec, "max-attempts", defaults.max_attempts)?,
        stretch_percussion: !no_stretch,
        sample_rate: g.sample_rate,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let index = corpus::load_manifest_with_bins(&a.corpus, config.bpm_bin_width)?;
    let clips = DiskClips::new(&index, config.sample_rate);
    let records = synth::synthesize_dataset(&index, &config, &clips, &a.out)?;
    log::info!("wrote {} mixtures to {}", records.len(), a.out.display());
    Ok(())
}

fn features(s: &Settings, g: &Globals, a: FeaturesArgs) -> CliResult<()> {
    let params = FeatureParams {
        n_mels: s.pick(a.n_mels, Some("features"), "n-mels", FeatureParams::default().n_mels)?,
        ..FeatureParams::default()
    };
    let clips = pipeline::read_clip_refs(&a.manifest)?;
    let root = a.manifest.parent().unwrap_or(Path::new(""));
    let n = pipeline::export_features(&clips, root, &a.out, &params, g.sample_rate)?;
    log::info!("wrote {n} feature files to {}", a.out.display());
    Ok(())
}

fn train(s: &Settings, g: &Globals, a: TrainArgs) -> CliResult<()> {
    let sec = Some("train");
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        batch_size: s.pick(a.batch_size, sec, "batch-size", d.batch_size)?,
        epochs: s.pick(a.epochs, sec, "epochs", d.epochs)?,
        learning_rate: s.pick(a.lr, sec, "lr", d.learning_rate)?,
        weight_decay: s.pick(a.weight_decay, sec, "weight-decay", d.weight_decay)?,
        hidden: s.pick(a.hidden, sec, "hidden", d.hidden)?,
        seed: g.seed,
        ..d
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let records = synth::read_mixture_manifest(&a.manifest)?;
    let data = pipeline::load_labeled(&records, &a.features)?;
    let first = data.first().ok_or_else(|| Error::invalid("no training samples"))?;
    let (l, dim) = first.stack.layers.dim();
    let init = HeadModel::init(l, dim, cfg.hidden, NUM_CLASSES, cfg.seed);
    let outcome = model::train(&init, &pipeline::to_examples(&data), &cfg)?;
    model::save_checkpoint(&a.out, &outcome.model, &cfg)?;
    if let Some(path) = &a.loss_csv {
        let mut text = String::from("epoch,loss\n");
        for (i, l) in outcome.epoch_losses.iter().enumerate() {
            text.push_str(&format!("{},{l}\n", i + 1));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    log::info!(
        "trained on {} samples; final epoch loss {:.5}",
        data.len(),
        outcome.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

#[derive(Deserialize)]
struct ScoreLine {
    id: String,
    scores: Vec<f64>,
}

fn load_batch(src: &ScoreSource) -> CliResult<EvalBatch> {
    let records: Vec<MixtureRecord> = synth::read_mixture_manifest(&src.manifest)?;
    match (&src.model, &src.features, &src.scores) {
        (Some(model_path), Some(features), None) => {
            let (head, _) = model::load_checkpoint(model_path)?;
            let data = pipeline::load_labeled(&records, features)?;
            Ok(pipeline::eval_batch(&head, &data)?)
        }
        (None, None, Some(scores_path)) => {
            let lines: Vec<ScoreLine> = corpus::read_jsonl(scores_path)?;
            let by_id: std::collections::BTreeMap<&str, &ScoreLine> = lines.iter().map(|l| (l.id.as_str(), l)).collect();
            let n = records.len();
            let mut scores = ndarray::Array2::<f64>::zeros((n, NUM_CLASSES));
            let mut labels = ndarray::Array2::<u8>::zeros((n, NUM_CLASSES));
            for (i, r) in records.iter().enumerate() {
                let line = by_id
                    .get(r.id.as_str())
                    .ok_or_else(|| Error::invalid(format!("no scores for `{}`", r.id)))?;
                if line.scores.len() != NUM_CLASSES {
                    return Err(Error::ShapeMismatch(format!("`{}` has {} scores", r.id, line.scores.len())).into());
                }
                for c in 0..NUM_CLASSES {
                    scores[[i, c]] = line.scores[c];
                }
                for l in &r.labels {
                    labels[[i, l.index()]] = 1;
                }
            }
            Ok(EvalBatch::new(scores, labels)?)
        }
        _ => Err(CliError::Usage("give either --model with --features, or --scores".into())),
    }
}

fn evaluate(s: &Settings, a: EvalArgs) -> CliResult<()> {
    let threshold = s.pick(a.threshold, Some("evaluate"), "threshold", metrics::DEFAULT_THRESHOLD)?;
    let micro = a.micro || s.lookup(Some("evaluate"), "micro")?.unwrap_or(false);
    let batch = load_batch(&a.source)?;
    let averaging = if micro { Averaging::Micro } else { Averaging::Macro };
    let report = metrics::evaluate(&batch, threshold, &metrics::default_grid(), averaging)?;
    if let Some(parent) = a.out.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    log::info!(
        "accuracy {:.4}  roc-auc {:.4}  f1 {:.4}",
        report.accuracy,
        report.roc_auc,
        report.f1
    );
    Ok(())
}

fn sweep(s: &Settings, a: SweepArgs) -> CliResult<()> {
    let grid = match a.grid {
        Some(g) => g,
        None => s.lookup(Some("sweep"), "grid")?.unwrap_or_else(metrics::default_grid),
    };
    let batch = load_batch(&a.source)?;
    let curve = metrics::threshold_sweep(&batch, &grid).map_err(|e| match e {
        Error::InvalidParameter(m) => CliError::Usage(m),
        other => CliError::Data(other),
    })?;
    metrics::write_curve_csv(&a.out, &curve)?;
    Ok(())
}

#[derive(Deserialize)]
struct RunInfo {
    bpm_bin_width: f64,
}

fn validate(s: &Settings, g: &Globals, a: ValidateArgs) -> CliResult<()> {
    let root = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let from_run = fs::read_to_string(root.join("run.json"))
        .ok()
        .and_then(|t| serde_json::from_str::<RunInfo>(&t).ok())
        .map(|r| r.bpm_bin_width);
    let bin_width = match a.bin_width {
        Some(w) => w,
        None => s
            .lookup(Some("validate"), "bin-width")?
            .or(from_run)
            .unwrap_or(DEFAULT_BPM_BIN_WIDTH),
    };
    let index = corpus::load_manifest_with_bins(&a.corpus, bin_width)?;
    let records = synth::read_mixture_manifest(&a.manifest)?;
    let opts = ValidateOptions {
        bin_width,
        sample_rate: g.sample_rate,
        audio_root: (!a.skip_audio).then_some(root),
        ..ValidateOptions::default()
    };
    let report = synth::validate(&records, &index, &opts)?;
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    for v in report.violations.iter().take(20) {
        log::warn!("{} {:?}: {}", v.id, v.kind, v.detail);
    }
    eprintln!(
        "validated {} samples ({} with audio): {} violations",
        report.samples,
        report.audio_checked,
        report.violations.len()
    );
    if report.is_clean() {
        Ok(())
    } else {
        Err(CliError::Data(Error::invalid(format!(
            "{} invariant violations",
            report.violations.len()
        ))))
    }
}
