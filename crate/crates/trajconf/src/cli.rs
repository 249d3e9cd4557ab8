//! Command-line front end.
//!
//! Precedence is flags > config file > built-in defaults. The config file is
//! TOML with an optional `[global]` section and one section per subcommand,
//! keyed by long flag names. Every run writes the fully resolved
//! configuration next to its outputs in the same format, so it can be fed
//! back through `--config` to repeat the run.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use trajconf_core::aggregation::{evaluate_aggregation, VoteMode};
use trajconf_core::baselines::BaselineConfig;
use trajconf_core::dataset::{split_questions, Dataset, Split, SplitFractions};
use trajconf_core::estimator::{head_examples, tail_examples, train, EstimatorConfig, TrainingExample};
use trajconf_core::metrics::{auc, dbi, score_distribution, threshold_accuracy, EmbeddingSet, LabeledScores, ScoreDistribution};
use trajconf_core::synthetic::{generate, Placement, SignalKind, SyntheticSpec};
use trajconf_core::trajectory::Alignment;

use crate::analysis::{emit_report, run_sweep, CheckpointPolicy, SweepKind, SweepResult, SweepSpec, DEFAULT_GRID};
use crate::checkpoint;
use crate::error::{Error as E, IoContext, Result};
use crate::export::{create_dir, write_decisions, write_embeddings, write_histogram, write_json, write_scores, write_text};
use crate::harvest::{harvest, Api, HarvestConfig, DEFAULT_ANSWER_PATTERN};
use crate::ingest::{read_traces, write_dataset};
use crate::jobs::default_workers;
use crate::scoring::{score_groups, score_table, ScoredTrace, Scorer};

#[derive(Debug, Parser)]
#[command(name = "trajconf", version, about = "Trace-level confidence from token-confidence trajectories")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML file with `[global]` and per-subcommand sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// More log output (repeatable). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Worker threads for sweeps, scoring and harvest requests
    /// [default: available cores].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a trace JSONL file and optionally write it back normalized.
    Ingest(IngestArgs),
    /// Sample traces with top-k logprobs from an OpenAI-compatible endpoint.
    Harvest(HarvestArgs),
    /// Generate a synthetic trace dataset with a planted signal.
    Synth(SynthArgs),
    /// Train the convolutional readout.
    Train(TrainArgs),
    /// Score traces and export scores, histograms and embeddings.
    Score(ScoreArgs),
    /// Vote per question with trace scores as weights.
    Aggregate(AggregateArgs),
    /// Run a length, position, head-tail or grouping sweep.
    Sweep(SweepArgs),
    /// Regenerate report files from a sweep's results.json.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Harvest(_) => "harvest",
            Command::Synth(_) => "synth",
            Command::Train(_) => "train",
            Command::Score(_) => "score",
            Command::Aggregate(_) => "aggregate",
            Command::Sweep(_) => "sweep",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Write the validated dataset here (labels recomputed, confidences filled in).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct HarvestArgs {
    /// Base URL including the API version, e.g. http://localhost:8000/v1
    #[arg(long)]
    pub endpoint: String,
    #[arg(long)]
    pub model: String,
    /// JSONL with question_id, prompt, ground_truth.
    #[arg(long)]
    pub questions: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub traces_per_question: usize,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 4096)]
    pub max_tokens: usize,
    /// In-flight requests [default: --workers].
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub concurrency: Option<usize>,
    #[arg(long, value_enum, default_value_t = Api::Completions)]
    pub api: Api,
    /// Fallback answer regex when no \boxed{} is present; group 1 is the answer.
    #[arg(long, default_value = DEFAULT_ANSWER_PATTERN)]
    pub answer_pattern: String,
    #[arg(long, default_value_t = 5)]
    pub retries: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    #[arg(long, default_value_t = 300)]
    pub timeout_s: u64,
    /// Environment variable holding the API key (the key itself is never a flag).
    #[arg(long, default_value = "TRAJCONF_API_KEY")]
    pub api_key_env: String,
    /// Output JSONL; appended to and resumed if it exists.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalArg {
    MeanShift,
    TailTrend,
    TailVariance,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EndArg {
    Tail,
    Head,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SignalArg::TailTrend)]
    pub signal: SignalArg,
    #[arg(long, default_value_t = 400)]
    pub questions: usize,
    #[arg(long, default_value_t = 16)]
    pub traces_per_question: usize,
    #[arg(long, default_value_t = 0.6)]
    pub correct_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub rate_spread: f64,
    #[arg(long, default_value_t = 128)]
    pub min_len: usize,
    #[arg(long, default_value_t = 512)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1.0)]
    pub magnitude: f64,
    /// Length of the planted segment.
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, value_enum, default_value_t = EndArg::Tail)]
    pub placement: EndArg,
    #[arg(long, default_value_t = 2.0)]
    pub base_mean: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long, default_value_t = 3)]
    pub distractors: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    pub fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            questions: self.questions,
            traces_per_question: self.traces_per_question,
            correct_rate: self.correct_rate,
            rate_spread: self.rate_spread,
            min_len: self.min_len,
            max_len: self.max_len,
            signal: match self.signal {
                SignalArg::MeanShift => SignalKind::MeanShift,
                SignalArg::TailTrend => SignalKind::TailTrend,
                SignalArg::TailVariance => SignalKind::TailVariance,
                SignalArg::None => SignalKind::None,
            },
            magnitude: self.magnitude,
            window: self.window,
            placement: match self.placement {
                EndArg::Tail => Placement::Tail,
                EndArg::Head => Placement::Head,
            },
            base_mean: self.base_mean,
            noise: self.noise,
            distractors: self.distractors,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimatorArgs {
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    /// Residual blocks.
    #[arg(long, default_value_t = 2)]
    pub blocks: usize,
    /// Odd convolution width.
    #[arg(long, default_value_t = 5)]
    pub kernel: usize,
    #[arg(long, default_value_t = 32)]
    pub head_hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 100)]
    pub max_epochs: usize,
    /// Epochs without a validation AUC improvement before stopping.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
}

impl EstimatorArgs {
    pub fn config(&self, l_max: usize, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            l_max,
            channels: self.channels,
            blocks: self.blocks,
            kernel: self.kernel,
            head_hidden: self.head_hidden,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SplitArgs {
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub val_fraction: f64,
    #[arg(long, default_value_t = 0.25)]
    pub test_fraction: f64,
    /// Seed of the question-level split (independent of the model seed).
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

impl SplitArgs {
    pub fn fractions(&self) -> SplitFractions {
        SplitFractions {
            train: self.train_fraction,
            val: self.val_fraction,
            test: self.test_fraction,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Input length L_max.
    #[arg(long, alias = "l-max", default_value_t = 2048)]
    pub lmax: usize,
    #[arg(long, value_enum, default_value_t = EndArg::Tail)]
    pub alignment: EndArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Drop traces shorter than this before splitting.
    #[arg(long, default_value_t = 0)]
    pub min_length: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerArg {
    Neuralconf,
    Tail,
    BottomGroup,
    Uniform,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScorerArgs {
    /// Checkpoint for the neuralconf scorer.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Alignment the checkpoint was trained with.
    #[arg(long, value_enum, default_value_t = EndArg::Tail)]
    pub alignment: EndArg,
    /// Tail length T of the tail-mean baseline.
    #[arg(long, default_value_t = 2048)]
    pub tail: usize,
    /// Grouping length G of the bottom-group baseline.
    #[arg(long, default_value_t = 1024)]
    pub group: usize,
    #[arg(long, default_value_t = 0.10)]
    pub bottom_fraction: f64,
    /// Group stride (1 = overlapping groups, G = tiling).
    #[arg(long, default_value_t = 1)]
    pub stride: usize,
}

impl ScorerArgs {
    pub fn build(&self, kind: ScorerArg) -> Result<Scorer> {
        let baseline = BaselineConfig {
            tail: self.tail,
            group: self.group,
            bottom_fraction: self.bottom_fraction,
            stride: self.stride,
        };
        baseline.validate()?;
        Ok(match kind {
            ScorerArg::Neuralconf => {
                let path = self
                    .checkpoint
                    .as_ref()
                    .ok_or_else(|| E::Config("--checkpoint is required for the neuralconf scorer".into()))?;
                Scorer::Neural {
                    checkpoint: checkpoint::load(path)?,
                    alignment: match self.alignment {
                        EndArg::Tail => Alignment::Tail,
                        EndArg::Head => Alignment::Head,
                    },
                }
            }
            ScorerArg::Tail => Scorer::Tail { tail: baseline.tail },
            ScorerArg::BottomGroup => Scorer::BottomGroup {
                group: baseline.group,
                fraction: baseline.bottom_fraction,
                stride: baseline.stride,
            },
            ScorerArg::Uniform => Scorer::Uniform,
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScoreArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, alias = "scorer", value_enum, default_value_t = ScorerArg::Neuralconf)]
    pub method: ScorerArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub scorer: ScorerArgs,
    /// Histogram bins.
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Weighted,
    Majority,
    Filtered,
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AggregateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ScorerArg::Neuralconf)]
    pub scorer: ScorerArg,
    #[command(flatten)]
    #[serde(flatten)]
    pub scorer_args: ScorerArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Weighted)]
    pub mode: ModeArg,
    /// Fraction of top-scored traces kept by the filtered mode.
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    /// Filtered mode: plain majority over the kept traces instead of a weighted vote.
    #[arg(long)]
    pub filter_then_majority: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl AggregateArgs {
    pub fn vote_mode(&self) -> VoteMode {
        match self.mode {
            ModeArg::Weighted => VoteMode::Weighted,
            ModeArg::Majority => VoteMode::Majority,
            ModeArg::Filtered => VoteMode::Filtered {
                eta: self.eta,
                then_majority: self.filter_then_majority,
            },
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub kind: SweepKind,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Comma-separated lengths or grouping lengths [default: 4,8,...,2048].
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = CheckpointPolicy::Retrain)]
    pub policy: CheckpointPolicy,
    #[command(flatten)]
    #[serde(flatten)]
    pub estimator: EstimatorArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub split: SplitArgs,
    /// Drop traces shorter than this before splitting.
    #[arg(long, default_value_t = 0)]
    pub min_length: usize,
    #[arg(long, default_value_t = 64)]
    pub window: usize,
    #[arg(long, default_value_t = 32)]
    pub window_stride: usize,
    /// Position sweep: one model over all windows instead of one per bucket.
    #[arg(long)]
    pub share_position_model: bool,
    /// Position sweep: ignore traces shorter than one window.
    #[arg(long)]
    pub drop_short: bool,
    #[arg(long, default_value_t = 0.10)]
    pub bottom_fraction: f64,
    #[arg(long, default_value_t = 1)]
    pub group_stride: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl SweepArgs {
    pub fn spec(&self) -> SweepSpec {
        SweepSpec {
            kind: self.kind,
            grid: self.grid.clone().unwrap_or_else(|| DEFAULT_GRID.to_vec()),
            seeds: self.seeds.clone(),
            estimator: self.estimator.config(2048, 0),
            policy: self.policy,
            split: self.split.fractions(),
            split_seed: self.split.split_seed,
            min_length: self.min_length,
            window: self.window,
            window_stride: self.window_stride,
            share_position_model: self.share_position_model,
            drop_short: self.drop_short,
            bottom_fraction: self.bottom_fraction,
            group_stride: self.group_stride,
            threshold: self.threshold,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ReportArgs {
    /// results.json written by `sweep`.
    #[arg(long)]
    pub results: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    init_logging(cli.global.verbose);
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Info,
        1 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("RUST_LOG")
        .format_timestamp(None)
        .try_init();
}

fn clap_exit(e: clap::Error) -> i32 {
    use clap::error::ErrorKind;
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
        _ => 1,
    }
}

fn parse(argv: &[OsString]) -> std::result::Result<Cli, i32> {
    let cmd = Cli::command();
    // First pass with every flag optional, since the config file may supply
    // required ones.
    let relaxed = cmd.clone().mut_subcommands(|s| s.mut_args(|a| a.required(false)));
    let first = relaxed.clone().try_get_matches_from(argv).map_err(clap_exit)?;
    let mut full = argv.to_vec();
    if let Some(path) = first.get_one::<PathBuf>("config") {
        let extra = config_args(&relaxed, &first, path).map_err(|e| {
            eprintln!("error: {e}");
            e.exit_code()
        })?;
        full.extend(extra);
    }
    let matches = cmd.try_get_matches_from(full).map_err(clap_exit)?;
    Cli::from_arg_matches(&matches).map_err(clap_exit)
}

/// Turns config-file entries into `--flag=value` arguments for every flag
/// the command line left unset.
fn config_args(cmd: &clap::Command, matches: &ArgMatches, path: &Path) -> Result<Vec<OsString>> {
    let text = fs::read_to_string(path).at(path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| E::Config(format!("{}: {}", path.display(), e.message())))?;
    let (sub_name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub_cmd = cmd.find_subcommand(sub_name).expect("matched subcommand exists");

    let mut out = Vec::new();
    for (section, value) in &table {
        let entries = value.as_table().ok_or_else(|| {
            E::Config(format!(
                "{}: top-level key `{section}` must be a [global] or [<subcommand>] section",
                path.display()
            ))
        })?;
        let (target, m) = if section == "global" {
            (cmd, matches)
        } else if section == sub_name {
            (sub_cmd, sub_matches)
        } else if cmd.find_subcommand(section).is_some() {
            continue;
        } else {
            return Err(E::Config(format!("{}: unknown section [{section}]", path.display())));
        };
        for (key, v) in entries {
            let long = key.replace('_', "-");
            let arg = target
                .get_arguments()
                .find(|a| a.get_long() == Some(long.as_str()) && a.get_id() != "config")
                .ok_or_else(|| E::Config(format!("{}: unknown key `{key}` in [{section}]", path.display())))?;
            if m.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
                continue;
            }
            out.extend(flag_args(&long, arg, v).map_err(|msg| {
                E::Config(format!("{}: key `{key}` in [{section}]: {msg}", path.display()))
            })?);
        }
    }
    Ok(out)
}

fn flag_args(long: &str, arg: &clap::Arg, v: &toml::Value) -> std::result::Result<Vec<OsString>, String> {
    use clap::ArgAction;
    let flag = format!("--{long}");
    match arg.get_action() {
        ArgAction::SetTrue => match v.as_bool() {
            Some(true) => Ok(vec![flag.into()]),
            Some(false) => Ok(vec![]),
            None => Err("expected true or false".into()),
        },
        ArgAction::Count => match v.as_integer() {
            Some(n) if n >= 0 => Ok(vec![flag.into(); n as usize]),
            _ => Err("expected a non-negative integer".into()),
        },
        _ => {
            let scalar = |v: &toml::Value| -> std::result::Result<String, String> {
                match v {
                    toml::Value::String(s) => Ok(s.clone()),
                    toml::Value::Integer(i) => Ok(i.to_string()),
                    toml::Value::Float(f) => Ok(f.to_string()),
                    toml::Value::Boolean(b) => Ok(b.to_string()),
                    _ => Err("expected a scalar".into()),
                }
            };
            let value = match v {
                toml::Value::Array(items) => items.iter().map(scalar).collect::<std::result::Result<Vec<_>, _>>()?.join(","),
                other => scalar(other)?,
            };
            Ok(vec![format!("{flag}={value}").into()])
        }
    }
}

/// The resolved configuration as a TOML document accepted by `--config`.
pub fn resolved_config(command: &str, args: &impl Serialize, workers: usize) -> Result<String> {
    let mut root = toml::Table::new();
    let mut global = toml::Table::new();
    global.insert("workers".into(), toml::Value::Integer(workers as i64));
    root.insert("global".into(), toml::Value::Table(global));
    let section = toml::Value::try_from(args).map_err(|e| E::Config(format!("cannot record configuration: {e}")))?;
    root.insert(command.into(), section);
    toml::to_string(&root).map_err(|e| E::Config(format!("cannot record configuration: {e}")))
}

/// `<file>.config.toml` next to a file output.
fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

/// Refuses to overwrite an input file.
fn ensure_distinct(input: &Path, output: &Path) -> Result<()> {
    let same = match (fs::canonicalize(input), fs::canonicalize(output)) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    };
    if same {
        return Err(E::Config(format!("output {} would overwrite the input", output.display())));
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    let ingested = read_traces(path)?;
    for w in &ingested.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(ingested.dataset)
}

fn dispatch(cli: Cli) -> Result<()> {
    let workers = cli.global.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(E::Config("--workers must be at least 1".into()));
    }
    let name = cli.command.name();
    match &cli.command {
        Command::Ingest(a) => {
            let ingested = read_traces(&a.input)?;
            for w in &ingested.warnings {
                log::warn!("{}: {w}", a.input.display());
            }
            let d = &ingested.dataset;
            let positives = d.traces().filter(|t| t.correct).count();
            println!(
                "{}: {} questions, {} traces ({} correct), {} warnings",
                a.input.display(),
                d.groups.len(),
                d.trace_count(),
                positives,
                ingested.warnings.len()
            );
            if let Some(out) = &a.out {
                ensure_distinct(&a.input, out)?;
                write_dataset(out, d)?;
                write_text(&sidecar(out), &resolved_config(name, a, workers)?)?;
            }
            Ok(())
        }
        Command::Harvest(a) => {
            let config = HarvestConfig {
                endpoint: a.endpoint.clone(),
                model: a.model.clone(),
                questions: a.questions.clone(),
                traces_per_question: a.traces_per_question,
                top_k: a.top_k,
                temperature: a.temperature,
                max_tokens: a.max_tokens,
                concurrency: a.concurrency.unwrap_or(workers),
                output: a.out.clone(),
                api: a.api,
                answer_pattern: a.answer_pattern.clone(),
                retries: a.retries,
                backoff_ms: a.backoff_ms,
                timeout_s: a.timeout_s,
                api_key_env: a.api_key_env.clone(),
            };
            ensure_distinct(&a.questions, &a.out)?;
            write_text(&sidecar(&a.out), &resolved_config(name, a, workers)?)?;
            let summary = harvest(&config)?;
            println!(
                "{}: {} written, {} already present, {} skipped",
                a.out.display(),
                summary.written,
                summary.resumed,
                summary.skipped.len()
            );
            Ok(())
        }
        Command::Synth(a) => {
            let dataset = generate(&a.spec())?;
            write_dataset(&a.out, &dataset)?;
            write_text(&sidecar(&a.out), &resolved_config(name, a, workers)?)?;
            Ok(())
        }
        Command::Train(a) => run_train(a, workers),
        Command::Score(a) => run_score(a, workers),
        Command::Aggregate(a) => run_aggregate(a, workers),
        Command::Sweep(a) => {
            let dataset = load_dataset(&a.dataset)?;
            create_dir(&a.out)?;
            write_text(&a.out.join("config.toml"), &resolved_config(name, a, workers)?)?;
            let result = run_sweep(&dataset, &a.spec(), workers)?;
            for note in result.flags.iter().chain(&result.skipped) {
                log::warn!("grid value {}: {}", note.grid_value, note.note);
            }
            write_json(&a.out.join("results.json"), &result)?;
            emit_report(&result, &a.out)?;
            Ok(())
        }
        Command::Report(a) => {
            let text = fs::read_to_string(&a.results).at(&a.results)?;
            let result: SweepResult = serde_json::from_str(&text).map_err(|e| E::Parse {
                path: a.results.clone(),
                line: e.line(),
                message: e.to_string(),
            })?;
            emit_report(&result, &a.out)?;
            create_dir(&a.out)?;
            write_text(&a.out.join("report.config.toml"), &resolved_config(name, a, workers)?)?;
            Ok(())
        }
    }
}

fn class_counts(examples: &[TrainingExample]) -> (usize, usize) {
    let pos = examples.iter().filter(|e| e.correct).count();
    (pos, examples.len() - pos)
}

fn run_train(a: &TrainArgs, workers: usize) -> Result<()> {
    let mut dataset = load_dataset(&a.dataset)?;
    if a.min_length > 0 {
        dataset = dataset.filter_min_length(a.min_length);
    }
    let config = a.estimator.config(a.lmax, a.seed);
    config.validate()?;
    create_dir(&a.out)?;
    write_text(&a.out.join("config.toml"), &resolved_config("train", a, workers)?)?;

    let assignment = split_questions(&dataset.groups, a.split.fractions(), a.split.split_seed)?;
    let align = match a.alignment {
        EndArg::Tail => tail_examples,
        EndArg::Head => head_examples,
    };
    let part = |s: Split| align(&dataset.subset(&assignment, s), a.lmax);
    let (tr, va, te) = (part(Split::Train)?, part(Split::Val)?, part(Split::Test)?);
    log::info!(
        "training on {} traces, validating on {}, testing on {}",
        tr.len(),
        va.len(),
        te.len()
    );
    let outcome = train(&config, &tr, &va)?;
    checkpoint::save(a.out.join("model.ckpt"), &outcome.checkpoint)?;

    let mut log_csv = String::from("epoch,train_loss,val_loss,val_auc\n");
    for e in &outcome.log {
        log_csv.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_auc));
    }
    write_text(&a.out.join("training_log.csv"), &log_csv)?;

    let mut split_csv = String::from("question_id,split\n");
    for (q, s) in assignment.iter() {
        split_csv.push_str(&format!("{},{}\n", csv_field(q), s.as_str()));
    }
    write_text(&a.out.join("split.csv"), &split_csv)?;

    let test = if te.is_empty() {
        serde_json::Value::Null
    } else {
        let outs = outcome.checkpoint.score_all(te.iter().map(|e| &e.aligned))?;
        let labels: Vec<bool> = te.iter().map(|e| e.correct).collect();
        let data = LabeledScores::new(outs.iter().map(|o| o.score).collect(), labels.clone())?;
        let rows: Vec<Vec<f64>> = outs.into_iter().map(|o| o.embedding).collect();
        let emb = EmbeddingSet::from_rows(&rows, &labels)?;
        let (pos, neg) = class_counts(&te);
        json!({
            "traces": te.len(),
            "positives": pos,
            "negatives": neg,
            "auc": auc(&data).ok(),
            "dbi": dbi(&emb).ok(),
            "threshold": a.threshold,
            "threshold_accuracy": threshold_accuracy(&data, a.threshold),
        })
    };
    let metrics = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_auc": outcome.best_val_auc,
        "epochs_run": outcome.log.len(),
        "class_weights": outcome.class_weights,
        "normalization": outcome.checkpoint.normalization(),
        "train_traces": tr.len(),
        "val_traces": va.len(),
        "test": test,
    });
    write_json(&a.out.join("metrics.json"), &metrics)?;
    println!(
        "{}: best validation AUC {:.4} at epoch {}",
        a.out.join("model.ckpt").display(),
        outcome.best_val_auc,
        outcome.best_epoch
    );
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn summarize_scores(scored: &[ScoredTrace], threshold: f64, bins: usize) -> Result<(serde_json::Value, ScoreDistribution)> {
    if scored.is_empty() {
        return Err(E::Config("dataset has no traces".into()));
    }
    let labels: Vec<bool> = scored.iter().map(|s| s.correct).collect();
    let data = LabeledScores::new(scored.iter().map(|s| s.score).collect(), labels.clone())?;
    let dist = score_distribution(&data, bins)?;
    let dbi_value = if scored.iter().all(|s| s.embedding.is_some()) {
        let rows: Vec<Vec<f64>> = scored.iter().map(|s| s.embedding.clone().unwrap_or_default()).collect();
        dbi(&EmbeddingSet::from_rows(&rows, &labels)?).ok()
    } else {
        None
    };
    let positives = data.positives();
    let summary = json!({
        "traces": data.len(),
        "positives": positives,
        "negatives": data.len() - positives,
        "auc": auc(&data).ok(),
        "dbi": dbi_value,
        "threshold": threshold,
        "threshold_accuracy": threshold_accuracy(&data, threshold),
        "positive_mean": dist.positive_mean,
        "negative_mean": dist.negative_mean,
    });
    Ok((summary, dist))
}

fn run_score(a: &ScoreArgs, workers: usize) -> Result<()> {
    let scorer = a.scorer.build(a.method)?;
    if a.bins == 0 {
        return Err(E::Config("--bins must be at least 1".into()));
    }
    let dataset = load_dataset(&a.dataset)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("config.toml"), &resolved_config("score", a, workers)?)?;
    let scored = score_groups(&scorer, &dataset.groups, workers)?;
    write_scores(&a.out.join("scores.csv"), &scored)?;
    if scored.iter().any(|s| s.embedding.is_some()) {
        write_embeddings(&a.out.join("embeddings.csv"), &scored)?;
    }
    let (mut summary, dist) = summarize_scores(&scored, a.threshold, a.bins)?;
    summary["method"] = json!(scorer.name());
    write_histogram(&a.out.join("histogram.csv"), &dist)?;
    write_json(&a.out.join("summary.json"), &summary)?;
    Ok(())
}

fn run_aggregate(a: &AggregateArgs, workers: usize) -> Result<()> {
    let scorer = a.scorer_args.build(a.scorer)?;
    let dataset = load_dataset(&a.dataset)?;
    create_dir(&a.out)?;
    write_text(&a.out.join("config.toml"), &resolved_config("aggregate", a, workers)?)?;
    let scored = score_groups(&scorer, &dataset.groups, workers)?;
    let table = score_table(&scored);
    let mode = a.vote_mode();
    let report = evaluate_aggregation(&dataset.groups, &table, mode)?;
    write_decisions(&a.out.join("decisions.csv"), &report.decisions)?;
    let summary = json!({
        "scorer": scorer.name(),
        "mode": mode,
        "questions": report.decisions.len(),
        "traces": scored.len(),
        "correct": report.decisions.iter().filter(|d| d.correct).count(),
        "accuracy": report.accuracy,
    });
    write_json(&a.out.join("summary.json"), &summary)?;
    println!("accuracy {:.4} over {} questions", report.accuracy, report.decisions.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn resolved_config_round_trips_through_the_parser() {
        let dir = tempfile::tempdir().unwrap();
        let argv = ["trajconf", "sweep", "--kind", "head-tail", "--dataset", "d.jsonl", "--seeds", "3,4", "--grid", "8,16", "--drop-short", "--out", "o"];
        let Command::Sweep(a) = parse(&argv.map(OsString::from)).unwrap().command else {
            panic!("sweep expected")
        };
        let text = resolved_config("sweep", &a, 3).unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, &text).unwrap();
        let argv2 = ["trajconf", "sweep", "--config", cfg.to_str().unwrap()];
        let cli = parse(&argv2.map(OsString::from)).unwrap();
        assert_eq!(cli.global.workers, Some(3));
        let Command::Sweep(b) = cli.command else { panic!("sweep expected") };
        assert_eq!(serde_json::to_value(&a).unwrap(), serde_json::to_value(&b).unwrap());
    }

    #[test]
    fn flags_beat_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[global]\nworkers = 2\n[synth]\nseed = 9\nquestions = 5\nout = \"x\"\n[train]\nlmax = 7\n").unwrap();
        let argv = ["trajconf", "synth", "--seed", "1", "--config", cfg.to_str().unwrap()];
        let cli = parse(&argv.map(OsString::from)).unwrap();
        let Command::Synth(a) = cli.command else { panic!() };
        assert_eq!((a.seed, a.questions, cli.global.workers), (1, 5, Some(2)));
        assert_eq!(a.out, PathBuf::from("x"));
    }

    #[test]
    fn unknown_config_key_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.toml");
        fs::write(&cfg, "[synth]\nbogus = 1\n").unwrap();
        let argv = ["trajconf", "synth", "--out", "x", "--config", cfg.to_str().unwrap()];
        assert_eq!(parse(&argv.map(OsString::from)).unwrap_err(), 1);
    }
}
