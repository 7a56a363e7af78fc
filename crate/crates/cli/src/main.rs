//! `mmlink`: reproducible linkage runs from the command line.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "mmlink", version, about = "Multimodal record linkage pipeline", args_override_self = true)]
pub struct Cli {
    /// `key = value` file supplying defaults for any flag of the command.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "MMLINK_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a record file and write it back in canonical form.
    Ingest(IngestArgs),
    /// Generate labeled noisy-OCR and visual-proxy views from a word list.
    Synth(SynthArgs),
    /// Image-text contrastive pretraining of the toy encoders.
    Pretrain(PretrainArgs),
    /// Mine hard-negative sets and a batch plan from model embeddings.
    Mine(MineArgs),
    /// Supervised contrastive training over mined batches.
    Train(TrainArgs),
    /// Link queries to a target directory by exact embedding retrieval.
    Link(LinkArgs),
    /// Score predictions against ground truth, or tune a no-match threshold.
    Eval(EvalArgs),
    /// Link by edit distance or n-gram cosine.
    Stringmatch(StringmatchArgs),
    /// Supply-chain graph statistics from linked relations.
    Graph(GraphArgs),
    /// Run the frozen synthetic benchmark.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Visual,
    Language,
    Multimodal,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalModeArg {
    Visual,
    Language,
    Multimodal,
    StringMetric,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricArg {
    Lev,
    Ngram,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum UnitArg {
    Char,
    Stroke,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TempModeArg {
    Divide,
    Multiply,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct IngestArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Declared visual dimension; defaults to the first vector's length.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct SynthArgs {
    /// One word per line.
    #[arg(long)]
    pub words: PathBuf,
    /// Extra `char<TAB>confusable<TAB>weight` entries.
    #[arg(long)]
    pub confusables: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub views: usize,
    #[arg(long, default_value_t = 128)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 1.3)]
    pub aug_strength: f64,
    #[arg(long, default_value_t = 0.15)]
    pub p_sub: f64,
    #[arg(long, default_value_t = 0.03)]
    pub p_del: f64,
    #[arg(long, default_value_t = 0.02)]
    pub p_ins: f64,
    /// Characters insertions draw from; defaults to those of the word list.
    #[arg(long)]
    pub insertion_alphabet: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub projection_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainingFlags {
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long, default_value_t = 153)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    pub weight_decay: f64,
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long, value_enum, default_value_t = TempModeArg::Divide)]
    pub temp_mode: TempModeArg,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub include_self: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct PretrainArgs {
    /// Labeled records with text and `vec`.
    #[arg(long)]
    pub records: PathBuf,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    /// Width of an optional tanh hidden layer.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub hash_dim: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct MineArgs {
    #[arg(long)]
    pub records: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Labels per hard-negative set (anchor plus k-1 neighbors).
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// View slots per label.
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 153)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.5)]
    pub im_wt: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub records: PathBuf,
    /// Starting checkpoint, usually the pretrained model.
    #[arg(long)]
    pub model: PathBuf,
    /// Hard-negative sets; a fresh plan is drawn every epoch.
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub sets: Option<PathBuf>,
    /// A fixed batch plan reused every epoch.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.5)]
    pub im_wt: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainingFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct LinkArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Multimodal)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0.5)]
    pub im_wt: f64,
    #[arg(long)]
    pub nm_thresh: Option<f64>,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub block: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    /// CSV `query_id,predicted,score`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// JSONL `{query_id, target_ids}`.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub include_no_match: bool,
    /// Applied before scoring; only meaningful with --include-no-match.
    #[arg(long)]
    pub nm_thresh: Option<f64>,
    /// Label recorded in the report.
    #[arg(long, value_enum, default_value_t = EvalModeArg::Multimodal)]
    pub mode: EvalModeArg,
    /// Tune a no-match threshold on these predictions instead of scoring.
    #[arg(long, num_args = 0..=1, default_value_t = false, default_missing_value = "true", action = ArgAction::Set)]
    pub tune: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct StringmatchArgs {
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Lev)]
    pub metric: MetricArg,
    /// n-gram order; defaults to 2 for characters and 3 for strokes.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value_t = UnitArg::Char)]
    pub unit: UnitArg,
    /// Stroke decomposition TSV, required for `--unit stroke`.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct GraphArgs {
    /// CSV `firm,query_id`: the firm whose list mentions the query.
    #[arg(long)]
    pub relations: PathBuf,
    #[arg(long)]
    pub predictions: PathBuf,
    /// Comma-separated seed firm ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(args_override_self = true)]
pub struct BenchArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Failure classes map to exit statuses 2 and 1.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<mmlink_core::Error> for Failure {
    fn from(e: mmlink_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match config::merge_config_args(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
