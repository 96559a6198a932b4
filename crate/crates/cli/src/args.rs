use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "specgraph", version, about = "Speculative decoding with chain, tree and graph drafts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train an n-gram model on a UTF-8 corpus.
    Train(TrainArgs),
    /// Print the most likely next tokens of a model for a context.
    Query(QueryArgs),
    /// Decode every prompt with a draft and target model.
    Run(Box<RunArgs>),
    /// Side-by-side metrics of several completed runs.
    Compare(CompareArgs),
    /// Run one analysis study over traces.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub order: usize,
    #[arg(long, default_value_t = 0.9)]
    pub lambda: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// Split text into bytes instead of whitespace-separated words.
    #[arg(long)]
    pub byte_level: bool,
    /// Treat each line as a document instead of each blank-line separated paragraph.
    #[arg(long)]
    pub line_docs: bool,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "")]
    pub context: String,
    #[arg(long, default_value_t = 5)]
    pub top: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Vanilla,
    Ssd,
    Tsd,
    Gsd,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma: Option<usize>,
    #[arg(long)]
    pub theta_prob: Option<f64>,
    #[arg(long)]
    pub theta_sib: Option<f64>,
    #[arg(long)]
    pub tau: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Greedy verification, output identical to target-only greedy decoding (default).
    #[arg(long, conflicts_with = "stochastic")]
    pub deterministic: bool,
    /// Sampling verification with top-p and temperature.
    #[arg(long)]
    pub stochastic: bool,
    #[arg(long)]
    pub draft_model: Option<PathBuf>,
    #[arg(long)]
    pub target_model: Option<PathBuf>,
    /// One prompt per line, or JSONL objects with a "prompt" field.
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, env = "SPECGRAPH_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,
    /// Run name used as the output file stem; defaults to the mode.
    #[arg(long)]
    pub name: Option<String>,
    /// Declared model costs, e.g. "draft=0.1,0.001,1e-6;target=1,0.01,1e-5".
    #[arg(long)]
    pub cost_params: Option<String>,
    /// Key-value config file; flags override its settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub max_output: Option<usize>,
    #[arg(long)]
    pub max_input: Option<usize>,
    /// Record every draft graph in the trace (needed by the overlap study).
    #[arg(long)]
    pub trace_graphs: bool,
    /// Record the KL divergence at every merge (needed by the kl study).
    #[arg(long)]
    pub record_kl: bool,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Trace files written by `run`.
    #[arg(required = true, num_args = 2..)]
    pub traces: Vec<PathBuf>,
    /// Where to write the CSV table; the aligned table always goes to stdout.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Study {
    Overlap,
    Kl,
    ChildRank,
    Timing,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub study: Study,
    #[arg(required = true)]
    pub traces: Vec<PathBuf>,
    /// Where to write the CSV; defaults to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Largest n for the overlap study.
    #[arg(long, default_value_t = 5)]
    pub n_max: usize,
}
