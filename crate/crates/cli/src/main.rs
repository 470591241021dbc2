//! `htdetect`: gate-level hardware Trojan detection from the command line.

mod commands;
mod error;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use settings::{C2Flag, TuningFlags};

#[derive(Parser, Debug)]
#[command(name = "htdetect", version, about = "Graph-attention hardware Trojan detection for gate-level netlists")]
struct Cli {
    /// Directory for outputs that are not given an explicit path.
    #[arg(long, global = true, env = "HTDETECT_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on labeled netlists.
    Train(TrainArgs),
    /// Classify every wire of a netlist, then reclassify with attributions.
    Detect(DetectArgs),
    /// Report the top attributed features of wires.
    Explain(ExplainArgs),
    /// Render a locality rule from the Trojan predictions.
    Rules(RulesArgs),
    /// Run a family-exclusion experiment from a TOML config.
    Eval(EvalArgs),
    /// Generate synthetic benchmarks with inserted Trojans.
    SynthBench(SynthArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Netlist to train on; repeat for several.
    #[arg(long = "netlist", required = true)]
    pub netlists: Vec<PathBuf>,
    /// Label file for the netlist in the same position.
    #[arg(long = "labels", required = true)]
    pub labels: Vec<PathBuf>,
    /// Model file to write [default: <out-dir>/model.json]
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Training log to write [default: <out-dir>/train_log.json]
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningFlags,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub netlist: PathBuf,
    /// Ground truth; adds confusion counts to the report.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Skip attribution and reclassification.
    #[arg(long)]
    pub no_xai: bool,
    /// Report to write [default: <out-dir>/detect_report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningFlags,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub netlist: PathBuf,
    /// Wire to explain; repeat for several. Every wire when omitted.
    #[arg(long = "wire")]
    pub wires: Vec<String>,
    /// Report to write [default: <out-dir>/explain_report.json]
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningFlags,
}

#[derive(Args, Debug)]
pub struct RulesArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub netlist: PathBuf,
    /// Also write the rule text to this file.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[command(flatten)]
    pub tuning: TuningFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Experiment config (TOML); benchmark paths are relative to it.
    pub config: PathBuf,
    /// Localities to sweep, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub locality: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hold out only this family instead of each in turn.
    #[arg(long)]
    pub test_family: Option<String>,
    #[arg(long)]
    pub ig_steps: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub multiplier: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub top_n: Option<usize>,
    #[arg(long, value_enum)]
    pub c2_mode: Option<C2Flag>,
    /// File name prefix of the outputs in the output directory.
    #[arg(long, default_value = "eval")]
    pub prefix: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FabricFlag {
    Arithmetic,
    Control,
    Mixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PayloadFlag {
    Xor,
    Or,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "mixed")]
    pub fabric: FabricFlag,
    #[arg(long, default_value_t = 24)]
    pub inputs: usize,
    /// Fabric gates before insertion.
    #[arg(long, default_value_t = 200)]
    pub gates: usize,
    /// Levels of each AND-tree trigger.
    #[arg(long, default_value_t = 3)]
    pub trigger_depth: u32,
    #[arg(long, default_value_t = 3)]
    pub insertions: usize,
    #[arg(long, value_enum, default_value = "xor")]
    pub payload: PayloadFlag,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base name of the written files [default: synth_<fabric>_<seed>]
    #[arg(long)]
    pub name: Option<String>,
    /// Write a whole corpus with this many benchmarks per fabric, plus an
    /// experiment config listing them.
    #[arg(long)]
    pub per_family: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a, &cli.out_dir),
        Command::Detect(a) => commands::detect(a, &cli.out_dir),
        Command::Explain(a) => commands::explain(a, &cli.out_dir),
        Command::Rules(a) => commands::rules(a),
        Command::Eval(a) => commands::eval(a, &cli.out_dir),
        Command::SynthBench(a) => commands::synth_bench(a, &cli.out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
