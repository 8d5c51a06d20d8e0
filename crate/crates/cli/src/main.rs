mod config;
mod cv;
mod extract;
mod store;
mod synth;
mod topo;
mod train;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use neurograph::eval::EvalError;
use neurograph::nn::NnError;

/// Exit codes.
const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "neurograph", version, about = "EEG connectivity features and CNN preference recognition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for synthesis and extraction.
    #[arg(long, global = true, env = "NEUROGRAPH_JOBS")]
    jobs: Option<usize>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus in the CSV trial layout.
    Synth(synth::SynthArgs),
    /// Extract feature tensors and a label index from a CSV corpus.
    Extract(CommonArgs),
    /// Train one network on extracted features and save a checkpoint.
    Train(train::TrainArgs),
    /// Evaluate a checkpoint on extracted features.
    Eval(train::EvalArgs),
    /// Cross-validate one configuration or a grid of them.
    Cv(cv::CvArgs),
    /// Render electrode values as a PGM/PPM scalp image.
    Topo(topo::TopoArgs),
}

/// Flags shared by the pipeline commands; each overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory the command reads.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory the command writes.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// psd, pcc, plv or te.
    #[arg(long)]
    pub feature: Option<String>,
    /// distance or random:<seed>.
    #[arg(long)]
    pub ordering: Option<String>,
    /// cnn1, cnn2 or cnn3.
    #[arg(long)]
    pub network: Option<String>,
    /// classify or regress.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overwrite existing outputs.
    #[arg(long)]
    pub force: bool,
}

/// Bad flags, config values or combinations.
#[derive(Debug)]
pub struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Some inputs could not be processed; the rest were.
#[derive(Debug)]
pub struct PartialFailure(pub usize);

impl fmt::Display for PartialFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} input(s) failed", self.0)
    }
}

impl std::error::Error for PartialFailure {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        let diverged = |e: &NnError| matches!(e, NnError::Diverged { .. } | NnError::NonFiniteLoss { .. });
        if let Some(e) = cause.downcast_ref::<NnError>() {
            if diverged(e) {
                return EXIT_NUMERIC;
            }
        }
        if let Some(EvalError::Nn(e)) = cause.downcast_ref::<EvalError>() {
            if diverged(e) {
                return EXIT_NUMERIC;
            }
        }
    }
    EXIT_DATA
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(j).build_global()?;
    }
    match cli.command {
        Command::Synth(a) => synth::run(a),
        Command::Extract(a) => extract::run(a),
        Command::Train(a) => train::run_train(a),
        Command::Eval(a) => train::run_eval(a),
        Command::Cv(a) => cv::run(a),
        Command::Topo(a) => topo::run(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
