//! `mrgan360`: project panoramas to cube faces, predict and assemble saliency,
//! train, evaluate and run the built-in checks.

mod assets;
mod checks;
mod eval;
mod predict;
mod project;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use mrgan::train::TrainConfig;

#[derive(Parser)]
#[command(name = "mrgan360", version, about = "Saliency prediction for 360-degree images")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
pub struct Global {
    /// JSON training/inference configuration; missing keys take defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Override one configuration key, e.g. `--set lr=1e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Split an equirectangular PNG into six cube-face PNGs and a manifest.
    Project(project::ProjectArgs),
    /// Predict an equirectangular saliency map for a panorama.
    Predict(predict::PredictArgs),
    /// Assemble per-face saliency maps back into an equirectangular map.
    Assemble(predict::AssembleArgs),
    /// Pretrain a generator and optionally fine-tune it adversarially.
    Train(train::TrainArgs),
    /// Score predicted maps against ground truth and fixations.
    Eval(eval::EvalArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(checks::GradcheckArgs),
    /// Run the bundled synthetic-data checks.
    Selftest(checks::SelftestArgs),
}

/// Why a command stopped: bad invocation (exit 1) or a failure while
/// running (exit 2).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

pub type Outcome<T = ()> = Result<T, Failure>;

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

impl Global {
    /// Configuration from `--config`, then `--seed`, then `--set`. Any
    /// problem here is a usage error, caught before work starts.
    pub fn config(&self) -> Outcome<TrainConfig> {
        let base = match &self.config {
            Some(p) => TrainConfig::load(p).map_err(|e| usage(format!("configuration: {e}")))?,
            None => TrainConfig::default(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.insert(0, format!("seed={seed}"));
        }
        base.with_overrides(&overrides).map_err(|e| usage(format!("configuration: {e}")))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn run(cli: Cli) -> Outcome {
    if let Some(n) = cli.global.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let g = &cli.global;
    match cli.command {
        Command::Project(a) => project::run(g, a),
        Command::Predict(a) => predict::run(g, a),
        Command::Assemble(a) => predict::assemble(g, a),
        Command::Train(a) => train::run(g, a),
        Command::Eval(a) => eval::run(g, a),
        Command::Gradcheck(a) => checks::gradcheck(g, a),
        Command::Selftest(a) => checks::selftest(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.global.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
