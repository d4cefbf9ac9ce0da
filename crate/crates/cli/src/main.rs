mod commands;
mod instance;
mod output;

use std::panic;
use std::path::PathBuf;
use std::process::ExitCode;

use anarchy_sched::{Error, ErrorKind};
use clap::{Args, Parser, Subcommand};

use output::Format;

#[derive(Debug, Parser)]
#[command(name = "anarchy-sched", version, about = "Scheduling mechanisms for strategic unrelated machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a mechanism on the declared times and report costs and makespan.
    Allocate(RunArgs),
    /// Enumerate pure equilibria on a bid grid.
    Equilibria(RunArgs),
    /// Price of Anarchy over the grid equilibria.
    Poa(RunArgs),
    /// Monte Carlo certificate for the greedy mixed equilibrium.
    PosCertify(PosArgs),
    /// Run a named reproduction.
    Reproduce(ReproduceArgs),
    /// Monte Carlo expected makespan, cross-checked by enumeration when feasible.
    Simulate(RunArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    output: Format,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long, default_value_t = 1.25)]
    grid_factor: f64,
    #[arg(long, default_value_t = 12)]
    grid_span: u32,
    /// Equilibrium tolerance; defaults to 1e-9 times the largest true time.
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Instance JSON file.
    #[arg(long)]
    instance: PathBuf,
    /// alg2, algN, lp, proportional or greedy.
    #[arg(long, default_value = "algN")]
    mechanism: String,
    /// Threshold parameter L of alg2/algN.
    #[arg(short = 'L')]
    l: Option<f64>,
    /// Threshold parameter c of alg2/algN.
    #[arg(short = 'c')]
    c: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct PosArgs {
    #[arg(long)]
    instance: PathBuf,
    /// Comma-separated machine index per task; defaults to an optimal assignment.
    #[arg(long, value_delimiter = ',')]
    assignment: Option<Vec<usize>>,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct ReproduceArgs {
    /// thm1, thm2, thm3, thm4, thm5, thm6, appendixB or k14.
    name: String,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "M")]
    big_m: Option<f64>,
    #[arg(short = 'L')]
    l: Option<f64>,
    #[arg(short = 'c')]
    c: Option<f64>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[command(flatten)]
    output: OutputArgs,
}

/// Everything that ends a run with a nonzero exit code.
#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Input(String),
    Analysis(String),
    Flagged,
    Internal(String),
}

impl Failure {
    pub fn input(msg: String) -> Self {
        Failure::Input(msg)
    }

    pub fn internal(msg: String) -> Self {
        Failure::Internal(msg)
    }

    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => match e.kind() {
                ErrorKind::Input => 2,
                ErrorKind::Capacity => 3,
                ErrorKind::Analysis => 4,
                ErrorKind::Internal => 1,
            },
            Failure::Input(_) => 2,
            Failure::Analysis(_) => 4,
            Failure::Flagged => 5,
            Failure::Internal(_) => 1,
        }
    }

    fn message(&self) -> Option<String> {
        match self {
            Failure::Core(e) => Some(e.to_string()),
            Failure::Input(m) | Failure::Analysis(m) | Failure::Internal(m) => Some(m.clone()),
            Failure::Flagged => None,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Allocate(a) => commands::allocate(&a),
        Command::Equilibria(a) => commands::equilibria(&a),
        Command::Poa(a) => commands::poa(&a),
        Command::PosCertify(a) => commands::pos_certify(&a),
        Command::Reproduce(a) => commands::reproduce(&a),
        Command::Simulate(a) => commands::simulate(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match panic::catch_unwind(|| run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            if let Some(msg) = failure.message() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(failure.exit_code())
        }
        Err(_) => ExitCode::from(1),
    }
}
