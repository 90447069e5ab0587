//! `vnlearn`: tables, verification and solver runs for measurement
//! storage-and-retrieval schemes.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vnlearn::pbt::SchemeId;
use vnlearn::sdp::{DEFAULT_EPS, DEFAULT_MAX_ITER};
use vnlearn::tester::TesterKind;

use crate::output::Format;

#[derive(Parser, Debug)]
#[command(name = "vnlearn", version, about = "Learning unknown qubit measurements from finitely many uses")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Monte-Carlo sample count (each verb has its own default).
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Solver tolerance on relative residuals and gap.
    #[arg(long, global = true, default_value_t = DEFAULT_EPS)]
    pub eps: f64,
    #[arg(long, global = true, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    /// Write the artifact here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Add exact rational values where a closed form exists.
    #[arg(long, global = true)]
    pub exact: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Average fidelity per scheme and N.
    Table {
        #[arg(long, default_value_t = 5)]
        max_n: usize,
        #[arg(long, value_delimiter = ',', default_values = ["pgls", "dpbt", "ppbt"])]
        schemes: Vec<SchemeId>,
        /// Solve tester programs beyond N = 3.
        #[arg(long)]
        allow_large: bool,
    },
    /// Run the invariant suite; exits 1 on any failure.
    Verify {
        #[arg(long, default_value_t = 8)]
        max_n: usize,
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Log-log slopes of 1 − F and the underlying points.
    Asymptotics {
        #[arg(long, value_delimiter = ',', default_values = ["dpbt", "pgls", "ppbt"])]
        scheme: Vec<SchemeId>,
        #[arg(long, default_value_t = 64)]
        from: usize,
        #[arg(long, default_value_t = 1024)]
        to: usize,
    },
    /// Exact Haar-averaged objective against Monte-Carlo.
    TwirlCheck {
        #[arg(long, default_value_t = 2)]
        n: usize,
    },
    /// Solve the optimal tester program.
    Sdp {
        #[arg(long)]
        kind: TesterKind,
        #[arg(long)]
        n: usize,
        /// Write the tester operators as JSON.
        #[arg(long)]
        dump_vars: Option<PathBuf>,
        #[arg(long)]
        allow_large: bool,
    },
    #[command(subcommand)]
    Pgls(PglsCommand),
    #[command(subcommand)]
    Pbt(PbtCommand),
}

#[derive(Subcommand, Debug)]
enum PglsCommand {
    /// Closed-form average fidelity.
    Avg {
        #[arg(long)]
        n: usize,
    },
    /// Simulated runs against Haar-random measurements.
    Simulate {
        #[arg(long)]
        n: usize,
    },
    /// Exact lemma checks and effect validation.
    Verify {
        #[arg(long, default_value_t = 12)]
        max_n: usize,
    },
}

#[derive(Subcommand, Debug)]
enum PbtCommand {
    Dpbt {
        #[arg(long)]
        n: usize,
    },
    Ppbt {
        #[arg(long)]
        n: usize,
    },
}

/// How a successful run ended.
#[derive(Debug, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    CheckFailed,
    NotConverged,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_USAGE: u8 = 3;

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let c = cli.common;
    match cli.command {
        Command::Table { max_n, schemes, allow_large } => commands::table(&c, max_n, &schemes, allow_large),
        Command::Verify { max_n, inject_fault } => commands::verify(&c, max_n, inject_fault),
        Command::Asymptotics { scheme, from, to } => commands::asymptotics(&c, &scheme, from, to),
        Command::TwirlCheck { n } => commands::twirl_check(&c, n),
        Command::Sdp { kind, n, dump_vars, allow_large } => commands::sdp(&c, kind, n, dump_vars, allow_large),
        Command::Pgls(PglsCommand::Avg { n }) => commands::pgls_avg(&c, n),
        Command::Pgls(PglsCommand::Simulate { n }) => commands::pgls_simulate(&c, n),
        Command::Pgls(PglsCommand::Verify { max_n }) => commands::pgls_verify(&c, max_n),
        Command::Pbt(PbtCommand::Dpbt { n }) => commands::pbt(&c, SchemeId::Dpbt, n),
        Command::Pbt(PbtCommand::Ppbt { n }) => commands::pbt(&c, SchemeId::Ppbt, n),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(EXIT_CHECK_FAILED),
        Ok(Outcome::NotConverged) => ExitCode::from(EXIT_NOT_CONVERGED),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<vnlearn::Error>(),
                Some(vnlearn::Error::InvalidArgument(_) | vnlearn::Error::DimensionMismatch(_))
            );
            ExitCode::from(if usage { EXIT_USAGE } else { EXIT_CHECK_FAILED })
        }
    }
}
