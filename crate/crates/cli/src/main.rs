use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sem_cli::commands::convergence::{run_convergence, Reference, Study, Sweep};
use sem_cli::commands::pod::{run_pod, PodOptions, DEFAULT_PAIR_TOL};
use sem_cli::commands::{run, stats};
use sem_cli::config::RunConfig;
use sem_cli::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "semk",
    version,
    about = "Spectral element Navier-Stokes solver with POD analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// March a configured case and write probes, snapshots and a summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Snapshot POD with optional regional clipping.
    Pod {
        #[arg(long)]
        snapshots: String,
        /// Clip box `box:x0,x1,y0,y1[,z0,z1]`; repeat for a union.
        #[arg(long)]
        clip: Vec<String>,
        #[arg(long, default_value_t = 4)]
        modes: usize,
        #[arg(long = "pair-tol", default_value_t = DEFAULT_PAIR_TOL)]
        pair_tol: f64,
        /// Subtract the snapshot average first.
        #[arg(long = "remove-mean")]
        remove_mean: bool,
        /// Run config of the producing run; required for graded meshes.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "pod")]
        out: PathBuf,
    },
    /// Moments and autocorrelation of one CSV column.
    Stats {
        /// CSV file with a header row.
        input: PathBuf,
        #[arg(long)]
        column: String,
        #[arg(long = "max-lag")]
        max_lag: usize,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Error sweep over N or dt against an analytic solution.
    Convergence {
        #[arg(long)]
        config: Option<PathBuf>,
        /// taylor_green, kovasznay or diffusion with built-in defaults; takes
        /// precedence over --config.
        #[arg(long)]
        case: Option<String>,
        /// `N=4:2:12` or `dt=1e-2/2^0..4`.
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value = "convergence")]
        out: PathBuf,
    },
}

fn execute(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Run { config, out } => run::run_path(&config, out.as_deref()).map(|_| ()),
        Command::Pod {
            snapshots,
            clip,
            modes,
            pair_tol,
            remove_mean,
            config,
            out,
        } => run_pod(&PodOptions {
            snapshots,
            clips: clip,
            modes,
            pair_tol,
            remove_mean,
            config,
            out,
        })
        .map(|_| ()),
        Command::Stats {
            input,
            column,
            max_lag,
            out,
        } => stats::run_stats(&input, &column, max_lag, &out).map(|_| ()),
        Command::Convergence {
            config,
            case,
            sweep,
            out,
        } => {
            let sweep = Sweep::parse(&sweep)?;
            let study = match (config, case) {
                (_, Some(name)) => Study::defaults(Reference::parse(&name)?),
                (Some(path), None) => Study::from_config(&RunConfig::load(&path)?)?,
                (None, None) => {
                    return Err(CliError::Usage(
                        "convergence needs --config or --case".into(),
                    ))
                }
            };
            run_convergence(&study, &sweep, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("semk: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
