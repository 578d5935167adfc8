use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dppdc_cli::commands::{execute, plan, Command};
use dppdc_cli::config::LoadedConfig;
use dppdc_cli::output::{Prepared, RunDir, RunKey};
use dppdc_cli::CliError;

/// Phase matching, mode clusters, Gaussian dynamics and far-field simulation
/// for parametric down-conversion with two non-collinear pumps.
#[derive(Parser)]
#[command(name = "dppdc", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample the phase-matching surfaces of both pumps.
    Surface(Common),
    /// Solve shared/coupled mode clusters.
    Modes {
        #[command(flatten)]
        common: Common,
        /// Add the resonance rotation angles β_res.
        #[arg(long)]
        resonance: bool,
    },
    /// Squeeze eigenvalue sweep over ρ and witness variances along z.
    Dynamics(Common),
    /// Split-step far-field simulation.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Fit hot-spot and background growth exponents.
        #[arg(long)]
        gain_report: bool,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Base output directory (overrides output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, common) = match cli.command {
        Sub::Surface(c) => (Command::Surface, c),
        Sub::Modes { common, resonance } => (Command::Modes { resonance }, common),
        Sub::Dynamics(c) => (Command::Dynamics, c),
        Sub::Simulate { common, gain_report } => (Command::Simulate { gain_report }, common),
    };
    match run(cmd, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("DPPDC_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| CliError::Config {
        line: None,
        message: format!("DPPDC_THREADS must be a positive integer, got {v:?}"),
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config {
            line: None,
            message: format!("cannot size the thread pool: {e}"),
        })
}

fn run(cmd: Command, common: &Common) -> Result<(), CliError> {
    init_threads()?;
    let cfg = LoadedConfig::from_path(&common.config).map_err(|e| match e {
        CliError::Config { line, message } => CliError::Config {
            line,
            message: format!("{}: {message}", common.config.display()),
        },
        other => other,
    })?;
    let job = plan(cmd, &cfg)?;
    let key = RunKey {
        command: cmd.name().into(),
        flags: cmd.flags(),
        rng_seed: common.seed,
        config: cfg.canonical(),
    };
    let base = common.out.clone().unwrap_or_else(|| cfg.config.output.dir.clone());
    let mut dir = match RunDir::prepare(&base, key, &common.config)? {
        Prepared::Existing(path) => {
            println!("{} (already computed, left unchanged)", path.display());
            return Ok(());
        }
        Prepared::Fresh(dir) => dir,
    };
    match execute(job, common.seed, &mut dir) {
        Ok(summary) => {
            dir.notes = serde_json::json!({ "summary": summary });
            let path = dir.commit()?;
            println!("{}: {summary}", path.display());
            Ok(())
        }
        Err(e) => {
            dir.abandon();
            Err(e)
        }
    }
}
