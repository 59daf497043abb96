//! Command-line front end of the `phi4` experiment harness.

use clap::{Parser, Subcommand};
use phi4::harness::{self, ExperimentConfig, HarnessError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "phi4", version, about = "Renormalisation constants, enhanced noise and remainder solves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, global = true, env = "PHI4_THREADS")]
    threads: Option<usize>,
    /// Comma-separated eps list overriding the configuration.
    #[arg(long, global = true)]
    eps: Option<String>,
}

#[derive(Subcommand, Debug, Clone, PartialEq)]
enum Command {
    /// Renormalisation constants over the eps list.
    Constants,
    /// Monte Carlo moment audit of the enhanced noise.
    Moments,
    /// Remainder solves with snapshots.
    Solve,
    /// Matched-seed solves against the limit and their distances.
    Converge,
    /// Checks a configuration or a finished run.
    Validate {
        /// Re-run the persisted configuration and compare every file byte for byte.
        #[arg(long)]
        regenerate: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Constants => "constants",
            Command::Moments => "moments",
            Command::Solve => "solve",
            Command::Converge => "converge",
            Command::Validate { .. } => "validate",
        }
    }
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let path = cli.config.as_ref().ok_or_else(|| HarnessError::Usage("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(e) = &cli.eps {
        cfg.eps = harness::parse_eps_list(e)?;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<String, HarnessError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Usage(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Validate { regenerate } => match (&cli.out, &cli.config) {
            (Some(dir), _) if dir.join(harness::MANIFEST).exists() => {
                let m = harness::cmd_validate(dir, *regenerate)?;
                Ok(format!("{} files verified for `{}` (config {})", m.files.len(), m.command, m.config_hash))
            }
            (_, Some(_)) => {
                let cfg = load(cli)?;
                cfg.validate()?;
                Ok(format!("configuration {} is valid", cfg.hash()))
            }
            _ => Err(HarnessError::Usage("validate needs --config or a run directory in --out".into())),
        },
        cmd => {
            let cfg = load(cli)?;
            let name = cmd.name();
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("{}-{}", name, cfg.hash())));
            let (m, verdict, reused) = harness::run_into(&dir, name, &cfg)?;
            if let Some(err) = verdict {
                return Err(err);
            }
            let how = if reused { "verified existing run in" } else { "wrote" };
            Ok(format!("{how} {} ({} files, config {})", dir.display(), m.files.len(), m.config_hash))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: reason={} {e}", e.reason());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
