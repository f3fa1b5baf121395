//! Command-line front end; `main` only forwards `std::env::args` here.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::experiments::{resume, run_experiment, RunOptions};
use crate::output::OutputDir;
use crate::validate::{run_validation, Fault, DEFAULT_VALIDATION_CONFIG};
use crate::AppError;

#[derive(Debug, Parser)]
#[command(name = "ymlattice", version, about = "Lattice Yang-Mills experiments and validation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FaultArg {
    SkipReunitarization,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the invariant suite; exits 1 if any check fails.
    Validate {
        /// Configuration whose seed and hash go into the report.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the experiment named in a configuration file.
    Run {
        config: PathBuf,
        /// Override `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override `threads`.
        #[arg(long)]
        threads: Option<usize>,
        /// Override `output_dir`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// `sample` only: stop after this many sweeps and checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Continue a `sample` run from its checkpoint.
    Resume {
        checkpoint: PathBuf,
        /// Refuse to resume unless this configuration matches the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        stop_after: Option<u64>,
    },
}

pub fn execute(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Validate {
            config,
            inject_fault,
            json,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::load(&p)?,
                None => RunConfig::from_toml(DEFAULT_VALIDATION_CONFIG)?,
            };
            let fault = inject_fault.map(|f| match f {
                FaultArg::SkipReunitarization => Fault::SkipReunitarization,
            });
            let report = run_validation(&cfg, fault)?;
            print!("{}", report.render());
            if let Some(p) = json {
                let mut text = serde_json::to_string_pretty(&report)?;
                text.push('\n');
                std::fs::write(p, text)?;
            }
            if report.passed {
                Ok(())
            } else {
                let ids: Vec<&str> = report.failed().iter().map(|c| c.id.as_str()).collect();
                Err(AppError::CheckFailure(ids.join(", ")))
            }
        }
        Command::Run {
            config,
            seed,
            threads,
            output_dir,
            stop_after,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(t) = threads {
                cfg.threads = t;
            }
            if let Some(o) = output_dir {
                cfg.output_dir = o;
            }
            cfg.validate()?;
            let out = OutputDir::create(&cfg.resolved_output_dir())?;
            run_experiment(&cfg, &out, RunOptions { stop_after })?;
            println!("{} written to {}", cfg.experiment.name.as_str(), out.root().display());
            Ok(())
        }
        Command::Resume {
            checkpoint,
            config,
            stop_after,
        } => {
            let cfg = config.map(|p| RunConfig::load(&p)).transpose()?;
            let r = resume(&checkpoint, cfg.as_ref(), RunOptions { stop_after })?;
            println!("resumed to sweep {} of {}", r.sweeps_done, r.target_sweeps);
            Ok(())
        }
    }
}

/// Parses arguments, runs, prints errors and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
