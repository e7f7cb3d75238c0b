//! Command-line front end.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{ConfigError, Error};
use crate::scenario::{builtin, load_scenario, run_campaign, BUILTINS};

#[derive(Debug, Parser)]
#[command(name = "backhaul-sim", version, about = "GEO satellite LTE backhaul simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario campaign and write records.csv and summary.csv.
    Run {
        /// Builtin name (`builtin:A` or `A`) or path to a JSON scenario.
        #[arg(long)]
        scenario: String,
        /// Override the CRA, in kbps.
        #[arg(long)]
        cra: Option<u64>,
        /// Override the RBDC ceiling, in kbps.
        #[arg(long)]
        rbdc: Option<u64>,
        #[arg(long, value_enum)]
        pep: Option<OnOff>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        reps: Option<u32>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// List builtin scenarios.
    ListScenarios,
    /// Parse and validate a scenario file.
    Validate { path: String },
    /// Print a builtin scenario as JSON.
    Export {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            scenario,
            cra,
            rbdc,
            pep,
            seed,
            reps,
            out,
            parallel,
        } => {
            let mut spec = load_scenario(&scenario)?;
            if cra.is_some() || rbdc.is_some() {
                let c = cra.map_or(spec.cra_bps, |k| k * 1000);
                let r = rbdc.map_or(spec.rbdc_max_bps, |k| k * 1000);
                spec = spec.with_access(c, r);
            }
            if let Some(p) = pep {
                spec = spec.with_pep(p == OnOff::On);
            }
            if let Some(s) = seed {
                spec.seed = s;
            }
            if let Some(r) = reps {
                spec.repetitions = r;
            }
            let threads = parallel
                .or_else(|| std::thread::available_parallelism().ok().map(|n| n.get()))
                .unwrap_or(1);
            let result = run_campaign(&spec, threads, Some(&out))?;
            for run in &result.runs {
                if !run.audit.all_ok() {
                    eprintln!("warning: {}: {:?}", run.run_id, run.audit.violations);
                }
            }
            println!(
                "{} runs, {} records, {} summary rows -> {}",
                result.runs.len(),
                result.records.len(),
                result.summary.len(),
                out.display()
            );
            Ok(())
        }
        Command::ListScenarios => {
            for (name, about) in BUILTINS {
                println!("{name}  {about}");
            }
            Ok(())
        }
        Command::Validate { path } => {
            let spec = load_scenario(&path)?;
            println!(
                "{}: ok ({} cells x {} repetitions)",
                spec.scenario_id,
                spec.cells().len(),
                spec.repetitions
            );
            Ok(())
        }
        Command::Export { name, out } => {
            let key = name.strip_prefix("builtin:").unwrap_or(&name);
            let spec = builtin(key)
                .ok_or_else(|| ConfigError::invalid("scenario", format!("unknown builtin `{key}`")))?;
            let json = spec.to_json();
            match out {
                Some(path) => std::fs::write(&path, json + "\n").map_err(|source| Error::Io { path, source }),
                None => {
                    // A closed pipe (`export A | head`) is not an error.
                    let _ = writeln!(std::io::stdout(), "{json}");
                    Ok(())
                }
            }
        }
    }
}
