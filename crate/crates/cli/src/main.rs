use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scil_core::experiment::{default_config, diff_streams, run_experiment, DiffReport, ExperimentConfig, DATASETS};
use scil_core::streams::{raw_items, write_csv, DriftSchedule};
use scil_core::{Error, Result};

#[derive(Parser)]
#[command(name = "scil", version, about = "Streaming class-incremental learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of an experiment config and write its outputs.
    Run {
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Disable interval retraining.
        #[arg(long)]
        baseline: bool,
    },
    /// Export a synthetic stream to CSV.
    Generate {
        /// blob, sea or vib.
        #[arg(long, default_value = "blob")]
        dataset: String,
        /// Take the stream section from an experiment config instead.
        #[arg(long, conflicts_with = "dataset")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        length: Option<usize>,
        #[arg(long)]
        imbalance_rate: Option<f64>,
        /// TOML file with `[[events]]` tables.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Compare two stream CSVs; exits 1 if they differ.
    Diff { a: PathBuf, b: PathBuf },
    /// Print the default config for a dataset.
    PrintDefaultConfig {
        #[arg(default_value = "blob")]
        dataset: String,
    },
}

fn dataset_config(name: &str) -> Result<ExperimentConfig> {
    default_config(name)
        .ok_or_else(|| Error::Config(format!("unknown dataset {name:?}; known: {}", DATASETS.join(", "))))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            runs,
            base_seed,
            jobs,
            out,
            baseline,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(s) = base_seed {
                cfg.base_seed = s;
            }
            if let Some(j) = jobs {
                cfg.jobs = j;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if baseline {
                cfg.engine.incremental_enabled = false;
            }
            let (summary, _) = run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Generate {
            dataset,
            config,
            seed,
            length,
            imbalance_rate,
            schedule,
            out,
        } => {
            let mut spec = match config {
                Some(p) => ExperimentConfig::load(&p)?.stream,
                None => dataset_config(&dataset)?.stream,
            };
            if let Some(l) = length {
                spec.length = l;
            }
            if let Some(r) = imbalance_rate {
                spec.imbalance_rate = r;
            }
            if let Some(p) = schedule {
                spec.schedule = DriftSchedule::from_toml(&std::fs::read_to_string(p)?)?;
            }
            let items = raw_items(&spec, seed)?;
            write_csv(BufWriter::new(File::create(&out)?), &items)?;
            log::info!("wrote {} instances to {}", items.len(), out.display());
        }
        Command::Diff { a, b } => {
            let report = diff_streams(&a, &b)?;
            println!("{report}");
            if report != DiffReport::Identical {
                return Ok(ExitCode::from(1));
            }
        }
        Command::PrintDefaultConfig { dataset } => {
            print!("{}", dataset_config(&dataset)?.to_toml()?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
