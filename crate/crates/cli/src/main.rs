use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use climb3d::splits::SplitKind;
use climb3d_cli::output::RunDir;
use climb3d_cli::{cmd_eval, cmd_gen, cmd_run, cmd_splits, RunConfig};

/// Class-incremental instance segmentation experiments on synthetic scenes.
#[derive(Parser)]
#[command(name = "climb3d", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every phase of a configured scenario and write reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the generator, scenario and training seeds.
        #[arg(long)]
        seed: Option<u64>,
        /// Replace a non-empty output directory.
        #[arg(long)]
        overwrite: bool,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        /// Also report mIoU of the semantic projection.
        #[arg(long)]
        miou: bool,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build an incremental scenario plan.
    Splits {
        /// Catalog JSON; the default 12-class benchmark when omitted.
        #[arg(long)]
        catalog: Option<PathBuf>,
        /// frequency, semantic or random (also a, b, c).
        #[arg(long, default_value = "frequency")]
        kind: SplitKind,
        #[arg(long, default_value_t = 3)]
        num_phases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the training and evaluation datasets of a config.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        overwrite: bool,
    },
    /// Print the default benchmark configuration.
    DefaultConfig {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Enable the naive, +ER, +PLG, +CBR ablation stack.
        #[arg(long)]
        ablation: bool,
    },
}

fn load_config(path: &std::path::Path, seed: Option<u64>) -> Result<RunConfig> {
    let config = RunConfig::load(path)?;
    Ok(match seed {
        Some(s) => config.with_seed(s),
        None => config,
    })
}

fn emit(value: &impl serde::Serialize, out: Option<&PathBuf>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out, seed, overwrite } => {
            let config = load_config(&config, seed)?;
            let out = out
                .or_else(|| config.output_dir.clone())
                .context("no output directory: pass --out or set output_dir")?;
            let outcome = cmd_run(&config, &out, overwrite)?;
            print!("{}", outcome.summary.to_markdown());
            log::info!("wrote {}", outcome.out_dir.display());
        }
        Command::Eval { checkpoint, dataset, plan, miou, out } => {
            let report = cmd_eval(&checkpoint, &dataset, &plan, miou)?;
            emit(&report, out.as_ref())?;
        }
        Command::Splits { catalog, kind, num_phases, seed, out } => {
            let plan = cmd_splits(catalog.as_deref(), kind, num_phases, seed)?;
            emit(&plan, out.as_ref())?;
        }
        Command::Gen { config, out, seed, overwrite } => {
            let config = load_config(&config, seed)?;
            let (train, eval) = cmd_gen(&config)?;
            let dir = RunDir::create(&out, overwrite)?;
            dir.write_json("train.json", &train)?;
            dir.write_json("eval.json", &eval)?;
        }
        Command::DefaultConfig { seed, ablation } => {
            let mut config = RunConfig::default_benchmark(seed);
            config.ablation = ablation;
            emit(&config, None)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CLIMB_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
