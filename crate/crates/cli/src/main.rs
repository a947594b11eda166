//! `rlft`: reward-learning fine-tuning experiments from the command line.
//!
//! Four subcommands — `synth`, `train`, `eval`, `oracle-check` — each driven
//! by a JSON config. Every run is reproducible: config plus seed determine
//! all output bytes, with wall-clock isolated in `timing.log`.
//!
//! Exit codes: 0 success, 2 configuration or validation error, 3 numerical
//! divergence during training, 4 oracle check failure.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rlft_core::{CoreError, Result};

#[derive(Parser)]
#[command(
    name = "rlft",
    version,
    about = "Reward-learning fine-tuning: synthesize ground-truth worlds, train, evaluate, verify"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Construct a ground-truth world and sample datasets from it.
    Synth(CommonArgs),
    /// Train a policy or reward on a demonstration file.
    Train(CommonArgs),
    /// Compute evaluation metrics over checkpoints and datasets.
    Eval(CommonArgs),
    /// Run the exact verification battery; nonzero exit on any failure.
    OracleCheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Print only errors and failed checks.
    #[arg(long)]
    quiet: bool,
}

impl CommonArgs {
    fn config_text(&self) -> Result<String> {
        std::fs::read_to_string(&self.config).map_err(|e| {
            CoreError::validation(format!("reading {}: {e}", self.config.display()))
        })
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(match e {
            CoreError::Divergence { .. } => 3,
            CoreError::OracleFailure(_) => 4,
            _ => 2,
        });
    }
}

fn run(cli: Cli) -> Result<()> {
    let wall_start = SystemTime::now();
    let clock = Instant::now();
    let (args, summary, out_dir) = match &cli.command {
        Command::Synth(args) => {
            let config: config::SynthConfig = config::parse_config(&args.config_text()?, "synth")?;
            let out = require_out_dir(args, config.out_dir.as_deref())?;
            let summary = commands::cmd_synth(&config, &out, args.seed, args.quiet)?;
            (args, summary, Some(out))
        }
        Command::Train(args) => {
            let config: config::TrainConfig = config::parse_config(&args.config_text()?, "train")?;
            let out = require_out_dir(args, config.out_dir.as_deref())?;
            let summary = commands::cmd_train(&config, &out, args.seed, args.quiet)?;
            (args, summary, Some(out))
        }
        Command::Eval(args) => {
            let config: config::EvalConfig = config::parse_config(&args.config_text()?, "eval")?;
            let out = require_out_dir(args, config.out_dir.as_deref())?;
            let summary = commands::cmd_eval(&config, &out, args.seed, args.quiet)?;
            (args, summary, Some(out))
        }
        Command::OracleCheck(args) => {
            let config: config::OracleCheckConfig =
                config::parse_config(&args.config_text()?, "oracle-check")?;
            let out = optional_out_dir(args, config.out_dir.as_deref())?;
            // Failures must still leave their summary behind; write the
            // timing log before propagating the verdict.
            let result = commands::cmd_oracle_check(&config, out.as_deref(), args.seed, args.quiet);
            if let Some(dir) = &out {
                write_timing(dir, wall_start, clock)?;
            }
            let summary = result?;
            finish(args, &summary, out.as_deref())?;
            return Ok(());
        }
    };
    if let Some(dir) = &out_dir {
        write_timing(dir, wall_start, clock)?;
    }
    finish(args, &summary, out_dir.as_deref())?;
    Ok(())
}

fn finish(args: &CommonArgs, summary: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    if let Some(dir) = out {
        let text = serde_json::to_string_pretty(summary)
            .map_err(|e| CoreError::validation(format!("serializing summary: {e}")))?;
        std::fs::write(dir.join("summary.json"), text + "\n")?;
    }
    if !args.quiet {
        println!("{summary}");
    }
    Ok(())
}

fn require_out_dir(args: &CommonArgs, from_config: Option<&Path>) -> Result<PathBuf> {
    optional_out_dir(args, from_config)?.ok_or_else(|| {
        CoreError::validation("no output directory: pass --out or set out_dir in the config")
    })
}

fn optional_out_dir(args: &CommonArgs, from_config: Option<&Path>) -> Result<Option<PathBuf>> {
    let dir = args
        .out
        .clone()
        .or_else(|| from_config.map(Path::to_path_buf));
    if let Some(dir) = &dir {
        std::fs::create_dir_all(dir)?;
    }
    Ok(dir)
}

/// The one file that may differ between identical runs.
fn write_timing(dir: &Path, wall_start: SystemTime, clock: Instant) -> Result<()> {
    let started_ms = wall_start
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let elapsed_ms = clock.elapsed().as_secs_f64() * 1e3;
    std::fs::write(
        dir.join("timing.log"),
        format!("started_unix_ms={started_ms}\nelapsed_ms={elapsed_ms}\n"),
    )?;
    Ok(())
}
