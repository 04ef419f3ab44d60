use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lobtrend_cli::commands::{cmd_eval, cmd_extract, cmd_label, cmd_report, cmd_run, cmd_synth, cmd_train};
use lobtrend_cli::{CliError, ExperimentConfig, Layout};

/// Mid-price trend prediction from limit order book data.
#[derive(Parser)]
#[command(name = "lobtrend", version)]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Require bit-reproducible execution.
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic days.
    Synth,
    /// Compute normalised features for every configured mode.
    Extract,
    /// Label every day for every horizon.
    Label,
    /// Train every (feature, model, horizon) cell.
    Train,
    /// Re-evaluate stored checkpoints on the test days.
    Eval,
    /// Write the results table, metrics and plot CSVs.
    Report,
    /// All of the above in order.
    Run,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = cli
        .config
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let out = cli.out.ok_or_else(|| CliError::Config("--out is required".into()))?;
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.strict |= cli.strict;
    cfg.validate()?;
    let layout = Layout::new(out);
    match cli.command {
        Command::Synth => {
            cmd_synth(&cfg, &layout)?;
        }
        Command::Extract => {
            cmd_extract(&cfg, &layout)?;
        }
        Command::Label => {
            for h in cmd_label(&cfg, &layout)? {
                let d = &h.train_distribution;
                println!(
                    "k={} alpha={:e} down={:.4} stationary={:.4} up={:.4}",
                    h.horizon, h.alpha, d.down, d.stationary, d.up
                );
            }
        }
        Command::Train => {
            cmd_train(&cfg, &layout)?;
        }
        Command::Eval => {
            for r in cmd_eval(&cfg, &layout)? {
                println!("{}", serde_json::to_string(&r).expect("record serialises"));
            }
        }
        Command::Report => print!("{}", cmd_report(&cfg, &layout)?),
        Command::Run => print!("{}", cmd_run(&cfg, &layout)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
