use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use diswic::cli;
use diswic::trainer::{TrainConfig, CONFIG_KEYS};

#[derive(Parser)]
#[command(
    name = "diswic",
    version,
    about = "Rank word-in-context pairs by predicted annotator disagreement"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build mean pairwise disagreement labels from instances and judgments.
    ComputeLabels {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        judgments: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the regression network; writes checkpoints, manifest and history.
    #[command(after_help = config_help())]
    Train {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// key=value configuration file (`#` comments allowed)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Override one configuration key, e.g. --set epochs=5 (repeatable)
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Predict disagreement scores with a trained checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions with Spearman's rho per language, pooled (ALL) and averaged (AVG).
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_help() -> String {
    let defaults = TrainConfig::default().to_manifest();
    let mut out = String::from("Configuration keys (defaults):\n");
    for (key, doc) in CONFIG_KEYS {
        let value = defaults.get(key).unwrap_or("");
        out.push_str(&format!("  {key:<20} {value:<24} {doc}\n"));
    }
    out.push_str(&format!(
        "\nFixed: init={}, weight decay on dense weights only, block order dense,batchnorm,relu,dropout",
        defaults.get("init").unwrap_or("")
    ));
    out
}

fn run(args: Args) -> anyhow::Result<()> {
    match args.command {
        Command::ComputeLabels {
            instances,
            judgments,
            out,
        } => {
            let counts = cli::compute_labels(&instances, &judgments, &out)?;
            println!("labeled\t{}\nskipped\t{}", counts.labeled, counts.skipped);
        }
        Command::Train {
            labels,
            embeddings,
            config,
            out_dir,
            overrides,
        } => {
            let config = cli::resolve_config(config.as_deref(), &overrides)?;
            eprint!("resolved configuration:\n{}", config.to_manifest().to_text());
            let run = cli::train(&labels, &embeddings, &config, &out_dir)
                .with_context(|| format!("training into {}", out_dir.display()))?;
            let best = &run.history[run.best_epoch - 1];
            println!(
                "epochs\t{}\nbest_epoch\t{}\nbest_val_loss\t{:.6}",
                run.history.len(),
                run.best_epoch,
                best.val_loss
            );
        }
        Command::Predict {
            checkpoint,
            instances,
            embeddings,
            out,
        } => {
            let n = cli::predict(&checkpoint, &instances, &embeddings, &out)?;
            println!("predictions\t{n}");
        }
        Command::Evaluate {
            predictions,
            labels,
            instances,
            out,
        } => {
            let report = cli::evaluate(&predictions, &labels, &instances, &out)?;
            print!("{}", diswic::metrics::format_report(&report));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
