use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use rgbir::commands::{
    cmd_bench, cmd_eval, cmd_overlay, cmd_simgen, cmd_stylize, cmd_train, exit_code, format_latency, Component, EvalFlags, Subset,
    TrainOptions, UsageError,
};
use rgbir::config::{MaskSource, PipelineConfig};
use rgbir_core::eval::{render_report, Split};

#[derive(Parser)]
#[command(name = "rgbir", version, about = "Paired RGB/IR synthesis, detection, fusion and evaluation")]
struct Cli {
    /// Pipeline configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output location (dataset directory, checkpoint file or report directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a simulated paired dataset.
    Simgen {
        #[arg(long)]
        scenes: usize,
    },
    /// Replace IR frames with translator output and enhance heat signatures.
    Stylize {
        /// Dataset whose RGB frames and labels are kept.
        #[arg(long)]
        data: PathBuf,
        /// IR style set used to train a translator when no checkpoint is given.
        #[arg(long)]
        ir_style: Option<PathBuf>,
        /// Trained translator checkpoint.
        #[arg(long)]
        translator: Option<PathBuf>,
        /// Overrides the configured mask source.
        #[arg(long, value_enum)]
        masks: Option<MaskSource>,
        /// Skip heat-signature enhancement.
        #[arg(long)]
        no_enhance: bool,
    },
    /// Train one pipeline component.
    Train {
        #[arg(value_enum)]
        component: Component,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        /// Directory holding the standard checkpoint files.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// IR style set for translator training.
        #[arg(long)]
        ir_style: Option<PathBuf>,
    },
    /// Evaluate trained checkpoints and write the report.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Subset::All)]
        subset: Subset,
        /// Comma-separated subset of day,night,all.
        #[arg(long, value_delimiter = ',')]
        splits: Vec<Split>,
        /// Leave the Oracle column out of the report.
        #[arg(long)]
        oracle_off: bool,
        /// Use the RGB detector on channel-replicated IR frames as the IR column.
        #[arg(long)]
        grayscale_ir: bool,
    },
    /// Draw detection files onto dataset frames.
    Overlay {
        #[arg(long)]
        data: PathBuf,
        /// Directory with `rgb/<id>.txt` and `ir/<id>.txt` detection files.
        #[arg(long)]
        detections: PathBuf,
    },
    /// Time the fusion path per pair.
    Bench {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Use at most this many pairs.
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
}

fn required_out(out: &Option<PathBuf>) -> Result<PathBuf> {
    out.clone()
        .ok_or_else(|| UsageError("--out is required for this command".into()).into())
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    match cli.command {
        Command::Simgen { scenes } => {
            let out = required_out(&cli.out)?;
            let m = cmd_simgen(&config, scenes, &out)?;
            println!("{} pairs written to {}", m.entries.len(), out.display());
        }
        Command::Stylize {
            data,
            ir_style,
            translator,
            masks,
            no_enhance,
        } => {
            let out = required_out(&cli.out)?;
            if let Some(m) = masks {
                config.stylize.masks = m;
            }
            if no_enhance {
                config.stylize.enhance.enabled = false;
            }
            let s = cmd_stylize(&config, &data, ir_style.as_deref(), translator.as_deref(), &out)?;
            println!(
                "{} stylized pairs written to {}, {} skipped",
                s.pairs.len(),
                out.display(),
                s.skipped.len()
            );
        }
        Command::Train {
            component,
            data,
            subset,
            checkpoints,
            resume,
            ir_style,
        } => {
            let checkpoints = checkpoints.unwrap_or_else(|| config.checkpoints.clone());
            let opts = TrainOptions {
                dataset: &data,
                subset,
                checkpoints: &checkpoints,
                out: cli.out.as_deref(),
                resume: resume.as_deref(),
                ir_style: ir_style.as_deref(),
            };
            let path = cmd_train(&config, component, &opts)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Eval {
            data,
            checkpoints,
            subset,
            splits,
            oracle_off,
            grayscale_ir,
        } => {
            let out = required_out(&cli.out)?;
            let checkpoints = checkpoints.unwrap_or_else(|| config.checkpoints.clone());
            let flags = EvalFlags {
                subset,
                splits,
                oracle_off,
                grayscale_ir,
            };
            let report = cmd_eval(&config, &data, &checkpoints, &flags, &out)?;
            print!("{}", render_report(&report));
        }
        Command::Overlay { data, detections } => {
            let out = required_out(&cli.out)?;
            let n = cmd_overlay(&data, &detections, &out)?;
            println!("{n} overlays written to {}", out.display());
        }
        Command::Bench {
            data,
            checkpoints,
            pairs,
            warmup,
        } => {
            let out = required_out(&cli.out)?;
            let checkpoints = checkpoints.unwrap_or_else(|| config.checkpoints.clone());
            if let Some(w) = warmup {
                config.eval.warmup = w;
            }
            let stats = cmd_bench(&config, &checkpoints, &data, pairs, &out).context("benchmark")?;
            print!("{}", format_latency(&stats));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
