//! `robult` command line: train, evaluate, ablate, and generate data.
//!
//! Exit codes separate failure families so scripts can react: 2 for
//! configuration and input problems, 3 for numeric breakdowns during
//! computation, 1 for plain I/O errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robult::config::RunConfig;
use robult::eval::MetricRow;
use robult::pipeline::{
    run_ablate, run_eval, run_gen_data, run_train, AblationVariant, EvalMask, ReportBundle,
};
use robult::{Result, RobultError};

/// Environment override for the run seed, taking precedence over `--seed`.
const SEED_ENV: &str = "RB_SEED";

#[derive(Parser)]
#[command(name = "robult", version, about = "Semi-supervised multimodal training pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write the report bundle.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset under modality masking.
    Eval(EvalArgs),
    /// Train a single-switch ablation of the configured run.
    Ablate(AblateArgs),
    /// Generate a synthetic dataset file.
    GenData(GenDataArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Configuration file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (RB_SEED wins over this flag).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for reports and the checkpoint.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint written by a training run.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset file to evaluate against.
    #[arg(long)]
    data: PathBuf,
    /// Masking: full, single:i, pair:i,j, random:p, or all (1-based).
    #[arg(long, default_value = "full")]
    mask: String,
    /// Seed for random masking (RB_SEED wins over this flag).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for the metrics report.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    /// Configuration file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Which switch to flip: drop_sup, drop_rec, drop_lb, drop_ulb,
    /// uniform_weights, drop_pseudo, or drop_unique.
    #[arg(long)]
    variant: String,
    /// Seed override (RB_SEED wins over this flag).
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for reports and the checkpoint.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// Configuration file; defaults apply for every omitted key.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Destination dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Seed override (RB_SEED wins over this flag).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(failure_code(&err))
        }
    }
}

fn failure_code(err: &RobultError) -> u8 {
    if err.is_numeric() {
        3
    } else if matches!(err, RobultError::Io(_)) {
        1
    } else {
        2
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => {
            let mut cfg = load_config(args.config.as_deref())?;
            apply_seed(&mut cfg, args.seed)?;
            let bundle = run_train(&cfg, &args.out_dir)?;
            print_bundle(&bundle);
            Ok(())
        }
        Command::Eval(args) => {
            let mask: EvalMask = args.mask.parse()?;
            let seed = resolve_seed(args.seed)?.unwrap_or(0);
            let (path, rows) = run_eval(&args.checkpoint, &args.data, mask, seed, &args.out_dir)?;
            for row in &rows {
                println!("{}", metric_line(row));
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Command::Ablate(args) => {
            let variant: AblationVariant = args.variant.parse()?;
            let mut cfg = load_config(args.config.as_deref())?;
            apply_seed(&mut cfg, args.seed)?;
            let bundle = run_ablate(&cfg, variant, &args.out_dir)?;
            println!("variant: {}", variant.name());
            print_bundle(&bundle);
            Ok(())
        }
        Command::GenData(args) => {
            let mut cfg = load_config(args.config.as_deref())?;
            apply_seed(&mut cfg, args.seed)?;
            let path = run_gen_data(&cfg, &args.out)?;
            println!(
                "wrote {} ({} samples, {} modalities)",
                path.display(),
                cfg.samples,
                cfg.raw_dims.len()
            );
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::parse(&fs::read_to_string(p)?),
        None => Ok(RunConfig::default()),
    }
}

/// Seed precedence: RB_SEED environment variable, then the flag, then
/// whatever the configuration file set.
fn apply_seed(cfg: &mut RunConfig, flag: Option<u64>) -> Result<()> {
    if let Some(seed) = resolve_seed(flag)? {
        cfg.seed = seed;
    }
    Ok(())
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(text) => {
            let seed = text.trim().parse().map_err(|_| {
                RobultError::Config(format!(
                    "{SEED_ENV} must be an unsigned integer, got \"{text}\""
                ))
            })?;
            Ok(Some(seed))
        }
        Err(_) => Ok(flag),
    }
}

fn print_bundle(bundle: &ReportBundle) {
    if let Some(last) = bundle.epoch_losses.last() {
        println!(
            "epochs: {} (final sup={:.4} rec={:.4} lb={:.4} ulb={:.4} total={:.4})",
            bundle.epoch_losses.len(),
            last.sup,
            last.rec,
            last.lb,
            last.ulb,
            last.total()
        );
    }
    for row in &bundle.metrics {
        println!("{}", metric_line(row));
    }
    println!("wrote {}", bundle.out_dir.display());
}

fn metric_line(row: &MetricRow) -> String {
    let mut parts = Vec::new();
    push_metric(&mut parts, "mae", row.mae);
    push_metric(&mut parts, "pearson_corr", row.pearson_corr);
    push_metric(&mut parts, "binary_acc", row.binary_acc);
    push_metric(&mut parts, "f1_binary", row.f1_binary);
    push_metric(&mut parts, "f1_macro", row.f1_macro);
    push_metric(&mut parts, "auroc", row.auroc);
    format!("{}: {}", row.tag, parts.join(" "))
}

fn push_metric(parts: &mut Vec<String>, name: &str, value: Option<f64>) {
    if let Some(v) = value {
        parts.push(format!("{name}={v:.4}"));
    }
}
