//! Command-line front end: config schema, artifact writers and the four
//! subcommands. The binary is a thin wrapper around [`run`].

mod checks;
mod config;
mod metrics;
mod model_io;

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use checks::{grad_check_suite, GradCheckResult, GRAD_TOL};
pub use config::{ConstraintsSection, DatasetSection, ExperimentConfig, OutputSection, TrainingSection};
pub use metrics::{format_row, MetricsWriter, METRICS_HEADER};
pub use model_io::{decode_model, encode_model, load_model, save_model, MODEL_FORMAT_VERSION, MODEL_MAGIC};

use crate::constraints::CoordGrid;
use crate::error::{Error, Result};
use crate::segbench::{generate_dataset, load_dataset, run_seed, PreparedSplit, RunSummary};
use crate::verify::{run_suite, SuiteConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Caps the worker count of parallel sections.
pub const THREADS_ENV: &str = "BARRIER_EXT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "barrier-ext", version, about = "Log-barrier-extension training and duality-gap certification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// Experiment config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory: the dataset for `gen-data`, the run for `train`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the seed of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic two-circles dataset.
    GenData,
    /// Train one model and write metrics, weights and a summary.
    Train,
    /// Certify duality gaps on random convex QPs; one JSON line per certificate.
    Verify(VerifyArgs),
    /// Finite-difference check of every differentiable component.
    GradCheck,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    /// Barrier hardness values.
    #[arg(long = "t", num_args = 1.., default_values_t = vec![5.0, 50.0, 500.0])]
    pub ts: Vec<f64>,
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Absolute tolerance of every assertion.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    if let Err(e) = configure_threads() {
        let _ = writeln!(stderr, "error: {e}");
        return EXIT_CONFIG;
    }
    let result = match &cli.command {
        Command::GenData => cmd_gen_data(&cli.global, stdout),
        Command::Train => cmd_train(&cli.global, stdout),
        Command::Verify(args) => cmd_verify(&cli.global, args, stdout),
        Command::GradCheck => cmd_grad_check(&cli.global, stdout),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidSpec(_) => EXIT_CONFIG,
        Error::Certification(_) => EXIT_VERIFY,
        _ => EXIT_RUNTIME,
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    match &global.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn cmd_gen_data(global: &GlobalArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(global)?;
    if let Some(seed) = global.seed {
        cfg.dataset.synth.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.dataset.dir = out.clone();
    }
    let manifest = generate_dataset(&cfg.dataset.synth, &cfg.dataset.dir)?;
    writeln!(stdout, "{}", manifest.display())?;
    Ok(EXIT_OK)
}

pub fn cmd_train(global: &GlobalArgs, stdout: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(global)?;
    if let Some(seed) = global.seed {
        cfg.optimizer.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()?;
    let data = load_dataset(&cfg.dataset.dir)?;
    let first = data.train.first().ok_or_else(|| Error::Config("the training split is empty".into()))?;
    let grid = CoordGrid::new(first.width, first.height)?;
    let setting = cfg.constraints.setting;
    let train_split = PreparedSplit::new(&data.train, &grid, setting, &cfg.constraints.bounds)?;
    let val_split = PreparedSplit::new(&data.val, &grid, setting, &cfg.constraints.bounds)?;

    let out = &cfg.output.dir;
    std::fs::create_dir_all(out)?;
    write_json(&out.join("config.resolved.json"), &cfg)?;
    let mut metrics = MetricsWriter::create(&out.join("metrics.csv"), cfg.output.wall_clock)?;
    let result = run_seed(
        &grid,
        &train_split,
        &val_split,
        setting,
        cfg.model,
        &cfg.method,
        &cfg.loop_config(),
        cfg.optimizer.seed,
        &mut |r| metrics.write(r),
    )?;
    save_model(&result.model, &out.join("final_model.bin"))?;
    write_json(&out.join("summary.json"), &result.summary)?;
    report_summary(&result.summary, stdout)?;
    Ok(EXIT_OK)
}

fn report_summary(s: &RunSummary, stdout: &mut dyn Write) -> Result<()> {
    writeln!(
        stdout,
        "{} / {}: final val Dice {:.4}, best {:.4}, stability std {:.4}, satisfaction {:.2}",
        s.setting.name(),
        s.method,
        s.final_val_dice,
        s.best_val_dice,
        s.stability_std,
        s.satisfaction_rate
    )?;
    Ok(())
}

pub fn cmd_verify(global: &GlobalArgs, args: &VerifyArgs, stdout: &mut dyn Write) -> Result<i32> {
    if args.ts.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return Err(Error::Config(format!("t values must be positive, got {:?}", args.ts)));
    }
    if !(args.tol >= 0.0) {
        return Err(Error::Config(format!("tolerance must be nonnegative, got {}", args.tol)));
    }
    let cfg = SuiteConfig {
        instances: args.instances,
        ts: args.ts.clone(),
        seed: global.seed.unwrap_or(0),
        tol: args.tol,
        ..SuiteConfig::default()
    };
    let report = run_suite(&cfg);
    for cert in &report.certificates {
        writeln!(stdout, "{}", serde_json::to_string(cert)?)?;
    }
    for err in &report.errors {
        writeln!(stdout, "{}", serde_json::json!({ "error": err }))?;
    }
    Ok(if report.failures() == 0 { EXIT_OK } else { EXIT_VERIFY })
}

pub fn cmd_grad_check(global: &GlobalArgs, stdout: &mut dyn Write) -> Result<i32> {
    let results = grad_check_suite(global.seed.unwrap_or(0))?;
    for r in &results {
        let status = if r.passed { "ok" } else { "FAIL" };
        writeln!(stdout, "{:<36} {:.3e} {status}", r.component, r.max_rel_error)?;
    }
    Ok(if results.iter().all(|r| r.passed) { EXIT_OK } else { EXIT_VERIFY })
}
