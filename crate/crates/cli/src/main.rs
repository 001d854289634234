use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use twoscale::{ExperimentReport, Harness, Stage};

/// Two-scale homogenization experiments for partially degenerating systems.
#[derive(Debug, Parser)]
#[command(name = "twoscale", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for caches, CSV tables and the report.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Without a subcommand: run this stage alone. With `run`: stop after it.
    #[arg(long, global = true)]
    stage: Option<String>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Seed for the randomized projection checks.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check symmetry, nonnegativity and strong ellipticity of the coefficients.
    Validate,
    /// Cell kernel, spectral gap and key constant.
    Kernel,
    /// Elementary correctors (needs the kernel cache).
    Correctors,
    /// Limit problem and effective tensor (needs kernel and corrector caches).
    Homogenize,
    /// Fine-scale solves over the epsilon list (needs all earlier caches).
    Sweep,
    /// Verdicts from cached artifacts.
    Compare,
    /// Full pipeline.
    Run,
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_verdicts(report: &ExperimentReport, harness: &Harness) {
    for v in &report.verdicts {
        println!(
            "{} {}/{}: {:.6e} {} {:.6e}",
            if v.pass { "pass" } else { "FAIL" },
            v.stage,
            v.name,
            v.value,
            v.relation,
            v.threshold
        );
    }
    if let Some(f) = &report.failure {
        println!("stage {} failed: {}", f.stage, f.message);
    }
    println!(
        "report: {}",
        harness
            .out_dir()
            .join(twoscale::harness::REPORT_FILE)
            .display()
    );
}

/// Runs one stage on its own; `Ok(false)` means a check failed.
fn run_single(harness: &Harness, stage: Stage) -> anyhow::Result<bool> {
    match stage {
        Stage::Validate => {
            let reports = harness.validate()?;
            print_json(&reports)?;
            Ok(reports.iter().all(|r| r.pass))
        }
        Stage::Kernel => {
            print_json(&harness.kernel()?.summary)?;
            Ok(true)
        }
        Stage::Correctors => {
            print_json(&harness.correctors()?.1)?;
            Ok(true)
        }
        Stage::Homogenize => {
            print_json(&harness.homogenize()?.summary)?;
            Ok(true)
        }
        Stage::Sweep => {
            let sweep = harness.sweep()?;
            print_json(&sweep.rows)?;
            Ok(true)
        }
        Stage::Compare => {
            let report = harness.compare()?;
            print_verdicts(&report, harness);
            Ok(report.passed)
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    if let Some(k) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let config = cli
        .config
        .as_ref()
        .ok_or_else(|| anyhow!("--config <path> is required"))?;
    let stage = cli.stage.as_deref().map(str::parse::<Stage>).transpose()?;
    let harness = Harness::from_path(config, &cli.out, cli.seed)?;
    let single = match cli.command {
        Some(Command::Validate) => Some(Stage::Validate),
        Some(Command::Kernel) => Some(Stage::Kernel),
        Some(Command::Correctors) => Some(Stage::Correctors),
        Some(Command::Homogenize) => Some(Stage::Homogenize),
        Some(Command::Sweep) => Some(Stage::Sweep),
        Some(Command::Compare) => Some(Stage::Compare),
        Some(Command::Run) => None,
        None => Some(stage.ok_or_else(|| anyhow!("give a subcommand or --stage <name>"))?),
    };
    match single {
        Some(s) => run_single(&harness, s),
        None => {
            let report = harness.run_through(stage.unwrap_or(Stage::Compare))?;
            print_verdicts(&report, &harness);
            Ok(report.passed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
