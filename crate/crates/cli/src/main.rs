use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use tstitch_core::experiment::{
    cmd_allocate, cmd_analyze, cmd_benchmark, cmd_finetune_interval, cmd_sweep, cmd_train, AnalyzeMode,
    AnalyzeOptions, ExperimentConfig, OutputLayout, SweepOptions, TrajectoryDump,
};
use tstitch_core::Error;

#[derive(Parser, Debug)]
#[command(name = "tstitch", version, about = "Trajectory-stitching experiments on toy diffusion models")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Replace the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sampling and sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Mode {
    Similarity,
    Spectrum,
    All,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Dump {
    Csv,
    Binary,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train every `train` roster entry and write checkpoints.
    Train,
    /// Measure all stitch schedules and baselines into the lookup table.
    Sweep {
        /// Stop after this many new rows (rerun to resume).
        #[arg(long)]
        max_rows: Option<usize>,
    },
    /// Pick the best schedule within a compute budget.
    Allocate {
        /// Total declared cost allowed per sample.
        #[arg(long)]
        budget: f64,
        /// Lookup table; defaults to `<out>/tables/lookup.csv`.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Write similarity and spectrum profiles along sampling trajectories.
    Analyze {
        #[arg(long, value_enum, default_value_t = Mode::All)]
        mode: Mode,
        /// Also dump the recorded trajectories.
        #[arg(long, value_enum)]
        dump: Option<Dump>,
    },
    /// Finetune stitched members on their own noise interval and compare.
    FinetuneInterval {
        /// Schedule literal such as `small:0.4,large:0.6`.
        #[arg(long)]
        schedule: Option<String>,
    },
    /// Time every schedule on a pinned worker pool.
    Benchmark,
}

/// Failures the user can fix by changing the invocation or config.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NoFeasibleSchedule { .. } => 3,
                Error::Config(_)
                | Error::UnsupportedData(_)
                | Error::InvalidSchedule(_)
                | Error::Json(_)
                | Error::UnknownDenoiser(_)
                | Error::UnknownCondition(_) => 2,
                _ => 4,
            };
        }
    }
    4
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Usage("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)
        .map_err(|e| Usage(format!("cannot load config {}: {e}", path.display())))?;
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    Ok(cfg)
}

fn layout(cli: &Cli, cfg: Option<&ExperimentConfig>) -> OutputLayout {
    let root = cli
        .out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    OutputLayout::new(root)
}

fn emit(format: Format, value: serde_json::Value, rows: Vec<Vec<String>>) -> Result<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&value)?),
        Format::Csv => {
            for r in rows {
                println!("{}", r.join(","));
            }
        }
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        rayon_pool(n)?;
    }
    match &cli.command {
        Command::Train => {
            let cfg = load_config(cli)?;
            let report = cmd_train(&cfg, &layout(cli, Some(&cfg))).context("training failed")?;
            let mut rows = vec![vec!["id".into(), "checkpoint".into(), "final_loss".into()]];
            rows.extend(
                report
                    .models
                    .iter()
                    .map(|m| vec![m.id.clone(), m.checkpoint.clone(), m.final_smoothed_loss.to_string()]),
            );
            emit(cli.format, serde_json::to_value(&report)?, rows)
        }
        Command::Sweep { max_rows } => {
            let cfg = load_config(cli)?;
            let opts = SweepOptions {
                max_rows: *max_rows,
                workers: cli.workers,
            };
            let report = cmd_sweep(&cfg, &layout(cli, Some(&cfg)), &opts).context("sweep failed")?;
            log::info!(
                "{} rows measured now, table complete: {}",
                report.computed,
                report.complete
            );
            let mut rows = vec![vec!["schedule".into(), "total_cost".into(), "quality".into(), "quality_se".into()]];
            for r in report.rows.iter().chain(&report.baselines) {
                rows.push(vec![r.label.clone(), r.total_cost.to_string(), opt(r.quality), opt(r.quality_se)]);
            }
            emit(cli.format, serde_json::to_value(&report.summary)?, rows)
        }
        Command::Allocate { budget, table } => {
            let cfg = match &cli.config {
                Some(_) => Some(load_config(cli)?),
                None => None,
            };
            let path = table
                .clone()
                .unwrap_or_else(|| layout(cli, cfg.as_ref()).tables().join("lookup.csv"));
            if !path.exists() {
                return Err(Usage(format!("lookup table {} does not exist; run `sweep` first", path.display())).into());
            }
            let result = cmd_allocate(&path, *budget)?;
            let mut rows = vec![vec!["rank".into(), "schedule".into(), "total_cost".into(), "quality".into()]];
            for (i, r) in result.feasible.iter().enumerate() {
                rows.push(vec![i.to_string(), r.schedule.clone(), r.total_cost.to_string(), opt(r.quality)]);
            }
            if let Some(c) = &result.chosen {
                eprintln!("chosen: {}", c.schedule);
            }
            emit(cli.format, serde_json::to_value(&result)?, rows)
        }
        Command::Analyze { mode, dump } => {
            let cfg = load_config(cli)?;
            let opts = AnalyzeOptions {
                mode: match mode {
                    Mode::Similarity => AnalyzeMode::Similarity,
                    Mode::Spectrum => AnalyzeMode::Spectrum,
                    Mode::All => AnalyzeMode::All,
                },
                dump: dump.map(|d| match d {
                    Dump::Csv => TrajectoryDump::Csv,
                    Dump::Binary => TrajectoryDump::Binary,
                }),
                seed: cli.seed,
            };
            let report = cmd_analyze(&cfg, &layout(cli, Some(&cfg)), &opts)?;
            let mut rows = vec![vec!["profile".into(), "path".into()]];
            rows.extend(report.similarity.iter().map(|s| vec![format!("similarity {}/{}", s.pair.0, s.pair.1), s.path.clone()]));
            rows.extend(report.spectrum.iter().map(|s| vec![format!("spectrum {}", s.id), s.path.clone()]));
            emit(cli.format, serde_json::to_value(&report)?, rows)
        }
        Command::FinetuneInterval { schedule } => {
            let cfg = load_config(cli)?;
            let report = cmd_finetune_interval(&cfg, &layout(cli, Some(&cfg)), schedule.as_deref())
                .context("interval finetuning failed")?;
            let mut rows = vec![vec!["variant".into(), "mean".into(), "se".into()]];
            for (v, (m, se)) in &report.summary {
                rows.push(vec![v.clone(), m.to_string(), se.to_string()]);
            }
            emit(cli.format, serde_json::to_value(&report)?, rows)
        }
        Command::Benchmark => {
            let cfg = load_config(cli)?;
            let report = cmd_benchmark(&cfg, &layout(cli, Some(&cfg)), cli.workers)?;
            let mut rows = vec![vec!["schedule".into(), "declared_cost".into(), "wall_clock_s".into()]];
            for r in &report.rows {
                rows.push(vec![r.schedule.clone(), r.cost.declared_cost.to_string(), r.cost.wall_clock_s.to_string()]);
            }
            emit(cli.format, serde_json::to_value(&report)?, rows)
        }
    }
}

fn rayon_pool(n: usize) -> Result<()> {
    tstitch_core::experiment::set_global_workers(n).map_err(|e| anyhow!(e))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
