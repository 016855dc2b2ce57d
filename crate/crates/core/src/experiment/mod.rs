//! Config-driven experiment commands and their on-disk layout.
//!
//! ```text
//! out/
//!   manifest.json
//!   checkpoints/  trained and finetuned denoisers
//!   tables/       lookup, baseline, frontier, benchmark and finetune CSVs
//!   profiles/     loss traces, similarity and spectrum profiles
//!   reports/      JSON summaries and per-row sweep results
//! ```

mod commands;
mod config;
mod sweep;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use commands::{
    cmd_allocate, cmd_analyze, cmd_benchmark, cmd_finetune_interval, cmd_train, interval_bounds, AllocatedRow,
    AllocationResult, AnalyzeMode, AnalyzeOptions, AnalyzeReport, BenchmarkReport, BenchmarkRow, FinetuneReport,
    FinetuneRow, IntervalBound, SimilarityRun, SpectrumRun, TrainReport, TrainedModel, TrajectoryDump, VARIANTS,
};
pub use config::{
    AnalysisSpec, BenchmarkSpec, ExperimentConfig, FinetuneSpec, RosterSpec, SweepSpec, SCHEMA_VERSION,
};
pub use sweep::{cmd_sweep, BaselineSummary, RowKind, RowResult, SweepOptions, SweepReport, SweepSummary};

use crate::data::Dataset;
use crate::denoiser::{checkpoint, degrade_oracle_with_scale, Denoiser};
use crate::error::{Error, Result};
use crate::metrics::{moment_errors, sliced_wasserstein, MetricKind};
use crate::sampler::{sample_assignment, SamplerConfig};
use crate::stitch::StepAssignment;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn tables(&self) -> PathBuf {
        self.root.join("tables")
    }

    pub fn profiles(&self) -> PathBuf {
        self.root.join("profiles")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn checkpoint(&self, id: &str) -> PathBuf {
        self.checkpoints().join(format!("{id}.tstd"))
    }

    pub fn create(&self) -> Result<()> {
        for dir in [self.checkpoints(), self.tables(), self.profiles(), self.reports()] {
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub crate_version: String,
    pub checkpoint_format: u32,
    pub artifacts: Vec<String>,
}

/// Writes `manifest.json`, merging artifact lists of earlier commands run
/// against the same config.
pub fn write_manifest(layout: &OutputLayout, cfg: &ExperimentConfig, command: &str, artifacts: &[PathBuf]) -> Result<()> {
    let path = layout.root.join("manifest.json");
    let mut listed: Vec<String> = artifacts
        .iter()
        .map(|p| p.strip_prefix(&layout.root).unwrap_or(p).to_string_lossy().replace('\\', "/"))
        .collect();
    if let Ok(text) = std::fs::read_to_string(&path) {
        if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
            if old.config_hash == cfg.hash() {
                listed.extend(old.artifacts);
            }
        }
    }
    listed.sort();
    listed.dedup();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        command: command.to_string(),
        config_hash: cfg.hash(),
        seeds: cfg.seeds.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        checkpoint_format: checkpoint::FORMAT_VERSION,
        artifacts: listed,
    };
    write_json(&path, &manifest)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Write-then-rename so an interrupted run never leaves a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Instantiates the roster in config order.
pub fn build_roster(cfg: &ExperimentConfig, dataset: &Dataset, layout: &OutputLayout) -> Result<Vec<Denoiser>> {
    let oracle_for = |id: &str, cost: Option<f64>, macs: usize| -> Result<Denoiser> {
        let gmm = dataset
            .gmm()
            .ok_or_else(|| Error::UnsupportedData(format!("oracle `{id}` needs a mixture dataset")))?;
        let mut d = Denoiser::gmm_oracle(id, gmm.clone())?.with_emulated_macs(macs);
        if let Some(labels) = dataset.labels() {
            d = d.with_labels(labels)?;
        }
        match cost {
            Some(c) => d.with_cost(c),
            None => Ok(d),
        }
    };
    let with_cost = |d: Denoiser, cost: Option<f64>| match cost {
        Some(c) => d.with_cost(c),
        None => Ok(d),
    };
    cfg.roster
        .iter()
        .map(|spec| match spec {
            RosterSpec::Oracle {
                id,
                cost,
                emulated_macs,
            } => oracle_for(id, *cost, *emulated_macs),
            RosterSpec::Degraded {
                id,
                of,
                level,
                mode,
                blur_scale,
                cost,
            } => {
                let base = cfg
                    .roster
                    .iter()
                    .find_map(|r| match r {
                        RosterSpec::Oracle {
                            id,
                            cost,
                            emulated_macs,
                        } if id == of => Some(oracle_for(id, *cost, *emulated_macs)),
                        _ => None,
                    })
                    .ok_or_else(|| Error::Config(format!("`{id}` degrades `{of}`, which is not an oracle entry")))??;
                let d = degrade_oracle_with_scale(&base, *level, *mode, *blur_scale)?.with_id(id.clone());
                with_cost(d, *cost)
            }
            RosterSpec::Train { id, cost, .. } => {
                let path = layout.checkpoint(id);
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "checkpoint {} for `{id}` is missing; run `train` first",
                        path.display()
                    )));
                }
                let (d, _) = checkpoint::load(&path)?;
                with_cost(d.with_id(id.clone()), *cost)
            }
            RosterSpec::Load { id, path, cost } => {
                if !path.exists() {
                    return Err(Error::Config(format!("checkpoint {} for `{id}` does not exist", path.display())));
                }
                let (d, _) = checkpoint::load(path)?;
                with_cost(d.with_id(id.clone()), *cost)
            }
        })
        .collect::<Result<Vec<_>>>()
        .and_then(|roster| {
            for d in &roster {
                if d.dim() != dataset_dim(dataset) {
                    return Err(Error::shape(&[dataset_dim(dataset)], &[d.dim()]));
                }
            }
            Ok(roster)
        })
}

fn dataset_dim(dataset: &Dataset) -> usize {
    dataset.sample_shape().iter().product()
}

/// Metric values of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedQuality {
    pub seed: u64,
    pub values: BTreeMap<MetricKind, f64>,
}

/// Reference draws for quality seed `seed` come from the dataset's own
/// stream, so every schedule is compared against the same samples.
pub(crate) fn reference_samples(dataset: &Dataset, n: usize, seed: u64) -> Vec<f64> {
    dataset.draw(n, seed)
}

pub(crate) fn score_samples(
    samples: &[f64],
    dataset: &Dataset,
    metrics: &[MetricKind],
    projections: usize,
    seed: u64,
) -> Result<BTreeMap<MetricKind, f64>> {
    let dim = dataset_dim(dataset);
    let mut values = BTreeMap::new();
    for m in metrics {
        let v = match m {
            MetricKind::SlicedWasserstein => {
                let reference = reference_samples(dataset, samples.len() / dim, seed);
                sliced_wasserstein(samples, &reference, dim, projections, seed)?.value
            }
            MetricKind::MeanError | MetricKind::CovarianceError => {
                let gmm = dataset
                    .gmm()
                    .ok_or_else(|| Error::UnsupportedData(format!("{} needs a mixture dataset", m.name())))?;
                let (mean, cov) = moment_errors(samples, gmm)?;
                if *m == MetricKind::MeanError {
                    mean.value
                } else {
                    cov.value
                }
            }
        };
        values.insert(*m, v);
    }
    Ok(values)
}

pub(crate) struct SeedRun {
    pub quality: SeedQuality,
    pub evals: BTreeMap<String, u64>,
    pub seconds: f64,
}

/// Samples `assignment` with sampling seed `seed` and scores the result.
#[allow(clippy::too_many_arguments)]
pub(crate) fn measure_seed(
    assignment: &StepAssignment,
    roster: &[Denoiser],
    sampler: &SamplerConfig,
    dataset: &Dataset,
    chains: usize,
    seed: u64,
    metrics: &[MetricKind],
    projections: usize,
) -> Result<SeedRun> {
    let start = std::time::Instant::now();
    let out = sample_assignment(assignment, roster, sampler, dataset.sample_shape(), chains, seed)?;
    let seconds = start.elapsed().as_secs_f64();
    let values = score_samples(out.samples.data(), dataset, metrics, projections, seed)?;
    Ok(SeedRun {
        quality: SeedQuality { seed, values },
        evals: out.ledger.evals,
        seconds,
    })
}

/// Sizes the global worker pool; only the first call takes effect.
pub fn set_global_workers(n: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

/// Mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
