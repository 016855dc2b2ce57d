use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_roster, mean_and_se, measure_seed, write_json, write_manifest, ExperimentConfig, OutputLayout, RosterSpec};
use crate::allocator::{build_lookup, schedule_cost, LookupRow, LookupTable, Orientation, RosterEntry};
use crate::analysis::spectrum::spectrum_profile;
use crate::analysis::{trajectory_similarity, SimilarityProfile, SpectrumProfile};
use crate::denoiser::train::{finetune_denoiser, smooth_trace, train_denoiser};
use crate::denoiser::{checkpoint, Denoiser, DenoiserKind, TrainingConfig};
use crate::error::{Error, Result};
use crate::metrics::{benchmark_schedules, CostReport};
use crate::sampler::{sample, save_trajectories, Trajectory};
use crate::schedule::NoiseSchedule;
use crate::stitch::{partition_steps, StitchSchedule};

fn rel(layout: &OutputLayout, p: &Path) -> String {
    p.strip_prefix(&layout.root).unwrap_or(p).to_string_lossy().into_owned()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(csv::Writer::from_path(path)?)
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub id: String,
    pub checkpoint: String,
    pub loss_trace: String,
    pub steps: usize,
    pub params: usize,
    pub final_loss: f64,
    /// Last value of the exponentially smoothed trace.
    pub final_smoothed_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub models: Vec<TrainedModel>,
}

const TRACE_SMOOTHING: f64 = 0.05;

/// Trains every `train` roster entry and writes its checkpoint and loss trace.
pub fn cmd_train(cfg: &ExperimentConfig, layout: &OutputLayout) -> Result<TrainReport> {
    layout.create()?;
    let dataset = cfg.dataset.build()?;
    let jobs: Vec<(&String, &TrainingConfig, Option<f64>, u64)> = cfg
        .roster
        .iter()
        .filter_map(|r| match r {
            RosterSpec::Train {
                id,
                training,
                cost,
                seed,
            } => Some((id, training, *cost, seed.unwrap_or(cfg.seeds[0]))),
            _ => None,
        })
        .collect();
    if jobs.is_empty() {
        return Err(Error::Config("the roster has no `train` entries".into()));
    }
    let models = jobs
        .par_iter()
        .map(|&(id, training, cost, seed)| -> Result<TrainedModel> {
            log::info!("training `{id}` for {} steps", training.steps);
            let trained = train_denoiser(id, &dataset, training, seed)?;
            let denoiser = match cost {
                Some(c) => trained.denoiser.with_cost(c)?,
                None => trained.denoiser,
            };
            let ckpt = layout.checkpoint(id);
            checkpoint::save(&ckpt, &denoiser, Some(training))?;
            let trace_path = layout.profiles().join(format!("{id}_loss.csv"));
            let smoothed = smooth_trace(&trained.trace, TRACE_SMOOTHING);
            let mut w = csv_writer(&trace_path)?;
            w.write_record(["step", "loss", "smoothed"])?;
            for (i, (l, s)) in trained.trace.iter().zip(&smoothed).enumerate() {
                w.write_record([i.to_string(), l.to_string(), s.to_string()])?;
            }
            w.flush().map_err(|e| Error::io(&trace_path, e))?;
            Ok(TrainedModel {
                id: id.clone(),
                checkpoint: rel(layout, &ckpt),
                loss_trace: rel(layout, &trace_path),
                steps: training.steps,
                params: denoiser.param_count(),
                final_loss: trained.trace.last().copied().unwrap_or(f64::NAN),
                final_smoothed_loss: smoothed.last().copied().unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = TrainReport { models };
    let path = layout.reports().join("train.json");
    write_json(&path, &report)?;
    let mut artifacts: Vec<PathBuf> = report
        .models
        .iter()
        .flat_map(|m| [layout.root.join(&m.checkpoint), layout.root.join(&m.loss_trace)])
        .collect();
    artifacts.push(path);
    write_manifest(layout, cfg, "train", &artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------- allocate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocatedRow {
    pub index: usize,
    pub schedule: String,
    pub total_cost: f64,
    pub quality: Option<f64>,
}

impl From<&LookupRow> for AllocatedRow {
    fn from(r: &LookupRow) -> Self {
        Self {
            index: r.index,
            schedule: r.schedule.literal(),
            total_cost: r.total_cost,
            quality: r.quality,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub budget: f64,
    /// Best feasible row; absent when the table has no measured quality.
    pub chosen: Option<AllocatedRow>,
    /// Feasible rows, best first.
    pub feasible: Vec<AllocatedRow>,
}

/// Answers a budget query against a saved lookup table.
pub fn cmd_allocate(table_path: &Path, budget: f64) -> Result<AllocationResult> {
    let table = LookupTable::load(table_path)?;
    let feasible: Vec<AllocatedRow> = table.query_budget(budget)?.into_iter().map(AllocatedRow::from).collect();
    let chosen = if table.is_complete() {
        Some(AllocatedRow::from(table.select_best(budget)?))
    } else {
        log::warn!("{} has rows without quality; listing feasible rows only", table_path.display());
        None
    };
    Ok(AllocationResult {
        budget,
        chosen,
        feasible,
    })
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnalyzeMode {
    Similarity,
    Spectrum,
    /// Both; spectra are skipped with a warning on point data.
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryDump {
    Csv,
    Binary,
}

#[derive(Debug, Clone, Default)]
pub struct AnalyzeOptions {
    pub mode: AnalyzeMode,
    pub dump: Option<TrajectoryDump>,
    /// Sampling seed; the first config seed when unset.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRun {
    pub pair: (String, String),
    pub path: String,
    /// Mean over the earliest 20% of sampling steps.
    pub early_mean: f64,
    /// Mean over the latest 20% of sampling steps.
    pub late_mean: f64,
    #[serde(skip)]
    pub profile: Option<SimilarityProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRun {
    pub id: String,
    pub path: String,
    pub max_parseval_error: f64,
    /// Progress of the lowest annulus at the middle step.
    pub low_progress_at_half: f64,
    /// Share of the highest annulus' rise made in the last 30% of steps.
    pub high_rise_in_last_30: f64,
    #[serde(skip)]
    pub profile: Option<SpectrumProfile>,
}

impl SpectrumRun {
    fn from_profile(id: &str, path: String, p: SpectrumProfile) -> Self {
        let rows = p.per_step.len() - 1;
        let low = p.rise_progress(0);
        let high = p.rise_progress(p.n_bins - 1);
        let late = (0.7 * rows as f64).round() as usize;
        Self {
            id: id.to_string(),
            path,
            max_parseval_error: p.max_parseval_error,
            low_progress_at_half: low[rows / 2],
            high_rise_in_last_30: 1.0 - high[late],
            profile: Some(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeReport {
    pub seed: u64,
    pub chains: usize,
    pub similarity: Vec<SimilarityRun>,
    pub spectrum: Vec<SpectrumRun>,
}

fn early_late(p: &SimilarityProfile) -> (f64, f64) {
    let n = p.per_step.len();
    let k = ((0.2 * n as f64).round() as usize).max(1);
    (p.mean_over(0, k), p.mean_over(n - k, n))
}

/// Runs recorded single-model trajectories and writes similarity and
/// spectrum profiles.
pub fn cmd_analyze(cfg: &ExperimentConfig, layout: &OutputLayout, opts: &AnalyzeOptions) -> Result<AnalyzeReport> {
    layout.create()?;
    let dataset = cfg.dataset.build()?;
    let roster = build_roster(cfg, &dataset, layout)?;
    let ids = cfg.roster_ids();
    let seed = opts.seed.unwrap_or(cfg.seeds[0]);
    let chains = cfg.analysis.chains;
    let want_similarity = opts.mode != AnalyzeMode::Spectrum;
    let mut want_spectrum = opts.mode != AnalyzeMode::Similarity;
    if want_spectrum && !dataset.is_grid() {
        if opts.mode == AnalyzeMode::Spectrum {
            return Err(Error::UnsupportedData(format!(
                "spectra need grid data, the dataset has sample shape {:?}",
                dataset.sample_shape()
            )));
        }
        log::warn!("skipping spectra: the dataset is not an image grid");
        want_spectrum = false;
    }

    let last = ids.last().expect("roster is not empty").clone();
    let pairs: Vec<(String, String)> = if want_similarity {
        cfg.analysis
            .pairs
            .clone()
            .unwrap_or_else(|| ids[..ids.len() - 1].iter().map(|a| (a.clone(), last.clone())).collect())
    } else {
        Vec::new()
    };
    let spectra: Vec<String> = if want_spectrum {
        cfg.analysis.spectrum_of.clone().unwrap_or_else(|| vec![last.clone()])
    } else {
        Vec::new()
    };
    let mut needed: Vec<&String> = pairs.iter().flat_map(|(a, b)| [a, b]).chain(&spectra).collect();
    needed.sort();
    needed.dedup();
    for id in &needed {
        if !ids.contains(id) {
            return Err(Error::UnknownDenoiser((*id).clone()));
        }
    }

    let sampler = cfg.sampler.clone().recording(true);
    let shape = dataset.sample_shape();
    let mut runs: BTreeMap<String, Vec<Trajectory>> = BTreeMap::new();
    for id in needed {
        let out = sample(&StitchSchedule::single(id)?, &roster, &sampler, shape, chains, seed)?;
        runs.insert(id.clone(), out.trajectories);
    }
    let mut artifacts = Vec::new();

    if let Some(dump) = opts.dump {
        for (id, trajs) in &runs {
            let (ext, binary) = match dump {
                TrajectoryDump::Csv => ("csv", false),
                TrajectoryDump::Binary => ("tstj", true),
            };
            let path = layout.profiles().join(format!("trajectories_{id}.{ext}"));
            save_trajectories(&path, trajs, shape, binary)?;
            artifacts.push(path);
        }
    }

    let mut similarity = Vec::new();
    for (a, b) in &pairs {
        let p = trajectory_similarity(&runs[a], &runs[b], (a, b), cfg.analysis.operand)?;
        let path = layout.profiles().join(format!("similarity_{a}_vs_{b}.csv"));
        p.write_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
        let (early_mean, late_mean) = early_late(&p);
        similarity.push(SimilarityRun {
            pair: (a.clone(), b.clone()),
            path: rel(layout, &path),
            early_mean,
            late_mean,
            profile: Some(p),
        });
        artifacts.push(path);
    }

    let mut spectrum = Vec::new();
    for id in &spectra {
        let p = spectrum_profile(&runs[id], shape, cfg.analysis.vp_scaled)?;
        let path = layout.profiles().join(format!("spectrum_{id}.csv"));
        p.write_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?)?;
        spectrum.push(SpectrumRun::from_profile(id, rel(layout, &path), p));
        artifacts.push(path);
    }

    let report = AnalyzeReport {
        seed,
        chains,
        similarity,
        spectrum,
    };
    let path = layout.reports().join("analyze.json");
    write_json(&path, &report)?;
    artifacts.push(path);
    write_manifest(layout, cfg, "analyze", &artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------- finetune

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBound {
    pub denoiser: String,
    /// Sampling steps `[start, end)`.
    pub start: usize,
    pub end: usize,
    /// Level of the first step, `sigma(T - start)`.
    pub sigma_hi: f64,
    /// Level of the last step, `sigma(T - end + 1)`.
    pub sigma_lo: f64,
}

/// Noise-level interval each segment of `schedule` serves.
pub fn interval_bounds(schedule: &StitchSchedule, noise: &NoiseSchedule) -> Result<Vec<IntervalBound>> {
    let t = noise.steps;
    partition_steps(schedule, t)?
        .ranges
        .iter()
        .map(|r| {
            Ok(IntervalBound {
                denoiser: r.denoiser.clone(),
                start: r.start,
                end: r.end,
                sigma_hi: noise.sigma_at(t - r.start)?,
                sigma_lo: noise.sigma_at(t - (r.end - 1))?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneRow {
    pub seed: u64,
    pub variant: String,
    pub quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub schedule: String,
    pub quality_metric: String,
    pub intervals: Vec<IntervalBound>,
    /// Roster members that were finetuned.
    pub finetuned: Vec<String>,
    pub rows: Vec<FinetuneRow>,
    /// Per variant: seed mean and standard error.
    pub summary: BTreeMap<String, (f64, f64)>,
    /// Seeds where the interval variant beat the pretrained one.
    pub interval_beats_pretrained: usize,
    /// Largest per-seed excess of the interval variant over the all-levels
    /// variant, in standard errors of the latter.
    pub max_excess_over_all_in_se: f64,
}

impl FinetuneReport {
    pub fn qualities(&self, variant: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.variant == variant).map(|r| r.quality).collect()
    }
}

pub const VARIANTS: [&str; 3] = ["pretrained", "ft-all", "ft-interval"];

fn base_training(cfg: &ExperimentConfig, id: &str) -> Result<TrainingConfig> {
    for r in &cfg.roster {
        match r {
            RosterSpec::Train { id: rid, training, .. } if rid == id => return Ok(training.clone()),
            RosterSpec::Load { id: rid, path, .. } if rid == id => {
                return Ok(checkpoint::load(path)?.1.unwrap_or_default());
            }
            _ => {}
        }
    }
    Ok(TrainingConfig::default())
}

/// Finetunes every non-first member of a stitched schedule, once on all
/// noise levels and once restricted to the levels it serves, and compares
/// the three variants on that schedule.
pub fn cmd_finetune_interval(
    cfg: &ExperimentConfig,
    layout: &OutputLayout,
    schedule: Option<&str>,
) -> Result<FinetuneReport> {
    layout.create()?;
    let spec = cfg
        .finetune
        .as_ref()
        .ok_or_else(|| Error::Config("config has no `finetune` section".into()))?;
    let literal = schedule
        .map(str::to_string)
        .or_else(|| spec.schedule.clone())
        .ok_or_else(|| Error::Config("no schedule given for finetuning".into()))?;
    let stitched: StitchSchedule = literal.parse()?;
    let dataset = cfg.dataset.build()?;
    let roster = build_roster(cfg, &dataset, layout)?;
    let intervals = interval_bounds(&stitched, &cfg.sampler.schedule)?;
    let assignment = partition_steps(&stitched, cfg.sampler.steps())?.assignment();

    let mut targets = Vec::new();
    for b in intervals.iter().skip(1) {
        let d = roster
            .iter()
            .find(|d| d.id() == b.denoiser)
            .ok_or_else(|| Error::UnknownDenoiser(b.denoiser.clone()))?;
        if d.kind() != DenoiserKind::Mlp {
            log::warn!("`{}` is not trainable; leaving it unchanged", d.id());
            continue;
        }
        let mut ft = base_training(cfg, d.id())?;
        ft.steps = spec.steps;
        if let Some(batch) = spec.batch {
            ft.batch = batch;
        }
        if let Some(lr) = spec.lr {
            ft.lr.base = lr;
        }
        ft.sigma_range = None;
        let mut restricted = ft.clone();
        restricted.sigma_range = Some([b.sigma_lo, b.sigma_hi]);
        targets.push((d.id().to_string(), ft, restricted));
    }
    if targets.is_empty() {
        return Err(Error::Config(format!("`{literal}` has no trainable member after the first segment")));
    }

    let metric = cfg.metrics[0];
    let per_seed: Vec<Vec<(FinetuneRow, Vec<PathBuf>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<(FinetuneRow, Vec<PathBuf>)>> {
            let mut out = Vec::new();
            for variant in VARIANTS {
                let mut variant_roster: Vec<Denoiser> = roster.clone();
                let mut saved = Vec::new();
                if variant != "pretrained" {
                    for (id, all, restricted) in &targets {
                        let ft_cfg = if variant == "ft-all" { all } else { restricted };
                        let slot = variant_roster.iter_mut().find(|d| d.id() == id).expect("target in roster");
                        let tuned = finetune_denoiser(slot, &dataset, ft_cfg, seed)?.denoiser;
                        let path = layout.checkpoint(&format!("{id}-{variant}-s{seed}"));
                        checkpoint::save(&path, &tuned, Some(ft_cfg))?;
                        saved.push(path);
                        *slot = tuned;
                    }
                }
                let run = measure_seed(
                    &assignment,
                    &variant_roster,
                    &cfg.sampler,
                    &dataset,
                    cfg.chains,
                    seed,
                    &[metric],
                    cfg.projections,
                )?;
                out.push((
                    FinetuneRow {
                        seed,
                        variant: variant.to_string(),
                        quality: run.quality.values[&metric],
                    },
                    saved,
                ));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    let mut artifacts = Vec::new();
    for (row, saved) in per_seed.into_iter().flatten() {
        rows.push(row);
        artifacts.extend(saved);
    }
    let q = |v: &str| -> Vec<f64> { rows.iter().filter(|r| r.variant == v).map(|r| r.quality).collect() };
    let (pre, all, int) = (q("pretrained"), q("ft-all"), q("ft-interval"));
    let summary: BTreeMap<String, (f64, f64)> = VARIANTS.iter().map(|v| (v.to_string(), mean_and_se(&q(v)))).collect();
    let se_all = summary["ft-all"].1;
    let wins = int.iter().zip(&pre).filter(|(i, p)| i < p).count();
    let excess = int
        .iter()
        .zip(&all)
        .map(|(i, a)| if se_all > 0.0 { (i - a) / se_all } else if i > a { f64::INFINITY } else { 0.0 })
        .fold(f64::NEG_INFINITY, f64::max);

    let path = layout.tables().join("finetune.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["seed", "variant", "quality", "quality_metric"])?;
    for r in &rows {
        w.write_record([r.seed.to_string(), r.variant.clone(), r.quality.to_string(), metric.name().to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    artifacts.push(path);

    let report = FinetuneReport {
        schedule: stitched.literal(),
        quality_metric: metric.name().to_string(),
        intervals,
        finetuned: targets.iter().map(|t| t.0.clone()).collect(),
        rows,
        summary,
        interval_beats_pretrained: wins,
        max_excess_over_all_in_se: excess,
    };
    let path = layout.reports().join("finetune.json");
    write_json(&path, &report)?;
    artifacts.push(path);
    write_manifest(layout, cfg, "finetune-interval", &artifacts)?;
    Ok(report)
}

// ---------------------------------------------------------------- benchmark

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub schedule: String,
    pub fractions: Vec<f64>,
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub workers: usize,
    pub repetitions: usize,
    pub n_chains: usize,
    /// For two-member rosters: whether the median wall clock strictly
    /// decreases as the first member's fraction grows.
    pub monotone_in_first: Option<bool>,
}

/// Times every grid (or listed) schedule on a pinned worker pool.
pub fn cmd_benchmark(cfg: &ExperimentConfig, layout: &OutputLayout, workers: Option<usize>) -> Result<BenchmarkReport> {
    layout.create()?;
    let dataset = cfg.dataset.build()?;
    let b = &cfg.benchmark;
    let roster: Vec<Denoiser> = build_roster(cfg, &dataset, layout)?
        .into_iter()
        .map(|d| match b.emulated_macs.get(d.id()) {
            Some(&m) => d.with_emulated_macs(m),
            None => d,
        })
        .collect();
    let workers = workers.unwrap_or(b.workers);
    let steps = cfg.sampler.steps();
    let mult = cfg.sampler.evals_per_step() as u32;
    let entries: Vec<RosterEntry> = roster.iter().map(|d| RosterEntry::new(d.id(), d.cost_per_eval())).collect();
    let mut table = build_lookup(&entries, cfg.sweep.granularity, steps, mult)?;
    table.quality_metric = cfg.metrics[0].name().to_string();
    table.orientation = Orientation::LowerBetter;
    if let Some(literals) = &cfg.sweep.schedules {
        let costs = table.costs();
        table.rows = literals
            .iter()
            .enumerate()
            .map(|(index, lit)| -> Result<LookupRow> {
                let s: StitchSchedule = lit.parse()?;
                // expressed over the full roster so the table columns line up
                let full = StitchSchedule::new(entries.iter().map(|e| (e.id.clone(), s.fraction_of(&e.id))).collect())?;
                if full.literal() != s.literal() {
                    return Err(Error::Config(format!(
                        "benchmark schedule `{lit}` must list every roster member in roster order"
                    )));
                }
                Ok(LookupRow {
                    index,
                    total_cost: schedule_cost(&full.fractions(), &costs, steps, mult),
                    schedule: full,
                    quality: None,
                    wall_clock_s: None,
                })
            })
            .collect::<Result<_>>()?;
    }
    let assignments = table
        .rows
        .iter()
        .map(|r| partition_steps(&r.schedule, steps).map(|p| p.assignment()))
        .collect::<Result<Vec<_>>>()?;
    let reports = benchmark_schedules(
        &assignments,
        &roster,
        &cfg.sampler,
        dataset.sample_shape(),
        b.chains,
        b.repetitions,
        workers,
        cfg.seeds[0],
    )?;
    let mut rows = Vec::new();
    for (row, cost) in table.rows.iter_mut().zip(reports) {
        log::info!("{}: {:.4} s", row.schedule.literal(), cost.wall_clock_s);
        row.wall_clock_s = Some(cost.wall_clock_s);
        rows.push(BenchmarkRow {
            schedule: row.schedule.literal(),
            fractions: row.schedule.fractions(),
            cost,
        });
    }
    let monotone_in_first = (roster.len() == 2).then(|| {
        let mut by_first: Vec<(f64, f64)> = rows.iter().map(|r| (r.fractions[0], r.cost.wall_clock_s)).collect();
        by_first.sort_by(|a, b| a.0.total_cmp(&b.0));
        by_first.windows(2).all(|w| w[1].1 < w[0].1)
    });
    let table_path = layout.tables().join("benchmark.csv");
    table.save(&table_path)?;
    let report = BenchmarkReport {
        rows,
        workers,
        repetitions: b.repetitions,
        n_chains: b.chains,
        monotone_in_first,
    };
    let path = layout.reports().join("benchmark.json");
    write_json(&path, &report)?;
    write_manifest(
        layout,
        cfg,
        "benchmark",
        &[table_path.clone(), crate::allocator::sidecar_path(&table_path), path],
    )?;
    Ok(report)
}
