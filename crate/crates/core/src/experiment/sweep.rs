use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_roster, mean_and_se, measure_seed, write_json, write_manifest, ExperimentConfig, OutputLayout, SeedQuality};
use crate::allocator::{build_lookup, schedule_cost, LookupTable, Orientation, RosterEntry};
use crate::analysis::{pareto_frontier, write_pareto_csv, ParetoPoint};
use crate::data::Dataset;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::metrics::{declared_cost, MetricKind};
use crate::stitch::{baseline_schedule, partition_steps, BaselineKind, StepAssignment, StitchSchedule};

#[derive(Debug, Clone, Default)]
pub struct SweepOptions {
    /// Stop after computing this many new rows, as if interrupted.
    pub max_rows: Option<usize>,
    /// Rows measured concurrently; the global pool when unset.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Grid,
    Explicit,
    Baseline,
}

impl RowKind {
    fn tag(self) -> &'static str {
        match self {
            RowKind::Grid => "grid",
            RowKind::Explicit => "explicit",
            RowKind::Baseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowResult {
    pub kind: RowKind,
    pub index: usize,
    /// Schedule literal, or the baseline name.
    pub label: String,
    pub total_cost: f64,
    pub per_seed: Vec<SeedQuality>,
    /// Seed mean of the first configured metric.
    pub quality: Option<f64>,
    pub quality_se: Option<f64>,
    pub means: BTreeMap<MetricKind, f64>,
    pub wall_clock_s: Option<f64>,
    pub evals_by_denoiser: BTreeMap<String, u64>,
    pub error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CachedRow {
    config_hash: String,
    row: RowResult,
}

struct Job {
    kind: RowKind,
    index: usize,
    label: String,
    total_cost: f64,
    /// One assignment per seed, in seed order.
    assignments: Vec<StepAssignment>,
}

impl Job {
    fn cache_path(&self, layout: &OutputLayout) -> PathBuf {
        layout
            .reports()
            .join("rows")
            .join(format!("{}-{:05}.json", self.kind.tag(), self.index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub baseline: String,
    pub quality: Option<f64>,
    pub quality_se: Option<f64>,
    pub total_cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub table: String,
    pub quality_metric: String,
    pub rows: usize,
    pub completed: usize,
    pub errors: usize,
    pub frontier: Vec<ParetoPoint>,
    pub baselines: Vec<BaselineSummary>,
    /// Seeds in which small-to-large beat large-to-small, out of all seeds.
    pub small_to_large_wins: Option<(usize, usize)>,
    /// Baselines from best to worst mean quality.
    pub baseline_ordering: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub table_path: PathBuf,
    pub rows: Vec<RowResult>,
    pub baselines: Vec<RowResult>,
    pub summary: SweepSummary,
    /// Rows measured by this invocation (the rest came from the row cache).
    pub computed: usize,
    pub complete: bool,
}

impl SweepReport {
    pub fn row(&self, label: &str) -> Option<&RowResult> {
        self.rows.iter().chain(&self.baselines).find(|r| r.label == label)
    }
}

fn roster_entries(roster: &[Denoiser]) -> Vec<RosterEntry> {
    roster.iter().map(|d| RosterEntry::new(d.id(), d.cost_per_eval())).collect()
}

fn segment_costs(schedule: &StitchSchedule, roster: &[Denoiser]) -> Result<Vec<f64>> {
    schedule
        .segments()
        .iter()
        .map(|s| {
            roster
                .iter()
                .find(|d| d.id() == s.denoiser)
                .map(|d| d.cost_per_eval())
                .ok_or_else(|| Error::UnknownDenoiser(s.denoiser.clone()))
        })
        .collect()
}

/// Label of the small-first half/half schedule of a two-member roster.
fn small_to_large_label(ids: &[String]) -> String {
    format!("{}:0.5,{}:0.5", ids[0], ids[1])
}

fn plan_jobs(cfg: &ExperimentConfig, roster: &[Denoiser]) -> Result<(Option<LookupTable>, Vec<Job>)> {
    let steps = cfg.sampler.steps();
    let mult = cfg.sampler.evals_per_step() as u32;
    let seeds = cfg.seeds.len();
    let ids: Vec<String> = roster.iter().map(|d| d.id().to_string()).collect();
    let mut jobs = Vec::new();
    let mut table = None;
    match &cfg.sweep.schedules {
        None => {
            let mut t = build_lookup(&roster_entries(roster), cfg.sweep.granularity, steps, mult)?;
            t.quality_metric = cfg.metrics[0].name().to_string();
            t.orientation = Orientation::LowerBetter;
            for row in &t.rows {
                let a = partition_steps(&row.schedule, steps)?.assignment();
                jobs.push(Job {
                    kind: RowKind::Grid,
                    index: row.index,
                    label: row.schedule.literal(),
                    total_cost: row.total_cost,
                    assignments: vec![a; seeds],
                });
            }
            table = Some(t);
        }
        Some(literals) => {
            for (index, lit) in literals.iter().enumerate() {
                let s: StitchSchedule = lit.parse()?;
                let costs = segment_costs(&s, roster)?;
                let a = partition_steps(&s, steps)?.assignment();
                jobs.push(Job {
                    kind: RowKind::Explicit,
                    index,
                    label: s.literal(),
                    total_cost: schedule_cost(&s.fractions(), &costs, steps, mult),
                    assignments: vec![a; seeds],
                });
            }
        }
    }
    if cfg.sweep.baselines && roster.len() == 2 {
        let s2l = small_to_large_label(&ids);
        let mut kinds = vec![BaselineKind::LargeToSmall, BaselineKind::Interleave, BaselineKind::DecreasingProb];
        if !jobs.iter().any(|j| j.label == s2l) {
            kinds.insert(0, BaselineKind::SmallToLarge);
        }
        for (index, kind) in kinds.into_iter().enumerate() {
            let assignments = cfg
                .seeds
                .iter()
                .map(|&seed| baseline_schedule(kind, &ids[0], &ids[1], 0.5, steps, seed).map(|p| p.assignment))
                .collect::<Result<Vec<_>>>()?;
            let mut cost = 0.0;
            for a in &assignments {
                cost += declared_cost(a, roster, mult as u64)?;
            }
            jobs.push(Job {
                kind: RowKind::Baseline,
                index,
                label: kind.name().to_string(),
                total_cost: cost / assignments.len() as f64,
                assignments,
            });
        }
    } else if cfg.sweep.baselines {
        log::warn!("baselines need a two-member roster; skipping them");
    }
    Ok((table, jobs))
}

fn measure_job(job: &Job, cfg: &ExperimentConfig, roster: &[Denoiser], dataset: &Dataset) -> RowResult {
    let mut row = RowResult {
        kind: job.kind,
        index: job.index,
        label: job.label.clone(),
        total_cost: job.total_cost,
        per_seed: Vec::new(),
        quality: None,
        quality_se: None,
        means: BTreeMap::new(),
        wall_clock_s: None,
        evals_by_denoiser: BTreeMap::new(),
        error: None,
    };
    let mut seconds = 0.0;
    for (&seed, assignment) in cfg.seeds.iter().zip(&job.assignments) {
        match measure_seed(assignment, roster, &cfg.sampler, dataset, cfg.chains, seed, &cfg.metrics, cfg.projections) {
            Ok(run) => {
                seconds += run.seconds;
                for (k, v) in run.evals {
                    *row.evals_by_denoiser.entry(k).or_default() += v;
                }
                row.per_seed.push(run.quality);
            }
            Err(e) => {
                log::warn!("row `{}` failed: {e}", job.label);
                row.error = Some(e.to_string());
                row.per_seed.clear();
                return row;
            }
        }
    }
    for m in &cfg.metrics {
        let vals: Vec<f64> = row.per_seed.iter().map(|s| s.values[m]).collect();
        row.means.insert(*m, mean_and_se(&vals).0);
    }
    let first: Vec<f64> = row.per_seed.iter().map(|s| s.values[&cfg.metrics[0]]).collect();
    let (mean, se) = mean_and_se(&first);
    row.quality = Some(mean);
    row.quality_se = Some(se);
    if cfg.sweep.timing {
        row.wall_clock_s = Some(seconds / cfg.seeds.len() as f64);
    }
    row
}

fn load_cached(path: &Path, hash: &str, job: &Job) -> Option<RowResult> {
    let text = std::fs::read_to_string(path).ok()?;
    let cached: CachedRow = serde_json::from_str(&text).ok()?;
    (cached.config_hash == hash && cached.row.label == job.label && cached.row.error.is_none()).then_some(cached.row)
}

fn fill_table(table: &mut LookupTable, rows: &BTreeMap<(u8, usize), RowResult>) {
    for r in &mut table.rows {
        if let Some(res) = rows.get(&(0, r.index)) {
            r.quality = res.quality;
            r.wall_clock_s = res.wall_clock_s;
        }
    }
}

fn kind_key(kind: RowKind) -> u8 {
    match kind {
        RowKind::Grid | RowKind::Explicit => 0,
        RowKind::Baseline => 1,
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn write_rows_csv(path: &Path, rows: &[&RowResult], metric: &str, first_col: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([first_col, "total_cost", "quality", "quality_se", "quality_metric", "wall_clock_s"])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.total_cost.to_string(),
            opt(r.quality),
            opt(r.quality_se),
            if r.quality.is_some() { metric.to_string() } else { String::new() },
            opt(r.wall_clock_s),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Measures every enumerated (or listed) schedule and the enabled baselines,
/// then writes the lookup table, frontier and reports.
///
/// Finished rows are cached under `reports/rows/` together with the config
/// hash, so an interrupted sweep resumes where it stopped.
pub fn cmd_sweep(cfg: &ExperimentConfig, layout: &OutputLayout, opts: &SweepOptions) -> Result<SweepReport> {
    layout.create()?;
    let dataset = cfg.dataset.build()?;
    let roster = build_roster(cfg, &dataset, layout)?;
    let hash = cfg.hash();
    let (table, jobs) = plan_jobs(cfg, &roster)?;
    let metric = cfg.metrics[0].name();
    let table_path = layout
        .tables()
        .join(if table.is_some() { "lookup.csv" } else { "schedules.csv" });

    let mut done: BTreeMap<(u8, usize), RowResult> = BTreeMap::new();
    let mut pending = Vec::new();
    for job in &jobs {
        match load_cached(&job.cache_path(layout), &hash, job) {
            Some(row) => {
                done.insert((kind_key(job.kind), job.index), row);
            }
            None => pending.push(job),
        }
    }
    if let Some(max) = opts.max_rows {
        pending.truncate(max);
    }
    let computed = pending.len();
    log::info!("sweep: {} rows cached, {} to measure", done.len(), computed);

    let state = Mutex::new((done, table));
    let run = || -> Result<()> {
        pending.par_iter().try_for_each(|job| -> Result<()> {
            let row = measure_job(job, cfg, &roster, &dataset);
            if row.error.is_none() {
                let cached = CachedRow {
                    config_hash: hash.clone(),
                    row: row.clone(),
                };
                write_json(&job.cache_path(layout), &cached)?;
            }
            // single writer: the table on disk always reflects finished rows
            let mut guard = state.lock().expect("sweep state poisoned");
            let (done, table) = &mut *guard;
            done.insert((kind_key(job.kind), job.index), row);
            if let Some(t) = table.as_mut() {
                fill_table(t, done);
                t.save(&table_path)?;
            }
            Ok(())
        })
    };
    match opts.workers {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?
            .install(run)?,
        None => run()?,
    }
    let (done, table) = state.into_inner().expect("sweep state poisoned");

    let main: Vec<&RowResult> = done.range((0, 0)..(1, 0)).map(|(_, r)| r).collect();
    let baselines: Vec<&RowResult> = done.range((1, 0)..).map(|(_, r)| r).collect();
    let complete = done.len() == jobs.len() && done.values().all(|r| r.quality.is_some());
    let mut artifacts = vec![table_path.clone()];

    match table {
        Some(mut t) => {
            fill_table(&mut t, &done);
            t.save(&table_path)?;
            artifacts.push(crate::allocator::sidecar_path(&table_path));
        }
        None => write_rows_csv(&table_path, &main, metric, "schedule")?,
    }

    let frontier = if complete {
        let points: Vec<ParetoPoint> = main
            .iter()
            .map(|r| ParetoPoint::new(r.label.clone(), r.total_cost, Orientation::LowerBetter.score(r.quality.unwrap_or(f64::NAN))))
            .collect();
        let f = pareto_frontier(&points);
        let path = layout.tables().join("frontier.csv");
        let raw: Vec<ParetoPoint> = f.iter().map(|p| ParetoPoint::new(p.label.clone(), p.cost, -p.quality)).collect();
        write_pareto_csv(std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, &raw)?;
        artifacts.push(path);
        raw
    } else {
        Vec::new()
    };

    let ids = cfg.roster_ids();
    let mut summaries = Vec::new();
    let mut wins = None;
    if !baselines.is_empty() {
        let path = layout.tables().join("baselines.csv");
        write_rows_csv(&path, &baselines, metric, "baseline")?;
        artifacts.push(path);
        let s2l = done
            .values()
            .find(|r| r.label == small_to_large_label(&ids) || r.label == BaselineKind::SmallToLarge.name());
        let mut all: Vec<(&str, &RowResult)> = Vec::new();
        if let Some(r) = s2l {
            all.push((BaselineKind::SmallToLarge.name(), r));
        }
        all.extend(baselines.iter().filter(|r| r.label != BaselineKind::SmallToLarge.name()).map(|r| (r.label.as_str(), *r)));
        for (name, r) in &all {
            summaries.push(BaselineSummary {
                baseline: name.to_string(),
                quality: r.quality,
                quality_se: r.quality_se,
                total_cost: r.total_cost,
            });
        }
        let l2s = baselines.iter().find(|r| r.label == BaselineKind::LargeToSmall.name());
        if let (Some(a), Some(b)) = (s2l, l2s) {
            if a.quality.is_some() && b.quality.is_some() {
                let m = &cfg.metrics[0];
                let n = a
                    .per_seed
                    .iter()
                    .zip(&b.per_seed)
                    .filter(|(x, y)| x.values[m] < y.values[m])
                    .count();
                wins = Some((n, a.per_seed.len()));
            }
        }
    }
    let mut ordering: Vec<&BaselineSummary> = summaries.iter().filter(|s| s.quality.is_some()).collect();
    ordering.sort_by(|a, b| a.quality.unwrap().total_cmp(&b.quality.unwrap()));
    let baseline_ordering = ordering.iter().map(|s| s.baseline.clone()).collect();

    let errors: Vec<&RowResult> = done.values().filter(|r| r.error.is_some()).collect();
    let err_path = layout.tables().join("errors.csv");
    let mut w = csv::Writer::from_path(&err_path)?;
    w.write_record(["kind", "index", "schedule", "error"])?;
    for r in &errors {
        w.write_record([r.kind.tag(), &r.index.to_string(), &r.label, r.error.as_deref().unwrap_or("")])?;
    }
    w.flush().map_err(|e| Error::io(&err_path, e))?;
    artifacts.push(err_path);

    let seeds_path = layout.reports().join("sweep_seeds.csv");
    let mut w = csv::Writer::from_path(&seeds_path)?;
    w.write_record(["kind", "schedule", "seed", "metric", "value"])?;
    for r in done.values() {
        for s in &r.per_seed {
            for (m, v) in &s.values {
                w.write_record([r.kind.tag(), &r.label, &s.seed.to_string(), m.name(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&seeds_path, e))?;
    artifacts.push(seeds_path);

    let summary = SweepSummary {
        config_hash: hash,
        table: table_path
            .strip_prefix(&layout.root)
            .unwrap_or(&table_path)
            .to_string_lossy()
            .into_owned(),
        quality_metric: metric.to_string(),
        rows: jobs.iter().filter(|j| j.kind != RowKind::Baseline).count(),
        completed: main.iter().filter(|r| r.quality.is_some()).count(),
        errors: errors.len(),
        frontier: frontier.clone(),
        baselines: summaries,
        small_to_large_wins: wins,
        baseline_ordering,
    };
    let report_path = layout.reports().join("sweep.json");
    write_json(&report_path, &summary)?;
    artifacts.push(report_path);
    write_manifest(layout, cfg, "sweep", &artifacts)?;

    Ok(SweepReport {
        table_path,
        rows: main.into_iter().cloned().collect(),
        baselines: baselines.into_iter().cloned().collect(),
        summary,
        computed,
        complete,
    })
}
