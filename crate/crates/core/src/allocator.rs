//! Budgeted schedule selection over an enumerated lookup table.
//!
//! Every schedule on the fraction grid gets a declared cost
//! `T * sum_k r_k C_k * guidance_multiplier`. Once qualities are measured, a
//! budget query returns the feasible rows and [`LookupTable::select_best`]
//! picks the best one.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stitch::{enumerate_configs, StitchSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub id: String,
    pub cost: f64,
}

impl RosterEntry {
    pub fn new(id: impl Into<String>, cost: f64) -> Self {
        Self { id: id.into(), cost }
    }
}

/// Whether a larger raw metric value means better samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Orientation {
    #[default]
    LowerBetter,
    HigherBetter,
}

impl Orientation {
    /// Maps a raw value so that larger is always better.
    pub fn score(self, raw: f64) -> f64 {
        match self {
            Orientation::LowerBetter => -raw,
            Orientation::HigherBetter => raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupRow {
    pub index: usize,
    pub schedule: StitchSchedule,
    pub total_cost: f64,
    /// Raw metric value, oriented by the table.
    pub quality: Option<f64>,
    pub wall_clock_s: Option<f64>,
}

impl LookupRow {
    pub fn fractions(&self) -> Vec<f64> {
        self.schedule.fractions()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub roster: Vec<RosterEntry>,
    pub granularity: usize,
    pub steps: usize,
    pub guidance_multiplier: u32,
    pub quality_metric: String,
    pub orientation: Orientation,
    pub rows: Vec<LookupRow>,
}

/// `T * sum_k r_k C_k * multiplier`.
pub fn schedule_cost(fractions: &[f64], costs: &[f64], steps: usize, guidance_multiplier: u32) -> f64 {
    let per_step: f64 = fractions.iter().zip(costs).map(|(r, c)| r * c).sum();
    steps as f64 * per_step * guidance_multiplier as f64
}

/// Enumerates the fraction grid over `roster` and fills in declared costs.
pub fn build_lookup(
    roster: &[RosterEntry],
    granularity: usize,
    steps: usize,
    guidance_multiplier: u32,
) -> Result<LookupTable> {
    if roster.is_empty() {
        return Err(Error::Config("roster is empty".into()));
    }
    if let Some(r) = roster.iter().find(|r| !(r.cost > 0.0 && r.cost.is_finite())) {
        return Err(Error::Domain(format!("cost of `{}` must be positive, got {}", r.id, r.cost)));
    }
    if !(1..=2).contains(&guidance_multiplier) {
        return Err(Error::Domain(format!("guidance multiplier must be 1 or 2, got {guidance_multiplier}")));
    }
    if steps == 0 {
        return Err(Error::Domain("steps must be positive".into()));
    }
    let ids: Vec<String> = roster.iter().map(|r| r.id.clone()).collect();
    let costs: Vec<f64> = roster.iter().map(|r| r.cost).collect();
    let rows = enumerate_configs(&ids, granularity)?
        .into_iter()
        .enumerate()
        .map(|(index, schedule)| LookupRow {
            index,
            total_cost: schedule_cost(&schedule.fractions(), &costs, steps, guidance_multiplier),
            schedule,
            quality: None,
            wall_clock_s: None,
        })
        .collect();
    Ok(LookupTable {
        roster: roster.to_vec(),
        granularity,
        steps,
        guidance_multiplier,
        quality_metric: String::new(),
        orientation: Orientation::default(),
        rows,
    })
}

impl LookupTable {
    pub fn costs(&self) -> Vec<f64> {
        self.roster.iter().map(|r| r.cost).collect()
    }

    pub fn recompute_cost(&self, row: &LookupRow) -> f64 {
        schedule_cost(&row.fractions(), &self.costs(), self.steps, self.guidance_multiplier)
    }

    pub fn min_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.total_cost).fold(f64::INFINITY, f64::min)
    }

    pub fn max_cost(&self) -> f64 {
        self.rows.iter().map(|r| r.total_cost).fold(f64::NEG_INFINITY, f64::max)
    }

    fn score(&self, row: &LookupRow) -> Option<f64> {
        row.quality.map(|q| self.orientation.score(q))
    }

    /// Rows with `total_cost <= budget`. Sorted by oriented quality
    /// (best first) when every feasible row is measured, else by cost
    /// (most expensive first); ties keep row order.
    pub fn query_budget(&self, budget: f64) -> Result<Vec<&LookupRow>> {
        if !(budget > 0.0) {
            return Err(Error::Domain(format!("budget must be positive, got {budget}")));
        }
        let mut feasible: Vec<&LookupRow> = self.rows.iter().filter(|r| r.total_cost <= budget).collect();
        if feasible.iter().all(|r| r.quality.is_some()) {
            feasible.sort_by(|a, b| {
                self.score(b)
                    .unwrap()
                    .total_cmp(&self.score(a).unwrap())
                    .then(a.index.cmp(&b.index))
            });
        } else {
            feasible.sort_by(|a, b| b.total_cost.total_cmp(&a.total_cost).then(a.index.cmp(&b.index)));
        }
        Ok(feasible)
    }

    /// Best feasible row; equal qualities resolve to the cheaper row, then
    /// the earlier one.
    pub fn select_best(&self, budget: f64) -> Result<&LookupRow> {
        if let Some(r) = self.rows.iter().find(|r| r.quality.is_none()) {
            return Err(Error::MissingQuality(r.index));
        }
        if !(budget > 0.0) {
            return Err(Error::Domain(format!("budget must be positive, got {budget}")));
        }
        self.rows
            .iter()
            .filter(|r| r.total_cost <= budget)
            .max_by(|a, b| {
                self.score(a)
                    .unwrap()
                    .total_cmp(&self.score(b).unwrap())
                    .then(b.total_cost.total_cmp(&a.total_cost))
                    .then(b.index.cmp(&a.index))
            })
            .ok_or(Error::NoFeasibleSchedule { budget })
    }

    pub fn is_complete(&self) -> bool {
        self.rows.iter().all(|r| r.quality.is_some())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    roster: Vec<RosterEntry>,
    granularity: usize,
    steps: usize,
    guidance_multiplier: u32,
    quality_metric: String,
    orientation: Orientation,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt(s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| Error::Config(format!("`{s}` is not a number")))
}

impl LookupTable {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["schedule".to_string()];
        h.extend((1..=self.roster.len()).map(|k| format!("r_{k}")));
        h.extend(["total_cost", "quality", "quality_metric", "wall_clock_s"].map(String::from));
        h
    }

    pub fn record(&self, row: &LookupRow) -> Vec<String> {
        let mut rec = vec![row.schedule.literal()];
        rec.extend(row.fractions().iter().map(|r| r.to_string()));
        rec.push(row.total_cost.to_string());
        rec.push(opt(row.quality));
        rec.push(if row.quality.is_some() { self.quality_metric.clone() } else { String::new() });
        rec.push(opt(row.wall_clock_s));
        rec
    }

    /// Writes the CSV and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for row in &self.rows {
            w.write_record(self.record(row))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = Sidecar {
            roster: self.roster.clone(),
            granularity: self.granularity,
            steps: self.steps,
            guidance_multiplier: self.guidance_multiplier,
            quality_metric: self.quality_metric.clone(),
            orientation: self.orientation,
        };
        let side_path = sidecar_path(path);
        let mut text = serde_json::to_string_pretty(&side)?;
        text.push('\n');
        std::fs::write(&side_path, text).map_err(|e| Error::io(&side_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side_path = sidecar_path(path);
        let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_str(&text)?;
        let mut table = LookupTable {
            roster: side.roster,
            granularity: side.granularity,
            steps: side.steps,
            guidance_multiplier: side.guidance_multiplier,
            quality_metric: side.quality_metric,
            orientation: side.orientation,
            rows: Vec::new(),
        };
        let k = table.roster.len();
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        if header != table.header() {
            return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
        }
        for (index, rec) in r.records().enumerate() {
            let rec = rec?;
            let schedule: StitchSchedule = rec[0].parse()?;
            let fractions: Vec<f64> = (1..=k).map(|i| parse_opt(&rec[i])).collect::<Result<Vec<_>>>()?
                .into_iter()
                .map(|v| v.unwrap_or(f64::NAN))
                .collect();
            if fractions != schedule.fractions() {
                return Err(Error::Config(format!("row {index}: fractions disagree with `{}`", &rec[0])));
            }
            let total_cost = parse_opt(&rec[k + 1])?
                .ok_or_else(|| Error::Config(format!("row {index}: missing total_cost")))?;
            table.rows.push(LookupRow {
                index,
                schedule,
                total_cost,
                quality: parse_opt(&rec[k + 2])?,
                wall_clock_s: parse_opt(&rec[k + 4])?,
            });
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two(cs: f64, cl: f64) -> LookupTable {
        build_lookup(&[RosterEntry::new("S", cs), RosterEntry::new("XL", cl)], 10, 100, 1).unwrap()
    }

    #[test]
    fn row_counts_and_costs() {
        assert_eq!(two(1.0, 10.0).rows.len(), 11);
        let three = build_lookup(
            &[RosterEntry::new("S", 1.0), RosterEntry::new("B", 4.0), RosterEntry::new("XL", 10.0)],
            10,
            100,
            1,
        )
        .unwrap();
        assert_eq!(three.rows.len(), 66);
        let t = two(1.0, 10.0);
        let half = t.rows.iter().find(|r| r.fractions()[0] == 0.5).unwrap();
        assert_eq!(half.total_cost, 550.0);
    }

    #[test]
    fn worked_budget_example() {
        let t = two(1.0, 10.0);
        let rows = t.query_budget(550.0).unwrap();
        let mut rs: Vec<f64> = rows.iter().map(|r| r.fractions()[0]).collect();
        rs.sort_by(f64::total_cmp);
        assert_eq!(rs, vec![0.5, 0.6, 0.7, 0.8, 0.9, 1.0]);
        // unmeasured: most expensive first
        assert_eq!(rows[0].fractions()[0], 0.5);
        assert_eq!(t.query_budget(t.max_cost()).unwrap().len(), 11);
        assert!(t.query_budget(t.min_cost() * 0.99).unwrap().is_empty());
        assert!(t.query_budget(0.0).is_err());
    }

    #[test]
    fn select_best_contracts() {
        let mut t = two(1.0, 10.0);
        assert!(matches!(t.select_best(1000.0), Err(Error::MissingQuality(0))));
        for r in &mut t.rows {
            r.quality = Some(0.3);
        }
        let best = t.select_best(800.0).unwrap();
        assert_eq!(best.total_cost, t.min_cost());
        // quality = -cost with lower-better orientation: spend up to the budget
        for r in &mut t.rows {
            r.quality = Some(-r.total_cost);
        }
        let best = t.select_best(600.0).unwrap();
        assert_eq!(best.total_cost, 550.0);
        assert!(matches!(t.select_best(50.0), Err(Error::NoFeasibleSchedule { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let mut t = two(1.0, 10.0);
        t.quality_metric = "sliced-wasserstein".into();
        for (i, r) in t.rows.iter_mut().enumerate() {
            if i % 3 != 0 {
                r.quality = Some(0.1 + i as f64 / 7.0);
                r.wall_clock_s = Some(1.0 / (i + 1) as f64);
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("table.csv");
        t.save(&p).unwrap();
        assert_eq!(LookupTable::load(&p).unwrap(), t);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("schedule,r_1,r_2,total_cost,quality,quality_metric,wall_clock_s\n"));
    }
}
