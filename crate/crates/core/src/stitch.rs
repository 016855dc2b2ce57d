//! Stitch schedules: which denoiser handles which contiguous run of
//! sampling steps.
//!
//! Segment order is sampling order, so segment 0 acts at the highest noise
//! levels. Step indices count sampling order as well: step 0 starts from
//! `sigma_max`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

const FRACTION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub denoiser: String,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StitchSchedule {
    segments: Vec<Segment>,
    label: String,
}

impl StitchSchedule {
    pub fn new(segments: Vec<(String, f64)>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidSchedule("a schedule needs at least one segment".into()));
        }
        for (id, r) in &segments {
            if id.is_empty() || id.contains([':', ',']) || id.trim() != id {
                return Err(Error::InvalidSchedule(format!("invalid denoiser id `{id}`")));
            }
            if !(0.0..=1.0).contains(r) {
                return Err(Error::InvalidSchedule(format!("fraction {r} for `{id}` outside [0, 1]")));
            }
        }
        let total: f64 = segments.iter().map(|(_, r)| r).sum();
        if (total - 1.0).abs() > FRACTION_TOL {
            return Err(Error::InvalidSchedule(format!("fractions sum to {total}, not 1")));
        }
        let segments: Vec<Segment> = segments
            .into_iter()
            .map(|(denoiser, fraction)| Segment { denoiser, fraction })
            .collect();
        let label = literal(&segments);
        Ok(Self { segments, label })
    }

    /// A schedule that runs one denoiser for every step.
    pub fn single(id: &str) -> Result<Self> {
        Self::new(vec![(id.to_string(), 1.0)])
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn fractions(&self) -> Vec<f64> {
        self.segments.iter().map(|s| s.fraction).collect()
    }

    /// The `id:fraction,...` literal for this schedule.
    pub fn literal(&self) -> String {
        literal(&self.segments)
    }

    pub fn fraction_of(&self, id: &str) -> f64 {
        self.segments.iter().filter(|s| s.denoiser == id).map(|s| s.fraction).sum()
    }
}

fn literal(segments: &[Segment]) -> String {
    segments
        .iter()
        .map(|s| format!("{}:{}", s.denoiser, s.fraction))
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for StitchSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.literal())
    }
}

impl FromStr for StitchSchedule {
    type Err = Error;

    /// Parses `"small:0.4,large:0.6"`.
    fn from_str(s: &str) -> Result<Self> {
        let mut segments = Vec::new();
        for part in s.split(',') {
            let (id, frac) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidSchedule(format!("segment `{part}` is not `id:fraction`")))?;
            let r: f64 = frac
                .parse()
                .map_err(|_| Error::InvalidSchedule(format!("fraction `{frac}` is not a number")))?;
            if !r.is_finite() {
                return Err(Error::InvalidSchedule(format!("fraction `{frac}` is not finite")));
            }
            segments.push((id.to_string(), r));
        }
        Self::new(segments)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRange {
    pub denoiser: String,
    pub start: usize,
    pub end: usize,
}

impl StepRange {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Disjoint ordered ranges tiling `[0, T)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepPartition {
    pub ranges: Vec<StepRange>,
    pub steps: usize,
}

impl StepPartition {
    pub fn denoiser_at(&self, step: usize) -> Option<&str> {
        self.ranges
            .iter()
            .find(|r| r.start <= step && step < r.end)
            .map(|r| r.denoiser.as_str())
    }

    /// Per-step denoiser ids.
    pub fn assignment(&self) -> StepAssignment {
        let mut steps = Vec::with_capacity(self.steps);
        for r in &self.ranges {
            steps.extend(std::iter::repeat_n(r.denoiser.clone(), r.len()));
        }
        StepAssignment { steps }
    }
}

/// Half-away-from-zero rounding, snapping values within 1e-9 of a half
/// integer so that float noise in cumulative sums cannot flip a tie.
fn round_boundary(x: f64) -> usize {
    let halves = (x * 2.0).round();
    let snapped = if (x * 2.0 - halves).abs() < FRACTION_TOL { halves / 2.0 } else { x };
    snapped.round().max(0.0) as usize
}

/// Splits `steps` sampling steps among the schedule's segments.
///
/// Boundary `k` is the cumulative fraction times `steps`, rounded half away
/// from zero; the last boundary is forced to `steps`. Segments that round to
/// zero length are dropped.
pub fn partition_steps(schedule: &StitchSchedule, steps: usize) -> Result<StepPartition> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("partition needs at least one step".into()));
    }
    let n = schedule.segments.len();
    let mut ranges = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut start = 0;
    for (k, seg) in schedule.segments.iter().enumerate() {
        cum += seg.fraction;
        let end = if k + 1 == n {
            steps
        } else {
            round_boundary(cum * steps as f64).clamp(start, steps)
        };
        if end > start {
            ranges.push(StepRange {
                denoiser: seg.denoiser.clone(),
                start,
                end,
            });
        }
        start = end;
    }
    Ok(StepPartition { ranges, steps })
}

/// Every schedule over `ids` whose fractions are multiples of `1 / granularity`,
/// in lexicographic order of the fraction vector.
pub fn enumerate_configs(ids: &[String], granularity: usize) -> Result<Vec<StitchSchedule>> {
    if ids.is_empty() || granularity == 0 {
        return Err(Error::InvalidSchedule("enumeration needs K >= 1 and g >= 1".into()));
    }
    let mut out = Vec::new();
    let mut parts = vec![0usize; ids.len()];
    compositions(granularity, 0, &mut parts, &mut |p| {
        let segs = ids
            .iter()
            .zip(p)
            .map(|(id, &k)| (id.clone(), k as f64 / granularity as f64))
            .collect();
        out.push(StitchSchedule::new(segs));
    });
    out.into_iter().collect()
}

fn compositions(remaining: usize, idx: usize, parts: &mut [usize], emit: &mut dyn FnMut(&[usize])) {
    if idx + 1 == parts.len() {
        parts[idx] = remaining;
        emit(parts);
        return;
    }
    for k in 0..=remaining {
        parts[idx] = k;
        compositions(remaining - k, idx + 1, parts, emit);
    }
}

/// `C(n, k)` for the enumeration count.
pub fn binomial(n: usize, k: usize) -> usize {
    let k = k.min(n - k.min(n));
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Per-step denoiser ids, in sampling order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepAssignment {
    pub steps: Vec<String>,
}

impl StepAssignment {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn usage(&self, id: &str) -> usize {
        self.steps.iter().filter(|s| *s == id).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    SmallToLarge,
    LargeToSmall,
    Interleave,
    DecreasingProb,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::SmallToLarge,
        BaselineKind::LargeToSmall,
        BaselineKind::Interleave,
        BaselineKind::DecreasingProb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::SmallToLarge => "small-to-large",
            BaselineKind::LargeToSmall => "large-to-small",
            BaselineKind::Interleave => "interleave",
            BaselineKind::DecreasingProb => "decreasing-prob",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidSchedule(format!("unknown baseline `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselinePlan {
    pub kind: BaselineKind,
    pub assignment: StepAssignment,
    /// Set when an argument was ignored.
    pub warning: Option<String>,
}

/// Two-denoiser allocation strategies compared against small-to-large.
///
/// `seed` only affects [`BaselineKind::DecreasingProb`], which picks the small
/// denoiser at step `t` with probability `1 - t / (T - 1)`.
pub fn baseline_schedule(
    kind: BaselineKind,
    small: &str,
    large: &str,
    fraction_small: f64,
    steps: usize,
    seed: u64,
) -> Result<BaselinePlan> {
    if !(0.0..=1.0).contains(&fraction_small) {
        return Err(Error::InvalidSchedule(format!("small fraction {fraction_small} outside [0, 1]")));
    }
    if steps == 0 {
        return Err(Error::InvalidSchedule("baseline needs at least one step".into()));
    }
    let mut warning = None;
    if matches!(kind, BaselineKind::Interleave | BaselineKind::DecreasingProb)
        && (fraction_small - 0.5).abs() > FRACTION_TOL
    {
        let msg = format!("{} fixes a 50/50 split; ignoring fraction {fraction_small}", kind.name());
        log::warn!("{msg}");
        warning = Some(msg);
    }
    let two = |first: &str, f: f64, second: &str| {
        StitchSchedule::new(vec![(first.to_string(), f), (second.to_string(), 1.0 - f)])
            .and_then(|s| partition_steps(&s, steps))
            .map(|p| p.assignment())
    };
    let assignment = match kind {
        BaselineKind::SmallToLarge => two(small, fraction_small, large)?,
        BaselineKind::LargeToSmall => two(large, 1.0 - fraction_small, small)?,
        BaselineKind::Interleave => StepAssignment {
            steps: (0..steps)
                .map(|t| if t % 2 == 0 { small } else { large }.to_string())
                .collect(),
        },
        BaselineKind::DecreasingProb => {
            let mut rng = stream_rng(seed, &[stream::BASELINE]);
            StepAssignment {
                steps: (0..steps)
                    .map(|t| {
                        let p = if steps == 1 { 1.0 } else { 1.0 - t as f64 / (steps - 1) as f64 };
                        if rng.random::<f64>() < p { small } else { large }.to_string()
                    })
                    .collect(),
            }
        }
    };
    Ok(BaselinePlan {
        kind,
        assignment,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched(lit: &str) -> StitchSchedule {
        lit.parse().unwrap()
    }

    fn spans(p: &StepPartition) -> Vec<(&str, usize, usize)> {
        p.ranges.iter().map(|r| (r.denoiser.as_str(), r.start, r.end)).collect()
    }

    #[test]
    fn partition_examples() {
        let p = partition_steps(&sched("S:0.5,XL:0.5"), 100).unwrap();
        assert_eq!(spans(&p), vec![("S", 0, 50), ("XL", 50, 100)]);
        let p = partition_steps(&sched("S:0.4,XL:0.6"), 100).unwrap();
        assert_eq!(spans(&p), vec![("S", 0, 40), ("XL", 40, 100)]);
        let p = partition_steps(&sched("S:0.25,B:0.25,XL:0.5"), 10).unwrap();
        assert_eq!(spans(&p), vec![("S", 0, 3), ("B", 3, 5), ("XL", 5, 10)]);
    }

    #[test]
    fn zero_segments_dropped() {
        let p = partition_steps(&sched("S:0,B:0.02,XL:0.98"), 10).unwrap();
        assert_eq!(spans(&p), vec![("XL", 0, 10)]);
    }

    #[test]
    fn literal_parsing_is_strict() {
        assert!("small:0.4,large:0.6".parse::<StitchSchedule>().is_ok());
        for bad in ["small:0.4,large:0.5", "small=0.4", "small:abc", "small:1.5,large:-0.5", ":1", "a:NaN", ""] {
            assert!(bad.parse::<StitchSchedule>().is_err(), "{bad}");
        }
        let s = sched("small:0.4,large:0.6");
        assert_eq!(s.literal(), "small:0.4,large:0.6");
        assert_eq!(s.label(), "small:0.4,large:0.6");
    }

    #[test]
    fn enumeration_examples() {
        let ids = |k: usize| (0..k).map(|i| format!("m{i}")).collect::<Vec<_>>();
        assert_eq!(enumerate_configs(&ids(3), 10).unwrap().len(), 66);
        let one = enumerate_configs(&ids(1), 7).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].fractions(), vec![1.0]);
        let two: Vec<Vec<f64>> = enumerate_configs(&ids(2), 2).unwrap().iter().map(|s| s.fractions()).collect();
        assert_eq!(two, vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![1.0, 0.0]]);
    }

    #[test]
    fn enumeration_counts() {
        for k in 1..=4 {
            let ids: Vec<String> = (0..k).map(|i| format!("m{i}")).collect();
            for g in [1, 2, 5, 10] {
                assert_eq!(enumerate_configs(&ids, g).unwrap().len(), binomial(g + k - 1, k - 1));
            }
        }
    }

    #[test]
    fn baselines() {
        let s2l = baseline_schedule(BaselineKind::SmallToLarge, "S", "L", 0.5, 100, 0).unwrap();
        let direct = partition_steps(&sched("S:0.5,L:0.5"), 100).unwrap().assignment();
        assert_eq!(s2l.assignment, direct);

        let l2s = baseline_schedule(BaselineKind::LargeToSmall, "S", "L", 0.3, 10, 0).unwrap();
        assert_eq!(l2s.assignment.steps[..7].iter().filter(|s| *s == "L").count(), 7);
        assert_eq!(l2s.assignment.usage("S"), 3);

        let inter = baseline_schedule(BaselineKind::Interleave, "S", "L", 0.5, 4, 0).unwrap();
        assert_eq!(inter.assignment.steps, vec!["S", "L", "S", "L"]);
        assert!(inter.warning.is_none());
        let warned = baseline_schedule(BaselineKind::Interleave, "S", "L", 0.2, 4, 0).unwrap();
        assert!(warned.warning.is_some());
        assert_eq!(warned.assignment, inter.assignment);
    }

    #[test]
    fn decreasing_prob_usage() {
        let mut small = 0usize;
        let draws = 10_000;
        for seed in 0..draws {
            small += baseline_schedule(BaselineKind::DecreasingProb, "S", "L", 0.5, 100, seed)
                .unwrap()
                .assignment
                .usage("S");
        }
        let frac = small as f64 / (draws as f64 * 100.0);
        assert!((frac - 0.5).abs() <= 0.02, "usage {frac}");
    }
}
