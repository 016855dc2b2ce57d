//! Sample-quality distances and cost accounting.
//!
//! Quality is measured on raw samples: sliced Wasserstein-1 against reference
//! draws from the data distribution, plus first and second moment errors
//! against an analytic mixture. Lower is better for all three.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::{Denoiser, GmmParams};
use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, stream, stream_rng};
use crate::sampler::{sample_assignment, SamplerConfig};
use crate::stitch::StepAssignment;

pub const DEFAULT_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    SlicedWasserstein,
    MeanError,
    CovarianceError,
}

impl MetricKind {
    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::SlicedWasserstein => "sliced-wasserstein",
            MetricKind::MeanError => "mean-error",
            MetricKind::CovarianceError => "covariance-error",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [MetricKind::SlicedWasserstein, MetricKind::MeanError, MetricKind::CovarianceError]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub metric: MetricKind,
    pub value: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_projections: Option<usize>,
    pub seed: u64,
}

/// Exact W1 between two 1-D empirical distributions given sorted inputs:
/// the integral of `|F_a - F_b|` over the merged support.
pub fn wasserstein_1d_sorted(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == b.len() {
        return a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    total
}

fn project_sorted(rows: &[f64], dim: usize, dir: &[f64]) -> Vec<f64> {
    let mut p: Vec<f64> = rows
        .chunks(dim)
        .map(|r| r.iter().zip(dir).map(|(x, d)| x * d).sum())
        .collect();
    p.sort_by(f64::total_cmp);
    p
}

fn check_rows(a: &[f64], b: &[f64], dim: usize) -> Result<()> {
    if dim == 0 || !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::shape(&[dim], &[a.len(), b.len()]));
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Domain("sliced Wasserstein needs nonempty sample sets".into()));
    }
    Ok(())
}

/// Per-direction W1 values for explicit unit directions.
pub fn sliced_wasserstein_directions(a: &[f64], b: &[f64], dim: usize, directions: &[Vec<f64>]) -> Result<Vec<f64>> {
    check_rows(a, b, dim)?;
    directions
        .iter()
        .map(|d| {
            if d.len() != dim {
                return Err(Error::shape(&[dim], &[d.len()]));
            }
            Ok(wasserstein_1d_sorted(&project_sorted(a, dim, d), &project_sorted(b, dim, d)))
        })
        .collect()
}

/// Directions drawn uniformly on the unit sphere from stream `(seed, [PROJECTIONS])`.
pub fn random_directions(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = stream_rng(seed, &[stream::PROJECTIONS]);
    (0..n)
        .map(|_| loop {
            let mut v = vec![0.0; dim];
            fill_standard_normal(&mut rng, &mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

/// Mean over random projections of the 1-D Wasserstein-1 distance between
/// the projected sample sets (flattened rows of length `dim`).
pub fn sliced_wasserstein(a: &[f64], b: &[f64], dim: usize, n_projections: usize, seed: u64) -> Result<QualityReport> {
    check_rows(a, b, dim)?;
    if n_projections == 0 {
        return Err(Error::Domain("need at least one projection".into()));
    }
    let n = a.len().min(b.len()) / dim;
    if n < 100 {
        log::warn!("sliced Wasserstein on {n} samples is noisy; at least 100 are advised");
    }
    let dirs = random_directions(dim, n_projections, seed);
    let per = sliced_wasserstein_directions(a, b, dim, &dirs)?;
    Ok(QualityReport {
        metric: MetricKind::SlicedWasserstein,
        value: per.iter().sum::<f64>() / per.len() as f64,
        n_samples: a.len() / dim,
        n_projections: Some(n_projections),
        seed,
    })
}

/// Empirical mean and (population) covariance of flattened rows.
pub fn empirical_moments(rows: &[f64], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (rows.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows.chunks(dim) {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; dim * dim];
    for r in rows.chunks(dim) {
        for i in 0..dim {
            let di = r[i] - mean[i];
            for j in 0..dim {
                cov[i * dim + j] += di * (r[j] - mean[j]);
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    (mean, cov)
}

/// `(|mean - mu|, ||cov - Sigma||_F)` against the mixture's analytic moments.
pub fn moment_errors(samples: &[f64], target: &GmmParams) -> Result<(QualityReport, QualityReport)> {
    let dim = target.dim();
    if samples.is_empty() || !samples.len().is_multiple_of(dim) {
        return Err(Error::shape(&[dim], &[samples.len()]));
    }
    let n = samples.len() / dim;
    if n < 100 {
        log::warn!("moment errors on {n} samples are noisy; at least 100 are advised");
    }
    let (mean, cov) = empirical_moments(samples, dim);
    let mean_err = mean
        .iter()
        .zip(target.mean())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let cov_err = cov
        .iter()
        .zip(target.covariance())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let report = |metric, value| QualityReport {
        metric,
        value,
        n_samples: n,
        n_projections: None,
        seed: 0,
    };
    Ok((report(MetricKind::MeanError, mean_err), report(MetricKind::CovarianceError, cov_err)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Declared cost per generated sample: the sum over steps of the active
    /// denoiser's `cost_per_eval` times evaluations per step.
    pub declared_cost: f64,
    /// Median wall clock of the sampling loop over repetitions.
    pub wall_clock_s: f64,
    pub wall_clock_runs: Vec<f64>,
    pub evals_by_denoiser: BTreeMap<String, u64>,
    pub n_chains: usize,
    pub workers: usize,
    pub repetitions: usize,
}

/// Per-sample declared cost of an assignment.
pub fn declared_cost(assignment: &StepAssignment, roster: &[Denoiser], evals_per_step: u64) -> Result<f64> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for id in &assignment.steps {
        *counts.entry(id).or_default() += 1;
    }
    let mut total = 0.0;
    for (id, n) in counts {
        let d = roster
            .iter()
            .find(|d| d.id() == id)
            .ok_or_else(|| Error::UnknownDenoiser(id.to_string()))?;
        total += n as f64 * d.cost_per_eval() * evals_per_step as f64;
    }
    Ok(total)
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times the sampling loop `repetitions` times on a dedicated pool of
/// `workers` threads and reports the median.
#[allow(clippy::too_many_arguments)]
pub fn benchmark_schedule(
    assignment: &StepAssignment,
    roster: &[Denoiser],
    cfg: &SamplerConfig,
    sample_shape: &[usize],
    n_chains: usize,
    repetitions: usize,
    workers: usize,
    seed: u64,
) -> Result<CostReport> {
    let mut reports = benchmark_schedules(
        std::slice::from_ref(assignment),
        roster,
        cfg,
        sample_shape,
        n_chains,
        repetitions,
        workers,
        seed,
    )?;
    Ok(reports.remove(0))
}

/// Benchmarks several assignments with interleaved repetitions.
///
/// Each repetition visits every assignment once, alternating direction
/// between repetitions, so slow drift in machine speed lands on all
/// assignments alike instead of on whichever ran last.
#[allow(clippy::too_many_arguments)]
pub fn benchmark_schedules(
    assignments: &[StepAssignment],
    roster: &[Denoiser],
    cfg: &SamplerConfig,
    sample_shape: &[usize],
    n_chains: usize,
    repetitions: usize,
    workers: usize,
    seed: u64,
) -> Result<Vec<CostReport>> {
    if repetitions == 0 || workers == 0 {
        return Err(Error::Config("benchmark needs at least one repetition and one worker".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let mut cfg = cfg.clone();
    cfg.record_trajectory = false;
    let n = assignments.len();
    let mut runs = vec![Vec::with_capacity(repetitions); n];
    let mut evals = vec![BTreeMap::new(); n];
    for rep in 0..repetitions {
        for k in 0..n {
            let i = if rep % 2 == 0 { k } else { n - 1 - k };
            let start = Instant::now();
            let out = pool.install(|| sample_assignment(&assignments[i], roster, &cfg, sample_shape, n_chains, seed))?;
            runs[i].push(start.elapsed().as_secs_f64());
            evals[i] = out.ledger.evals;
        }
    }
    assignments
        .iter()
        .zip(runs)
        .zip(evals)
        .map(|((a, runs), evals)| {
            Ok(CostReport {
                declared_cost: declared_cost(a, roster, cfg.evals_per_step())?,
                wall_clock_s: median(&runs),
                wall_clock_runs: runs,
                evals_by_denoiser: evals,
                n_chains,
                workers,
                repetitions,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::standard_normal_vec;
    use crate::stitch::{partition_steps, StitchSchedule};
    use rand::Rng;

    const GOLDEN_A: [f64; 10] = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 2.0, 2.0, -1.0, 3.0];
    const GOLDEN_B: [f64; 10] = [1.0, 1.0, 2.0, 0.0, 0.0, -1.0, 3.0, 1.0, 0.0, 2.0];

    #[test]
    fn golden_two_directions() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let per = sliced_wasserstein_directions(&GOLDEN_A, &GOLDEN_B, 2, &[vec![1.0, 0.0], vec![s, s]]).unwrap();
        // sorted x-projections differ by 1,0,1,1,1; diagonal ones by 0,0,1,1,1 over sqrt 2
        assert!((per[0] - 0.8).abs() < 1e-15);
        assert!((per[1] - 0.42426406871192845).abs() < 1e-15);
        assert!(((per[0] + per[1]) / 2.0 - 0.6121320343559642).abs() < 1e-15);
    }

    #[test]
    fn identical_sets_and_shift() {
        let mut rng = stream_rng(1, &[0]);
        let a = standard_normal_vec(&mut rng, 400);
        assert_eq!(sliced_wasserstein(&a, &a, 2, 32, 0).unwrap().value, 0.0);
        let b: Vec<f64> = a.iter().map(|x| x + 0.75).collect();
        let v = sliced_wasserstein(&a, &b, 1, 8, 0).unwrap().value;
        assert!((v - 0.75).abs() < 1e-12, "{v}");
        assert!(sliced_wasserstein(&a, &b[..399], 2, 8, 0).is_err());
    }

    #[test]
    fn unequal_sizes_match_quantile_integral() {
        // W1({0,1}, {0,0,1,1,1,2}) by hand: |F_a - F_b| is 1/6 on [0,1) and 1/6 on [1,2)
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 1.0, 1.0, 1.0, 2.0];
        let w = wasserstein_1d_sorted(&a, &b);
        assert!((w - (1.0 / 6.0 + 1.0 / 6.0)).abs() < 1e-15, "{w}");
        // equals the pairwise form when sizes agree after replication
        let a2 = [0.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        assert!((wasserstein_1d_sorted(&a, &b) - wasserstein_1d_sorted(&a2, &b)).abs() < 1e-15);
    }

    #[test]
    fn axioms_on_random_triples() {
        let mut rng = stream_rng(2, &[0]);
        for k in 0..100u64 {
            let draw = |rng: &mut crate::rng::StreamRng, shift: f64| -> Vec<f64> {
                standard_normal_vec(rng, 240).into_iter().map(|x| x + shift).collect()
            };
            let s = rng.random_range(-1.0..1.0);
            let (a, b, c) = (draw(&mut rng, 0.0), draw(&mut rng, s), draw(&mut rng, -s));
            let ab = sliced_wasserstein(&a, &b, 2, 16, k).unwrap().value;
            let ba = sliced_wasserstein(&b, &a, 2, 16, k).unwrap().value;
            let bc = sliced_wasserstein(&b, &c, 2, 16, k).unwrap().value;
            let ac = sliced_wasserstein(&a, &c, 2, 16, k).unwrap().value;
            assert!(ab >= 0.0);
            assert!((ab - ba).abs() < 1e-12);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn moment_error_examples() {
        let target = GmmParams::single(vec![1.0, -2.0], 0.5).unwrap();
        let repeated: Vec<f64> = (0..200).flat_map(|_| [1.0, -2.0]).collect();
        let (m, c) = moment_errors(&repeated, &target).unwrap();
        assert_eq!(m.value, 0.0);
        let frob = (2.0f64 * 0.25).sqrt();
        assert!((c.value - frob).abs() < 1e-12);

        let ring = GmmParams::ring(4, 2.0, 0.3).unwrap();
        let sym: Vec<f64> = ring.means.iter().flatten().copied().collect();
        let (m, _) = moment_errors(&sym.repeat(30), &ring).unwrap();
        assert!(m.value < 1e-12);
    }

    #[test]
    fn moment_error_clt_band() {
        let target = GmmParams::ring(8, 4.0, 0.5).unwrap();
        let n = 1_000_000;
        let (x, _) = target.sample(n, &mut stream_rng(7, &[0]));
        let (m, _) = moment_errors(&x, &target).unwrap();
        // per-axis population std is sqrt(8.25); the norm of two axes picks up sqrt 2
        let band = 4.0 * (8.25f64).sqrt() * 2f64.sqrt() / (n as f64).sqrt();
        assert!(m.value <= band, "{} > {band}", m.value);
    }

    #[test]
    fn declared_cost_examples() {
        let s = Denoiser::gmm_oracle("S", GmmParams::single(vec![0.0], 1.0).unwrap())
            .unwrap()
            .with_cost(0.017)
            .unwrap();
        let xl = s.clone().with_id("XL").with_cost(0.165).unwrap();
        let roster = [s, xl];
        let half = partition_steps(&"S:0.5,XL:0.5".parse::<StitchSchedule>().unwrap(), 100).unwrap();
        let c = declared_cost(&half.assignment(), &roster, 1).unwrap();
        assert!((c - 9.1).abs() < 1e-12, "{c}");
        let all_s = declared_cost(&partition_steps(&StitchSchedule::single("S").unwrap(), 100).unwrap().assignment(), &roster, 1).unwrap();
        let all_xl = declared_cost(&partition_steps(&StitchSchedule::single("XL").unwrap(), 100).unwrap().assignment(), &roster, 1).unwrap();
        assert!((all_s / all_xl - 0.017 / 0.165).abs() < 1e-12);
        assert_eq!(declared_cost(&half.assignment(), &roster, 2).unwrap(), 2.0 * c);
    }

    #[test]
    fn median_handles_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
