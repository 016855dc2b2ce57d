//! Reverse-process steppers and the stitched sampling loop.
//!
//! All three steppers work directly in sigma. With `q = sigma_next / sigma_cur`
//! the Euler step of the probability-flow ODE is `q * x + (1 - q) * D`, which
//! is the form used below because it lands exactly on `D` when
//! `sigma_next = 0`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{evaluate, Denoiser, EvalLedger};
use crate::error::{Error, Result};
use crate::latent::LatentState;
use crate::rng::{fill_standard_normal, stream, stream_rng, StreamRng};
use crate::schedule::{GuidanceSpec, NoiseSchedule};
use crate::stitch::{partition_steps, StepAssignment, StitchSchedule};

/// Chains advanced together through one denoiser call. Results do not depend
/// on this value because every chain owns its random streams.
const CHUNK: usize = 64;

fn check_order(sigma_cur: f64, sigma_next: f64) -> Result<()> {
    if !(sigma_next >= 0.0 && sigma_next < sigma_cur) {
        return Err(Error::Ordering {
            current: sigma_cur,
            next: sigma_next,
        });
    }
    Ok(())
}

fn euler_to(denoised: &[f64], x: &LatentState, target: f64) -> Vec<f64> {
    let q = target / x.sigma();
    x.data().iter().zip(denoised).map(|(xv, dv)| q * xv + (1.0 - q) * dv).collect()
}

fn check_len(denoised: &[f64], x: &LatentState) -> Result<()> {
    if denoised.len() != x.data().len() {
        return Err(Error::shape(&[x.data().len()], &[denoised.len()]));
    }
    Ok(())
}

/// Deterministic Euler step of the probability-flow ODE from `x.sigma()` to
/// `sigma_next`.
pub fn ddim_step(denoised: &[f64], x: &LatentState, sigma_next: f64) -> Result<LatentState> {
    check_order(x.sigma(), sigma_next)?;
    check_len(denoised, x)?;
    Ok(LatentState::from_parts_unchecked(
        euler_to(denoised, x, sigma_next),
        x.shape().to_vec(),
        sigma_next,
    ))
}

/// Ancestral step: Euler to `sigma_down = sigma_next^2 / sigma_cur`, then add
/// fresh noise of std `sigma_up = sqrt(sigma_next^2 (sigma_cur^2 - sigma_next^2)) / sigma_cur`
/// so the marginal std returns to `sigma_next`. No noise is drawn when
/// `sigma_next = 0`.
pub fn ddpm_step<R: Rng + ?Sized>(
    denoised: &[f64],
    x: &LatentState,
    sigma_next: f64,
    rng: &mut R,
) -> Result<LatentState> {
    check_order(x.sigma(), sigma_next)?;
    check_len(denoised, x)?;
    if sigma_next == 0.0 {
        return ddim_step(denoised, x, 0.0);
    }
    let sc = x.sigma();
    let sigma_up = sigma_next * ((sc * sc - sigma_next * sigma_next).max(0.0)).sqrt() / sc;
    let sigma_down = sigma_next * sigma_next / sc;
    let mut data = euler_to(denoised, x, sigma_down);
    let mut noise = vec![0.0; data.len()];
    fill_standard_normal(rng, &mut noise);
    for (d, n) in data.iter_mut().zip(&noise) {
        *d += sigma_up * n;
    }
    Ok(LatentState::from_parts_unchecked(data, x.shape().to_vec(), sigma_next))
}

/// DPM-Solver++(2M) step in data-prediction form.
///
/// With `lambda = -ln sigma`, `h = lambda_next - lambda_cur` and
/// `r = (lambda_cur - lambda_prev) / h`, the corrected prediction is
/// `D + (D - D_prev) / (2r)` and the update is
/// `x_next = (sigma_next / sigma_cur) x + (1 - sigma_next / sigma_cur) D_corr`.
/// Without history, or when stepping to zero, the correction is skipped and
/// the step is first order (identical to [`ddim_step`]).
pub fn dpm_solver_pp_2m_step(
    denoised_cur: &[f64],
    denoised_prev: Option<&[f64]>,
    x: &LatentState,
    sigma_prev: Option<f64>,
    sigma_next: f64,
) -> Result<LatentState> {
    check_order(x.sigma(), sigma_next)?;
    check_len(denoised_cur, x)?;
    let (Some(prev), Some(sp)) = (denoised_prev, sigma_prev) else {
        return ddim_step(denoised_cur, x, sigma_next);
    };
    if sigma_next == 0.0 {
        return ddim_step(denoised_cur, x, sigma_next);
    }
    check_len(prev, x)?;
    let sc = x.sigma();
    if sp <= sc {
        return Err(Error::Ordering { current: sp, next: sc });
    }
    let h = (sc / sigma_next).ln();
    let h_last = (sp / sc).ln();
    let k = 1.0 / (2.0 * (h_last / h));
    let corrected: Vec<f64> = denoised_cur
        .iter()
        .zip(prev)
        .map(|(d, p)| d + k * (d - p))
        .collect();
    ddim_step(&corrected, x, sigma_next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    DpmSolverPp2m,
}

impl SamplerKind {
    pub fn name(&self) -> &'static str {
        match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim => "ddim",
            SamplerKind::DpmSolverPp2m => "dpm-solver-pp-2m",
        }
    }
}

impl std::str::FromStr for SamplerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [SamplerKind::Ddpm, SamplerKind::Ddim, SamplerKind::DpmSolverPp2m]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown sampler `{s}`")))
    }
}

/// Step count lives in `schedule.steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    #[serde(default)]
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub guidance: Option<GuidanceSpec>,
    #[serde(default)]
    pub record_trajectory: bool,
}

impl SamplerConfig {
    pub fn new(kind: SamplerKind, schedule: NoiseSchedule) -> Self {
        Self {
            kind,
            schedule,
            guidance: None,
            record_trajectory: false,
        }
    }

    pub fn ddim(steps: usize) -> Result<Self> {
        Ok(Self::new(SamplerKind::Ddim, NoiseSchedule::default().with_steps(steps)?))
    }

    pub fn with_guidance(mut self, guidance: GuidanceSpec) -> Self {
        self.guidance = Some(guidance);
        self
    }

    pub fn recording(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    pub fn steps(&self) -> usize {
        self.schedule.steps
    }

    pub fn evals_per_step(&self) -> u64 {
        self.guidance.as_ref().map_or(1, GuidanceSpec::evals_per_step)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.clone().validated()?;
        if self.kind == SamplerKind::DpmSolverPp2m && self.steps() < 2 {
            return Err(Error::Config("dpm-solver-pp-2m needs at least 2 steps".into()));
        }
        Ok(())
    }
}

/// One sampling step of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryEntry {
    /// Sampling-order index; step 0 starts at `sigma_max`.
    pub step: usize,
    /// Ladder index of the level entering this step, `T - step`.
    pub t: usize,
    pub sigma: f64,
    /// State entering the step.
    pub latent: Vec<f64>,
    /// Denoiser output at that state (after guidance).
    pub denoised: Vec<f64>,
    pub denoiser_id: String,
    pub eval_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub chain: usize,
    pub entries: Vec<TrajectoryEntry>,
    pub final_state: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    /// Terminal states at sigma 0, chains in order.
    pub samples: LatentState,
    /// Empty unless `record_trajectory` is set.
    pub trajectories: Vec<Trajectory>,
    pub ledger: EvalLedger,
}

fn lookup<'a>(roster: &'a [Denoiser], id: &str) -> Result<&'a Denoiser> {
    roster
        .iter()
        .find(|d| d.id() == id)
        .ok_or_else(|| Error::UnknownDenoiser(id.to_string()))
}

/// Runs a stitched schedule: partitions the steps and dispatches each to the
/// named denoiser in `roster`.
pub fn sample(
    schedule: &StitchSchedule,
    roster: &[Denoiser],
    cfg: &SamplerConfig,
    sample_shape: &[usize],
    n_chains: usize,
    seed: u64,
) -> Result<SampleOutput> {
    let assignment = partition_steps(schedule, cfg.steps())?.assignment();
    sample_assignment(&assignment, roster, cfg, sample_shape, n_chains, seed)
}

/// Runs an explicit per-step assignment.
///
/// Chain `i` draws its initial state from stream `(seed, [INIT, i])` and its
/// ancestral noise from `(seed, [ANCESTRAL, i])`, so the output for a chain
/// does not depend on how chains are grouped or how many threads run.
pub fn sample_assignment(
    assignment: &StepAssignment,
    roster: &[Denoiser],
    cfg: &SamplerConfig,
    sample_shape: &[usize],
    n_chains: usize,
    seed: u64,
) -> Result<SampleOutput> {
    cfg.validate()?;
    let steps = cfg.steps();
    if assignment.len() != steps {
        return Err(Error::InvalidSchedule(format!(
            "assignment covers {} steps, sampler runs {steps}",
            assignment.len()
        )));
    }
    let dim: usize = sample_shape.iter().product();
    let plan: Vec<&Denoiser> = assignment
        .steps
        .iter()
        .map(|id| lookup(roster, id))
        .collect::<Result<_>>()?;
    for d in &plan {
        if d.dim() != dim {
            return Err(Error::shape(&[d.dim()], sample_shape));
        }
    }
    let levels = cfg.schedule.sampling_levels();

    let starts: Vec<usize> = (0..n_chains).step_by(CHUNK).collect();
    let chunks: Vec<(Vec<f64>, Vec<Trajectory>, EvalLedger)> = starts
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(n_chains);
            run_chunk(start..end, &plan, cfg, &levels, sample_shape, seed)
        })
        .collect::<Result<_>>()?;

    let mut data = Vec::with_capacity(n_chains * dim);
    let mut trajectories = Vec::new();
    let mut ledger = EvalLedger::default();
    for (d, t, l) in chunks {
        data.extend(d);
        trajectories.extend(t);
        ledger.merge(&l);
    }
    let mut shape = vec![n_chains];
    shape.extend_from_slice(sample_shape);
    Ok(SampleOutput {
        samples: LatentState::from_parts_unchecked(data, shape, 0.0),
        trajectories,
        ledger,
    })
}

fn run_chunk(
    chains: std::ops::Range<usize>,
    plan: &[&Denoiser],
    cfg: &SamplerConfig,
    levels: &[f64],
    sample_shape: &[usize],
    seed: u64,
) -> Result<(Vec<f64>, Vec<Trajectory>, EvalLedger)> {
    let dim: usize = sample_shape.iter().product();
    let n = chains.len();
    let sigma_max = levels[0];
    let mut data = vec![0.0; n * dim];
    for (row, chain) in data.chunks_mut(dim).zip(chains.clone()) {
        fill_standard_normal(&mut stream_rng(seed, &[stream::INIT, chain as u64]), row);
        row.iter_mut().for_each(|v| *v *= sigma_max);
    }
    let mut ancestral: Vec<StreamRng> = chains
        .clone()
        .map(|c| stream_rng(seed, &[stream::ANCESTRAL, c as u64]))
        .collect();

    let mut shape = vec![n];
    shape.extend_from_slice(sample_shape);
    let mut x = LatentState::from_parts_unchecked(data, shape, sigma_max);
    let mut ledger = EvalLedger::default();
    let mut trajectories: Vec<Trajectory> = if cfg.record_trajectory {
        chains
            .clone()
            .map(|chain| Trajectory {
                chain,
                entries: Vec::with_capacity(plan.len()),
                final_state: Vec::new(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let steps = plan.len();
    let mut history: Option<(Vec<f64>, f64)> = None;

    for (step, denoiser) in plan.iter().enumerate() {
        let sigma_cur = levels[step];
        let sigma_next = levels[step + 1];
        let before = ledger.total_evals();
        let denoised = evaluate(denoiser, &x, cfg.guidance.as_ref(), &mut ledger)?;
        let per_chain = (ledger.total_evals() - before) / n as u64;
        for (i, tr) in trajectories.iter_mut().enumerate() {
            tr.entries.push(TrajectoryEntry {
                step,
                t: steps - step,
                sigma: sigma_cur,
                latent: x.row(i).to_vec(),
                denoised: denoised[i * dim..(i + 1) * dim].to_vec(),
                denoiser_id: denoiser.id().to_string(),
                eval_count: per_chain,
            });
        }
        x = match cfg.kind {
            SamplerKind::Ddim => ddim_step(&denoised, &x, sigma_next)?,
            SamplerKind::Ddpm => ancestral_chunk(&denoised, &x, sigma_next, &mut ancestral, dim)?,
            SamplerKind::DpmSolverPp2m => {
                let (prev, sp) = match &history {
                    Some((d, s)) => (Some(d.as_slice()), Some(*s)),
                    None => (None, None),
                };
                dpm_solver_pp_2m_step(&denoised, prev, &x, sp, sigma_next)?
            }
        };
        if cfg.kind == SamplerKind::DpmSolverPp2m {
            history = Some((denoised, sigma_cur));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite state after step {step}")));
        }
    }
    for (i, tr) in trajectories.iter_mut().enumerate() {
        tr.final_state = x.row(i).to_vec();
    }
    Ok((x.into_data(), trajectories, ledger))
}

/// Ancestral step with one noise stream per chain.
fn ancestral_chunk(
    denoised: &[f64],
    x: &LatentState,
    sigma_next: f64,
    rngs: &mut [StreamRng],
    dim: usize,
) -> Result<LatentState> {
    let mut data = Vec::with_capacity(x.data().len());
    for (i, rng) in rngs.iter_mut().enumerate() {
        let row = LatentState::from_parts_unchecked(x.row(i).to_vec(), vec![1, dim], x.sigma());
        let stepped = ddpm_step(&denoised[i * dim..(i + 1) * dim], &row, sigma_next, rng)?;
        data.extend(stepped.into_data());
    }
    Ok(LatentState::from_parts_unchecked(data, x.shape().to_vec(), sigma_next))
}

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"TSTJ";

/// CSV dump: `chain_id, step, t, sigma, denoiser_id` then either the
/// flattened latent (`x0, x1, ...`) or, for grid data, per-step summary
/// statistics (`mean, std, min, max`).
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory], sample_shape: &[usize]) -> Result<()> {
    let grid = sample_shape.len() >= 2;
    let dim: usize = sample_shape.iter().product();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = ["chain_id", "step", "t", "sigma", "denoiser_id"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    if grid {
        header.extend(["mean", "std", "min", "max"].iter().map(|s| s.to_string()));
    } else {
        header.extend((0..dim).map(|i| format!("x{i}")));
    }
    w.write_record(&header)?;
    for tr in trajectories {
        for e in &tr.entries {
            let mut rec = vec![
                tr.chain.to_string(),
                e.step.to_string(),
                e.t.to_string(),
                e.sigma.to_string(),
                e.denoiser_id.clone(),
            ];
            if grid {
                let n = e.latent.len() as f64;
                let mean = e.latent.iter().sum::<f64>() / n;
                let var = e.latent.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                let min = e.latent.iter().copied().fold(f64::INFINITY, f64::min);
                let max = e.latent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                rec.extend([mean, var.sqrt(), min, max].iter().map(|v| v.to_string()));
            } else {
                rec.extend(e.latent.iter().map(|v| v.to_string()));
            }
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TrajectoryHeader {
    sample_shape: Vec<usize>,
    chains: usize,
    steps: usize,
    denoiser_ids: Vec<String>,
}

/// Binary dump: magic `TSTJ`, u32 LE header length, JSON header, then for each
/// chain and step `sigma` followed by the latent and denoised output, and
/// finally the terminal state, all as f64 LE.
pub fn encode_trajectories(trajectories: &[Trajectory], sample_shape: &[usize]) -> Result<Vec<u8>> {
    let steps = trajectories.first().map_or(0, |t| t.entries.len());
    let header = TrajectoryHeader {
        sample_shape: sample_shape.to_vec(),
        chains: trajectories.len(),
        steps,
        denoiser_ids: trajectories
            .first()
            .map(|t| t.entries.iter().map(|e| e.denoiser_id.clone()).collect())
            .unwrap_or_default(),
    };
    let text = serde_json::to_vec(&header)?;
    let mut out = Vec::new();
    out.extend_from_slice(TRAJECTORY_MAGIC);
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(&text);
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for tr in trajectories {
        if tr.entries.len() != steps {
            return Err(Error::Pairing("trajectories differ in length".into()));
        }
        for e in &tr.entries {
            put(e.sigma);
            e.latent.iter().for_each(|&v| put(v));
            e.denoised.iter().for_each(|&v| put(v));
        }
        tr.final_state.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

pub fn save_trajectories(path: &Path, trajectories: &[Trajectory], sample_shape: &[usize], binary: bool) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    if binary {
        let bytes = encode_trajectories(trajectories, sample_shape)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    } else {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        write_trajectories_csv(std::io::BufWriter::new(f), trajectories, sample_shape)
    }
}
