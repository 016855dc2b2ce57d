//! Noise-level ladders, the forward perturbation, and the score and guidance
//! identities shared by every sampler.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentState;
use crate::rng::fill_standard_normal;

/// Continuous VP time endpoints for the linear-beta ladder.
const VP_BETA_MIN: f64 = 0.1;
const VP_BETA_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    VariancePreservingLinear,
    KarrasPower,
}

/// Discrete ladder `sigma(0) = 0 < sigma(1) = sigma_min < ... < sigma(T) = sigma_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
}

fn default_rho() -> f64 {
    7.0
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::KarrasPower,
            steps: 100,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

impl NoiseSchedule {
    pub fn karras(steps: usize, sigma_min: f64, sigma_max: f64, rho: f64) -> Result<Self> {
        Self {
            kind: ScheduleKind::KarrasPower,
            steps,
            sigma_min,
            sigma_max,
            rho,
        }
        .validated()
    }

    pub fn vp_linear(steps: usize, sigma_min: f64, sigma_max: f64) -> Result<Self> {
        Self {
            kind: ScheduleKind::VariancePreservingLinear,
            steps,
            sigma_min,
            sigma_max,
            rho: default_rho(),
        }
        .validated()
    }

    /// Same ladder shape with a different step count.
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        Self {
            steps,
            ..self.clone()
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.steps == 0 {
            return Err(Error::Domain("schedule needs at least one step".into()));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::Domain(format!(
                "need 0 < sigma_min < sigma_max, got {} and {}",
                self.sigma_min, self.sigma_max
            )));
        }
        if self.kind == ScheduleKind::KarrasPower && !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Domain(format!("rho must be positive, got {}", self.rho)));
        }
        Ok(self)
    }

    /// Noise level at discrete index `t`.
    pub fn sigma_at(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::StepOutOfRange {
                t,
                steps: self.steps,
            });
        }
        if t == 0 {
            return Ok(0.0);
        }
        if t == self.steps {
            return Ok(self.sigma_max);
        }
        // position of level t among the T nonzero levels, 0 at sigma_min
        let frac = (t - 1) as f64 / (self.steps - 1) as f64;
        Ok(match self.kind {
            ScheduleKind::KarrasPower => {
                let lo = self.sigma_min.powf(1.0 / self.rho);
                let hi = self.sigma_max.powf(1.0 / self.rho);
                (lo + frac * (hi - lo)).powf(self.rho)
            }
            ScheduleKind::VariancePreservingLinear => {
                let u_lo = vp_time(self.sigma_min);
                let u_hi = vp_time(self.sigma_max);
                vp_sigma(u_lo + frac * (u_hi - u_lo))
            }
        })
    }

    /// All levels `sigma(0..=T)`.
    pub fn levels(&self) -> Vec<f64> {
        (0..=self.steps)
            .map(|t| self.sigma_at(t).expect("index within range"))
            .collect()
    }

    /// Levels in sampling order, `sigma(T), sigma(T-1), ..., sigma(0)`.
    pub fn sampling_levels(&self) -> Vec<f64> {
        let mut l = self.levels();
        l.reverse();
        l
    }

    /// Level at which sampling step `s` starts (`sigma(T - s)`).
    pub fn level_for_step(&self, step: usize) -> Result<f64> {
        if step >= self.steps {
            return Err(Error::StepOutOfRange {
                t: step,
                steps: self.steps,
            });
        }
        self.sigma_at(self.steps - step)
    }
}

/// Integrated beta of the continuous linear VP process.
fn vp_integral(u: f64) -> f64 {
    VP_BETA_MIN * u + 0.5 * (VP_BETA_MAX - VP_BETA_MIN) * u * u
}

fn vp_sigma(u: f64) -> f64 {
    vp_integral(u).exp_m1().sqrt()
}

fn vp_time(sigma: f64) -> f64 {
    let b = (sigma * sigma).ln_1p();
    let d = VP_BETA_MAX - VP_BETA_MIN;
    (-VP_BETA_MIN + (VP_BETA_MIN * VP_BETA_MIN + 2.0 * d * b).sqrt()) / d
}

/// `x0 + sigma * n` with `n` standard normal.
pub fn perturb<R: Rng + ?Sized>(x0: &LatentState, sigma: f64, rng: &mut R) -> Result<LatentState> {
    if x0.sigma() != 0.0 {
        return Err(Error::Domain(format!(
            "perturb expects clean data, got sigma = {}",
            x0.sigma()
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("perturbation sigma must be positive, got {sigma}")));
    }
    let mut noise = vec![0.0; x0.data().len()];
    fill_standard_normal(rng, &mut noise);
    let data = x0
        .data()
        .iter()
        .zip(&noise)
        .map(|(x, n)| x + sigma * n)
        .collect();
    Ok(LatentState::from_parts_unchecked(data, x0.shape().to_vec(), sigma))
}

/// Score estimate `(denoised - x) / sigma^2`.
pub fn score_from_denoiser(denoised: &[f64], x: &LatentState) -> Result<Vec<f64>> {
    if x.sigma() == 0.0 {
        return Err(Error::ZeroSigma);
    }
    if denoised.len() != x.data().len() {
        return Err(Error::shape(&[x.data().len()], &[denoised.len()]));
    }
    let s2 = x.sigma() * x.sigma();
    Ok(denoised
        .iter()
        .zip(x.data())
        .map(|(d, xv)| (d - xv) / s2)
        .collect())
}

/// Classifier-free guidance: `(1 + s) * cond - s * uncond`.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], scale: f64) -> Result<Vec<f64>> {
    if cond.len() != uncond.len() {
        return Err(Error::shape(&[cond.len()], &[uncond.len()]));
    }
    if !(scale >= 0.0) {
        return Err(Error::Domain(format!("guidance scale must be >= 0, got {scale}")));
    }
    Ok(cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| (1.0 + scale) * c - scale * u)
        .collect())
}

/// Class condition passed to a denoiser; `None` is the null condition.
pub type Condition = Option<u32>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceSpec {
    pub scale: f64,
    pub condition: u32,
}

impl GuidanceSpec {
    pub fn new(scale: f64, condition: u32) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::Domain(format!("guidance scale must be >= 0, got {scale}")));
        }
        Ok(Self { scale, condition })
    }

    /// The designated unconditional input.
    pub fn null_condition(&self) -> Condition {
        None
    }

    /// Denoiser evaluations per step.
    pub fn evals_per_step(&self) -> u64 {
        if self.scale > 0.0 {
            2
        } else {
            1
        }
    }
}
