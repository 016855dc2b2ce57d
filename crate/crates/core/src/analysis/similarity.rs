use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Trajectory;

/// Which per-step vector is compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operand {
    /// The state entering the step.
    #[default]
    State,
    /// The denoiser output at that state.
    Denoised,
}

impl FromStr for Operand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "state" => Ok(Operand::State),
            "denoised" => Ok(Operand::Denoised),
            _ => Err(Error::Config(format!("unknown similarity operand `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSimilarity {
    pub step: usize,
    pub t: usize,
    pub sigma: f64,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityProfile {
    pub pair: (String, String),
    pub n_chains: usize,
    pub operand: Operand,
    pub per_step: Vec<StepSimilarity>,
}

impl SimilarityProfile {
    /// Mean similarity over sampling steps `[start, end)`.
    pub fn mean_over(&self, start: usize, end: usize) -> f64 {
        let s = &self.per_step[start..end];
        s.iter().map(|p| p.similarity).sum::<f64>() / s.len() as f64
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "t", "sigma", "similarity"])?;
        for p in &self.per_step {
            w.write_record([p.step.to_string(), p.t.to_string(), p.sigma.to_string(), p.similarity.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// Cosine similarity, written so that swapping the arguments gives a
/// bit-identical result. Two zero vectors count as identical.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (dot / (na * nb)).clamp(-1.0, 1.0),
    }
}

/// Per-step cosine similarity between paired chains, averaged over pairs.
///
/// Chains are paired by position; paired chains should share their initial
/// noise (same sampling seed).
pub fn trajectory_similarity(
    a: &[Trajectory],
    b: &[Trajectory],
    pair: (&str, &str),
    operand: Operand,
) -> Result<SimilarityProfile> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Pairing(format!("chain counts differ or are zero: {} vs {}", a.len(), b.len())));
    }
    let steps = a[0].entries.len();
    for (ta, tb) in a.iter().zip(b) {
        if ta.entries.len() != steps || tb.entries.len() != steps {
            return Err(Error::Pairing("trajectories have different step counts".into()));
        }
        if ta.chain != tb.chain {
            return Err(Error::Pairing(format!("chain {} paired with chain {}", ta.chain, tb.chain)));
        }
    }
    let mut per_step = Vec::with_capacity(steps);
    for s in 0..steps {
        let mut total = 0.0;
        for (ta, tb) in a.iter().zip(b) {
            let (ea, eb) = (&ta.entries[s], &tb.entries[s]);
            if ea.latent.len() != eb.latent.len() {
                return Err(Error::shape(&[ea.latent.len()], &[eb.latent.len()]));
            }
            total += match operand {
                Operand::State => cosine(&ea.latent, &eb.latent),
                Operand::Denoised => cosine(&ea.denoised, &eb.denoised),
            };
        }
        let e = &a[0].entries[s];
        per_step.push(StepSimilarity {
            step: e.step,
            t: e.t,
            sigma: e.sigma,
            similarity: total / a.len() as f64,
        });
    }
    Ok(SimilarityProfile {
        pair: (pair.0.to_string(), pair.1.to_string()),
        n_chains: a.len(),
        operand,
        per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{degrade_oracle, DegradeMode, Denoiser, GmmParams};
    use crate::sampler::{sample, SamplerConfig};
    use crate::stitch::StitchSchedule;

    fn runs() -> (Vec<Trajectory>, Vec<Trajectory>) {
        let o = Denoiser::gmm_oracle("o", GmmParams::ring(8, 4.0, 0.3).unwrap()).unwrap();
        let w = degrade_oracle(&o, 0.5, DegradeMode::BlurResponsibilities).unwrap().with_id("w");
        let cfg = SamplerConfig::ddim(20).unwrap().recording(true);
        let roster = [o, w];
        let a = sample(&StitchSchedule::single("o").unwrap(), &roster, &cfg, &[2], 16, 3).unwrap();
        let b = sample(&StitchSchedule::single("w").unwrap(), &roster, &cfg, &[2], 16, 3).unwrap();
        (a.trajectories, b.trajectories)
    }

    #[test]
    fn self_similarity_is_one() {
        let (a, _) = runs();
        let p = trajectory_similarity(&a, &a, ("o", "o"), Operand::State).unwrap();
        assert_eq!(p.per_step.len(), 20);
        assert!(p.per_step.iter().all(|s| (s.similarity - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_step_is_zero() {
        let (a, _) = runs();
        let mut b = a.clone();
        for tr in &mut b {
            let v = tr.entries[5].latent.clone();
            tr.entries[5].latent = vec![-v[1], v[0]];
        }
        let p = trajectory_similarity(&a, &b, ("a", "b"), Operand::State).unwrap();
        assert!(p.per_step[5].similarity.abs() < 1e-12);
        assert!((p.per_step[4].similarity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symmetric_and_checked() {
        let (a, b) = runs();
        for op in [Operand::State, Operand::Denoised] {
            let ab = trajectory_similarity(&a, &b, ("a", "b"), op).unwrap();
            let ba = trajectory_similarity(&b, &a, ("b", "a"), op).unwrap();
            assert_eq!(ab.per_step, ba.per_step);
            assert!(ab.per_step.iter().all(|s| (-1.0..=1.0).contains(&s.similarity)));
        }
        assert!(matches!(
            trajectory_similarity(&a, &b[..3], ("a", "b"), Operand::State),
            Err(Error::Pairing(_))
        ));
    }
}
