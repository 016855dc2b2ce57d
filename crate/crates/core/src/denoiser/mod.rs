//! Costed denoisers `D(x; sigma, c)`.
//!
//! Three families share one evaluation contract: the closed-form mixture
//! posterior mean (the MSE-optimal "large model"), a controllably degraded
//! copy of it (a stand-in "small model" with a known quality gap), and
//! trained MLPs.

pub mod checkpoint;
pub mod gmm;
pub mod mlp;
pub mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentState;
use crate::schedule::{cfg_combine, Condition, GuidanceSpec};

pub use gmm::GmmParams;
pub use mlp::{Mlp, MlpShape, Optimizer};
pub use train::{
    finetune_denoiser, train_denoiser, DataSource, LearningRate, LossWeighting, SigmaSampling,
    TrainedDenoiser, TrainingConfig,
};

pub const ORACLE_COST: f64 = 10.0;
pub const DEGRADED_COST: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenoiserKind {
    GmmOracle,
    DegradedOracle,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegradeMode {
    /// Component responsibilities computed as if every component were
    /// broadened by `blur_scale * level / (1 - level)`, with the prior
    /// flattened by `1 - level`. Vanishes at large sigma, dominates near 0.
    BlurResponsibilities,
    /// Deterministic smooth bias field added to the oracle output, scaled by
    /// `level` and concentrated at small sigma.
    BiasNoise,
}

impl std::str::FromStr for DegradeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur-responsibilities" => Ok(Self::BlurResponsibilities),
            "bias-noise" => Ok(Self::BiasNoise),
            other => Err(Error::Domain(format!("unknown degradation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserModel {
    GmmOracle {
        gmm: GmmParams,
        labels: Option<Vec<u32>>,
    },
    Degraded {
        gmm: GmmParams,
        labels: Option<Vec<u32>>,
        level: f64,
        mode: DegradeMode,
        blur_scale: f64,
    },
    Mlp(Mlp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    id: String,
    cost_per_eval: f64,
    /// Extra multiply-adds per sample per evaluation, emulating the compute
    /// footprint of a network of the declared cost.
    emulated_macs: usize,
    model: DenoiserModel,
}

impl Denoiser {
    pub fn gmm_oracle(id: impl Into<String>, gmm: GmmParams) -> Result<Self> {
        gmm.validate()?;
        Ok(Self {
            id: id.into(),
            cost_per_eval: ORACLE_COST,
            emulated_macs: 0,
            model: DenoiserModel::GmmOracle { gmm, labels: None },
        })
    }

    pub fn mlp(id: impl Into<String>, net: Mlp) -> Self {
        let cost = net.shape().width as f64 / 32.0;
        Self {
            id: id.into(),
            cost_per_eval: cost,
            emulated_macs: 0,
            model: DenoiserModel::Mlp(net),
        }
    }

    pub(crate) fn from_parts(id: String, cost_per_eval: f64, emulated_macs: usize, model: DenoiserModel) -> Result<Self> {
        if !(cost_per_eval > 0.0 && cost_per_eval.is_finite()) {
            return Err(Error::Domain(format!("cost_per_eval must be positive, got {cost_per_eval}")));
        }
        Ok(Self {
            id,
            cost_per_eval,
            emulated_macs,
            model,
        })
    }

    /// Attaches class labels to mixture components for conditional sampling.
    pub fn with_labels(mut self, component_labels: Vec<u32>) -> Result<Self> {
        match &mut self.model {
            DenoiserModel::GmmOracle { gmm, labels } | DenoiserModel::Degraded { gmm, labels, .. } => {
                if component_labels.len() != gmm.n_components() {
                    return Err(Error::shape(&[gmm.n_components()], &[component_labels.len()]));
                }
                *labels = Some(component_labels);
                Ok(self)
            }
            DenoiserModel::Mlp(_) => Err(Error::Domain("mlp conditions are fixed by its embedding table".into())),
        }
    }

    pub fn with_cost(mut self, cost_per_eval: f64) -> Result<Self> {
        if !(cost_per_eval > 0.0 && cost_per_eval.is_finite()) {
            return Err(Error::Domain(format!("cost_per_eval must be positive, got {cost_per_eval}")));
        }
        self.cost_per_eval = cost_per_eval;
        Ok(self)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_emulated_macs(mut self, macs: usize) -> Self {
        self.emulated_macs = macs;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn cost_per_eval(&self) -> f64 {
        self.cost_per_eval
    }

    pub fn emulated_macs(&self) -> usize {
        self.emulated_macs
    }

    pub fn model(&self) -> &DenoiserModel {
        &self.model
    }

    pub fn kind(&self) -> DenoiserKind {
        match self.model {
            DenoiserModel::GmmOracle { .. } => DenoiserKind::GmmOracle,
            DenoiserModel::Degraded { .. } => DenoiserKind::DegradedOracle,
            DenoiserModel::Mlp(_) => DenoiserKind::Mlp,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.model {
            DenoiserModel::GmmOracle { gmm, .. } | DenoiserModel::Degraded { gmm, .. } => gmm.dim(),
            DenoiserModel::Mlp(net) => net.shape().dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.model {
            DenoiserModel::GmmOracle { gmm, .. } | DenoiserModel::Degraded { gmm, .. } => {
                gmm.n_components() * (gmm.dim() + 2)
            }
            DenoiserModel::Mlp(net) => net.shape().param_count(),
        }
    }

    fn component_subset(gmm: &GmmParams, labels: &Option<Vec<u32>>, cond: Condition) -> Result<Option<Vec<usize>>> {
        match cond {
            None => Ok(None),
            Some(c) => {
                let labels = labels.as_ref().ok_or(Error::UnknownCondition(c))?;
                let idx: Vec<usize> = (0..gmm.n_components()).filter(|&i| labels[i] == c).collect();
                if idx.is_empty() {
                    return Err(Error::UnknownCondition(c));
                }
                Ok(Some(idx))
            }
        }
    }

    /// One unguided evaluation over flattened rows of length `dim()`.
    pub fn denoise(&self, x: &[f64], sigma: f64, cond: Condition) -> Result<Vec<f64>> {
        let d = self.dim();
        if !x.len().is_multiple_of(d) {
            return Err(Error::shape(&[d], &[x.len()]));
        }
        let out = match &self.model {
            DenoiserModel::GmmOracle { gmm, labels } => {
                let subset = Self::component_subset(gmm, labels, cond)?;
                let mut out = vec![0.0; x.len()];
                for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
                    gmm.posterior_mean_with(xr, sigma, subset.as_deref(), 0.0, 1.0, or);
                }
                out
            }
            DenoiserModel::Degraded {
                gmm,
                labels,
                level,
                mode,
                blur_scale,
            } => {
                let subset = Self::component_subset(gmm, labels, cond)?;
                let mut out = vec![0.0; x.len()];
                match mode {
                    DegradeMode::BlurResponsibilities => {
                        if *level >= 1.0 {
                            let all: Vec<usize> = (0..gmm.n_components()).collect();
                            let idx = subset.as_deref().unwrap_or(&all);
                            for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
                                gmm.uniform_shrinkage(xr, sigma, idx, or);
                            }
                        } else {
                            let extra = blur_scale * level / (1.0 - level);
                            for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
                                gmm.posterior_mean_with(xr, sigma, subset.as_deref(), extra, 1.0 - level, or);
                            }
                        }
                    }
                    DegradeMode::BiasNoise => {
                        let sd2 = gmm.data_std().powi(2);
                        let amp = level * blur_scale.sqrt() * sd2 / (sd2 + sigma * sigma);
                        for (xr, or) in x.chunks(d).zip(out.chunks_mut(d)) {
                            gmm.posterior_mean_with(xr, sigma, subset.as_deref(), 0.0, 1.0, or);
                            if sigma > 0.0 && amp > 0.0 {
                                add_bias_field(xr, amp, or);
                            }
                        }
                    }
                }
                out
            }
            DenoiserModel::Mlp(net) => net.denoise(x, sigma, cond)?,
        };
        if self.emulated_macs > 0 {
            emulate_work(x, d, self.emulated_macs);
        }
        Ok(out)
    }
}

/// Smooth deterministic field `sin(x . a_j + phi_j)` per output coordinate.
fn add_bias_field(x: &[f64], amp: f64, out: &mut [f64]) {
    let d = x.len();
    for (j, o) in out.iter_mut().enumerate() {
        let mut arg = 0.7 * j as f64 + 0.3;
        for (i, xv) in x.iter().enumerate() {
            let a = 0.9 * (((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5);
            arg += a * xv / (d as f64).sqrt();
        }
        *o += amp * arg.sin();
    }
}

/// Burns `macs` dependent multiply-adds per row. A serial chain cannot be
/// vectorised, which keeps its speed steady on a shared core.
fn emulate_work(x: &[f64], d: usize, macs: usize) {
    let mut total = 0.0;
    for row in x.chunks(d) {
        let mut acc = row[0];
        for k in 0..macs {
            acc = acc * 0.999_999 + (k & 7) as f64 * 1e-9;
        }
        total += acc;
    }
    std::hint::black_box(total);
}

/// Returns a weaker copy of a mixture oracle.
///
/// `level = 0` is behaviourally identical to the oracle; `level = 1` with
/// [`DegradeMode::BlurResponsibilities`] shrinks toward the global component
/// mean with uniform responsibilities. The copy is declared ten times
/// cheaper than the oracle.
pub fn degrade_oracle(oracle: &Denoiser, level: f64, mode: DegradeMode) -> Result<Denoiser> {
    degrade_oracle_with_scale(oracle, level, mode, 1.0)
}

pub fn degrade_oracle_with_scale(oracle: &Denoiser, level: f64, mode: DegradeMode, blur_scale: f64) -> Result<Denoiser> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::Domain(format!("degradation level must lie in [0, 1], got {level}")));
    }
    if !(blur_scale > 0.0 && blur_scale.is_finite()) {
        return Err(Error::Domain(format!("blur scale must be positive, got {blur_scale}")));
    }
    let DenoiserModel::GmmOracle { gmm, labels } = &oracle.model else {
        return Err(Error::Domain(format!("`{}` is not a mixture oracle", oracle.id)));
    };
    let mode_name = match mode {
        DegradeMode::BlurResponsibilities => "blur",
        DegradeMode::BiasNoise => "bias",
    };
    Ok(Denoiser {
        id: format!("{}-{mode_name}{level}", oracle.id),
        cost_per_eval: oracle.cost_per_eval / 10.0,
        emulated_macs: oracle.emulated_macs / 10,
        model: DenoiserModel::Degraded {
            gmm: gmm.clone(),
            labels: labels.clone(),
            level,
            mode,
            blur_scale,
        },
    })
}

/// Evaluation counts and declared cost accumulated per denoiser.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalLedger {
    pub evals: BTreeMap<String, u64>,
    pub declared_cost: f64,
}

impl EvalLedger {
    pub fn record(&mut self, denoiser: &Denoiser, evals: u64) {
        *self.evals.entry(denoiser.id.clone()).or_default() += evals;
        self.declared_cost += denoiser.cost_per_eval * evals as f64;
    }

    pub fn total_evals(&self) -> u64 {
        self.evals.values().sum()
    }

    pub fn merge(&mut self, other: &EvalLedger) {
        for (k, v) in &other.evals {
            *self.evals.entry(k.clone()).or_default() += v;
        }
        self.declared_cost += other.declared_cost;
    }
}

/// Guided or unguided evaluation with cost accounting.
///
/// With guidance and `scale > 0` the conditional and null-conditioned outputs
/// are combined by [`cfg_combine`] and two evaluations per row are recorded;
/// otherwise one.
pub fn evaluate(
    denoiser: &Denoiser,
    x: &LatentState,
    guidance: Option<&GuidanceSpec>,
    ledger: &mut EvalLedger,
) -> Result<Vec<f64>> {
    if x.dim() != denoiser.dim() {
        return Err(Error::shape(&[denoiser.dim()], x.sample_shape()));
    }
    let rows = x.batch() as u64;
    match guidance {
        Some(g) if g.scale > 0.0 => {
            let cond = denoiser.denoise(x.data(), x.sigma(), Some(g.condition))?;
            let uncond = denoiser.denoise(x.data(), x.sigma(), g.null_condition())?;
            ledger.record(denoiser, 2 * rows);
            cfg_combine(&cond, &uncond, g.scale)
        }
        Some(g) => {
            let out = denoiser.denoise(x.data(), x.sigma(), Some(g.condition))?;
            ledger.record(denoiser, rows);
            Ok(out)
        }
        None => {
            let out = denoiser.denoise(x.data(), x.sigma(), None)?;
            ledger.record(denoiser, rows);
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal_vec, stream_rng};
    use rand::Rng;

    fn ring_oracle() -> Denoiser {
        Denoiser::gmm_oracle("oracle", GmmParams::ring(8, 4.0, 0.3).unwrap()).unwrap()
    }

    #[test]
    fn level_zero_is_identity() {
        let oracle = ring_oracle();
        let weak = degrade_oracle(&oracle, 0.0, DegradeMode::BlurResponsibilities).unwrap();
        assert!(weak.cost_per_eval() < oracle.cost_per_eval());
        let mut rng = stream_rng(3, &[1]);
        for _ in 0..1000 {
            let sigma = 10f64.powf(rng.random_range(-3.0..2.0));
            let x: Vec<f64> = standard_normal_vec(&mut rng, 2).iter().map(|v| v * 5.0).collect();
            assert_eq!(weak.denoise(&x, sigma, None).unwrap(), oracle.denoise(&x, sigma, None).unwrap());
        }
        let bias = degrade_oracle(&oracle, 0.0, DegradeMode::BiasNoise).unwrap();
        assert_eq!(bias.denoise(&[1.0, 2.0], 0.5, None).unwrap(), oracle.denoise(&[1.0, 2.0], 0.5, None).unwrap());
    }

    #[test]
    fn level_one_is_global_shrinkage() {
        let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
        let oracle = Denoiser::gmm_oracle("o", gmm.clone()).unwrap();
        let weak = degrade_oracle(&oracle, 1.0, DegradeMode::BlurResponsibilities).unwrap();
        let mut rng = stream_rng(4, &[1]);
        for _ in 0..100 {
            let sigma = rng.random_range(0.01..20.0);
            let x = [rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0)];
            let out = weak.denoise(&x, sigma, None).unwrap();
            // uniform responsibilities over the ring: mean of per-component shrinkage
            let v = 0.09;
            let s2 = sigma * sigma;
            let mut expect = [0.0, 0.0];
            for m in &gmm.means {
                for j in 0..2 {
                    expect[j] += (v * x[j] + s2 * m[j]) / (v + s2) / 8.0;
                }
            }
            assert!((out[0] - expect[0]).abs() < 1e-12 && (out[1] - expect[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn level_out_of_range() {
        let oracle = ring_oracle();
        assert!(degrade_oracle(&oracle, 1.5, DegradeMode::BiasNoise).is_err());
        assert!(degrade_oracle(&oracle, -0.1, DegradeMode::BlurResponsibilities).is_err());
        let weak = degrade_oracle(&oracle, 0.5, DegradeMode::BiasNoise).unwrap();
        assert!(degrade_oracle(&weak, 0.5, DegradeMode::BiasNoise).is_err());
    }

    fn denoising_mse(d: &Denoiser, gmm: &GmmParams, n: usize, seed: u64) -> f64 {
        let mut rng = stream_rng(seed, &[0]);
        let (x0, _) = gmm.sample(n, &mut rng);
        let mut total = 0.0;
        for row in x0.chunks(2) {
            let sigma = 10f64.powf(rng.random_range(-2.0..1.0));
            let noise = standard_normal_vec(&mut rng, 2);
            let x: Vec<f64> = row.iter().zip(&noise).map(|(a, b)| a + sigma * b).collect();
            let out = d.denoise(&x, sigma, None).unwrap();
            total += out.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        total / n as f64
    }

    #[test]
    fn half_degraded_is_worse_than_oracle() {
        let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
        let oracle = Denoiser::gmm_oracle("o", gmm.clone()).unwrap();
        for mode in [DegradeMode::BlurResponsibilities, DegradeMode::BiasNoise] {
            let weak = degrade_oracle(&oracle, 0.5, mode).unwrap();
            let a = denoising_mse(&oracle, &gmm, 10_000, 9);
            let b = denoising_mse(&weak, &gmm, 10_000, 9);
            assert!(a <= b, "{mode:?}: oracle {a} vs degraded {b}");
        }
    }

    #[test]
    fn guided_evaluation_accounting() {
        let gmm = GmmParams::ring(4, 2.0, 0.2).unwrap();
        let oracle = Denoiser::gmm_oracle("o", gmm).unwrap().with_labels(vec![0, 1, 2, 3]).unwrap();
        let x = LatentState::new(vec![0.5, 0.2], vec![1, 2], 1.0).unwrap();
        let mut ledger = EvalLedger::default();
        let g0 = GuidanceSpec::new(0.0, 1).unwrap();
        evaluate(&oracle, &x, Some(&g0), &mut ledger).unwrap();
        assert_eq!(ledger.total_evals(), 1);

        let mut ledger = EvalLedger::default();
        let g = GuidanceSpec::new(1.5, 1).unwrap();
        for _ in 0..7 {
            evaluate(&oracle, &x, Some(&g), &mut ledger).unwrap();
        }
        assert_eq!(ledger.total_evals(), 14);
        assert_eq!(ledger.declared_cost, 14.0 * oracle.cost_per_eval());

        let bad = GuidanceSpec::new(1.0, 9).unwrap();
        assert!(matches!(
            evaluate(&oracle, &x, Some(&bad), &mut ledger),
            Err(Error::UnknownCondition(9))
        ));
    }

    #[test]
    fn guidance_cancels_when_condition_is_uninformative() {
        // every component carries label 0, so conditional == unconditional
        let gmm = GmmParams::ring(4, 2.0, 0.2).unwrap();
        let oracle = Denoiser::gmm_oracle("o", gmm).unwrap().with_labels(vec![0; 4]).unwrap();
        let x = LatentState::new(vec![0.5, 0.2, -1.0, 0.3], vec![2, 2], 0.7).unwrap();
        let mut ledger = EvalLedger::default();
        let guided = evaluate(&oracle, &x, Some(&GuidanceSpec::new(1.5, 0).unwrap()), &mut ledger).unwrap();
        let plain = evaluate(&oracle, &x, None, &mut ledger).unwrap();
        for (a, b) in guided.iter().zip(&plain) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let oracle = ring_oracle();
        let weak = degrade_oracle(&oracle, 0.5, DegradeMode::BiasNoise).unwrap();
        let x = [0.3, 4.1, -2.0, 0.5];
        assert_eq!(weak.denoise(&x, 0.2, None).unwrap(), weak.denoise(&x, 0.2, None).unwrap());
    }
}
