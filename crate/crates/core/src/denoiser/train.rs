use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use super::mlp::{precondition, Mlp, MlpShape, Optimizer, OptimizerState};
use super::{Denoiser, DenoiserModel};
use crate::error::{Error, Result};
use crate::rng::{fill_standard_normal, stream, stream_rng, StreamRng};
use crate::schedule::Condition;

/// Source of clean training samples.
pub trait DataSource: Sync {
    fn dim(&self) -> usize;

    /// Number of class labels; 0 for unconditional data.
    fn n_classes(&self) -> u32;

    /// Flattened rows plus one label per row.
    fn sample_batch(&self, n: usize, rng: &mut StreamRng) -> (Vec<f64>, Vec<Condition>);

    fn sigma_data(&self) -> f64;
}

impl DataSource for GmmParams {
    fn dim(&self) -> usize {
        GmmParams::dim(self)
    }

    fn n_classes(&self) -> u32 {
        0
    }

    fn sample_batch(&self, n: usize, rng: &mut StreamRng) -> (Vec<f64>, Vec<Condition>) {
        (self.sample(n, rng).0, vec![None; n])
    }

    fn sigma_data(&self) -> f64 {
        self.data_std()
    }
}

/// `lambda(sigma)` in the denoising loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossWeighting {
    Uniform,
    /// `1 / sigma^2 + 1 / sigma_data^2`, flattening the loss across levels.
    #[default]
    Snr,
}

/// Distribution `p(sigma)` of training noise levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum SigmaSampling {
    LogUniform { lo: f64, hi: f64 },
    LogNormal { mean: f64, std: f64 },
}

impl Default for SigmaSampling {
    fn default() -> Self {
        SigmaSampling::LogUniform { lo: 0.002, hi: 80.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningRate {
    pub base: f64,
    #[serde(default)]
    pub warmup: usize,
    /// Cosine decay to `base * final_fraction` over the run.
    #[serde(default)]
    pub cosine: bool,
    #[serde(default = "default_final_fraction")]
    pub final_fraction: f64,
}

fn default_final_fraction() -> f64 {
    0.1
}

impl Default for LearningRate {
    fn default() -> Self {
        Self {
            base: 2e-3,
            warmup: 100,
            cosine: true,
            final_fraction: 0.1,
        }
    }
}

impl LearningRate {
    pub fn at(&self, step: usize, total: usize) -> f64 {
        let warm = if self.warmup > 0 && step < self.warmup {
            (step + 1) as f64 / self.warmup as f64
        } else {
            1.0
        };
        let decay = if self.cosine && total > 1 {
            let p = step as f64 / (total - 1) as f64;
            self.final_fraction + (1.0 - self.final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
        } else {
            1.0
        };
        self.base * warm * decay
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default)]
    pub loss_weighting: LossWeighting,
    #[serde(default)]
    pub sigma_sampling: SigmaSampling,
    /// Restricts training noise levels to `[lo, hi]` (log-uniform inside).
    #[serde(default)]
    pub sigma_range: Option<[f64; 2]>,
    pub steps: usize,
    pub batch: usize,
    #[serde(default)]
    pub lr: LearningRate,
    pub width: usize,
    pub depth: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Probability of replacing the class label by the null condition.
    #[serde(default = "default_label_dropout")]
    pub label_dropout: f64,
    #[serde(default = "default_grad_clip")]
    pub grad_clip: Option<f64>,
}

fn default_label_dropout() -> f64 {
    0.1
}

fn default_grad_clip() -> Option<f64> {
    Some(10.0)
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            loss_weighting: LossWeighting::default(),
            sigma_sampling: SigmaSampling::default(),
            sigma_range: None,
            steps: 5000,
            batch: 128,
            lr: LearningRate::default(),
            width: 64,
            depth: 3,
            optimizer: Optimizer::default(),
            label_dropout: default_label_dropout(),
            grad_clip: default_grad_clip(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, allow_zero_steps: bool) -> Result<()> {
        if self.steps == 0 && !allow_zero_steps {
            return Err(Error::Config("training needs at least one step".into()));
        }
        if self.batch == 0 {
            return Err(Error::Config("training batch must be positive".into()));
        }
        if let Some([lo, hi]) = self.sigma_range {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return Err(Error::Config(format!("sigma range needs 0 < lo < hi, got [{lo}, {hi}]")));
            }
        }
        match self.sigma_sampling {
            SigmaSampling::LogUniform { lo, hi } if !(lo > 0.0 && lo < hi) => {
                return Err(Error::Config(format!("log-uniform sigma needs 0 < lo < hi, got [{lo}, {hi}]")))
            }
            SigmaSampling::LogNormal { std, .. } if !(std > 0.0) => {
                return Err(Error::Config("log-normal sigma std must be positive".into()))
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.label_dropout) {
            return Err(Error::Config("label dropout must lie in [0, 1]".into()));
        }
        Ok(())
    }

    fn draw_sigma(&self, rng: &mut StreamRng) -> f64 {
        let log_uniform = |rng: &mut StreamRng, lo: f64, hi: f64| (rng.random_range(lo.ln()..=hi.ln())).exp();
        if let Some([lo, hi]) = self.sigma_range {
            return log_uniform(rng, lo, hi);
        }
        match self.sigma_sampling {
            SigmaSampling::LogUniform { lo, hi } => log_uniform(rng, lo, hi),
            SigmaSampling::LogNormal { mean, std } => {
                Normal::new(mean, std).expect("validated std").sample(rng).exp()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedDenoiser {
    pub denoiser: Denoiser,
    /// Per-iteration weighted denoising loss.
    pub trace: Vec<f64>,
}

/// Exponential moving average of a loss trace.
pub fn smooth_trace(trace: &[f64], alpha: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = None;
    for &v in trace {
        let next = match acc {
            None => v,
            Some(a) => alpha * v + (1.0 - alpha) * a,
        };
        acc = Some(next);
        out.push(next);
    }
    out
}

/// Trains an MLP denoiser by denoising score matching.
pub fn train_denoiser(id: &str, data: &dyn DataSource, cfg: &TrainingConfig, seed: u64) -> Result<TrainedDenoiser> {
    cfg.validate(false)?;
    let shape = MlpShape::new(data.dim(), cfg.width, cfg.depth, data.n_classes(), data.sigma_data());
    let net = Mlp::init(shape, &mut stream_rng(seed, &[stream::MLP_INIT]))?;
    let (net, trace) = run_training(net, data, cfg, &mut stream_rng(seed, &[stream::TRAIN]))?;
    Ok(TrainedDenoiser {
        denoiser: Denoiser::mlp(id, net),
        trace,
    })
}

/// Continues training an MLP denoiser; `cfg.width`/`cfg.depth` are ignored.
///
/// Zero steps returns an identical denoiser.
pub fn finetune_denoiser(base: &Denoiser, data: &dyn DataSource, cfg: &TrainingConfig, seed: u64) -> Result<TrainedDenoiser> {
    cfg.validate(true)?;
    let DenoiserModel::Mlp(net) = base.model() else {
        return Err(Error::Domain(format!("`{}` is not a trainable denoiser", base.id())));
    };
    if net.shape().dim != data.dim() {
        return Err(Error::shape(&[net.shape().dim], &[data.dim()]));
    }
    let (net, trace) = run_training(net.clone(), data, cfg, &mut stream_rng(seed, &[stream::TRAIN, 1]))?;
    let denoiser = Denoiser::from_parts(
        base.id().to_string(),
        base.cost_per_eval(),
        base.emulated_macs(),
        DenoiserModel::Mlp(net),
    )?;
    Ok(TrainedDenoiser { denoiser, trace })
}

fn run_training(mut net: Mlp, data: &dyn DataSource, cfg: &TrainingConfig, rng: &mut StreamRng) -> Result<(Mlp, Vec<f64>)> {
    let dim = net.shape().dim;
    let sigma_data = net.shape().sigma_data;
    let n_classes = net.shape().n_classes;
    let mut opt = OptimizerState::new(cfg.optimizer, net.params().len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let b = cfg.batch;
    let mut noise = vec![0.0; b * dim];
    for step in 0..cfg.steps {
        let (x0, mut conds) = data.sample_batch(b, rng);
        if n_classes == 0 {
            conds.iter_mut().for_each(|c| *c = None);
        } else {
            for c in conds.iter_mut() {
                if rng.random::<f64>() < cfg.label_dropout {
                    *c = None;
                }
            }
        }
        let sigmas: Vec<f64> = (0..b).map(|_| cfg.draw_sigma(rng)).collect();
        fill_standard_normal(rng, &mut noise);
        let x: Vec<f64> = (0..b * dim).map(|i| x0[i] + sigmas[i / dim] * noise[i]).collect();

        let cache = net.forward_cached(&x, &sigmas, &conds)?;
        let mut d_out = vec![0.0f32; b * dim];
        let mut loss = 0.0;
        #[allow(clippy::needless_range_loop)]
        for i in 0..b {
            let (c_skip, c_out, _, _) = precondition(sigmas[i], sigma_data);
            let weight = match cfg.loss_weighting {
                LossWeighting::Snr => 1.0,
                LossWeighting::Uniform => c_out * c_out,
            };
            for j in 0..dim {
                let k = i * dim + j;
                let target = (x0[k] - c_skip * x[k]) / c_out;
                let r = cache.out[k] as f64 - target;
                loss += weight * r * r;
                d_out[k] = (2.0 * weight * r / (b * dim) as f64) as f32;
            }
        }
        loss /= (b * dim) as f64;
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss, trace });
        }
        trace.push(loss);

        let mut grad = net.backward(&cache, &d_out);
        if let Some(clip) = cfg.grad_clip {
            let norm = grad.iter().map(|g| (*g as f64).powi(2)).sum::<f64>().sqrt();
            if norm > clip {
                let s = (clip / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        opt.step(net.params_mut(), &grad, cfg.lr.at(step, cfg.steps));
    }
    Ok((net, trace))
}
