use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fill_standard_normal;

/// Isotropic Gaussian mixture `sum_i w_i N(mu_i, s_i^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || variances.len() != k {
            return Err(Error::Domain(format!(
                "mixture needs matching nonempty weights/means/variances, got {}/{}/{}",
                k,
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 || means.iter().any(|m| m.len() != dim) {
            return Err(Error::Domain("component means must share a nonzero dimension".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Domain("mixture weights must be a probability simplex".into()));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Domain("component variances must be positive".into()));
        }
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    pub fn single(mean: Vec<f64>, variance: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance])
    }

    /// `n` equally weighted components evenly spaced on a circle.
    pub fn ring(n: usize, radius: f64, std: f64) -> Result<Self> {
        let means = (0..n)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
                vec![radius * a.cos(), radius * a.sin()]
            })
            .collect();
        Self::new(vec![1.0 / n as f64; n], means, vec![std * std; n])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.weights.clone(), self.means.clone(), self.variances.clone()).map(|_| ())
    }

    /// Exact posterior mean `E[x0 | x0 + sigma n = x]` for one point.
    pub fn posterior_mean(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        self.posterior_mean_with(x, sigma, None, 0.0, 1.0, out)
    }

    /// Posterior mean with optionally altered responsibilities.
    ///
    /// `subset` restricts the mixture to the listed components (renormalised).
    /// Responsibilities use `s_i^2 + sigma^2 + extra_var` as the component
    /// predictive variance and `prior_power * log w_i` as the log prior; the
    /// per-component shrinkage itself is always exact.
    pub(crate) fn posterior_mean_with(
        &self,
        x: &[f64],
        sigma: f64,
        subset: Option<&[usize]>,
        extra_var: f64,
        prior_power: f64,
        out: &mut [f64],
    ) {
        debug_assert_eq!(x.len(), self.dim());
        if sigma == 0.0 {
            out.copy_from_slice(x);
            return;
        }
        let s2 = sigma * sigma;
        let dim = self.dim() as f64;
        let all: Vec<usize>;
        let idx: &[usize] = match subset {
            Some(s) => s,
            None => {
                all = (0..self.n_components()).collect();
                &all
            }
        };
        let mut logits = Vec::with_capacity(idx.len());
        let mut max = f64::NEG_INFINITY;
        for &i in idx {
            let w = self.weights[i];
            let l = if w == 0.0 {
                f64::NEG_INFINITY
            } else {
                let v = self.variances[i] + s2 + extra_var;
                let d2: f64 = x
                    .iter()
                    .zip(&self.means[i])
                    .map(|(a, m)| (a - m) * (a - m))
                    .sum();
                prior_power * w.ln() - 0.5 * dim * v.ln() - 0.5 * d2 / v
            };
            max = max.max(l);
            logits.push(l);
        }
        let mut total = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            total += *l;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for (&i, r) in idx.iter().zip(&logits) {
            let r = r / total;
            if r == 0.0 {
                continue;
            }
            let v = self.variances[i];
            let denom = v + s2;
            for ((o, a), m) in out.iter_mut().zip(x).zip(&self.means[i]) {
                *o += r * (v * a + s2 * m) / denom;
            }
        }
    }

    /// Posterior mean with uniform responsibilities over `idx`.
    pub(crate) fn uniform_shrinkage(&self, x: &[f64], sigma: f64, idx: &[usize], out: &mut [f64]) {
        if sigma == 0.0 {
            out.copy_from_slice(x);
            return;
        }
        let s2 = sigma * sigma;
        let r = 1.0 / idx.len() as f64;
        out.iter_mut().for_each(|o| *o = 0.0);
        for &i in idx {
            let v = self.variances[i];
            for ((o, a), m) in out.iter_mut().zip(x).zip(&self.means[i]) {
                *o += r * (v * a + s2 * m) / (v + s2);
            }
        }
    }

    /// Draws `n` samples, returning flattened rows and component indices.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<usize>) {
        let d = self.dim();
        let mut data = vec![0.0; n * d];
        let mut comps = Vec::with_capacity(n);
        let mut noise = vec![0.0; d];
        for row in data.chunks_mut(d) {
            let c = self.draw_component(rng);
            fill_standard_normal(rng, &mut noise);
            let sd = self.variances[c].sqrt();
            for ((o, m), z) in row.iter_mut().zip(&self.means[c]).zip(&noise) {
                *o = m + sd * z;
            }
            comps.push(c);
        }
        (data, comps)
    }

    fn draw_component<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += w * b;
            }
        }
        m
    }

    /// Row-major `dim x dim` covariance.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim();
        let m = self.mean();
        let mut c = vec![0.0; d * d];
        for ((w, mu), v) in self.weights.iter().zip(&self.means).zip(&self.variances) {
            for i in 0..d {
                c[i * d + i] += w * v;
                for j in 0..d {
                    c[i * d + j] += w * (mu[i] - m[i]) * (mu[j] - m[j]);
                }
            }
        }
        c
    }

    /// Root of the mean per-coordinate variance.
    pub fn data_std(&self) -> f64 {
        let d = self.dim();
        let c = self.covariance();
        ((0..d).map(|i| c[i * d + i]).sum::<f64>() / d as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn pm(g: &GmmParams, x: &[f64], sigma: f64) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        g.posterior_mean(x, sigma, &mut out);
        out
    }

    #[test]
    fn single_component_shrinkage() {
        let g = GmmParams::single(vec![0.0, 0.0], 1.0).unwrap();
        let out = pm(&g, &[2.0, 0.0], 1.0);
        assert!((out[0] - 1.0).abs() < 1e-15 && out[1].abs() < 1e-15);
    }

    #[test]
    fn noiseless_is_identity() {
        let g = GmmParams::ring(8, 4.0, 0.3).unwrap();
        assert_eq!(pm(&g, &[0.3, -1.7], 0.0), vec![0.3, -1.7]);
    }

    #[test]
    fn symmetric_pair_at_origin() {
        let g = GmmParams::new(vec![0.5, 0.5], vec![vec![2.0, 1.0], vec![-2.0, -1.0]], vec![0.3, 0.3])
            .unwrap();
        for sigma in [0.1, 1.0, 10.0] {
            let out = pm(&g, &[0.0, 0.0], sigma);
            assert!(out.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(GmmParams::new(vec![0.5, 0.6], vec![vec![0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        assert!(GmmParams::new(vec![1.0], vec![vec![0.0]], vec![0.0]).is_err());
        assert!(GmmParams::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn extreme_distance_is_stable() {
        let g = GmmParams::ring(8, 4.0, 0.01).unwrap();
        let out = pm(&g, &[1e4, -3e3], 1e-3);
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn moments_of_ring() {
        let g = GmmParams::ring(8, 4.0, 0.5).unwrap();
        let m = g.mean();
        assert!(m.iter().all(|v| v.abs() < 1e-12));
        let c = g.covariance();
        // radius^2 / 2 + s^2 on the diagonal for a symmetric ring
        assert!((c[0] - 8.25).abs() < 1e-12 && (c[3] - 8.25).abs() < 1e-12);
        assert!(c[1].abs() < 1e-12);
    }

    #[test]
    fn sampling_reproducible() {
        let g = GmmParams::ring(8, 4.0, 0.5).unwrap();
        let a = g.sample(100, &mut stream_rng(1, &[2]));
        let b = g.sample(100, &mut stream_rng(1, &[2]));
        assert_eq!(a, b);
    }
}
