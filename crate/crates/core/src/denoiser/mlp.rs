//! Fully connected denoiser network with EDM-style preconditioning.
//!
//! `D(x; sigma, c) = c_skip x + c_out F(c_in x, embed(ln(sigma) / 4), E[c])`
//! with `c_skip = sd^2 / (sigma^2 + sd^2)`, `c_out = sigma sd / sqrt(sigma^2 + sd^2)`
//! and `c_in = 1 / sqrt(sigma^2 + sd^2)`, where `sd` is the data standard
//! deviation. Row `n_classes` of the embedding table is the null condition.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpShape {
    pub dim: usize,
    pub width: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub n_classes: u32,
    pub noise_freqs: usize,
    pub class_embed_dim: usize,
    pub sigma_data: f64,
}

impl MlpShape {
    pub fn new(dim: usize, width: usize, depth: usize, n_classes: u32, sigma_data: f64) -> Self {
        Self {
            dim,
            width,
            depth,
            n_classes,
            noise_freqs: 6,
            class_embed_dim: if n_classes > 0 { 8 } else { 0 },
            sigma_data,
        }
    }

    fn input_width(&self) -> usize {
        self.dim + 2 * self.noise_freqs + self.class_embed_dim
    }

    /// `(fan_in, fan_out)` of each dense layer.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input_width(), self.width)];
        for _ in 1..self.depth {
            dims.push((self.width, self.width));
        }
        dims.push((self.width, self.dim));
        dims
    }

    fn embed_len(&self) -> usize {
        (self.n_classes as usize + 1) * self.class_embed_dim
    }

    pub fn param_count(&self) -> usize {
        self.embed_len()
            + self
                .layer_dims()
                .iter()
                .map(|(i, o)| i * o + o)
                .sum::<usize>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.width == 0 || self.depth == 0 {
            return Err(Error::Domain("mlp dim, width and depth must be positive".into()));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::Domain("mlp sigma_data must be positive".into()));
        }
        Ok(())
    }

    /// Multiply-adds per sample per forward pass.
    pub fn macs_per_eval(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o).sum()
    }
}

/// Preconditioning coefficients `(c_skip, c_out, c_in, c_noise)`.
pub(crate) fn precondition(sigma: f64, sigma_data: f64) -> (f64, f64, f64, f64) {
    let sd2 = sigma_data * sigma_data;
    let tot = sigma * sigma + sd2;
    (
        sd2 / tot,
        sigma * sigma_data / tot.sqrt(),
        1.0 / tot.sqrt(),
        sigma.ln() / 4.0,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f32>,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct ForwardCache {
    batch: usize,
    /// Input of every dense layer (layer 0 input = features).
    inputs: Vec<Vec<f32>>,
    /// Pre-activation of every hidden layer.
    pre: Vec<Vec<f32>>,
    conds: Vec<usize>,
    pub(crate) out: Vec<f32>,
}

fn silu(z: f32) -> f32 {
    z / (1.0 + (-z).exp())
}

fn silu_grad(z: f32) -> f32 {
    let s = 1.0 / (1.0 + (-z).exp());
    s * (1.0 + z * (1.0 - s))
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (x, y) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for k in chunks * 8..a.len() {
        s += a[k] * b[k];
    }
    s
}

impl Mlp {
    pub fn init<R: Rng + ?Sized>(shape: MlpShape, rng: &mut R) -> Result<Self> {
        shape.validate()?;
        let mut params = Vec::with_capacity(shape.param_count());
        for _ in 0..shape.embed_len() {
            let z: f64 = StandardNormal.sample(rng);
            params.push(z as f32);
        }
        let n_layers = shape.layer_dims().len();
        for (l, (fan_in, fan_out)) in shape.layer_dims().into_iter().enumerate() {
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == n_layers {
                bound *= 0.1;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound) as f32);
            }
            params.extend(std::iter::repeat_n(0.0f32, fan_out));
        }
        debug_assert_eq!(params.len(), shape.param_count());
        Ok(Self { shape, params })
    }

    pub fn from_params(shape: MlpShape, params: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                shape.param_count(),
                params.len()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    fn cond_row(&self, c: Condition) -> Result<usize> {
        match c {
            None => Ok(self.shape.n_classes as usize),
            Some(k) if k < self.shape.n_classes => Ok(k as usize),
            Some(k) => Err(Error::UnknownCondition(k)),
        }
    }

    fn features(&self, x: &[f64], sigmas: &[f64], conds: &[usize]) -> Vec<f32> {
        let s = &self.shape;
        let iw = s.input_width();
        let mut f = vec![0.0f32; sigmas.len() * iw];
        for (b, row) in f.chunks_mut(iw).enumerate() {
            let (_, _, c_in, c_noise) = precondition(sigmas[b], s.sigma_data);
            for j in 0..s.dim {
                row[j] = (c_in * x[b * s.dim + j]) as f32;
            }
            for k in 0..s.noise_freqs {
                let a = c_noise * (1u64 << k) as f64;
                row[s.dim + 2 * k] = a.sin() as f32;
                row[s.dim + 2 * k + 1] = a.cos() as f32;
            }
            if s.class_embed_dim > 0 {
                let e = &self.params[conds[b] * s.class_embed_dim..(conds[b] + 1) * s.class_embed_dim];
                row[s.dim + 2 * s.noise_freqs..].copy_from_slice(e);
            }
        }
        f
    }

    /// Raw network output `F` with cached activations.
    pub(crate) fn forward_cached(&self, x: &[f64], sigmas: &[f64], conds: &[Condition]) -> Result<ForwardCache> {
        let batch = sigmas.len();
        let conds = conds
            .iter()
            .map(|c| self.cond_row(*c))
            .collect::<Result<Vec<_>>>()?;
        let mut inputs = vec![self.features(x, sigmas, &conds)];
        let mut pre = Vec::new();
        let mut off = self.shape.embed_len();
        let dims = self.shape.layer_dims();
        let last = dims.len() - 1;
        let mut out = Vec::new();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let input = inputs.last().expect("layer input");
            let mut z = vec![0.0f32; batch * fan_out];
            for (zb, ib) in z.chunks_mut(fan_out).zip(input.chunks(fan_in)) {
                zb.copy_from_slice(bias);
                for (i, &xi) in ib.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    let wr = &w[i * fan_out..(i + 1) * fan_out];
                    for (zo, wo) in zb.iter_mut().zip(wr) {
                        *zo += wo * xi;
                    }
                }
            }
            if l == last {
                out = z;
            } else {
                inputs.push(z.iter().map(|&v| silu(v)).collect());
                pre.push(z);
            }
        }
        Ok(ForwardCache {
            batch,
            inputs,
            pre,
            conds,
            out,
        })
    }

    /// Gradient of the loss w.r.t. all parameters, given `dL/dF`.
    pub(crate) fn backward(&self, cache: &ForwardCache, d_out: &[f32]) -> Vec<f32> {
        let s = &self.shape;
        let dims = s.layer_dims();
        let mut grad = vec![0.0f32; self.params.len()];
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = s.embed_len();
        for &(i, o) in &dims {
            offsets.push(off);
            off += i * o + o;
        }
        let mut delta = d_out.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let woff = offsets[l];
            let input = &cache.inputs[l];
            {
                let (gw, gb) = grad[woff..woff + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for (db, ib) in delta.chunks(fan_out).zip(input.chunks(fan_in)) {
                    for (g, d) in gb.iter_mut().zip(db) {
                        *g += d;
                    }
                    for (i, &xi) in ib.iter().enumerate() {
                        if xi == 0.0 {
                            continue;
                        }
                        for (g, d) in gw[i * fan_out..(i + 1) * fan_out].iter_mut().zip(db) {
                            *g += xi * d;
                        }
                    }
                }
            }
            let w = &self.params[woff..woff + fan_in * fan_out];
            let mut d_in = vec![0.0f32; cache.batch * fan_in];
            for (dib, db) in d_in.chunks_mut(fan_in).zip(delta.chunks(fan_out)) {
                for (i, di) in dib.iter_mut().enumerate() {
                    *di = dot(&w[i * fan_out..(i + 1) * fan_out], db);
                }
            }
            if l > 0 {
                for (d, z) in d_in.iter_mut().zip(&cache.pre[l - 1]) {
                    *d *= silu_grad(*z);
                }
                delta = d_in;
            } else if s.class_embed_dim > 0 {
                let e0 = s.dim + 2 * s.noise_freqs;
                for (b, dib) in d_in.chunks(fan_in).enumerate() {
                    let row = cache.conds[b] * s.class_embed_dim;
                    for (g, d) in grad[row..row + s.class_embed_dim].iter_mut().zip(&dib[e0..]) {
                        *g += d;
                    }
                }
            }
        }
        grad
    }

    /// `D(x; sigma, c)` for a batch sharing one level and condition.
    pub fn denoise(&self, x: &[f64], sigma: f64, cond: Condition) -> Result<Vec<f64>> {
        let d = self.shape.dim;
        if !x.len().is_multiple_of(d) {
            return Err(Error::shape(&[d], &[x.len()]));
        }
        let batch = x.len() / d;
        if sigma == 0.0 {
            self.cond_row(cond)?;
            return Ok(x.to_vec());
        }
        let sigmas = vec![sigma; batch];
        let conds = vec![cond; batch];
        let cache = self.forward_cached(x, &sigmas, &conds)?;
        let (c_skip, c_out, _, _) = precondition(sigma, self.shape.sigma_data);
        Ok(x.iter()
            .zip(&cache.out)
            .map(|(xv, f)| c_skip * xv + c_out * *f as f64)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum Optimizer {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { momentum: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub(crate) struct OptimizerState {
    kind: Optimizer,
    m: Vec<f32>,
    v: Vec<f32>,
    t: i32,
}

impl OptimizerState {
    pub(crate) fn new(kind: Optimizer, n: usize) -> Self {
        Self {
            kind,
            m: vec![0.0; n],
            v: match kind {
                Optimizer::Adam { .. } => vec![0.0; n],
                Optimizer::SgdMomentum { .. } => Vec::new(),
            },
            t: 0,
        }
    }

    pub(crate) fn step(&mut self, params: &mut [f32], grad: &[f32], lr: f64) {
        self.t += 1;
        match self.kind {
            Optimizer::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (beta1 as f32, beta2 as f32);
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let step = (lr * c2.sqrt() / c1) as f32;
                let eps = eps as f32;
                for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / (v.sqrt() + eps);
                }
            }
            Optimizer::SgdMomentum { momentum } => {
                let mu = momentum as f32;
                let lr = lr as f32;
                for ((p, g), m) in params.iter_mut().zip(grad).zip(&mut self.m) {
                    *m = mu * *m + g;
                    *p -= lr * *m;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn tiny() -> Mlp {
        let shape = MlpShape::new(2, 8, 2, 3, 1.0);
        Mlp::init(shape, &mut stream_rng(5, &[0])).unwrap()
    }

    /// Finite-difference check of the backward pass on a scalar loss.
    #[test]
    fn gradient_matches_finite_differences() {
        let mut net = tiny();
        let x = [0.3, -1.2, 2.0, 0.7, -0.4, 0.1];
        let sigmas = [0.5, 2.0, 0.1];
        let conds = [Some(0), None, Some(2)];
        let loss = |net: &Mlp| -> f64 {
            let c = net.forward_cached(&x, &sigmas, &conds).unwrap();
            c.out.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() * 0.5
        };
        let cache = net.forward_cached(&x, &sigmas, &conds).unwrap();
        let grad = net.backward(&cache, &cache.out.clone());
        let h = 1e-2f32;
        let mut checked = 0;
        for idx in (0..net.params.len()).step_by(7) {
            let orig = net.params[idx];
            net.params[idx] = orig + h;
            let up = loss(&net);
            net.params[idx] = orig - h;
            let dn = loss(&net);
            net.params[idx] = orig;
            let fd = (up - dn) / (2.0 * h as f64);
            let g = grad[idx] as f64;
            assert!((fd - g).abs() <= 2e-3 + 2e-2 * g.abs(), "param {idx}: fd {fd} vs {g}");
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn unknown_condition_rejected() {
        let net = tiny();
        assert!(matches!(net.denoise(&[0.0, 0.0], 1.0, Some(3)), Err(Error::UnknownCondition(3))));
        assert!(net.denoise(&[0.0, 0.0], 1.0, None).is_ok());
    }

    #[test]
    fn rows_are_independent() {
        let net = tiny();
        let x = [0.3, -1.2, 2.0, 0.7];
        let both = net.denoise(&x, 0.8, Some(1)).unwrap();
        let first = net.denoise(&x[..2], 0.8, Some(1)).unwrap();
        assert_eq!(&both[..2], &first[..]);
    }
}
