use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::Trajectory;

const LOG_FLOOR: f64 = 1e-12;

/// Radially binned amplitude spectrum of one `H x W` latent.
///
/// The transform is orthonormal, so squared amplitudes sum to the squared
/// pixel values. Bin `k` (1-based) holds frequencies whose radius rounds to
/// `k`; the outermost bin also takes the corner frequencies beyond it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSpectrum {
    pub dc: f64,
    /// Mean amplitude per annulus.
    pub mean_amplitude: Vec<f64>,
    /// Sum of squared amplitudes per annulus.
    pub energy: Vec<f64>,
}

impl LatentSpectrum {
    pub fn total_energy(&self) -> f64 {
        self.dc * self.dc + self.energy.iter().sum::<f64>()
    }
}

pub fn n_bins(h: usize, w: usize) -> usize {
    h.min(w) / 2
}

fn signed(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn check_grid(sample_shape: &[usize]) -> Result<(usize, usize)> {
    match sample_shape {
        [h, w] if *h >= 8 && *w >= 8 => Ok((*h, *w)),
        [h, w] => Err(Error::UnsupportedData(format!("grid {h}x{w} is smaller than 8x8"))),
        other => Err(Error::UnsupportedData(format!(
            "spectra need grid latents, got sample shape {other:?}"
        ))),
    }
}

struct Binner {
    h: usize,
    w: usize,
    bin_of: Vec<usize>,
    counts: Vec<usize>,
    planner: FftPlanner<f64>,
}

impl Binner {
    fn new(h: usize, w: usize) -> Self {
        let nb = n_bins(h, w);
        let mut bin_of = vec![0; h * w];
        let mut counts = vec![0; nb + 1];
        for y in 0..h {
            for x in 0..w {
                let r = signed(y, h).hypot(signed(x, w));
                let b = if y == 0 && x == 0 { 0 } else { (r.round() as usize).clamp(1, nb) };
                bin_of[y * w + x] = b;
                counts[b] += 1;
            }
        }
        Self {
            h,
            w,
            bin_of,
            counts,
            planner: FftPlanner::new(),
        }
    }

    fn spectrum(&mut self, latent: &[f64], scale: f64) -> LatentSpectrum {
        let (h, w) = (self.h, self.w);
        let mut buf: Vec<Complex<f64>> = latent.iter().map(|&v| Complex::new(v * scale, 0.0)).collect();
        let rows = self.planner.plan_fft_forward(w);
        for row in buf.chunks_mut(w) {
            rows.process(row);
        }
        let cols = self.planner.plan_fft_forward(h);
        let mut col = vec![Complex::new(0.0, 0.0); h];
        for x in 0..w {
            for y in 0..h {
                col[y] = buf[y * w + x];
            }
            cols.process(&mut col);
            for y in 0..h {
                buf[y * w + x] = col[y];
            }
        }
        let norm = 1.0 / ((h * w) as f64).sqrt();
        let nb = self.counts.len() - 1;
        let mut amp_sum = vec![0.0; nb + 1];
        let mut energy = vec![0.0; nb + 1];
        for (c, &b) in buf.iter().zip(&self.bin_of) {
            let a = c.norm() * norm;
            amp_sum[b] += a;
            energy[b] += a * a;
        }
        LatentSpectrum {
            dc: amp_sum[0],
            mean_amplitude: (1..=nb).map(|b| amp_sum[b] / self.counts[b] as f64).collect(),
            energy: energy[1..].to_vec(),
        }
    }
}

pub fn latent_spectrum(latent: &[f64], sample_shape: &[usize]) -> Result<LatentSpectrum> {
    let (h, w) = check_grid(sample_shape)?;
    if latent.len() != h * w {
        return Err(Error::shape(&[h * w], &[latent.len()]));
    }
    Ok(Binner::new(h, w).spectrum(latent, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumStep {
    pub step: usize,
    pub t: usize,
    pub sigma: f64,
    /// Chain-averaged log DC amplitude.
    pub dc: f64,
    /// Chain-averaged log mean amplitude per annulus, innermost first.
    pub bins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumProfile {
    pub n_bins: usize,
    pub n_chains: usize,
    pub vp_scaled: bool,
    /// One row per sampling step plus a final row for the terminal state.
    pub per_step: Vec<SpectrumStep>,
    /// Largest relative Parseval residual seen over all latents.
    pub max_parseval_error: f64,
}

impl SpectrumProfile {
    /// Fraction of annulus `bin`'s total log-amplitude change (first row to
    /// last) already made at each row.
    pub fn rise_progress(&self, bin: usize) -> Vec<f64> {
        let v: Vec<f64> = self.per_step.iter().map(|s| s.bins[bin]).collect();
        rise_progress(&v)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["step".to_string(), "t".into(), "sigma".into(), "dc".into()];
        header.extend((1..=self.n_bins).map(|b| format!("bin_{b}")));
        w.write_record(&header)?;
        for s in &self.per_step {
            let mut rec = vec![s.step.to_string(), s.t.to_string(), s.sigma.to_string(), s.dc.to_string()];
            rec.extend(s.bins.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }
}

/// `(v_i - v_0) / (v_last - v_0)`; all zeros when the series is flat.
pub fn rise_progress(v: &[f64]) -> Vec<f64> {
    let (first, last) = (v[0], v[v.len() - 1]);
    let total = last - first;
    if total == 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - first) / total).collect()
}

/// Per-step log-amplitude spectra averaged over chains.
///
/// With `vp_scaled` each latent is divided by `sqrt(1 + sigma^2)` first, which
/// maps the variance-exploding state onto the unit-scale variance-preserving
/// latent that image diffusion models operate on.
pub fn spectrum_profile(trajectories: &[Trajectory], sample_shape: &[usize], vp_scaled: bool) -> Result<SpectrumProfile> {
    let (h, w) = check_grid(sample_shape)?;
    if trajectories.is_empty() {
        return Err(Error::Pairing("no trajectories".into()));
    }
    let steps = trajectories[0].entries.len();
    if trajectories.iter().any(|t| t.entries.len() != steps) {
        return Err(Error::Pairing("trajectories have different step counts".into()));
    }
    let nb = n_bins(h, w);
    let mut binner = Binner::new(h, w);
    let mut rows: Vec<SpectrumStep> = Vec::with_capacity(steps + 1);
    let mut max_err: f64 = 0.0;
    let n = trajectories.len() as f64;
    for s in 0..=steps {
        let mut dc = 0.0;
        let mut bins = vec![0.0; nb];
        for tr in trajectories {
            let (latent, sigma) = match tr.entries.get(s) {
                Some(e) => (&e.latent, e.sigma),
                None => (&tr.final_state, 0.0),
            };
            if latent.len() != h * w {
                return Err(Error::shape(&[h * w], &[latent.len()]));
            }
            let scale = if vp_scaled { 1.0 / (1.0 + sigma * sigma).sqrt() } else { 1.0 };
            let spec = binner.spectrum(latent, scale);
            let pixel: f64 = latent.iter().map(|v| (v * scale).powi(2)).sum();
            if pixel > 0.0 {
                max_err = max_err.max((spec.total_energy() - pixel).abs() / pixel);
            }
            dc += spec.dc.max(LOG_FLOOR).ln();
            for (acc, a) in bins.iter_mut().zip(&spec.mean_amplitude) {
                *acc += a.max(LOG_FLOOR).ln();
            }
        }
        let (step, t, sigma) = match trajectories[0].entries.get(s) {
            Some(e) => (e.step, e.t, e.sigma),
            None => (steps, 0, 0.0),
        };
        rows.push(SpectrumStep {
            step,
            t,
            sigma,
            dc: dc / n,
            bins: bins.into_iter().map(|b| b / n).collect(),
        });
    }
    Ok(SpectrumProfile {
        n_bins: nb,
        n_chains: trajectories.len(),
        vp_scaled,
        per_step: rows,
        max_parseval_error: max_err,
    })
}
