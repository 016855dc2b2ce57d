//! Synthetic data distributions.
//!
//! Mixture-backed kinds (`gmm`, `blob-images`) expose their [`GmmParams`] so
//! an exact posterior-mean denoiser can be built for them.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::train::DataSource;
use crate::denoiser::GmmParams;
use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng, StreamRng};
use crate::schedule::Condition;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum DatasetKind {
    /// Either `ring` or explicit `weights`/`means`/`variances`.
    Gmm {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ring: Option<RingSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        means: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
        /// Use the component index as class label.
        #[serde(default)]
        labeled: bool,
    },
    Checkerboard {
        #[serde(default = "default_cells")]
        cells: usize,
        #[serde(default = "default_extent")]
        extent: f64,
    },
    Spiral {
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default = "default_spiral_noise")]
        noise: f64,
    },
    /// `size x size` images, each a Gaussian bump at one of `blobs` positions
    /// on a circle, plus isotropic pixel noise.
    BlobImages {
        #[serde(default = "default_size")]
        size: usize,
        #[serde(default = "default_blobs")]
        blobs: usize,
        #[serde(default = "default_amplitude")]
        amplitude: f64,
        #[serde(default = "default_width")]
        width: f64,
        #[serde(default = "default_pixel_std")]
        pixel_std: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingSpec {
    pub components: usize,
    pub radius: f64,
    pub std: f64,
}

fn default_cells() -> usize {
    4
}
fn default_extent() -> f64 {
    4.0
}
fn default_turns() -> f64 {
    2.0
}
fn default_spiral_noise() -> f64 {
    0.1
}
fn default_size() -> usize {
    16
}
fn default_blobs() -> usize {
    8
}
fn default_amplitude() -> f64 {
    20.0
}
fn default_width() -> f64 {
    2.0
}
fn default_pixel_std() -> f64 {
    0.004
}

/// Unknown keys are rejected by the flattened [`DatasetKind`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    #[serde(default)]
    pub seed: u64,
}

/// A validated dataset ready for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    spec: DatasetSpec,
    gmm: Option<GmmParams>,
    sample_shape: Vec<usize>,
    sigma_data: f64,
}

impl DatasetSpec {
    pub fn ring(components: usize, radius: f64, std: f64, seed: u64) -> Self {
        Self {
            kind: DatasetKind::Gmm {
                ring: Some(RingSpec {
                    components,
                    radius,
                    std,
                }),
                weights: None,
                means: None,
                variances: None,
                labeled: false,
            },
            seed,
        }
    }

    pub fn blob_images(seed: u64) -> Self {
        Self {
            kind: DatasetKind::BlobImages {
                size: default_size(),
                blobs: default_blobs(),
                amplitude: default_amplitude(),
                width: default_width(),
                pixel_std: default_pixel_std(),
            },
            seed,
        }
    }

    pub fn build(&self) -> Result<Dataset> {
        let (gmm, sample_shape) = match &self.kind {
            DatasetKind::Gmm {
                ring,
                weights,
                means,
                variances,
                ..
            } => {
                let g = match (ring, weights, means, variances) {
                    (Some(r), None, None, None) => GmmParams::ring(r.components, r.radius, r.std)?,
                    (None, Some(w), Some(m), Some(v)) => GmmParams::new(w.clone(), m.clone(), v.clone())?,
                    _ => {
                        return Err(Error::Config(
                            "gmm dataset needs either `ring` or all of `weights`, `means`, `variances`".into(),
                        ))
                    }
                };
                let d = g.dim();
                (Some(g), vec![d])
            }
            DatasetKind::Checkerboard { cells, extent } => {
                if *cells < 2 || !(*extent > 0.0) {
                    return Err(Error::Config("checkerboard needs cells >= 2 and positive extent".into()));
                }
                (None, vec![2])
            }
            DatasetKind::Spiral { turns, noise } => {
                if !(*turns > 0.0) || !(*noise >= 0.0) {
                    return Err(Error::Config("spiral needs positive turns and nonnegative noise".into()));
                }
                (None, vec![2])
            }
            DatasetKind::BlobImages {
                size,
                blobs,
                amplitude,
                width,
                pixel_std,
            } => {
                if *size < 8 || *blobs == 0 || !(*width > 0.0) || !(*pixel_std > 0.0) {
                    return Err(Error::Config(
                        "blob-images needs size >= 8, blobs >= 1, positive width and pixel_std".into(),
                    ));
                }
                let g = blob_mixture(*size, *blobs, *amplitude, *width, *pixel_std)?;
                (Some(g), vec![*size, *size])
            }
        };
        let sigma_data = match &gmm {
            Some(g) => g.data_std(),
            None => {
                let probe = Dataset {
                    spec: self.clone(),
                    gmm: None,
                    sample_shape: sample_shape.clone(),
                    sigma_data: 1.0,
                };
                let (x, _) = probe.sample_batch(20_000, &mut stream_rng(self.seed, &[stream::DATASET]));
                let mean = x.iter().sum::<f64>() / x.len() as f64;
                (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
            }
        };
        Ok(Dataset {
            spec: self.clone(),
            gmm,
            sample_shape,
            sigma_data,
        })
    }
}

fn blob_mixture(size: usize, blobs: usize, amplitude: f64, width: f64, pixel_std: f64) -> Result<GmmParams> {
    let c = (size as f64 - 1.0) / 2.0;
    let orbit = size as f64 / 6.0;
    let means = (0..blobs)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / blobs as f64;
            let (cy, cx) = (c + orbit * a.sin(), c + orbit * a.cos());
            (0..size * size)
                .map(|p| {
                    let (y, x) = ((p / size) as f64, (p % size) as f64);
                    let r2 = (y - cy).powi(2) + (x - cx).powi(2);
                    amplitude * (-r2 / (2.0 * width * width)).exp()
                })
                .collect()
        })
        .collect();
    GmmParams::new(vec![1.0 / blobs as f64; blobs], means, vec![pixel_std * pixel_std; blobs])
}

impl Dataset {
    pub fn spec(&self) -> &DatasetSpec {
        &self.spec
    }

    pub fn gmm(&self) -> Option<&GmmParams> {
        self.gmm.as_ref()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn is_grid(&self) -> bool {
        self.sample_shape.len() == 2
    }

    /// Component labels when the mixture is marked as labeled.
    pub fn labels(&self) -> Option<Vec<u32>> {
        match (&self.spec.kind, &self.gmm) {
            (DatasetKind::Gmm { labeled: true, .. }, Some(g)) => Some((0..g.n_components() as u32).collect()),
            _ => None,
        }
    }

    /// `n` reproducible draws from stream `(dataset seed, [DATA, stream_id])`.
    pub fn draw(&self, n: usize, stream_id: u64) -> Vec<f64> {
        self.sample_batch(n, &mut stream_rng(self.spec.seed, &[stream::DATA, stream_id])).0
    }
}

impl DataSource for Dataset {
    fn dim(&self) -> usize {
        self.sample_shape.iter().product()
    }

    fn n_classes(&self) -> u32 {
        self.labels().map_or(0, |l| l.len() as u32)
    }

    fn sample_batch(&self, n: usize, rng: &mut StreamRng) -> (Vec<f64>, Vec<Condition>) {
        if let Some(g) = &self.gmm {
            let labeled = matches!(self.spec.kind, DatasetKind::Gmm { labeled: true, .. });
            let (x, comp) = g.sample(n, rng);
            let conds = comp.into_iter().map(|c| labeled.then_some(c as u32)).collect();
            return (x, conds);
        }
        match &self.spec.kind {
            DatasetKind::Checkerboard { cells, extent } => {
                let cell = extent / *cells as f64;
                let mut out = Vec::with_capacity(2 * n);
                while out.len() < 2 * n {
                    let (i, j) = (rng.random_range(0..*cells), rng.random_range(0..*cells));
                    if (i + j) % 2 == 0 {
                        out.push(-extent / 2.0 + (i as f64 + rng.random::<f64>()) * cell);
                        out.push(-extent / 2.0 + (j as f64 + rng.random::<f64>()) * cell);
                    }
                }
                (out, vec![None; n])
            }
            DatasetKind::Spiral { turns, noise } => {
                let mut out = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let u: f64 = rng.random::<f64>().sqrt();
                    let theta = 2.0 * PI * turns * u;
                    let r = 4.0 * u;
                    let (e1, e2): (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
                    out.push(r * theta.cos() + noise * e1);
                    out.push(r * theta.sin() + noise * e2);
                }
                (out, vec![None; n])
            }
            DatasetKind::Gmm { .. } | DatasetKind::BlobImages { .. } => {
                unreachable!("mixture kinds always carry parameters")
            }
        }
    }

    fn sigma_data(&self) -> f64 {
        self.sigma_data
    }
}
