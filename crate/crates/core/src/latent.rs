use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A batch of samples at a common noise level.
///
/// `shape[0]` is the batch size; the remaining axes are the per-sample
/// dimensions, `[2]` for point data or `[H, W]` for grid data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentState {
    data: Vec<f64>,
    shape: Vec<usize>,
    sigma: f64,
}

impl LatentState {
    pub fn new(data: Vec<f64>, shape: Vec<usize>, sigma: f64) -> Result<Self> {
        if shape.len() < 2 {
            return Err(Error::Domain(format!(
                "latent shape needs a batch axis and at least one data axis, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(&[expected], &[data.len()]));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Domain(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("latent contains non-finite entries".into()));
        }
        Ok(Self { data, shape, sigma })
    }

    /// Clean data (`sigma == 0`) from `batch` rows of `sample_shape`.
    pub fn clean(data: Vec<f64>, sample_shape: &[usize]) -> Result<Self> {
        let dim: usize = sample_shape.iter().product();
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::shape(sample_shape, &[data.len()]));
        }
        let mut shape = vec![data.len() / dim];
        shape.extend_from_slice(sample_shape);
        Self::new(data, shape, 0.0)
    }

    pub(crate) fn from_parts_unchecked(data: Vec<f64>, shape: Vec<usize>, sigma: f64) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        Self { data, shape, sigma }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.shape[1..]
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    /// Flattened size of one sample.
    pub fn dim(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn is_grid(&self) -> bool {
        self.shape.len() == 3
    }
}
