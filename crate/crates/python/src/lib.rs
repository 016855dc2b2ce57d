//! Python bindings: schedules, denoisers, sampling, metrics, the lookup-table
//! allocator, and the experiment commands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use tstitch_core::allocator::{LookupRow, LookupTable as CoreTable};
use tstitch_core::denoiser::checkpoint;
use tstitch_core::experiment::{self, ExperimentConfig, OutputLayout, SweepOptions};
use tstitch_core::sampler::{SamplerConfig, SamplerKind};
use tstitch_core::{
    degrade_oracle, metrics, partition_steps, DegradeMode, Denoiser as CoreDenoiser, GmmParams,
    NoiseSchedule as CoreNoise, StitchSchedule as CoreStitch,
};

create_exception!(tstitch, TstitchError, PyException);

fn py_err(e: tstitch_core::Error) -> PyErr {
    TstitchError::new_err(e.to_string())
}

fn json_err(e: serde_json::Error) -> PyErr {
    TstitchError::new_err(e.to_string())
}

#[pyclass(name = "NoiseSchedule", module = "tstitch", skip_from_py_object)]
#[derive(Clone)]
struct NoiseSchedule {
    inner: CoreNoise,
}

#[pymethods]
impl NoiseSchedule {
    /// `kind` is "karras-power" or "variance-preserving-linear".
    #[new]
    #[pyo3(signature = (steps = 100, kind = "karras-power", sigma_min = 0.002, sigma_max = 80.0, rho = 7.0))]
    fn new(steps: usize, kind: &str, sigma_min: f64, sigma_max: f64, rho: f64) -> PyResult<Self> {
        let inner = match kind {
            "karras-power" | "karras" => CoreNoise::karras(steps, sigma_min, sigma_max, rho),
            "variance-preserving-linear" | "vp" => CoreNoise::vp_linear(steps, sigma_min, sigma_max),
            other => return Err(TstitchError::new_err(format!("unknown schedule kind `{other}`"))),
        }
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn steps(&self) -> usize {
        self.inner.steps
    }

    fn sigma_at(&self, t: usize) -> PyResult<f64> {
        self.inner.sigma_at(t).map_err(py_err)
    }

    /// `sigma(0..=T)`, increasing.
    fn levels(&self) -> Vec<f64> {
        self.inner.levels()
    }
}

#[pyclass(name = "StitchSchedule", module = "tstitch", skip_from_py_object)]
#[derive(Clone)]
struct StitchSchedule {
    inner: CoreStitch,
}

#[pymethods]
impl StitchSchedule {
    /// Parses a literal such as `"small:0.4,large:0.6"`.
    #[new]
    fn new(literal: &str) -> PyResult<Self> {
        Ok(Self {
            inner: literal.parse().map_err(py_err)?,
        })
    }

    fn literal(&self) -> String {
        self.inner.literal()
    }

    fn fractions(&self) -> Vec<(String, f64)> {
        self.inner
            .segments()
            .iter()
            .map(|s| (s.denoiser.clone(), s.fraction))
            .collect()
    }

    /// `(denoiser, start, end)` step ranges tiling `[0, steps)`.
    fn partition(&self, steps: usize) -> PyResult<Vec<(String, usize, usize)>> {
        let p = partition_steps(&self.inner, steps).map_err(py_err)?;
        Ok(p.ranges.into_iter().map(|r| (r.denoiser, r.start, r.end)).collect())
    }

    fn __repr__(&self) -> String {
        format!("StitchSchedule('{}')", self.inner.literal())
    }
}

/// All schedules over `ids` on the `1/granularity` fraction grid, as literals.
#[pyfunction]
fn enumerate_configs(ids: Vec<String>, granularity: usize) -> PyResult<Vec<String>> {
    Ok(tstitch_core::enumerate_configs(&ids, granularity)
        .map_err(py_err)?
        .iter()
        .map(CoreStitch::literal)
        .collect())
}

#[pyclass(name = "Denoiser", module = "tstitch", skip_from_py_object)]
#[derive(Clone)]
struct Denoiser {
    inner: CoreDenoiser,
}

#[pymethods]
impl Denoiser {
    /// Closed-form posterior-mean denoiser of an isotropic Gaussian mixture.
    #[staticmethod]
    #[pyo3(signature = (id, weights, means, variances, cost = None))]
    fn gmm_oracle(id: &str, weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<f64>, cost: Option<f64>) -> PyResult<Self> {
        let gmm = GmmParams::new(weights, means, variances).map_err(py_err)?;
        let mut inner = CoreDenoiser::gmm_oracle(id, gmm).map_err(py_err)?;
        if let Some(c) = cost {
            inner = inner.with_cost(c).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    /// Oracle for `n` equal components on a circle.
    #[staticmethod]
    #[pyo3(signature = (id, n = 8, radius = 4.0, std = 0.3, cost = None))]
    fn ring_oracle(id: &str, n: usize, radius: f64, std: f64, cost: Option<f64>) -> PyResult<Self> {
        let mut inner = CoreDenoiser::gmm_oracle(id, GmmParams::ring(n, radius, std).map_err(py_err)?).map_err(py_err)?;
        if let Some(c) = cost {
            inner = inner.with_cost(c).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, _) = checkpoint::load(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Weaker copy of a mixture oracle; `mode` is "blur-responsibilities" or "bias-noise".
    #[pyo3(signature = (level, id, mode = "blur-responsibilities", cost = None))]
    fn degrade(&self, level: f64, id: &str, mode: &str, cost: Option<f64>) -> PyResult<Self> {
        let mode: DegradeMode = mode.parse().map_err(py_err)?;
        let mut inner = degrade_oracle(&self.inner, level, mode).map_err(py_err)?.with_id(id);
        if let Some(c) = cost {
            inner = inner.with_cost(c).map_err(py_err)?;
        }
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&path, &self.inner, None).map_err(py_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost_per_eval()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Denoises flattened rows of length `dim`.
    #[pyo3(signature = (x, sigma, cond = None))]
    fn denoise(&self, x: Vec<f64>, sigma: f64, cond: Option<u32>) -> PyResult<Vec<f64>> {
        self.inner.denoise(&x, sigma, cond).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Denoiser('{}', cost={})", self.inner.id(), self.inner.cost_per_eval())
    }
}

/// Result of one stitched sampling run.
#[pyclass(name = "SampleResult", module = "tstitch", get_all, skip_from_py_object)]
struct SampleResult {
    /// One row per chain.
    samples: Vec<Vec<f64>>,
    evals: BTreeMap<String, u64>,
    declared_cost: f64,
}

/// Runs `schedule` with the named roster members.
#[pyfunction]
#[pyo3(signature = (schedule, roster, n_chains, seed = 0, sampler = "ddim", noise = None))]
fn sample(
    py: Python<'_>,
    schedule: &StitchSchedule,
    roster: Vec<PyRef<'_, Denoiser>>,
    n_chains: usize,
    seed: u64,
    sampler: &str,
    noise: Option<&NoiseSchedule>,
) -> PyResult<SampleResult> {
    let kind: SamplerKind = sampler.parse().map_err(py_err)?;
    let cfg = SamplerConfig::new(kind, noise.map(|n| n.inner.clone()).unwrap_or_default());
    let members: Vec<CoreDenoiser> = roster.iter().map(|d| d.inner.clone()).collect();
    let dim = members
        .first()
        .map(CoreDenoiser::dim)
        .ok_or_else(|| TstitchError::new_err("roster is empty"))?;
    let sched = schedule.inner.clone();
    let out = py
        .detach(|| tstitch_core::sampler::sample(&sched, &members, &cfg, &[dim], n_chains, seed))
        .map_err(py_err)?;
    Ok(SampleResult {
        samples: out.samples.data().chunks(dim).map(<[f64]>::to_vec).collect(),
        evals: out.ledger.evals.clone(),
        declared_cost: out.ledger.declared_cost / n_chains.max(1) as f64,
    })
}

/// Sliced Wasserstein distance between two sets of flattened `dim`-rows.
#[pyfunction]
#[pyo3(signature = (a, b, dim, projections = 128, seed = 0))]
fn sliced_wasserstein(a: Vec<f64>, b: Vec<f64>, dim: usize, projections: usize, seed: u64) -> PyResult<f64> {
    Ok(metrics::sliced_wasserstein(&a, &b, dim, projections, seed).map_err(py_err)?.value)
}

#[pyclass(name = "LookupTable", module = "tstitch", skip_from_py_object)]
struct LookupTable {
    inner: CoreTable,
}

/// (index, label, total cost, quality)
type RowTuple = (usize, String, f64, Option<f64>);

fn row_tuple(r: &LookupRow) -> RowTuple {
    (r.index, r.schedule.literal(), r.total_cost, r.quality)
}

#[pymethods]
impl LookupTable {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: CoreTable::load(&path).map_err(py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    /// `(index, schedule, total_cost, quality)` for every row.
    fn rows(&self) -> Vec<RowTuple> {
        self.inner.rows.iter().map(row_tuple).collect()
    }

    /// Feasible rows, best first.
    fn query_budget(&self, budget: f64) -> PyResult<Vec<RowTuple>> {
        Ok(self.inner.query_budget(budget).map_err(py_err)?.into_iter().map(row_tuple).collect())
    }

    fn select_best(&self, budget: f64) -> PyResult<RowTuple> {
        Ok(row_tuple(self.inner.select_best(budget).map_err(py_err)?))
    }
}

fn load_config(config: PathBuf) -> PyResult<ExperimentConfig> {
    ExperimentConfig::load(&config).map_err(py_err)
}

/// Runs the sweep command and returns its summary as JSON text.
#[pyfunction]
#[pyo3(signature = (config, out, max_rows = None))]
fn run_sweep(py: Python<'_>, config: PathBuf, out: PathBuf, max_rows: Option<usize>) -> PyResult<String> {
    let cfg = load_config(config)?;
    let opts = SweepOptions { max_rows, workers: None };
    let report = py
        .detach(|| experiment::cmd_sweep(&cfg, &OutputLayout::new(out), &opts))
        .map_err(py_err)?;
    serde_json::to_string(&report.summary).map_err(json_err)
}

/// Trains every `train` roster entry; returns the report as JSON text.
#[pyfunction]
fn run_train(py: Python<'_>, config: PathBuf, out: PathBuf) -> PyResult<String> {
    let cfg = load_config(config)?;
    let report = py
        .detach(|| experiment::cmd_train(&cfg, &OutputLayout::new(out)))
        .map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Budget query against a saved lookup table; returns JSON text.
#[pyfunction]
fn run_allocate(table: PathBuf, budget: f64) -> PyResult<String> {
    let result = experiment::cmd_allocate(&table, budget).map_err(py_err)?;
    serde_json::to_string(&result).map_err(json_err)
}

#[pymodule]
fn tstitch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TstitchError", m.py().get_type::<TstitchError>())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<NoiseSchedule>()?;
    m.add_class::<StitchSchedule>()?;
    m.add_class::<Denoiser>()?;
    m.add_class::<SampleResult>()?;
    m.add_class::<LookupTable>()?;
    m.add_function(wrap_pyfunction!(enumerate_configs, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(sliced_wasserstein, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(run_train, m)?)?;
    m.add_function(wrap_pyfunction!(run_allocate, m)?)?;
    Ok(())
}
