use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::Operand;
use crate::data::DatasetSpec;
use crate::denoiser::{DegradeMode, TrainingConfig};
use crate::error::{Error, Result};
use crate::metrics::{MetricKind, DEFAULT_PROJECTIONS};
use crate::sampler::SamplerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// One roster member. Roster order is sampling order: the first entry takes
/// the earliest (noisiest) steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source", deny_unknown_fields)]
pub enum RosterSpec {
    /// Exact posterior mean of the dataset's mixture.
    Oracle {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
        #[serde(default)]
        emulated_macs: usize,
    },
    /// A weakened copy of another oracle entry.
    Degraded {
        id: String,
        of: String,
        level: f64,
        #[serde(default = "default_mode")]
        mode: DegradeMode,
        #[serde(default = "default_blur_scale")]
        blur_scale: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
    },
    /// An MLP trained by `train`; loaded from `checkpoints/<id>.tstd`.
    Train {
        id: String,
        training: TrainingConfig,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// A checkpoint from an explicit path.
    Load {
        id: String,
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cost: Option<f64>,
    },
}

fn default_mode() -> DegradeMode {
    DegradeMode::BlurResponsibilities
}

fn default_blur_scale() -> f64 {
    1.0
}

impl RosterSpec {
    pub fn id(&self) -> &str {
        match self {
            RosterSpec::Oracle { id, .. }
            | RosterSpec::Degraded { id, .. }
            | RosterSpec::Train { id, .. }
            | RosterSpec::Load { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default = "default_granularity")]
    pub granularity: usize,
    /// Explicit schedule literals measured instead of the enumerated grid
    /// (written to `tables/schedules.csv`).
    #[serde(default)]
    pub schedules: Option<Vec<String>>,
    /// Adds large-to-small, interleave and decreasing-prob rows for a
    /// two-member roster.
    #[serde(default = "default_true")]
    pub baselines: bool,
    /// Records sampling wall clock in the table. Off by default so that
    /// reruns are byte-identical.
    #[serde(default)]
    pub timing: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            granularity: default_granularity(),
            schedules: None,
            baselines: true,
            timing: false,
        }
    }
}

fn default_granularity() -> usize {
    10
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default = "default_analysis_chains")]
    pub chains: usize,
    /// Pairs compared by the similarity analysis; defaults to every roster
    /// member against the last one.
    #[serde(default)]
    pub pairs: Option<Vec<(String, String)>>,
    #[serde(default)]
    pub operand: Operand,
    /// Roster members whose trajectories are transformed by the spectrum
    /// analysis; defaults to the last one.
    #[serde(default)]
    pub spectrum_of: Option<Vec<String>>,
    #[serde(default = "default_true")]
    pub vp_scaled: bool,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            chains: default_analysis_chains(),
            pairs: None,
            operand: Operand::State,
            spectrum_of: None,
            vp_scaled: true,
        }
    }
}

fn default_analysis_chains() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneSpec {
    /// Stitched schedule literal; defaults to the CLI argument.
    #[serde(default)]
    pub schedule: Option<String>,
    /// Extra optimisation steps for each finetuned model.
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSpec {
    #[serde(default = "default_bench_chains")]
    pub chains: usize,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_bench_workers")]
    pub workers: usize,
    /// Per-eval multiply-adds burned by the named roster members during
    /// timing runs only, standing in for network size.
    #[serde(default)]
    pub emulated_macs: BTreeMap<String, usize>,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            chains: default_bench_chains(),
            repetitions: default_repetitions(),
            workers: default_bench_workers(),
            emulated_macs: BTreeMap::new(),
        }
    }
}

fn default_bench_chains() -> usize {
    1024
}

fn default_repetitions() -> usize {
    5
}

fn default_bench_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    pub roster: Vec<RosterSpec>,
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub sweep: SweepSpec,
    /// The first metric fills the lookup table's quality column.
    #[serde(default = "default_metrics")]
    pub metrics: Vec<MetricKind>,
    #[serde(default = "default_projections")]
    pub projections: usize,
    pub chains: usize,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune: Option<FinetuneSpec>,
    #[serde(default)]
    pub benchmark: BenchmarkSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn default_metrics() -> Vec<MetricKind> {
    vec![MetricKind::SlicedWasserstein]
}

fn default_projections() -> usize {
    DEFAULT_PROJECTIONS
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must not be empty".into()));
        }
        if self.roster.is_empty() {
            return Err(Error::Config("`roster` must not be empty".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("`chains` must be positive".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("`metrics` must not be empty".into()));
        }
        let mut ids: Vec<&str> = self.roster.iter().map(RosterSpec::id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate roster id `{}`", w[0])));
        }
        for r in &self.roster {
            if r.id().is_empty() || r.id().contains([':', ',', '/']) {
                return Err(Error::Config(format!("invalid roster id `{}`", r.id())));
            }
            if let RosterSpec::Train { training, .. } = r {
                training.validate(false)?;
            }
        }
        self.sampler.validate()?;
        if let Some(id) = self.benchmark.emulated_macs.keys().find(|id| !ids.contains(&id.as_str())) {
            return Err(Error::Config(format!("benchmark emulation names unknown roster id `{id}`")));
        }
        if self.sweep.granularity == 0 {
            return Err(Error::Config("sweep granularity must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialisation.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn roster_ids(&self) -> Vec<String> {
        self.roster.iter().map(|r| r.id().to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema_version": 1,
        "dataset": {"kind": "gmm", "ring": {"components": 8, "radius": 4, "std": 0.3}},
        "roster": [
            {"source": "degraded", "id": "small", "of": "large", "level": 0.5},
            {"source": "oracle", "id": "large"}
        ],
        "sampler": {"kind": "ddim", "schedule": {"kind": "karras-power", "steps": 100, "sigma_min": 0.002, "sigma_max": 80}},
        "chains": 256,
        "seeds": [0, 1]
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg.roster_ids(), vec!["small", "large"]);
        assert_eq!(cfg.sweep.granularity, 10);
        assert_eq!(cfg.hash(), ExperimentConfig::from_json(MINIMAL).unwrap().hash());
    }

    #[test]
    fn fails_closed() {
        let unknown = MINIMAL.replace("\"chains\": 256", "\"chains\": 256, \"colour\": 1");
        assert!(ExperimentConfig::from_json(&unknown).is_err());
        let version = MINIMAL.replace("\"schema_version\": 1", "\"schema_version\": 2");
        assert!(ExperimentConfig::from_json(&version).is_err());
        let seeds = MINIMAL.replace("[0, 1]", "[]");
        assert!(ExperimentConfig::from_json(&seeds).is_err());
        let dup = MINIMAL.replace("\"id\": \"small\"", "\"id\": \"large\"");
        assert!(ExperimentConfig::from_json(&dup).is_err());
    }
}
