//! Binary denoiser checkpoints.
//!
//! Layout: magic `TSTD`, format version (u32 LE), metadata length (u32 LE),
//! UTF-8 JSON metadata, then the parameter payload as little-endian f32.
//! Only MLP denoisers carry a payload; mixture-based denoisers keep their
//! parameters in the metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gmm::GmmParams;
use super::mlp::{Mlp, MlpShape};
use super::train::TrainingConfig;
use super::{DegradeMode, Denoiser, DenoiserKind, DenoiserModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TSTD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Degradation {
    level: f64,
    mode: DegradeMode,
    blur_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    id: String,
    kind: DenoiserKind,
    cost_per_eval: f64,
    #[serde(default)]
    emulated_macs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<MlpShape>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gmm: Option<GmmParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degradation: Option<Degradation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<TrainingConfig>,
    payload_len: usize,
}

pub fn encode(denoiser: &Denoiser, training: Option<&TrainingConfig>) -> Result<Vec<u8>> {
    let mut meta = Metadata {
        id: denoiser.id().to_string(),
        kind: denoiser.kind(),
        cost_per_eval: denoiser.cost_per_eval(),
        emulated_macs: denoiser.emulated_macs(),
        shape: None,
        gmm: None,
        labels: None,
        degradation: None,
        training: training.cloned(),
        payload_len: 0,
    };
    let mut payload: &[f32] = &[];
    match denoiser.model() {
        DenoiserModel::GmmOracle { gmm, labels } => {
            meta.gmm = Some(gmm.clone());
            meta.labels = labels.clone();
        }
        DenoiserModel::Degraded {
            gmm,
            labels,
            level,
            mode,
            blur_scale,
        } => {
            meta.gmm = Some(gmm.clone());
            meta.labels = labels.clone();
            meta.degradation = Some(Degradation {
                level: *level,
                mode: *mode,
                blur_scale: *blur_scale,
            });
        }
        DenoiserModel::Mlp(net) => {
            meta.shape = Some(net.shape().clone());
            payload = net.params();
        }
    }
    meta.payload_len = payload.len();
    let text = serde_json::to_vec(&meta)?;
    let meta_len = u32::try_from(text.len()).map_err(|_| Error::Checkpoint("metadata too large".into()))?;
    let mut out = Vec::with_capacity(12 + text.len() + 4 * payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&meta_len.to_le_bytes());
    out.extend_from_slice(&text);
    for p in payload {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(Denoiser, Option<TrainingConfig>)> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(Error::Checkpoint("missing TSTD magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let meta_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = &bytes[12..];
    if body.len() < meta_len {
        return Err(Error::Checkpoint("truncated metadata".into()));
    }
    let meta: Metadata = serde_json::from_slice(&body[..meta_len])?;
    let raw = &body[meta_len..];
    if raw.len() != 4 * meta.payload_len {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, metadata declares {} parameters",
            raw.len(),
            meta.payload_len
        )));
    }
    let payload: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let missing = |what: &str| Error::Checkpoint(format!("{:?} checkpoint lacks `{what}`", meta.kind));
    let model = match meta.kind {
        DenoiserKind::GmmOracle => {
            let gmm = meta.gmm.clone().ok_or_else(|| missing("gmm"))?;
            gmm.validate()?;
            DenoiserModel::GmmOracle {
                gmm,
                labels: meta.labels.clone(),
            }
        }
        DenoiserKind::DegradedOracle => {
            let gmm = meta.gmm.clone().ok_or_else(|| missing("gmm"))?;
            gmm.validate()?;
            let d = meta.degradation.clone().ok_or_else(|| missing("degradation"))?;
            DenoiserModel::Degraded {
                gmm,
                labels: meta.labels.clone(),
                level: d.level,
                mode: d.mode,
                blur_scale: d.blur_scale,
            }
        }
        DenoiserKind::Mlp => {
            let shape = meta.shape.clone().ok_or_else(|| missing("shape"))?;
            DenoiserModel::Mlp(Mlp::from_params(shape, payload)?)
        }
    };
    let denoiser = Denoiser::from_parts(meta.id, meta.cost_per_eval, meta.emulated_macs, model)?;
    Ok((denoiser, meta.training))
}

pub fn save(path: &Path, denoiser: &Denoiser, training: Option<&TrainingConfig>) -> Result<()> {
    let bytes = encode(denoiser, training)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Denoiser, Option<TrainingConfig>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{degrade_oracle, train_denoiser};

    #[test]
    fn mlp_round_trip_is_bit_exact() {
        let gmm = GmmParams::ring(4, 2.0, 0.3).unwrap();
        let cfg = TrainingConfig {
            steps: 30,
            batch: 16,
            width: 16,
            depth: 2,
            ..TrainingConfig::default()
        };
        let d = train_denoiser("small", &gmm, &cfg, 1).unwrap().denoiser;
        let bytes = encode(&d, Some(&cfg)).unwrap();
        assert_eq!(&bytes[..4], b"TSTD");
        let (back, training) = decode(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(training.as_ref(), Some(&cfg));
        assert_eq!(encode(&back, training.as_ref()).unwrap(), bytes);
    }

    #[test]
    fn analytic_round_trip() {
        let gmm = GmmParams::ring(8, 4.0, 0.3).unwrap();
        let o = Denoiser::gmm_oracle("o", gmm).unwrap().with_labels((0..8).collect()).unwrap();
        let w = degrade_oracle(&o, 0.5, DegradeMode::BlurResponsibilities).unwrap();
        for d in [o, w] {
            let (back, _) = decode(&encode(&d, None).unwrap()).unwrap();
            assert_eq!(back, d);
        }
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(decode(b"XXXX\x01\0\0\0\0\0\0\0").is_err());
        let gmm = GmmParams::ring(4, 2.0, 0.3).unwrap();
        let o = Denoiser::gmm_oracle("o", gmm).unwrap();
        let mut bytes = encode(&o, None).unwrap();
        bytes.push(0);
        assert!(decode(&bytes).is_err());
        bytes.truncate(20);
        assert!(decode(&bytes).is_err());
    }
}
