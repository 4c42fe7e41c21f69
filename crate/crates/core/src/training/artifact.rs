//! On-disk model artifacts: one JSON document per trained model.
//!
//! Network weights are stored as named tensors (shape plus base64 of the
//! little-endian `f64` bytes); tree ensembles as explicit node lists. The
//! CRC-32 in `payload_crc32` covers the concatenated tensor bytes, or the
//! compact JSON encoding of the tree payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CongestionThresholds, Model, ModelType, TrainConfig, TrainingSummary};
use crate::dataset::NormalizationParams;
use crate::error::{Error, Result};
use crate::gbdt::{GbdtEnsemble, Tree};
use crate::lstm::LstmNetwork;
use crate::metrics::MetricReport;
use crate::neural::Network;
use crate::transformer::TransformerNetwork;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub model_type: ModelType,
    pub district: String,
    pub created_at: String,
    pub train_config: TrainConfig,
    pub normalization: NormalizationParams,
    pub congestion: CongestionThresholds,
    pub test_metrics: MetricReport,
    pub training: TrainingSummary,
    pub model: Model,
}

#[derive(Debug, Serialize, Deserialize)]
struct ArtifactFile {
    format_version: u32,
    model_type: ModelType,
    district: String,
    created_at: String,
    train_config: TrainConfig,
    normalization: NormalizationParams,
    congestion: CongestionThresholds,
    test_metrics: MetricReport,
    training: TrainingSummary,
    payload: Payload,
    payload_crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "encoding", rename_all = "snake_case")]
enum Payload {
    Tensors { tensors: Vec<EncodedTensor> },
    Trees(TreePayload),
}

#[derive(Debug, Serialize, Deserialize)]
struct EncodedTensor {
    name: String,
    shape: Vec<usize>,
    data: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TreePayload {
    n_features: usize,
    base_score: f64,
    eta: f64,
    trees: Vec<Tree>,
}

/// `SOURCE_DATE_EPOCH` when set (reproducible builds), else the current time.
pub fn creation_timestamp() -> String {
    let when = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    when.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

fn tensor_bytes(data: &[f64]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn encode_network<N: Network>(net: &N) -> (Payload, u32) {
    let mut crc = crc32fast::Hasher::new();
    let tensors = net
        .named_params()
        .into_iter()
        .map(|(name, t)| {
            let bytes = tensor_bytes(t.data());
            crc.update(&bytes);
            EncodedTensor {
                name,
                shape: t.shape().to_vec(),
                data: STANDARD.encode(&bytes),
            }
        })
        .collect();
    (Payload::Tensors { tensors }, crc.finalize())
}

fn tree_crc(p: &TreePayload) -> u32 {
    crc32fast::hash(&serde_json::to_vec(p).expect("tree payload serializes"))
}

fn decode_network<N: Network>(mut net: N, tensors: &[EncodedTensor], stored_crc: u32) -> Result<N> {
    let mut crc = crc32fast::Hasher::new();
    let mut decoded = Vec::with_capacity(tensors.len());
    for t in tensors {
        let bytes = STANDARD
            .decode(&t.data)
            .map_err(|e| Error::MalformedArtifact(format!("tensor {}: {e}", t.name)))?;
        crc.update(&bytes);
        decoded.push(bytes);
    }
    let computed = crc.finalize();
    if computed != stored_crc {
        return Err(Error::ChecksumMismatch {
            stored: stored_crc,
            computed,
        });
    }
    let expected: Vec<(String, Vec<usize>)> = net
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    if expected.len() != tensors.len() {
        return Err(Error::MalformedArtifact(format!(
            "expected {} tensors, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for ((param, (name, shape)), (enc, bytes)) in net.params_mut().into_iter().zip(&expected).zip(tensors.iter().zip(&decoded)) {
        if enc.name != *name || enc.shape != *shape || bytes.len() != 8 * param.len() {
            return Err(Error::MalformedArtifact(format!(
                "tensor {} {:?} does not match expected {name} {shape:?}",
                enc.name, enc.shape
            )));
        }
        for (dst, chunk) in param.data_mut().iter_mut().zip(bytes.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
    }
    Ok(net)
}

impl ModelArtifact {
    fn to_file(&self) -> ArtifactFile {
        let (payload, payload_crc32) = match &self.model {
            Model::Lstm(net) => encode_network(net),
            Model::Transformer(net) => encode_network(net),
            Model::Gbdt(e) => {
                let p = TreePayload {
                    n_features: e.n_features,
                    base_score: e.base_score,
                    eta: e.eta,
                    trees: e.trees.clone(),
                };
                let crc = tree_crc(&p);
                (Payload::Trees(p), crc)
            }
        };
        ArtifactFile {
            format_version: self.format_version,
            model_type: self.model_type,
            district: self.district.clone(),
            created_at: self.created_at.clone(),
            train_config: self.train_config.clone(),
            normalization: self.normalization.clone(),
            congestion: self.congestion,
            test_metrics: self.test_metrics,
            training: self.training.clone(),
            payload,
            payload_crc32,
        }
    }

    fn from_file(f: ArtifactFile) -> Result<Self> {
        f.normalization.check_features()?;
        let features = f.normalization.num_features();
        // Weights are overwritten below; the seed only fixes the skeleton.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = match (f.model_type, f.payload) {
            (ModelType::Lstm, Payload::Tensors { tensors }) => {
                Model::Lstm(decode_network(LstmNetwork::new(features, &mut rng), &tensors, f.payload_crc32)?)
            }
            (ModelType::Transformer, Payload::Tensors { tensors }) => {
                let skeleton = TransformerNetwork::new(features, f.train_config.neural.positional_encoding, &mut rng);
                Model::Transformer(decode_network(skeleton, &tensors, f.payload_crc32)?)
            }
            (ModelType::Gbdt, Payload::Trees(p)) => {
                let computed = tree_crc(&p);
                if computed != f.payload_crc32 {
                    return Err(Error::ChecksumMismatch {
                        stored: f.payload_crc32,
                        computed,
                    });
                }
                for t in &p.trees {
                    t.validate(p.n_features)?;
                }
                Model::Gbdt(GbdtEnsemble {
                    n_features: p.n_features,
                    base_score: p.base_score,
                    eta: p.eta,
                    trees: p.trees,
                })
            }
            (t, _) => return Err(Error::MalformedArtifact(format!("payload encoding does not fit model type {t}"))),
        };
        Ok(Self {
            format_version: f.format_version,
            model_type: f.model_type,
            district: f.district,
            created_at: f.created_at,
            train_config: f.train_config,
            normalization: f.normalization,
            congestion: f.congestion,
            test_metrics: f.test_metrics,
            training: f.training,
            model,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedArtifact(format!("not a JSON document: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedArtifact("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let file: ArtifactFile = serde_json::from_value(value).map_err(|e| Error::MalformedArtifact(e.to_string()))?;
        Self::from_file(file)
    }
}

/// Write atomically: a sibling temporary file is renamed over `path`.
pub fn save_artifact(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(artifact.to_json().as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn load_artifact(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArtifact::from_json(&text)
}
