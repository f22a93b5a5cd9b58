//! Versioned JSON model artifacts.
//!
//! Saving is canonical (pretty JSON, sorted maps, round-trip floats), so
//! `load` followed by `save` reproduces the file byte for byte.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{GroupScaleModel, IsotonicModel, LiteCardModel};
use crate::dataset::{FeatureSchema, SchemaSummary, SplitAssignment};
use crate::error::{Error, Result};
use crate::learners::{GbdtModel, ReferenceSetModel, ZeroClassifier};
use crate::policy::PolicyConfig;
use crate::targets::TargetSpec;

pub const ARTIFACT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gbr,
    Refset,
    GroupScale,
    Isotonic,
    Litecard,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Gbr,
        ModelKind::Refset,
        ModelKind::GroupScale,
        ModelKind::Isotonic,
        ModelKind::Litecard,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Gbr => "gbr",
            ModelKind::Refset => "refset",
            ModelKind::GroupScale => "group_scale",
            ModelKind::Isotonic => "isotonic",
            ModelKind::Litecard => "litecard",
        }
    }

    /// Learned models consume the encoded feature matrix; baselines work on
    /// raw samples.
    pub fn uses_features(self) -> bool {
        matches!(self, ModelKind::Gbr | ModelKind::Refset)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| Error::invalid(format!("unknown model {s:?}; expected one of gbr, refset, group_scale, isotonic, litecard")))
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBody {
    Gbr(GbdtModel),
    Refset(ReferenceSetModel),
    GroupScale(GroupScaleModel),
    Isotonic(IsotonicModel),
    Litecard(LiteCardModel),
}

impl ModelBody {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelBody::Gbr(_) => ModelKind::Gbr,
            ModelBody::Refset(_) => ModelKind::Refset,
            ModelBody::GroupScale(_) => ModelKind::GroupScale,
            ModelBody::Isotonic(_) => ModelKind::Isotonic,
            ModelBody::Litecard(_) => ModelKind::Litecard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format_version: u32,
    pub crate_version: String,
    /// Seconds since the Unix epoch; honours `SOURCE_DATE_EPOCH`.
    pub created_unix: u64,
    pub model: ModelKind,
    pub hyperparams: serde_json::Value,
    pub seed: u64,
}

/// Validation P90 Q-error for one candidate `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KTrial {
    pub k: usize,
    pub validation_p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub split: SplitAssignment,
    pub n_train_samples: usize,
    pub n_validation_samples: usize,
    pub n_test_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema_summary: Option<SchemaSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_trials: Vec<KTrial>,
    /// Wall-clock seconds for training (or reference-set setup) of the
    /// final model.
    pub train_seconds: f64,
    /// Wall-clock seconds for the whole train command.
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub header: ArtifactHeader,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<FeatureSchema>,
    pub target: TargetSpec,
    /// Policy fixed at training time, with any validation-calibrated clamp.
    pub policy: PolicyConfig,
    pub model: ModelBody,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_classifier: Option<ZeroClassifier>,
    pub metadata: TrainingMetadata,
}

/// Creation time from `SOURCE_DATE_EPOCH` if set, else the system clock.
pub fn creation_time() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
}

impl ModelArtifact {
    pub fn to_json_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json_slice(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let found = value
            .pointer("/header/format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::invalid("artifact has no header.format_version"))?;
        if found != u64::from(ARTIFACT_FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                what: "model artifact",
                found: u32::try_from(found).unwrap_or(u32::MAX),
                expected: ARTIFACT_FORMAT_VERSION,
            });
        }
        let artifact: ModelArtifact = serde_json::from_value(value)?;
        artifact.check()?;
        Ok(artifact)
    }

    /// Consistency between the header, schema and model body.
    pub fn check(&self) -> Result<()> {
        if self.header.model != self.model.kind() {
            return Err(Error::invalid(format!(
                "header says {} but body holds {}",
                self.header.model,
                self.model.kind()
            )));
        }
        let width = match &self.model {
            ModelBody::Gbr(m) => Some(m.n_features),
            ModelBody::Refset(m) => Some(m.reference_features.n_cols),
            _ => None,
        };
        if let Some(width) = width {
            let schema = self.schema.as_ref().ok_or_else(|| Error::invalid("learned model without a feature schema"))?;
            if schema.selected_features.len() != width {
                return Err(Error::DimensionMismatch {
                    expected: schema.selected_features.len(),
                    actual: width,
                });
            }
        }
        self.policy.validate()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_slice(&bytes).map_err(|e| Error::InFile {
            path: path.display().to_string(),
            source: Box::new(e),
        })
    }

    /// SHA-256 over the artifact with its creation time and wall-clock
    /// fields zeroed. Two runs with the same inputs and seed agree on it.
    pub fn fingerprint(&self) -> Result<String> {
        let mut stable = self.clone();
        stable.header.created_unix = 0;
        stable.metadata.train_seconds = 0.0;
        stable.metadata.total_seconds = 0.0;
        Ok(hex(&Sha256::digest(stable.to_json_bytes()?)))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
