//! Run configuration (TOML) and the manifest written next to every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifact::hex;
use crate::error::{Error, Result};
use crate::pipeline::{EvalSplit, TrainConfig};
use crate::synthgen::GenSpec;
use crate::trace::GroupMapping;

/// One run's settings. Every section is optional in the file.
///
/// ```toml
/// seed = 7
/// corpus = ["data/corpus.json"]
/// out = "runs/demo"
///
/// [train]
/// model = "gbr"
/// k = 10
///
/// [train.policy]
/// scope = "join_only"
/// safe_inject = true
///
/// [synth]
/// n_executions = 263
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides both `train.seed` and `synth.seed` when set.
    pub seed: Option<u64>,
    pub corpus: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub train: TrainConfig,
    pub synth: GenSpec,
    pub groups: GroupMapping,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub split: EvalSplit,
    pub models: Vec<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::InFile {
            path: path.display().to_string(),
            source: Box::new(e),
        })
    }

    /// Pushes the top-level seed down into the sections that use one.
    pub fn resolve_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
            self.synth.seed = seed;
        }
    }

    /// Fails when a referenced input path does not exist.
    pub fn check_inputs(&self) -> Result<()> {
        for p in self.corpus.iter().chain(&self.eval.models) {
            if !p.exists() {
                return Err(Error::invalid(format!("input {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// SHA-256 of the configuration's canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }
}

/// Provenance record accompanying command outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub crate_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.to_string(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config.hash(),
            seed: config.seed.unwrap_or(config.train.seed),
            inputs: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifact::ModelKind;
    use crate::policy::Scope;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_sections_parse() {
        let c = RunConfig::from_toml_str(
            r#"
            seed = 9
            [train]
            model = "refset"
            [train.policy]
            scope = "join_only"
            [synth]
            n_executions = 10
            depth_range = [1, 2]
            "#,
        )
        .unwrap();
        assert_eq!(c.train.model, ModelKind::Refset);
        assert_eq!(c.train.policy.scope, Scope::JoinOnly);
        assert_eq!(c.synth.depth_range, (1, 2));
        let mut c = c;
        c.resolve_seed();
        assert_eq!((c.train.seed, c.synth.seed), (9, 9));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sede = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: Some(1),
            ..RunConfig::default()
        };
        assert_eq!(a.hash(), RunConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
