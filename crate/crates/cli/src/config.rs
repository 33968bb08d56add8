use std::path::Path;

use pairlive_core::augment::AugmentConfig;
use pairlive_core::datamodel::SynthConfig;
use pairlive_core::losses::LossConfig;
use pairlive_core::trainer::{OptimConfig, TrainConfig};
use pairlive_core::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Mixed into the run seed to derive the validation split's seed.
const VALIDATION_SALT: u64 = 0x7661_6c69_6461_7465;

/// Every knob of a run, loadable from one JSON document.
///
/// The top-level `seed` overrides the nested `synth.seed` and `optim.seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Minimum cosine similarity for an attack to keep its live match.
    pub tau_sim: f64,
    /// Identities in the generated validation split.
    pub validation_identities: usize,
    pub synth: SynthConfig,
    pub augment: AugmentConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 20_250_701,
            tau_sim: 0.9,
            validation_identities: 20,
            synth: SynthConfig::default(),
            augment: AugmentConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Copy with the top-level seed pushed into the nested configs.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        out.synth.seed = self.seed;
        out.optim.seed = self.seed;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau_sim) {
            return Err(Error::Config(format!("tau_sim must be in [-1, 1], got {}", self.tau_sim)));
        }
        if self.validation_identities == 0 {
            return Err(Error::Config("validation_identities must be at least 1".into()));
        }
        self.synth.validate()?;
        self.train_config().validate()
    }

    pub fn train_config(&self) -> TrainConfig {
        let r = self.resolved();
        TrainConfig {
            optim: r.optim,
            loss: r.loss,
            augment: r.augment,
        }
    }

    pub fn train_synth(&self) -> SynthConfig {
        self.resolved().synth
    }

    /// Generator settings for the validation split: same geometry, disjoint
    /// identities.
    pub fn validation_synth(&self) -> SynthConfig {
        SynthConfig {
            n_identities: self.validation_identities,
            id_prefix: format!("{}-val", self.synth.id_prefix),
            seed: self.seed ^ VALIDATION_SALT,
            ..self.train_synth()
        }
    }

    /// SHA-256 of the resolved configuration's canonical JSON.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.resolved()).expect("config serializes");
        format!("{:x}", Sha256::digest(&bytes))
    }

    /// Provenance header embedded in every output.
    pub fn provenance(&self) -> Value {
        serde_json::json!({ "config_hash": self.hash(), "seed": self.seed })
    }

    /// Applies `group.key=value`, where the value is parsed as JSON and falls
    /// back to a plain string.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut doc = serde_json::to_value(&*self)?;
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(doc).map_err(|e| Error::Config(format!("{key}: {e}")))?;
        Ok(())
    }
}
