//! Run configuration shared by the command-line tool and the tests.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agreement::{ControlConfig, InfoLossOptions};
use crate::amnesic::StoppingRule;
use crate::corpus::GrammarConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainSchedule};
use crate::probes::ProbeConfig;
use crate::vocab::Vocab;

/// Architecture fields of [`ModelConfig`]; vocabulary size, mask id and
/// seed come from the vocabulary and the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelShape {
    pub n_layers: usize,
    pub n_heads: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        let toy = ModelConfig::toy(0, 0);
        Self {
            n_layers: toy.n_layers,
            n_heads: toy.n_heads,
            hidden_dim: toy.hidden_dim,
            ffn_dim: toy.ffn_dim,
            max_seq_len: toy.max_seq_len,
        }
    }
}

impl ModelShape {
    pub fn model_config(&self, vocab: &Vocab, seed: u64) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            hidden_dim: self.hidden_dim,
            ffn_dim: self.ffn_dim,
            vocab_size: vocab.len(),
            max_seq_len: self.max_seq_len,
            mask_token_id: vocab.mask_id(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { train: 0.8, dev: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub grammar: GrammarConfig,
    pub split: SplitConfig,
    pub model: ModelShape,
    pub train: TrainSchedule,
    pub probe: ProbeConfig,
    pub inlp: StoppingRule,
    pub control: ControlConfig,
    pub info_loss: InfoLossOptions,
}

impl ToolkitConfig {
    /// Reads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        config.grammar.validate()?;
        Ok(config)
    }
}
