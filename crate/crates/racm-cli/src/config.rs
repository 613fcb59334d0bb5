//! Run configuration: one TOML document drives every command.

use racm_core::corpus::{CorpusFormat, TokenizerConfig};
use racm_core::error::{CoreError, Result};
use racm_core::eval::PrecisionDenominator;
use racm_core::fusion::GateMode;
use racm_core::model::{Ablation, ModelConfig, Pooling};
use racm_core::train::TrainingConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Everything a run needs. Unknown keys in the file are rejected, so typos
/// fail loudly instead of silently falling back to defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Corpus file consumed by every data-bearing command.
    pub corpus: Option<PathBuf>,
    pub format: CorpusFormat,
    /// Prebuilt index file; commands fall back to building one in memory.
    pub index: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub report: PathBuf,

    pub n_title: usize,
    pub n_description: usize,
    pub n_code: usize,
    pub min_freq: u64,

    pub d: usize,
    pub k: usize,
    pub heads: usize,
    pub gate_mode: GateMode,
    pub pooling: Pooling,
    pub ablation: Ablation,

    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,

    pub precision_denominator: PrecisionDenominator,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            format: CorpusFormat::Jsonl,
            index: None,
            checkpoint: PathBuf::from("model.ckpt"),
            log: PathBuf::from("train_log.jsonl"),
            report: PathBuf::from("report.json"),
            n_title: 16,
            n_description: 128,
            n_code: 128,
            min_freq: 2,
            d: 32,
            k: 3,
            heads: 1,
            gate_mode: GateMode::Sigmoid,
            pooling: Pooling::Mean,
            ablation: Ablation::Full,
            learning_rate: 1e-5,
            batch_size: 4,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            precision_denominator: PrecisionDenominator::Cutoff,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CoreError::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| CoreError::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // Structural knobs are checked again by ModelConfig/TrainingConfig;
        // this catches values those never see.
        if self.min_freq == 0 {
            return Err(CoreError::InvalidConfig("min_freq must be at least 1".into()));
        }
        Ok(())
    }

    pub fn corpus_path(&self) -> Result<&Path> {
        self.corpus.as_deref().ok_or_else(|| {
            CoreError::InvalidConfig("no corpus path: set `corpus` in the config or pass --input".into())
        })
    }

    pub fn tokenizer(&self) -> TokenizerConfig {
        TokenizerConfig {
            n_title: self.n_title,
            n_description: self.n_description,
            n_code: self.n_code,
        }
    }

    /// Architecture snapshot for the given vocabulary sizes.
    pub fn model(&self, vocab_size: usize, tag_count: usize) -> ModelConfig {
        ModelConfig {
            d: self.d,
            n_title: self.n_title,
            n_description: self.n_description,
            n_code: self.n_code,
            vocab_size,
            tag_count,
            k: self.k,
            heads: self.heads,
            gate_mode: self.gate_mode,
            pooling: self.pooling,
            ablation: self.ablation,
        }
    }

    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
        }
    }

    /// The snapshot string embedded in output artifacts.
    pub fn snapshot(&self) -> Result<String> {
        serde_json::to_string(self)
            .map_err(|e| CoreError::Parse(format!("config snapshot: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_values() {
        let c = RunConfig::default();
        assert_eq!((c.n_title, c.n_description, c.n_code), (16, 128, 128));
        assert_eq!((c.d, c.k, c.heads), (32, 3, 1));
        assert_eq!(c.min_freq, 2);
        assert_eq!(c.learning_rate, 1e-5);
        assert_eq!((c.batch_size, c.max_epochs, c.patience), (4, 100, 5));
        assert_eq!(c.ablation, Ablation::Full);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("speling_mistake = 3\n").unwrap_err();
        assert!(err.to_string().contains("speling_mistake"), "{err}");
    }

    #[test]
    fn partial_files_inherit_defaults() {
        let c: RunConfig = toml::from_str("d = 24\nseed = 7\nablation = \"no-ra\"\n").unwrap();
        assert_eq!(c.d, 24);
        assert_eq!(c.seed, 7);
        assert_eq!(c.ablation, Ablation::NoRa);
        assert_eq!(c.k, 3);
    }

    #[test]
    fn snapshot_round_trips() {
        let c = RunConfig::default();
        let s = c.snapshot().unwrap();
        let back: RunConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
