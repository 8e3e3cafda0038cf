use std::path::Path;

use renetseg::model::ModelConfig;
use serde::Deserialize;

/// Training configuration file. Every key is optional.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub seed: u64,
    pub image_size: usize,
    pub rnn_units: usize,
    pub patch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            image_size: 64,
            rnn_units: 32,
            patch: 2,
            lr: 0.01,
            momentum: 0.9,
            batch_size: 4,
            epochs: 300,
            threshold: 0.5,
        }
    }
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_size: self.image_size,
            patch: self.patch,
            rnn_units: self.rnn_units,
            learning_rate: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            threshold: self.threshold,
            ..ModelConfig::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(CliConfig::parse("{}").unwrap(), CliConfig::default());
        let m = CliConfig::default().model_config();
        assert_eq!(m, ModelConfig::default());
    }

    #[test]
    fn partial_override() {
        let c = CliConfig::parse(r#"{"epochs": 3, "lr": 0.5}"#).unwrap();
        assert_eq!((c.epochs, c.lr, c.seed), (3, 0.5, 42));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = CliConfig::parse(r#"{"epoch": 3}"#).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");
    }
}
