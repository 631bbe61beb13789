//! The run configuration: every tunable of a training and evaluation run.

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterConfig;
use crate::error::{Error, Result};
use crate::flow::FlowConfig;
use crate::inference::InferenceConfig;
use crate::metrics::EvalProtocol;
use crate::training::TrainConfig;

/// Union of all component settings, serialized as one JSON document.
///
/// Missing keys take their defaults; unknown keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub flow: FlowConfig,
    pub clustering: ClusterConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub protocol: EvalProtocol,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.flow.validate()?;
        self.train.validate()?;
        if self.clustering.n_x == 0 || self.clustering.n_y == 0 {
            return Err(Error::invalid(
                "clustering.n_x and clustering.n_y must be positive",
            ));
        }
        if self.inference.k == 0 {
            return Err(Error::invalid("inference.k must be positive"));
        }
        self.protocol.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::format("run config", e))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let config = RunConfig::default();
        let text = config.to_json();
        assert_eq!(RunConfig::from_json(&text).unwrap(), config);
        assert!(text.contains("\"reg_weight\": 0.05"));
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let config = RunConfig::from_json(r#"{"train": {"epochs": 5}}"#).unwrap();
        assert_eq!(config.train.epochs, 5);
        assert_eq!(config.train.milestones, vec![1000, 1500]);
        assert_eq!(config.flow.blocks, 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json(r#"{"train": {"epoch": 5}}"#).unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 0}}"#).is_err());
    }
}
