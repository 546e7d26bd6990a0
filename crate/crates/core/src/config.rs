//! Run configuration: flat `section.key = value` text (valid TOML).
//!
//! Every key is optional; missing keys take their defaults, unknown keys are
//! rejected, and every error names the offending key path.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{EnvConfig, RewardTable, Simulator};
use crate::error::{Error, Result};
use crate::geometry::{Intersection, IntersectionLayout};
use crate::model::ModelRolloutConfig;
use crate::nn::Architecture;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Output root used when no `--out` flag is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    /// Sequential workers and zeroed wall-clock column.
    pub deterministic: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub layout: IntersectionLayout,
    pub env: EnvConfig,
    pub reward: RewardTable,
    pub model: ModelRolloutConfig,
    pub train: TrainConfig,
    pub run: RunSection,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::config("<root>", e.message().to_string()))?;
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::config(path, inner.message().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let intersection = Intersection::new(self.layout.clone()).map_err(|e| match e {
            Error::InvalidLayout(msg) => Error::config("layout", msg),
            other => other,
        })?;
        self.env.validate(&intersection)?;
        self.model.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Flat `section.key = value` lines, one per key, sorted.
    pub fn to_text(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        if let serde_json::Value::Object(sections) = value {
            for (section, body) in sections {
                if let serde_json::Value::Object(keys) = body {
                    for (key, v) in keys {
                        let v = toml::Value::try_from(v).expect("config values are TOML-representable");
                        out.push_str(&format!("{section}.{key} = {v}\n"));
                    }
                }
            }
        }
        out
    }

    pub fn architecture(&self) -> Architecture {
        let n = self.env.vehicles.len();
        let hidden = vec![self.train.hidden_units; self.train.hidden_layers];
        Architecture::new(2 * n, n, &hidden, self.train.sigma_min)
    }

    pub fn simulator(&self) -> Result<Simulator> {
        let intersection = Arc::new(Intersection::new(self.layout.clone())?);
        Simulator::new(intersection, self.env.clone(), self.reward)
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    RunConfig::parse(&text)
}
