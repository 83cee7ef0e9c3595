//! Versioned, self-contained model documents.

use std::path::Path;

use dforest::cascade::CascadeModel;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub config: RunConfig,
    /// Names of the input columns the model expects, in order.
    pub feature_names: Vec<String>,
    pub model: CascadeModel,
}

impl ModelFile {
    pub fn new(config: RunConfig, feature_names: Vec<String>, model: CascadeModel) -> Self {
        ModelFile {
            format_version: FORMAT_VERSION,
            config,
            feature_names,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(dforest::Error::from)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("model {}: {e}", path.display())))?;
        match value.get("format_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => {
                return Err(CliError::Runtime(format!(
                    "model {} has format version {v}, this build reads {FORMAT_VERSION}",
                    path.display()
                )))
            }
            None => {
                return Err(CliError::Runtime(format!(
                    "model {} has no format_version",
                    path.display()
                )))
            }
        }
        let file: ModelFile =
            serde_json::from_value(value).map_err(|e| CliError::Runtime(format!("model {}: {e}", path.display())))?;
        file.config.validate()?;
        Ok(file)
    }
}
