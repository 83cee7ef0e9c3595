//! Run configuration read from JSON.

use std::path::{Path, PathBuf};

use dforest::cascade::CascadeConfig;
use dforest::dataio::{ColumnRef, CsvOptions};
use dforest::mart::MartParams;
use dforest::metrics::Metric;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Interrupt rates reported when none are given: 1/10000, 1/1000, 1/100.
pub const DEFAULT_RATES: [f64; 3] = [0.0001, 0.001, 0.01];

/// How instance weights are assigned at training time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    /// Minority class weighted by the majority/minority count ratio.
    #[default]
    Balanced,
    Uniform,
    /// Weights read from the named CSV column.
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub label_column: String,
    pub weights: WeightMode,
    pub k_folds: usize,
    pub learners_per_layer: usize,
    pub stop_metric: Metric,
    pub patience: usize,
    pub max_layers: usize,
    pub top_k_features: Option<usize>,
    pub seed: u64,
    pub pool_size: usize,
    pub mart: MartParams,
    pub eval_rates: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let c = CascadeConfig::default();
        RunConfig {
            data: None,
            model: None,
            checkpoint: None,
            label_column: "label".into(),
            weights: WeightMode::Balanced,
            k_folds: c.k_folds,
            learners_per_layer: c.learners_per_layer,
            stop_metric: c.stop_metric,
            patience: c.patience,
            max_layers: c.max_layers,
            top_k_features: c.top_k_features,
            seed: c.seed,
            pool_size: 1,
            mart: c.mart,
            eval_rates: DEFAULT_RATES.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.cascade()
            .validate()
            .map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if self.pool_size == 0 {
            return Err(CliError::Usage("config: pool_size must be at least 1".into()));
        }
        if let Some(r) = self.eval_rates.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(CliError::Usage(format!("config: eval rate {r} is not in (0, 1]")));
        }
        Ok(())
    }

    pub fn cascade(&self) -> CascadeConfig {
        CascadeConfig {
            k_folds: self.k_folds,
            learners_per_layer: self.learners_per_layer,
            mart: self.mart.clone(),
            stop_metric: self.stop_metric,
            patience: self.patience,
            max_layers: self.max_layers,
            top_k_features: self.top_k_features,
            seed: self.seed,
        }
    }

    pub fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            has_header: true,
            label_column: ColumnRef::Name(self.label_column.clone()),
            weight_column: match &self.weights {
                WeightMode::Column(c) => Some(ColumnRef::Name(c.clone())),
                _ => None,
            },
        }
    }

    /// The settings that determine a trained model, without paths or pool size.
    pub fn fingerprint_json(&self) -> String {
        let mut c = self.clone();
        c.data = None;
        c.model = None;
        c.checkpoint = None;
        c.pool_size = 1;
        c.eval_rates.clear();
        serde_json::to_string(&c).expect("config serializes")
    }
}
