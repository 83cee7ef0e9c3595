//! Scheduler jobs of a cascade layer and their payload formats.
//!
//! | job        | payload     | contents                                      |
//! |------------|-------------|-----------------------------------------------|
//! | fold_prep  | `valid.idx` | validation row indices of the fold, u32 LE    |
//! | train      | `model.json`| the fold-model                                |
//! | predict    | `proba.bin` | positive probabilities of the fold rows, f64 LE |
//! | combine    | `oof.bin`   | out-of-fold class vectors, n x L*C f64 LE     |
//! | gate       | `gate.json` | score, history, best layer, continue flag     |

use serde::{Deserialize, Serialize};

use super::{best_layer, combine, mean_positive, predict_rows, should_continue, train_fold_model, Augmented};
use super::{CascadeConfig, CascadeModel, Layer, NUM_CLASSES};
use crate::dataio::{Dataset, Features, FoldPlan};
use crate::error::{Error, Result};
use crate::mart::MartModel;
use crate::scheduler::{
    combine_id, gate_id, layer_nodes, predict_id, prep_id, train_id, Checkpoint, JobKind, JobNode, JobRunner, Outputs,
    RunReport,
};

const VALID: &str = "valid.idx";
const MODEL: &str = "model.json";
const PROBA: &str = "proba.bin";
const OOF: &str = "oof.bin";
const GATE: &str = "gate.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GateRecord {
    score: f64,
    history: Vec<f64>,
    best_layer: usize,
    #[serde(rename = "continue")]
    proceed: bool,
}

fn encode_u32(v: &[usize]) -> Vec<u8> {
    v.iter().flat_map(|&x| (x as u32).to_le_bytes()).collect()
}

fn decode_u32(b: &[u8]) -> Result<Vec<usize>> {
    if !b.len().is_multiple_of(4) {
        return Err(Error::Data("index payload is not a whole number of u32".into()));
    }
    Ok(b.chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect())
}

fn encode_f64(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn decode_f64(b: &[u8]) -> Result<Vec<f64>> {
    if !b.len().is_multiple_of(8) {
        return Err(Error::Data("float payload is not a whole number of f64".into()));
    }
    Ok(b.chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

fn coord(node: &JobNode, what: &str, v: Option<usize>) -> Result<usize> {
    v.ok_or_else(|| Error::Graph(format!("job '{}' has no {what}", node.id)))
}

/// Runs cascade jobs against one (already selected) dataset and fold plan.
pub struct CascadeRunner<'a> {
    data: &'a Dataset,
    plan: &'a FoldPlan,
    config: &'a CascadeConfig,
}

impl<'a> CascadeRunner<'a> {
    pub fn new(data: &'a Dataset, plan: &'a FoldPlan, config: &'a CascadeConfig) -> Self {
        CascadeRunner { data, plan, config }
    }

    fn class_width(&self) -> usize {
        self.config.learners_per_layer * NUM_CLASSES
    }

    /// Class vectors feeding `layer`, empty for the first layer.
    fn previous_oof(&self, ck: &Checkpoint, layer: usize) -> Result<Vec<f64>> {
        if layer == 0 {
            return Ok(Vec::new());
        }
        decode_f64(&ck.output(&combine_id(layer - 1), OOF)?)
    }

    fn valid_rows(&self, ck: &Checkpoint, layer: usize, fold: usize) -> Result<Vec<usize>> {
        decode_u32(&ck.output(&prep_id(layer, fold), VALID)?)
    }

    fn model(&self, ck: &Checkpoint, layer: usize, j: usize, f: usize) -> Result<MartModel> {
        Ok(serde_json::from_slice(&ck.output(&train_id(layer, j, f), MODEL)?)?)
    }

    fn gate(&self, ck: &Checkpoint, layer: usize) -> Result<GateRecord> {
        Ok(serde_json::from_slice(&ck.output(&gate_id(layer), GATE)?)?)
    }

    fn run_job(&self, node: &JobNode, ck: &Checkpoint) -> Result<Outputs> {
        let t = node.params.layer;
        let k = self.plan.k();
        let l = self.config.learners_per_layer;
        let n = self.data.len();
        let (name, payload) = match node.kind {
            JobKind::FoldPrep => {
                let f = coord(node, "fold", node.params.fold)?;
                (VALID, encode_u32(&self.plan.valid_rows(f)))
            }
            JobKind::Train => {
                let f = coord(node, "fold", node.params.fold)?;
                let j = coord(node, "learner", node.params.learner)?;
                let mut in_fold = vec![false; n];
                for r in self.valid_rows(ck, t, f)? {
                    in_fold[r] = true;
                }
                let rows: Vec<usize> = (0..n).filter(|&r| !in_fold[r]).collect();
                let prev = self.previous_oof(ck, t)?;
                let x = Augmented::new(self.data, &prev, if t == 0 { 0 } else { self.class_width() })?;
                let model = train_fold_model(&x, self.data.labels(), self.data.weights(), &rows, self.config, t, j, f)?;
                (MODEL, serde_json::to_vec(&model)?)
            }
            JobKind::Predict => {
                let f = coord(node, "fold", node.params.fold)?;
                let j = coord(node, "learner", node.params.learner)?;
                let model = self.model(ck, t, j, f)?;
                let prev = self.previous_oof(ck, t)?;
                let x = Augmented::new(self.data, &prev, if t == 0 { 0 } else { self.class_width() })?;
                let p = predict_rows(&model, &x, &self.valid_rows(ck, t, f)?)?;
                (PROBA, encode_f64(&p))
            }
            JobKind::Combine => {
                let valid = (0..k).map(|f| self.valid_rows(ck, t, f)).collect::<Result<Vec<_>>>()?;
                let probas = (0..l)
                    .map(|j| {
                        (0..k)
                            .map(|f| decode_f64(&ck.output(&predict_id(t, j, f), PROBA)?))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                (OOF, encode_f64(&combine(n, &valid, &probas)?))
            }
            JobKind::EvaluateGate => {
                let oof = decode_f64(&ck.output(&combine_id(t), OOF)?)?;
                let score = self
                    .config
                    .stop_metric
                    .evaluate(&mean_positive(&oof, l), self.data.labels())?;
                let mut history = if t == 0 {
                    Vec::new()
                } else {
                    self.gate(ck, t - 1)?.history
                };
                if history.len() != t {
                    return Err(Error::Graph(format!("gate {t} found {} earlier scores", history.len())));
                }
                history.push(score);
                let record = GateRecord {
                    score,
                    best_layer: best_layer(&history),
                    proceed: should_continue(&history, self.config.patience, self.config.max_layers),
                    history,
                };
                (GATE, serde_json::to_vec(&record)?)
            }
        };
        Ok(Outputs::from([(name.to_string(), payload)]))
    }

    /// Assembles the model from a completed run's job outputs.
    pub fn collect(
        &self,
        ck: &Checkpoint,
        report: &RunReport,
        selected: Vec<usize>,
        num_features: usize,
    ) -> Result<CascadeModel> {
        let last = report
            .graph
            .nodes()
            .iter()
            .filter(|n| n.kind == JobKind::EvaluateGate)
            .map(|n| n.params.layer)
            .max()
            .ok_or_else(|| Error::Graph("no gate in graph".into()))?;
        let gate = self.gate(ck, last)?;
        if gate.proceed {
            return Err(Error::Graph(format!("gate {last} asked for another layer")));
        }
        let d = self.data.n_cols();
        let layers = (0..=last)
            .map(|t| {
                let models = (0..self.config.learners_per_layer)
                    .map(|j| {
                        (0..self.plan.k())
                            .map(|f| self.model(ck, t, j, f))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Layer {
                    models,
                    validation_score: gate.history[t],
                    input_width: self.config.input_width(d, t),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CascadeModel {
            layers,
            selected_features: selected,
            num_features,
            best_layer: gate.best_layer,
            metric_history: gate.history,
            config: self.config.clone(),
        })
    }
}

impl JobRunner for CascadeRunner<'_> {
    fn run(&self, node: &JobNode, ck: &Checkpoint) -> std::result::Result<Outputs, String> {
        self.run_job(node, ck).map_err(|e| e.to_string())
    }

    fn expand(&self, node: &JobNode, outputs: &Outputs) -> std::result::Result<Vec<JobNode>, String> {
        if node.kind != JobKind::EvaluateGate {
            return Ok(Vec::new());
        }
        let bytes = outputs.get(GATE).ok_or("gate produced no record")?;
        let record: GateRecord = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        if !record.proceed {
            return Ok(Vec::new());
        }
        let t = node.params.layer;
        layer_nodes(t + 1, self.plan.k(), self.config.learners_per_layer, Some(&gate_id(t))).map_err(|e| e.to_string())
    }
}
