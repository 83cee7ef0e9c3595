//! Layered cascade of boosted-tree learners.
//!
//! Each layer trains `L` learners with `K`-fold cross fitting. A learner's
//! out-of-fold probabilities become a class vector `[1 - p, p]` that is
//! appended to the (selected) input features of the next layer. Growth stops
//! once the layer score has not improved for `patience` layers. Prediction
//! averages each learner's `K` fold-models and, at the best layer, averages
//! the learners.

mod jobs;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataio::{kfold_split, Dataset, Features, FoldPlan};
use crate::error::{Error, Result};
use crate::mart::{fit_rows, train_mart, MartModel, MartParams};
use crate::metrics::Metric;
use crate::scheduler::{self, Checkpoint, ExecOptions, RunReport};
use crate::seed;

pub use jobs::CascadeRunner;

/// Classes per class vector.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    pub k_folds: usize,
    pub learners_per_layer: usize,
    /// Parameters of every learner; each fold-model gets its own seed.
    pub mart: MartParams,
    pub stop_metric: Metric,
    pub patience: usize,
    pub max_layers: usize,
    /// Keep only this many features, ranked by a MART's importances.
    pub top_k_features: Option<usize>,
    pub seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            k_folds: 5,
            learners_per_layer: 4,
            mart: MartParams {
                num_trees: 50,
                ..MartParams::default()
            },
            stop_metric: Metric::Auc,
            patience: 1,
            max_layers: 20,
            top_k_features: None,
            seed: 0,
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParam(m));
        if self.k_folds < 2 {
            return bad(format!("k_folds must be at least 2, got {}", self.k_folds));
        }
        if self.learners_per_layer < 1 {
            return bad("learners_per_layer must be at least 1".into());
        }
        if self.patience < 1 {
            return bad("patience must be at least 1".into());
        }
        if self.max_layers < 1 {
            return bad("max_layers must be at least 1".into());
        }
        if self.top_k_features == Some(0) {
            return bad("top_k_features must be at least 1".into());
        }
        self.mart.validate()
    }

    /// Columns a layer consumes given `d` selected features.
    pub fn input_width(&self, d: usize, layer: usize) -> usize {
        if layer == 0 {
            d
        } else {
            d + self.learners_per_layer * NUM_CLASSES
        }
    }

    fn learner_params(&self, layer: usize, learner: usize, fold: usize) -> MartParams {
        MartParams {
            seed: seed::derive(self.seed, &[layer as u64, learner as u64, fold as u64]),
            ..self.mart.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `models[j][f]`: learner `j` trained without fold `f`.
    pub models: Vec<Vec<MartModel>>,
    pub validation_score: f64,
    pub input_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeModel {
    pub layers: Vec<Layer>,
    /// Original column index of each input feature, in model order.
    pub selected_features: Vec<usize>,
    /// Width of the rows the model accepts.
    pub num_features: usize,
    pub best_layer: usize,
    pub metric_history: Vec<f64>,
    pub config: CascadeConfig,
}

/// Base features followed by class-vector columns, without copying either.
#[derive(Clone, Copy)]
pub struct Augmented<'a, F: Features + ?Sized> {
    base: &'a F,
    extra: &'a [f64],
    extra_cols: usize,
}

impl<'a, F: Features + ?Sized> Augmented<'a, F> {
    /// `extra` is row-major with `extra_cols` columns per row.
    pub fn new(base: &'a F, extra: &'a [f64], extra_cols: usize) -> Result<Self> {
        if extra.len() != base.n_rows() * extra_cols {
            return Err(Error::Data(format!(
                "class vectors hold {} values, expected {} rows x {extra_cols}",
                extra.len(),
                base.n_rows()
            )));
        }
        Ok(Augmented {
            base,
            extra,
            extra_cols,
        })
    }
}

impl<F: Features + ?Sized> Features for Augmented<'_, F> {
    fn n_rows(&self) -> usize {
        self.base.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.base.n_cols() + self.extra_cols
    }

    #[inline]
    fn value(&self, row: usize, col: usize) -> f64 {
        let d = self.base.n_cols();
        if col < d {
            self.base.value(row, col)
        } else {
            self.extra[row * self.extra_cols + col - d]
        }
    }
}

/// A column subset of another table, in the given order.
pub struct Projected<'a, F: Features + ?Sized> {
    base: &'a F,
    columns: &'a [usize],
}

impl<'a, F: Features + ?Sized> Projected<'a, F> {
    pub fn new(base: &'a F, columns: &'a [usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= base.n_cols()) {
            return Err(Error::Data(format!(
                "column {c} out of range for {} columns",
                base.n_cols()
            )));
        }
        Ok(Projected { base, columns })
    }
}

impl<F: Features + ?Sized> Features for Projected<'_, F> {
    fn n_rows(&self) -> usize {
        self.base.n_rows()
    }

    fn n_cols(&self) -> usize {
        self.columns.len()
    }

    #[inline]
    fn value(&self, row: usize, col: usize) -> f64 {
        self.base.value(row, self.columns[col])
    }
}

/// Concatenates `x` (n x d) and `class_vectors` (n x m) row by row.
pub fn augment(x: &[f64], d: usize, class_vectors: &[f64], m: usize) -> Result<Vec<f64>> {
    let n = x.len().checked_div(d).unwrap_or(0);
    if d == 0 || x.len() != n * d {
        return Err(Error::Data(format!("{} values do not form rows of width {d}", x.len())));
    }
    if class_vectors.len() != n * m {
        return Err(Error::Data(format!(
            "{} rows of features but {} class-vector values for width {m}",
            n,
            class_vectors.len()
        )));
    }
    let mut out = Vec::with_capacity(n * (d + m));
    for i in 0..n {
        out.extend_from_slice(&x[i * d..(i + 1) * d]);
        out.extend_from_slice(&class_vectors[i * m..(i + 1) * m]);
    }
    Ok(out)
}

/// Feature indices ordered by descending importance, ties to the lower index.
pub fn rank_by_importance(importances: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order
}

/// Importances of one MART trained on all features.
pub fn feature_importances(dataset: &Dataset, params: &MartParams) -> Result<Vec<f64>> {
    dataset.require_both_classes()?;
    Ok(train_mart(dataset, params)?.feature_importance())
}

/// Keeps the `top_k` most important features, in rank order.
pub fn select_features(dataset: &Dataset, params: &MartParams, top_k: usize) -> Result<(Dataset, Vec<usize>)> {
    if top_k == 0 || top_k > dataset.n_cols() {
        return Err(Error::InvalidParam(format!(
            "top_k must be in 1..={}, got {top_k}",
            dataset.n_cols()
        )));
    }
    let importances = feature_importances(dataset, params)?;
    let mut keep = rank_by_importance(&importances);
    keep.truncate(top_k);
    Ok((dataset.project(&keep)?, keep))
}

/// Index of the best score, earliest on ties.
pub fn best_layer(history: &[f64]) -> usize {
    let mut best = 0;
    for (t, &s) in history.iter().enumerate() {
        if s > history[best] {
            best = t;
        }
    }
    best
}

/// Whether another layer should follow the scores in `history`.
pub fn should_continue(history: &[f64], patience: usize, max_layers: usize) -> bool {
    history.len() < max_layers && history.len() - 1 - best_layer(history) < patience
}

/// Fold-model for learner `j` of `layer`, trained on the rows outside fold `f`.
#[allow(clippy::too_many_arguments)]
fn train_fold_model<F: Features + ?Sized>(
    x: &F,
    labels: &[u8],
    weights: &[f64],
    train_rows: &[usize],
    config: &CascadeConfig,
    layer: usize,
    j: usize,
    f: usize,
) -> Result<MartModel> {
    fit_rows(x, labels, weights, train_rows, &config.learner_params(layer, j, f))
}

fn predict_rows<F: Features + ?Sized>(model: &MartModel, x: &F, rows: &[usize]) -> Result<Vec<f64>> {
    Ok(model
        .predict_margin_rows(x, rows)?
        .into_iter()
        .map(crate::mart::sigmoid)
        .collect())
}

/// Scatters per-fold probabilities into row-major `[1 - p, p]` class vectors.
/// `probas[j][f]` covers `valid[f]` in order.
fn combine(n: usize, valid: &[Vec<usize>], probas: &[Vec<Vec<f64>>]) -> Result<Vec<f64>> {
    let m = probas.len() * NUM_CLASSES;
    let mut out = vec![f64::NAN; n * m];
    for (j, per_fold) in probas.iter().enumerate() {
        for (f, p) in per_fold.iter().enumerate() {
            let rows = &valid[f];
            if rows.len() != p.len() {
                return Err(Error::Data(format!(
                    "fold {f} of learner {j}: {} predictions for {} rows",
                    p.len(),
                    rows.len()
                )));
            }
            for (&r, &v) in rows.iter().zip(p) {
                out[r * m + NUM_CLASSES * j] = 1.0 - v;
                out[r * m + NUM_CLASSES * j + 1] = v;
            }
        }
    }
    if out.iter().any(|v| v.is_nan()) {
        return Err(Error::Data("fold plan left rows without a prediction".into()));
    }
    Ok(out)
}

/// Mean positive-class probability over the learners of each row.
pub fn mean_positive(class_vectors: &[f64], learners: usize) -> Vec<f64> {
    let m = learners * NUM_CLASSES;
    class_vectors
        .chunks(m)
        .map(|row| (0..learners).map(|j| row[NUM_CLASSES * j + 1]).sum::<f64>() / learners as f64)
        .collect()
}

/// Trains one layer directly, without the scheduler. `x` must already carry
/// the previous layer's class vectors. Returns the layer and its out-of-fold
/// class vectors (n x L*C, learner-major).
pub fn train_layer<F: Features + ?Sized>(
    x: &F,
    labels: &[u8],
    weights: &[f64],
    plan: &FoldPlan,
    config: &CascadeConfig,
    layer: usize,
) -> Result<(Layer, Vec<f64>)> {
    config.validate()?;
    if plan.assignments().len() != x.n_rows() {
        return Err(Error::Data(format!(
            "fold plan covers {} rows, data has {}",
            plan.assignments().len(),
            x.n_rows()
        )));
    }
    let l = config.learners_per_layer;
    let valid: Vec<Vec<usize>> = (0..plan.k()).map(|f| plan.valid_rows(f)).collect();
    let mut models = Vec::with_capacity(l);
    let mut probas = Vec::with_capacity(l);
    for j in 0..l {
        let mut ms = Vec::with_capacity(plan.k());
        let mut ps = Vec::with_capacity(plan.k());
        for (f, v) in valid.iter().enumerate() {
            let m = train_fold_model(x, labels, weights, &plan.train_rows(f), config, layer, j, f)?;
            ps.push(predict_rows(&m, x, v)?);
            ms.push(m);
        }
        models.push(ms);
        probas.push(ps);
    }
    let oof = combine(x.n_rows(), &valid, &probas)?;
    let score = config.stop_metric.evaluate(&mean_positive(&oof, l), labels)?;
    Ok((
        Layer {
            models,
            validation_score: score,
            input_width: x.n_cols(),
        },
        oof,
    ))
}

/// Result of a scheduled cascade run. `model` is `None` when the run did not
/// finish; `report` says why.
#[derive(Debug)]
pub struct CascadeRun {
    pub model: Option<CascadeModel>,
    pub report: RunReport,
}

impl CascadeRun {
    pub fn into_model(self) -> Result<CascadeModel> {
        self.report.check()?;
        self.model
            .ok_or_else(|| Error::Graph("run finished without a final gate".into()))
    }
}

fn prepare(dataset: &Dataset, config: &CascadeConfig) -> Result<(Dataset, Vec<usize>, FoldPlan)> {
    config.validate()?;
    dataset.require_both_classes()?;
    let (data, selected) = match config.top_k_features {
        Some(k) => {
            let params = MartParams {
                seed: config.seed,
                ..config.mart.clone()
            };
            select_features(dataset, &params, k)?
        }
        None => (dataset.clone(), (0..dataset.n_cols()).collect()),
    };
    let plan = kfold_split(dataset.labels(), config.k_folds, config.seed, true)?;
    Ok((data, selected, plan))
}

/// Trains a cascade through the job scheduler, keeping job outputs in memory
/// and using one worker per available core.
pub fn train_cascade(dataset: &Dataset, config: &CascadeConfig) -> Result<CascadeModel> {
    let checkpoint = Checkpoint::in_memory();
    let pool = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_cascade(dataset, config, &checkpoint, &ExecOptions::new(pool))?.into_model()
}

/// Trains a cascade with caller-supplied checkpoint and execution options;
/// with `opts.resume`, jobs recorded by an earlier identical run are reused.
pub fn run_cascade(
    dataset: &Dataset,
    config: &CascadeConfig,
    checkpoint: &Checkpoint,
    opts: &ExecOptions,
) -> Result<CascadeRun> {
    let (data, selected, plan) = prepare(dataset, config)?;
    let runner = CascadeRunner::new(&data, &plan, config);
    let graph = scheduler::build_layer_graph(0, config.k_folds, config.learners_per_layer)?;
    let report = scheduler::run_graph(graph, checkpoint, &runner, opts)?;
    let model = if report.is_complete() {
        Some(runner.collect(checkpoint, &report, selected, dataset.n_cols())?)
    } else {
        None
    };
    Ok(CascadeRun { model, report })
}

impl CascadeModel {
    fn check_width<F: Features + ?Sized>(&self, rows: &F) -> Result<()> {
        if rows.n_cols() != self.num_features {
            return Err(Error::WidthMismatch {
                expected: self.num_features,
                actual: rows.n_cols(),
            });
        }
        Ok(())
    }

    /// Class vectors emitted by each layer up to the best one.
    pub fn class_vectors<F: Features + ?Sized>(&self, rows: &F) -> Result<Vec<Vec<f64>>> {
        self.check_width(rows)?;
        let base = Projected::new(rows, &self.selected_features)?;
        let n = rows.n_rows();
        let mut out: Vec<Vec<f64>> = Vec::new();
        for (t, layer) in self.layers.iter().enumerate().take(self.best_layer + 1) {
            let l = layer.models.len();
            let m = l * NUM_CLASSES;
            let cv = {
                let prev: &[f64] = out.last().map_or(&[], Vec::as_slice);
                let prev_cols = if t == 0 {
                    0
                } else {
                    self.layers[t - 1].models.len() * NUM_CLASSES
                };
                let x = Augmented::new(&base, prev, prev_cols)?;
                let mut cv = vec![0.0; n * m];
                for (j, folds) in layer.models.iter().enumerate() {
                    let mut sum = vec![0.0; n];
                    for model in folds {
                        for (s, p) in sum.iter_mut().zip(model.predict_proba(&x)?) {
                            *s += p;
                        }
                    }
                    for (i, s) in sum.into_iter().enumerate() {
                        let p = s / folds.len() as f64;
                        cv[i * m + NUM_CLASSES * j] = 1.0 - p;
                        cv[i * m + NUM_CLASSES * j + 1] = p;
                    }
                }
                cv
            };
            out.push(cv);
        }
        Ok(out)
    }

    /// A copy holding only the layers prediction consults.
    pub fn truncated(&self) -> CascadeModel {
        let mut m = self.clone();
        m.layers.truncate(self.best_layer + 1);
        m.metric_history.truncate(self.best_layer + 1);
        m
    }
}

/// Positive-class probability per row: the mean over learners at the best layer.
pub fn predict_cascade<F: Features + ?Sized>(model: &CascadeModel, rows: &F) -> Result<Vec<f64>> {
    let cvs = model.class_vectors(rows)?;
    let last = cvs.last().ok_or_else(|| Error::Data("cascade has no layers".into()))?;
    Ok(mean_positive(last, model.layers[model.best_layer].models.len()))
}

impl fmt::Display for CascadeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} layers, best {} ({} = {:.6})",
            self.layers.len(),
            self.best_layer,
            self.config.stop_metric,
            self.metric_history[self.best_layer]
        )
    }
}
