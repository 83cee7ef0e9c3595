//! Weighted second-order gradient boosting of regression trees (MART).
//!
//! The loss is binary log-loss on a margin. Every boosting round takes
//! per-row gradient `g` and hessian `h`, scales both by the instance weight,
//! and grows a tree that minimises the second-order expansion:
//! leaves take `-G / (H + lambda)` and splits are scored by
//! [`split_gain`]. Predictions add `learning_rate` times each tree's leaf to
//! a base margin.
//!
//! Two growers share the boosting loop. [`train_mart`] bins features against
//! thresholds proposed by merged per-shard [`QuantileSketch`]es and scans
//! histograms. [`train_mart_exact`] re-sorts every node and walks every
//! midpoint between distinct training values; it exists to check the first.

mod exact;
mod hist;
mod tree;

pub use tree::{Node, Tree};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Features};
use crate::error::{Error, Result};
use crate::sketch::QuantileSketch;

/// Lower clamp for per-row hessians.
pub const HESSIAN_FLOOR: f64 = 1e-16;

/// Training rows are split into this many contiguous shards, each sketched
/// locally and merged, the way data-parallel workers would.
pub const SKETCH_SHARDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MartParams {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Fraction of features drawn (per tree) as split candidates.
    pub feature_subsample: f64,
    pub max_bins: usize,
    /// Sketch rank error; `None` means `1 / (2 * max_bins)`.
    pub eps: Option<f64>,
    pub seed: u64,
}

impl Default for MartParams {
    fn default() -> Self {
        Self {
            num_trees: 50,
            max_depth: 5,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            feature_subsample: 0.8,
            max_bins: 256,
            eps: None,
            seed: 0,
        }
    }
}

impl MartParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParam(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be non-negative", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        if !(self.min_child_weight >= 0.0 && self.min_child_weight.is_finite()) {
            return bad(format!(
                "min_child_weight {} must be non-negative",
                self.min_child_weight
            ));
        }
        if !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return bad(format!("feature_subsample {} not in (0, 1]", self.feature_subsample));
        }
        if !(2..=65_536).contains(&self.max_bins) {
            return bad(format!("max_bins {} not in [2, 65536]", self.max_bins));
        }
        if let Some(eps) = self.eps {
            if !(0.0..0.5).contains(&eps) {
                return bad(format!("eps {eps} not in [0, 0.5)"));
            }
        }
        Ok(())
    }

    pub fn sketch_eps(&self) -> f64 {
        self.eps.unwrap_or(1.0 / (2.0 * self.max_bins as f64))
    }
}

/// Additive ensemble of trees on top of a base margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartModel {
    pub trees: Vec<Tree>,
    pub base_score: f64,
    pub params: MartParams,
    pub num_features: usize,
}

pub fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

/// Gradient and hessian of the log-loss with respect to the margin.
pub fn logistic_grad_hess(y: f64, margin: f64) -> (f64, f64) {
    let p = sigmoid(margin);
    (p - y, (p * (1.0 - p)).max(HESSIAN_FLOOR))
}

/// Second-order loss reduction of splitting a node into two children.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

/// Gains closer than this, relative to the node's own score plus the best
/// gain so far, are treated as equal: the earlier candidate keeps the split,
/// and a first split must clear the same margin above zero. Without it,
/// rounding in `G²/H` decides exact ties.
const GAIN_RTOL: f64 = 1e-9;

/// Score `G²/(H+λ)` of an unsplit node, the scale of rounding in its gains.
pub(crate) fn node_score(g: f64, h: f64, lambda: f64) -> f64 {
    let s = g * g / (h + lambda);
    if s.is_finite() {
        s
    } else {
        0.0
    }
}

pub(crate) fn improves(gain: f64, best: f64, node_score: f64) -> bool {
    gain > best + GAIN_RTOL * (best.abs() + node_score)
}

pub(crate) fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    let w = -g / (h + lambda);
    if w.is_finite() {
        w
    } else {
        0.0
    }
}

/// The winning split of a node: rows with `value <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitDecision {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Per-node split search over explicit per-feature candidate thresholds.
///
/// `g`, `h` and `w` are indexed by row; statistics are accumulated as
/// `w * g` and `w * h`. Ties keep the lowest feature, then the lowest
/// threshold.
#[allow(clippy::too_many_arguments)]
pub fn find_best_split<F: Features + ?Sized>(
    features: &F,
    rows: &[usize],
    g: &[f64],
    h: &[f64],
    w: &[f64],
    candidates: &[Vec<f64>],
    params: &MartParams,
) -> Option<SplitDecision> {
    let grad: Vec<f64> = g.iter().zip(w).map(|(g, w)| w * g).collect();
    let hess: Vec<f64> = h.iter().zip(w).map(|(h, w)| w * h).collect();
    let g_total: f64 = rows.iter().map(|&r| grad[r]).sum();
    let h_total: f64 = rows.iter().map(|&r| hess[r]).sum();
    let mut best: Option<SplitDecision> = None;
    let scale = node_score(g_total, h_total, params.lambda);
    let mut best_gain = 0.0;
    for (feature, thresholds) in candidates.iter().enumerate() {
        let mut order: Vec<(f64, usize)> = rows.iter().map(|&r| (features.value(r, feature), r)).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (mut gl, mut hl, mut nl) = (0.0, 0.0, 0usize);
        let mut p = 0;
        for &t in thresholds {
            while p < order.len() && order[p].0 <= t {
                gl += grad[order[p].1];
                hl += hess[order[p].1];
                nl += 1;
                p += 1;
            }
            if nl == 0 {
                continue;
            }
            if nl == rows.len() {
                break;
            }
            let (gr, hr) = (g_total - gl, h_total - hl);
            if hl < params.min_child_weight || hr < params.min_child_weight {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.lambda, params.gamma);
            if improves(gain, best_gain, scale) {
                best_gain = gain;
                best = Some(SplitDecision {
                    feature,
                    threshold: t,
                    gain,
                });
            }
        }
    }
    best
}

/// Grows one tree from weighted statistics of the training rows.
pub(crate) trait TreeGrower {
    /// Returns the tree and, for every training row, the leaf weight it lands in.
    fn grow(&self, grad: &[f64], hess: &[f64], mask: &[usize], params: &MartParams) -> (Tree, Vec<f64>);
}

/// Features offered to the splitter of tree `t`, ascending.
pub(crate) fn feature_mask(params: &MartParams, tree_index: usize, d: usize) -> Vec<usize> {
    let count = ((params.feature_subsample * d as f64).round() as usize).clamp(1, d.max(1));
    if count >= d {
        return (0..d).collect();
    }
    let mut rng = crate::seed::rng(params.seed, &[tree_index as u64, 0xFEA7]);
    let mut mask = index::sample(&mut rng, d, count).into_vec();
    mask.sort_unstable();
    mask
}

/// Per-feature split thresholds from sketches merged across row shards.
pub fn sketch_thresholds<F: Features + ?Sized>(
    features: &F,
    rows: &[usize],
    weights: &[f64],
    params: &MartParams,
) -> Vec<Vec<f64>> {
    let eps = params.sketch_eps();
    let shard_len = rows.len().div_ceil(SKETCH_SHARDS).max(1);
    let mut pairs = Vec::with_capacity(shard_len);
    (0..features.n_cols())
        .map(|f| {
            let mut global = QuantileSketch::empty(eps).expect("eps validated");
            for (s, shard) in rows.chunks(shard_len).enumerate() {
                pairs.clear();
                pairs.extend(
                    shard
                        .iter()
                        .enumerate()
                        .map(|(k, &r)| (features.value(r, f), weights[s * shard_len + k])),
                );
                let local = QuantileSketch::from_pairs(&mut pairs, eps);
                global = global.merge(&local).expect("same eps");
            }
            global.candidates(params.max_bins)
        })
        .collect()
}

fn check_training_input<F: Features + ?Sized>(
    features: &F,
    labels: &[u8],
    weights: &[f64],
    rows: &[usize],
    params: &MartParams,
) -> Result<()> {
    params.validate()?;
    if labels.len() != features.n_rows() || weights.len() != features.n_rows() {
        return Err(Error::Data(format!(
            "{} rows but {} labels and {} weights",
            features.n_rows(),
            labels.len(),
            weights.len()
        )));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= features.n_rows()) {
        return Err(Error::Data(format!("row {r} out of range")));
    }
    let pos = rows.iter().filter(|&&r| labels[r] == 1).count();
    if pos == 0 || pos == rows.len() {
        return Err(Error::SingleClass(format!(
            "{pos} positives among {} training rows",
            rows.len()
        )));
    }
    Ok(())
}

fn boost<F: Features + ?Sized, G: TreeGrower>(
    features: &F,
    labels: &[f64],
    weights: &[f64],
    grower: &G,
    params: &MartParams,
) -> MartModel {
    let m = labels.len();
    let w_pos: f64 = labels.iter().zip(weights).map(|(y, w)| y * w).sum();
    let w_all: f64 = weights.iter().sum();
    let p_bar = w_pos / w_all;
    let base_score = (p_bar / (1.0 - p_bar)).ln();

    let mut margins = vec![base_score; m];
    let mut grad = vec![0.0; m];
    let mut hess = vec![0.0; m];
    let mut trees = Vec::with_capacity(params.num_trees);
    for t in 0..params.num_trees {
        for i in 0..m {
            let (g, h) = logistic_grad_hess(labels[i], margins[i]);
            grad[i] = weights[i] * g;
            hess[i] = weights[i] * h;
        }
        let mask = feature_mask(params, t, features.n_cols());
        let (tree, leaf_of_row) = grower.grow(&grad, &hess, &mask, params);
        for (mg, lw) in margins.iter_mut().zip(&leaf_of_row) {
            *mg += params.learning_rate * lw;
        }
        trees.push(tree);
    }
    MartModel {
        trees,
        base_score,
        params: params.clone(),
        num_features: features.n_cols(),
    }
}

/// Trains on the given subset of rows using sketch-proposed thresholds.
pub fn fit_rows<F: Features + ?Sized>(
    features: &F,
    labels: &[u8],
    weights: &[f64],
    rows: &[usize],
    params: &MartParams,
) -> Result<MartModel> {
    check_training_input(features, labels, weights, rows, params)?;
    let y: Vec<f64> = rows.iter().map(|&r| f64::from(labels[r])).collect();
    let w: Vec<f64> = rows.iter().map(|&r| weights[r]).collect();
    let thresholds = if params.num_trees == 0 {
        vec![Vec::new(); features.n_cols()]
    } else {
        sketch_thresholds(features, rows, &w, params)
    };
    let grower = hist::HistGrower::new(features, rows, thresholds, params.max_depth);
    Ok(boost(features, &y, &w, &grower, params))
}

/// Trains with exhaustive per-node enumeration of every midpoint between
/// consecutive distinct training values. Quadratic-ish; for verification.
pub fn fit_rows_exact<F: Features + ?Sized>(
    features: &F,
    labels: &[u8],
    weights: &[f64],
    rows: &[usize],
    params: &MartParams,
) -> Result<MartModel> {
    check_training_input(features, labels, weights, rows, params)?;
    let y: Vec<f64> = rows.iter().map(|&r| f64::from(labels[r])).collect();
    let w: Vec<f64> = rows.iter().map(|&r| weights[r]).collect();
    let grower = exact::ExactGrower::new(features, rows, params.max_depth);
    Ok(boost(features, &y, &w, &grower, params))
}

pub fn train_mart(dataset: &Dataset, params: &MartParams) -> Result<MartModel> {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    fit_rows(dataset, dataset.labels(), dataset.weights(), &rows, params)
}

pub fn train_mart_exact(dataset: &Dataset, params: &MartParams) -> Result<MartModel> {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    fit_rows_exact(dataset, dataset.labels(), dataset.weights(), &rows, params)
}

impl MartModel {
    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.num_features {
            return Err(Error::WidthMismatch {
                expected: self.num_features,
                actual: width,
            });
        }
        Ok(())
    }

    pub fn margin_row(&self, row: &[f64]) -> Result<f64> {
        self.check_width(row.len())?;
        Ok(self.margin_with(|f| row[f]))
    }

    #[inline]
    fn margin_with(&self, value: impl Fn(usize) -> f64 + Copy) -> f64 {
        let mut m = self.base_score;
        for t in &self.trees {
            m += self.params.learning_rate * t.predict_with(value);
        }
        m
    }

    pub fn predict_margin<F: Features + ?Sized>(&self, rows: &F) -> Result<Vec<f64>> {
        self.check_width(rows.n_cols())?;
        Ok((0..rows.n_rows())
            .map(|r| self.margin_with(|f| rows.value(r, f)))
            .collect())
    }

    /// Margins for a subset of rows, in the order given.
    pub fn predict_margin_rows<F: Features + ?Sized>(&self, data: &F, rows: &[usize]) -> Result<Vec<f64>> {
        self.check_width(data.n_cols())?;
        Ok(rows.iter().map(|&r| self.margin_with(|f| data.value(r, f))).collect())
    }

    pub fn predict_proba<F: Features + ?Sized>(&self, rows: &F) -> Result<Vec<f64>> {
        Ok(self.predict_margin(rows)?.into_iter().map(sigmoid).collect())
    }

    /// Gain-based importance: per tree, the summed split gain of every
    /// internal node on a feature; then averaged over trees.
    pub fn feature_importance(&self) -> Vec<f64> {
        let mut total = vec![0.0; self.num_features];
        if self.trees.is_empty() {
            return total;
        }
        for t in &self.trees {
            let mut per_tree = vec![0.0; self.num_features];
            t.accumulate_gains(&mut per_tree);
            for (a, b) in total.iter_mut().zip(per_tree) {
                *a += b;
            }
        }
        let m = self.trees.len() as f64;
        total.iter_mut().for_each(|v| *v /= m);
        total
    }
}
