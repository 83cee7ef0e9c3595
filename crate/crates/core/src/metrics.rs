//! Ranking and threshold metrics for binary scores.
//!
//! Every function takes parallel `scores` and `labels` slices (labels are 0/1)
//! and checks that both are non-empty, equally long, and finite.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metrics usable as a cascade stopping criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auc,
    F1,
    Ks,
    Accuracy,
}

impl Metric {
    pub fn evaluate(self, scores: &[f64], labels: &[u8]) -> Result<f64> {
        match self {
            Metric::Auc => auc(scores, labels),
            Metric::F1 => f1(scores, labels, DEFAULT_THRESHOLD),
            Metric::Ks => ks(scores, labels),
            Metric::Accuracy => accuracy(scores, labels, DEFAULT_THRESHOLD),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "auc" => Ok(Metric::Auc),
            "f1" => Ok(Metric::F1),
            "ks" => Ok(Metric::Ks),
            "accuracy" => Ok(Metric::Accuracy),
            other => Err(Error::InvalidParam(format!(
                "unknown metric '{other}' (expected auc, f1, ks or accuracy)"
            ))),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Auc => "auc",
            Metric::F1 => "f1",
            Metric::Ks => "ks",
            Metric::Accuracy => "accuracy",
        })
    }
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub f1: f64,
    pub ks: f64,
    /// `(rate, recall)` pairs in the order the rates were requested.
    pub recall_at: Vec<(f64, f64)>,
    pub pr_points: Vec<PrPoint>,
}

impl MetricReport {
    pub fn compute(scores: &[f64], labels: &[u8], rates: &[f64]) -> Result<Self> {
        let recall_at = rates
            .iter()
            .map(|&r| recall_at_rate(scores, labels, r).map(|v| (r, v)))
            .collect::<Result<_>>()?;
        Ok(MetricReport {
            auc: auc(scores, labels)?,
            f1: f1(scores, labels, DEFAULT_THRESHOLD)?,
            ks: ks(scores, labels)?,
            recall_at,
            pr_points: pr_curve(scores, labels)?,
        })
    }
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.is_empty() {
        return Err(Error::Data("no scores to evaluate".into()));
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Data(format!("non-finite score at row {}", i + 1)));
    }
    if let Some(i) = labels.iter().position(|&y| y > 1) {
        return Err(Error::Data(format!("non-binary label at row {}", i + 1)));
    }
    let pos = labels.iter().filter(|&&y| y == 1).count();
    Ok((pos, labels.len() - pos))
}

fn check_both(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positives, {neg} negatives")));
    }
    Ok((pos, neg))
}

fn check_positives(scores: &[f64], labels: &[u8]) -> Result<usize> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::Data("no positive labels".into()));
    }
    Ok(pos)
}

/// Cumulative `(threshold, tp, fp)` at each distinct score, highest first.
/// A row counts as predicted positive when its score is at least the threshold.
fn cuts(scores: &[f64], labels: &[u8]) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((scores[i], tp, fp));
        }
    }
    out
}

/// Probability that a random positive outscores a random negative, ties
/// counted as one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_both(scores, labels)?;
    // Twice the Mann-Whitney count, kept integral so the result is exact.
    let mut twice: u128 = 0;
    let mut neg_above = 0usize;
    let mut prev_fp = 0;
    let mut prev_tp = 0;
    for (_, tp, fp) in cuts(scores, labels) {
        let (dp, dn) = (tp - prev_tp, fp - prev_fp);
        // Positives in this tie group beat every negative below it.
        twice += (dp as u128) * (2 * (neg - neg_above - dn) + dn) as u128;
        neg_above += dn;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok((twice as f64 / 2.0) / (pos as f64 * neg as f64))
}

pub fn f1(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_both(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp + fp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fn_) as f64)
}

pub fn accuracy(scores: &[f64], labels: &[u8], threshold: f64) -> Result<f64> {
    check_both(scores, labels)?;
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| (s >= threshold) == (y == 1))
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Largest gap between true and false positive rates over all cut points.
pub fn ks(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_both(scores, labels)?;
    Ok(cuts(scores, labels)
        .into_iter()
        .map(|(_, tp, fp)| (tp as f64 / pos as f64 - fp as f64 / neg as f64).abs())
        .fold(0.0, f64::max))
}

/// Number of rows flagged at `rate`: `ceil(rate * n)` clamped to `1..=n`.
///
/// Products within 1e-9 of an integer round to it, so `0.01 * 300` is 3
/// even though the float product is slightly above.
pub fn interrupt_budget(rate: f64, n: usize) -> usize {
    let x = rate * n as f64;
    let nearest = x.round();
    let budget = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest
    } else {
        x.ceil()
    };
    (budget as usize).clamp(1, n.max(1))
}

/// Share of positives among the `ceil(rate * n)` highest-scored rows, score
/// ties going to the lower row index.
pub fn recall_at_rate(scores: &[f64], labels: &[u8], rate: f64) -> Result<f64> {
    let pos = check_positives(scores, labels)?;
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidParam(format!("rate must be in (0, 1], got {rate}")));
    }
    let budget = interrupt_budget(rate, scores.len());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let caught = order[..budget].iter().filter(|&&i| labels[i] == 1).count();
    Ok(caught as f64 / pos as f64)
}

/// One point per distinct score, highest threshold first, so recall is
/// non-decreasing along the list.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let pos = check_positives(scores, labels)?;
    Ok(cuts(scores, labels)
        .into_iter()
        .map(|(threshold, tp, fp)| PrPoint {
            recall: tp as f64 / pos as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold,
        })
        .collect())
}

/// Writes `recall,precision,threshold` rows under a header line.
pub fn write_pr_csv(path: &Path, points: &[PrPoint]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(out, "recall,precision,threshold").map_err(io)?;
    for p in points {
        writeln!(out, "{},{},{}", p.recall, p.precision, p.threshold).map_err(io)?;
    }
    out.flush().map_err(io)
}
