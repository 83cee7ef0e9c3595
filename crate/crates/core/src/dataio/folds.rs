use rand::seq::SliceRandom;

use crate::error::{Error, Result};

/// Assignment of every row to one of `k` validation folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
}

impl FoldPlan {
    pub fn from_assignments(k: usize, assignments: Vec<usize>) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidParam(format!("k must be at least 2, got {k}")));
        }
        if let Some(a) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::InvalidParam(format!("fold index {a} out of range for k={k}")));
        }
        Ok(Self { k, assignments })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Rows held out by fold `f`, ascending.
    pub fn valid_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Rows used to train the model for fold `f`, ascending.
    pub fn train_rows(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }
}

/// Splits rows into `k` disjoint folds.
///
/// Stratified plans deal each class round-robin after a seeded shuffle; the
/// negative class continues where the positives stopped so fold sizes stay
/// within one of each other too.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidParam(format!("k must be at least 2, got {k}")));
    }
    let n = labels.len();
    if n < k {
        return Err(Error::InvalidParam(format!("{n} rows cannot fill {k} folds")));
    }
    let mut rng = crate::seed::rng(seed, &[0xF01D]);
    let mut assignments = vec![0usize; n];
    if stratified {
        let mut pos: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| labels[i] != 1).collect();
        if pos.len() < k || neg.len() < k {
            return Err(Error::InvalidParam(format!(
                "stratified {k}-fold split needs at least {k} rows per class, got {} positives and {} negatives",
                pos.len(),
                neg.len()
            )));
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        for (slot, &i) in pos.iter().chain(neg.iter()).enumerate() {
            assignments[i] = slot % k;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for (slot, &i) in order.iter().enumerate() {
            assignments[i] = slot % k;
        }
    }
    Ok(FoldPlan { k, assignments })
}

/// Cost weights that give both classes the same total weight.
///
/// The minority class gets `majority / minority`, the majority class 1.0.
pub fn balanced_weights(labels: &[u8]) -> Result<Vec<f64>> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass(format!("{pos} positives, {neg} negatives")));
    }
    let (w_pos, w_neg) = if pos <= neg {
        (neg as f64 / pos as f64, 1.0)
    } else {
        (1.0, pos as f64 / neg as f64)
    };
    Ok(labels.iter().map(|&y| if y == 1 { w_pos } else { w_neg }).collect())
}
