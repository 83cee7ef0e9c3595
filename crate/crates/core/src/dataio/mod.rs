//! Binary-classification datasets and the plumbing around them.

mod csv_io;
mod folds;
mod synth;

pub use csv_io::{
    load_csv, load_csv_with, load_features_csv, read_scores, write_csv, write_scores, ColumnRef, CsvOptions,
};
pub use folds::{balanced_weights, kfold_split, FoldPlan};
pub use synth::synth_imbalanced;

use crate::error::{Error, Result};

/// Read access to a dense row/column table of feature values.
///
/// Training and prediction are written against this trait so that cascade
/// layers can stack class vectors onto a dataset without copying it.
pub trait Features: Sync {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn value(&self, row: usize, col: usize) -> f64;
}

/// Dense feature matrix with binary labels and positive instance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    labels: Vec<u8>,
    weights: Vec<f64>,
    feature_names: Vec<String>,
}

impl Dataset {
    /// Builds a dataset from row-major features, checking every invariant.
    pub fn new(
        features: Vec<f64>,
        n_cols: usize,
        labels: Vec<u8>,
        weights: Option<Vec<f64>>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n_rows = labels.len();
        if features.len() != n_rows * n_cols {
            return Err(Error::Data(format!(
                "feature buffer holds {} values, expected {} rows x {} columns",
                features.len(),
                n_rows,
                n_cols
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite feature value at row {}, column {}",
                pos / n_cols.max(1),
                pos % n_cols.max(1)
            )));
        }
        if let Some(r) = labels.iter().position(|&y| y > 1) {
            return Err(Error::Data(format!("non-binary label at row {r}")));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n_rows]);
        if weights.len() != n_rows {
            return Err(Error::Data(format!("{} weights for {} rows", weights.len(), n_rows)));
        }
        if let Some(r) = weights.iter().position(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(Error::Data(format!("weight at row {r} must be positive and finite")));
        }
        let feature_names = feature_names.unwrap_or_else(|| (0..n_cols).map(|j| format!("f{j}")).collect());
        if feature_names.len() != n_cols {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                n_cols
            )));
        }
        Ok(Self {
            features,
            n_rows,
            n_cols,
            labels,
            weights,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y == 1).count()
    }

    /// Replaces the instance weights, validating them like [`Dataset::new`].
    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        Dataset::new(
            self.features,
            self.n_cols,
            self.labels,
            Some(weights),
            Some(self.feature_names),
        )
    }

    /// Keeps the given columns, in the given order.
    pub fn project(&self, columns: &[usize]) -> Result<Self> {
        if let Some(&c) = columns.iter().find(|&&c| c >= self.n_cols) {
            return Err(Error::InvalidParam(format!(
                "column {c} out of range for {} columns",
                self.n_cols
            )));
        }
        let mut features = Vec::with_capacity(self.n_rows * columns.len());
        for i in 0..self.n_rows {
            let row = self.row(i);
            features.extend(columns.iter().map(|&c| row[c]));
        }
        Ok(Self {
            features,
            n_rows: self.n_rows,
            n_cols: columns.len(),
            labels: self.labels.clone(),
            weights: self.weights.clone(),
            feature_names: columns.iter().map(|&c| self.feature_names[c].clone()).collect(),
        })
    }

    /// Keeps the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            features.extend_from_slice(self.row(r));
        }
        Self {
            features,
            n_rows: rows.len(),
            n_cols: self.n_cols,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            weights: rows.iter().map(|&r| self.weights[r]).collect(),
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let pos = self.positives();
        if pos == 0 || pos == self.n_rows {
            return Err(Error::SingleClass(format!(
                "{pos} positives out of {} rows",
                self.n_rows
            )));
        }
        Ok(())
    }
}

impl Features for Dataset {
    fn n_rows(&self) -> usize {
        self.n_rows
    }

    fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    fn value(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.n_cols + col]
    }
}

/// A borrowed row-major matrix.
#[derive(Debug, Clone, Copy)]
pub struct RowMajor<'a> {
    data: &'a [f64],
    cols: usize,
}

impl<'a> RowMajor<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Result<Self> {
        if cols == 0 && !data.is_empty() || cols > 0 && !data.len().is_multiple_of(cols) {
            return Err(Error::Data(format!(
                "{} values do not form rows of width {cols}",
                data.len()
            )));
        }
        Ok(Self { data, cols })
    }
}

impl Features for RowMajor<'_> {
    fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    fn n_cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn value(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_invariants() {
        assert!(Dataset::new(vec![1.0, f64::NAN], 2, vec![1], None, None).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 2, vec![2], None, None).is_err());
        assert!(Dataset::new(vec![1.0, 2.0], 2, vec![1], Some(vec![0.0]), None).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], 2, vec![1], None, None).is_err());
    }

    #[test]
    fn project_and_subset() {
        let ds = Dataset::new(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 3, vec![0, 1], None, None).unwrap();
        let p = ds.project(&[2, 0]).unwrap();
        assert_eq!(p.row(1), &[6.0, 4.0]);
        assert_eq!(p.feature_names(), &["f2".to_string(), "f0".to_string()]);
        let s = ds.subset(&[1]);
        assert_eq!(s.row(0), &[4.0, 5.0, 6.0]);
        assert_eq!(s.labels(), &[1]);
        assert!(ds.project(&[3]).is_err());
    }
}
