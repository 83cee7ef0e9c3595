use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::Dataset;
use crate::error::{Error, Result};

/// Values are rounded to this many decimals so CSV exports stay compact.
const DECIMALS: f64 = 1e4;

/// Generates an imbalanced binary dataset with a fixed generative structure.
///
/// Exactly `round(n * pos_rate)` rows are positive. Informative feature `j`
/// carries one of three kinds of class signal, cycling with `j % 3`:
/// a mean shift, a variance inflation, or a shift whose sign depends on an
/// earlier informative feature (an interaction). Strength decays with `j`
/// so importance rankings are well defined. Remaining features are N(0, 1)
/// noise for both classes. Only the sample draw depends on `seed`.
pub fn synth_imbalanced(n: usize, d: usize, d_informative: usize, pos_rate: f64, seed: u64) -> Result<Dataset> {
    if d_informative > d {
        return Err(Error::InvalidParam(format!(
            "d_informative {d_informative} exceeds d {d}"
        )));
    }
    if !(pos_rate > 0.0 && pos_rate < 1.0) {
        return Err(Error::InvalidParam(format!("pos_rate {pos_rate} not in (0, 1)")));
    }
    let n_pos = (n as f64 * pos_rate).round() as usize;
    if n_pos == 0 || n_pos >= n {
        return Err(Error::InvalidParam(format!(
            "n={n} with pos_rate={pos_rate} gives {n_pos} positives; both classes are required"
        )));
    }

    let mut rng = crate::seed::rng(seed, &[0x5E7]);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut labels = vec![0u8; n];
    for &i in &order[..n_pos] {
        labels[i] = 1;
    }

    let mut features = Vec::with_capacity(n * d);
    let mut row = vec![0.0f64; d];
    for &y in &labels {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[j] = if y == 1 && j < d_informative {
                let strength = 1.0 - 0.6 * j as f64 / d_informative as f64;
                match j % 3 {
                    0 => z + 0.55 * strength,
                    1 => z * (1.0 + 0.6 * strength),
                    _ => {
                        let sign = if row[j - 2] > 0.0 { 1.0 } else { -1.0 };
                        z + 0.7 * strength * sign
                    }
                }
            } else {
                z
            };
        }
        features.extend(row.iter().map(|v| (v * DECIMALS).round() / DECIMALS));
    }
    Dataset::new(features, d, labels, None, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_positive_quota() {
        let ds = synth_imbalanced(1000, 5, 2, 0.01, 1).unwrap();
        assert_eq!(ds.positives(), 10);
        let ds = synth_imbalanced(333, 4, 4, 0.25, 9).unwrap();
        assert_eq!(ds.positives(), 83);
    }

    #[test]
    fn deterministic_in_seed() {
        let a = synth_imbalanced(200, 6, 3, 0.1, 42).unwrap();
        let b = synth_imbalanced(200, 6, 3, 0.1, 42).unwrap();
        assert_eq!(a, b);
        let c = synth_imbalanced(200, 6, 3, 0.1, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn invalid_arguments() {
        assert!(synth_imbalanced(100, 3, 4, 0.1, 0).is_err());
        assert!(synth_imbalanced(100, 3, 1, 0.0, 0).is_err());
        assert!(synth_imbalanced(100, 3, 1, 1.0, 0).is_err());
        assert!(synth_imbalanced(10, 3, 1, 0.01, 0).is_err());
    }

    #[test]
    fn informative_columns_separate_classes() {
        let ds = synth_imbalanced(4000, 4, 1, 0.5, 5).unwrap();
        let mean = |col: usize, y: u8| {
            let v: Vec<f64> = (0..ds.len())
                .filter(|&i| ds.labels()[i] == y)
                .map(|i| ds.row(i)[col])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean(0, 1) - mean(0, 0) > 0.4);
        assert!((mean(3, 1) - mean(3, 0)).abs() < 0.1);
    }
}
