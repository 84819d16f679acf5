//! ROC AUC, run records and AUC profiles.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use crate::error::{Error, Result};
use crate::math;

/// Mann–Whitney estimate of the ROC AUC: the share of (positive, negative)
/// pairs where the positive scores higher, ties counting one half.
///
/// Pair counts are kept as integers, so the only rounding is the final
/// division.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            context: "roc_auc labels",
            expected: scores.len(),
            found: labels.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("roc_auc scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("ROC AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Twice the Mann–Whitney U statistic.
    let mut twice_u: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

/// One fitted-and-scored run of a method on a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dataset_id: String,
    pub method: String,
    pub seed: u64,
    pub roc_auc: f64,
    pub n_low: usize,
    pub n_high: usize,
    pub noise_level: f64,
    pub wall_time: Duration,
}

/// Share of a method's runs whose AUC exceeds each threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileCurve {
    pub method: String,
    pub thresholds: Vec<f64>,
    pub shares: Vec<f64>,
}

/// One curve per method, ordered by method name.
pub fn auc_profile(records: &[RunRecord], thresholds: &[f64]) -> Vec<ProfileCurve> {
    let mut by_method: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        by_method.entry(&r.method).or_default().push(r.roc_auc);
    }
    by_method
        .into_iter()
        .map(|(method, aucs)| {
            let n = aucs.len() as f64;
            let shares = thresholds
                .iter()
                .map(|&t| aucs.iter().filter(|&&a| a > t).count() as f64 / n)
                .collect();
            ProfileCurve {
                method: method.into(),
                thresholds: thresholds.to_vec(),
                shares,
            }
        })
        .collect()
}

/// Arithmetic mean and standard error of the mean (0 for fewer than two
/// values). `None` for an empty slice.
pub fn mean_and_stderr(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Some((mean, math::sqrt(var / n)))
}

/// Pearson correlation; `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some(sab / math::sqrt(saa * sbb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_ordering() {
        assert_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(),
            1.0
        );
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(
            roc_auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(),
            0.5
        );
    }

    #[test]
    fn four_point_example() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(auc, 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(Error::UndefinedMetric(_))
        ));
    }

    fn record(method: &str, auc: f64) -> RunRecord {
        RunRecord {
            dataset_id: "d".into(),
            method: method.into(),
            seed: 0,
            roc_auc: auc,
            n_low: 0,
            n_high: 0,
            noise_level: 0.0,
            wall_time: Duration::ZERO,
        }
    }

    #[test]
    fn single_run_profile_is_a_step() {
        let curves = auc_profile(&[record("m", 0.9)], &[0.0, 0.5, 0.89, 0.9, 0.95]);
        assert_eq!(curves[0].shares, vec![1.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn three_run_fixture() {
        let recs = [
            record("a", 0.7),
            record("a", 0.8),
            record("a", 0.9),
            record("b", 0.6),
        ];
        let curves = auc_profile(&recs, &[0.0, 0.75, 0.85]);
        assert_eq!(curves[0].method, "a");
        assert_eq!(curves[0].shares, vec![1.0, 2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(curves[1].shares, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_and_stderr(&[2.0, 2.0, 2.0]), Some((2.0, 0.0)));
        assert_eq!(mean_and_stderr(&[]), None);
    }
}
