use serde::{Deserialize, Serialize};

use super::{check_lengths, MetricsError, Result};

/// Scores are clamped to `[SCORE_CLAMP, 1 − SCORE_CLAMP]` before taking logs.
pub const SCORE_CLAMP: f64 = 1e-12;

/// Sort order by score with the original position as tie-breaker.
fn ascending(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    order
}

/// Mann–Whitney AUC: over all (positive, negative) pairs, a win counts 1 and a
/// tie ½.
///
/// Counted in half-units as an integer, so the result is the exact ratio
/// `(2·wins + ties) / (2·P·N)` rounded once.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricsError::Invalid("NaN score".into()));
    }
    let order = ascending(scores);
    let (mut negatives_below, mut half_units) = (0u64, 0u64);
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
        half_units += 2 * pos * negatives_below + pos * neg;
        negatives_below += neg;
        i = j;
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok(half_units as f64 / (2 * positives * negatives) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Rows with score ≥ threshold are called positive.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// Empirical ROC curve from (0, 0) to (1, 1), one point per distinct score.
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>> {
    check_lengths(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut order = ascending(scores);
    order.reverse();
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: s,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    Ok(points)
}

/// Mean squared difference between predicted probability and 0/1 label.
pub fn brier(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| (s - if y { 1.0 } else { 0.0 }).powi(2))
        .sum();
    Ok(total / scores.len() as f64)
}

/// Mean binary cross-entropy with clamped scores.
pub fn test_binary_nll(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| {
            let p = s.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn auc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(roc_auc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.3; 4], &labels).unwrap(), 0.5);
        assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(
            roc_auc(&[0.1, 0.2], &[true, true]),
            Err(MetricsError::SingleClass)
        );
    }

    #[test]
    fn roc_curve_shape() {
        let pts = roc_curve(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert_eq!(pts.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(pts.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        assert_eq!(pts.len(), 5);
        // trapezoidal area equals the Mann–Whitney AUC
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        assert!((area - 0.75).abs() < 1e-15);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5, 0.5], &[true, false]).unwrap(), 0.25);
        assert!((brier(&[0.8, 0.2], &[true, false]).unwrap() - 0.04).abs() < 1e-15);
    }

    #[test]
    fn binary_nll_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((test_binary_nll(&[0.5, 0.5], &[true, false]).unwrap() - ln2).abs() < 1e-15);
        let perfect = test_binary_nll(&[1.0, 0.0], &[true, false]).unwrap();
        assert!(perfect > 0.0 && perfect < 1e-11);
        assert!((test_binary_nll(&[0.8], &[true]).unwrap() - 0.2231435513142097).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn auc_complement_and_monotone_invariance(
            data in prop::collection::vec((0u8..20, any::<bool>()), 2..60)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = roc_auc(&scores, &labels).unwrap();
            prop_assert_eq!(a + roc_auc(&scores, &flipped).unwrap(), 1.0);
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(roc_auc(&warped, &labels).unwrap(), a);
            let b = brier(&scores, &labels).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
            prop_assert!(test_binary_nll(&scores, &labels).unwrap() >= 0.0);
        }
    }
}
