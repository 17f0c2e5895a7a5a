//! Discrimination and calibration metrics, C-for-Benefit, basic bootstrap
//! intervals and descriptive cohort summaries.

mod benefit;
mod bootstrap;
mod classification;
mod summary;

pub use benefit::{c_for_benefit, matched_pairs, MatchedPair};
pub use bootstrap::{
    basic_interval, bootstrap_ci, bootstrap_ci_vec, bootstrap_distribution, draw_resample,
    replicate_rng, BootstrapConfig, Interval,
};
pub use classification::{brier, roc_auc, roc_curve, test_binary_nll, RocPoint, SCORE_CLAMP};
pub use summary::{descriptive_summary, SummaryCell, SummaryRow, SummaryTable, SUMMARY_GROUPS};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("metric of an empty sample")]
    Empty,
    #[error("length mismatch: {0} scores vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("only one outcome class present")]
    SingleClass,
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("{failures} undefined bootstrap resamples exceed the cap of {cap}")]
    TooManyUndefined { failures: usize, cap: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Empirical quantile by linear interpolation between order statistics at
/// position `p·(n−1)` (0-based) of the sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::Invalid(format!("quantile level {p}")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&sorted, p))
}

fn check_lengths(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(MetricsError::LengthMismatch(scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}
