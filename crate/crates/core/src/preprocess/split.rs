use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PreprocessError, Result};
use crate::model::OutcomeScale;

pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.15;

/// Variable the splits are stratified on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stratification {
    /// One stratum per observed outcome class.
    OrdinalClass,
    /// Favorable vs unfavorable.
    Dichotomy,
}

/// Ordinal classes when every observed class has at least `min_members` rows,
/// otherwise the favorable/unfavorable dichotomy.
pub fn choose_strata(
    outcomes: &[usize],
    scale: OutcomeScale,
    min_members: usize,
) -> (Stratification, Vec<usize>) {
    let mut counts = vec![0usize; scale.classes];
    for &y in outcomes {
        counts[y] += 1;
    }
    if counts.iter().all(|&c| c == 0 || c >= min_members) {
        (Stratification::OrdinalClass, outcomes.to_vec())
    } else {
        (
            Stratification::Dichotomy,
            outcomes
                .iter()
                .map(|&y| usize::from(!scale.is_favorable(y)))
                .collect(),
        )
    }
}

/// Row indices per stratum (ascending stratum id), each shuffled by `rng`.
fn shuffled_strata(strata: &[usize], rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let count = strata.iter().copied().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); count];
    for (i, &s) in strata.iter().enumerate() {
        groups[s].push(i);
    }
    groups.retain(|g| !g.is_empty());
    for g in &mut groups {
        g.shuffle(rng);
    }
    groups
}

/// Stratified k-fold assignment; returns 1-based fold labels per row.
///
/// Rows of each stratum are shuffled and dealt round-robin, the dealer
/// position carrying over between strata so fold sizes stay balanced.
pub fn stratified_kfold(
    outcomes: &[usize],
    scale: OutcomeScale,
    folds: usize,
    seed: u64,
) -> Result<(Stratification, Vec<usize>)> {
    if folds < 2 || outcomes.len() < folds {
        return Err(PreprocessError::TooFewRows {
            rows: outcomes.len(),
            folds,
        });
    }
    let (kind, strata) = choose_strata(outcomes, scale, folds);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0usize; outcomes.len()];
    let mut dealer = 0usize;
    for group in shuffled_strata(&strata, &mut rng) {
        for i in group {
            labels[i] = dealer % folds + 1;
            dealer += 1;
        }
    }
    Ok((kind, labels))
}

/// Number of validation rows: round-half-up of `fraction · n`, at least one,
/// leaving at least one training row.
fn validation_size(n: usize, fraction: f64) -> usize {
    let raw = (fraction * n as f64 + 0.5 + 1e-9).floor() as usize;
    raw.max(1).min(n - 1)
}

/// Stratified train/validation flags (`true` = validation) over `outcomes`.
///
/// Within each shuffled stratum, the row at rank `r` of `m` gets the key
/// `(r + ½)/m`; the smallest keys across all strata form the validation set,
/// which allocates validation rows proportionally to stratum size.
pub fn train_val_split(
    outcomes: &[usize],
    scale: OutcomeScale,
    fraction: f64,
    seed: u64,
) -> Result<Vec<bool>> {
    if outcomes.len() < 2 {
        return Err(PreprocessError::TooFewRows {
            rows: outcomes.len(),
            folds: 2,
        });
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(PreprocessError::Invalid(format!(
            "validation fraction {fraction} outside (0, 1)"
        )));
    }
    let (_, strata) = choose_strata(outcomes, scale, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(outcomes.len());
    for (s, group) in shuffled_strata(&strata, &mut rng).into_iter().enumerate() {
        let m = group.len() as f64;
        for (rank, i) in group.into_iter().enumerate() {
            keyed.push(((rank as f64 + 0.5) / m, s, i));
        }
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n_val = validation_size(outcomes.len(), fraction);
    let mut flags = vec![false; outcomes.len()];
    for &(_, _, i) in keyed.iter().take(n_val) {
        flags[i] = true;
    }
    Ok(flags)
}

/// Training and validation row indices inside one fold's complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InnerSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Outer test folds plus the inner train/validation split of each complement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub seed: u64,
    pub stratification: Stratification,
    /// 1-based fold label per row.
    pub labels: Vec<usize>,
    /// Indexed by `fold − 1`; indices refer to the full table.
    pub inner: Vec<InnerSplit>,
}

impl FoldPlan {
    /// The inner split of fold `f` is seeded with `seed + f`.
    pub fn build(
        outcomes: &[usize],
        scale: OutcomeScale,
        folds: usize,
        validation_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        let (stratification, labels) = stratified_kfold(outcomes, scale, folds, seed)?;
        let mut inner = Vec::with_capacity(folds);
        for f in 1..=folds {
            let complement: Vec<usize> = (0..outcomes.len()).filter(|&i| labels[i] != f).collect();
            let sub: Vec<usize> = complement.iter().map(|&i| outcomes[i]).collect();
            let flags = train_val_split(&sub, scale, validation_fraction, seed.wrapping_add(f as u64))?;
            let (mut train, mut validation) = (Vec::new(), Vec::new());
            for (&i, &v) in complement.iter().zip(&flags) {
                if v {
                    validation.push(i);
                } else {
                    train.push(i);
                }
            }
            inner.push(InnerSplit { train, validation });
        }
        Ok(FoldPlan {
            folds,
            seed,
            stratification,
            labels,
            inner,
        })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&i| self.labels[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> &[usize] {
        &self.inner[fold - 1].train
    }

    pub fn validation_indices(&self, fold: usize) -> &[usize] {
        &self.inner[fold - 1].validation
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MRS: OutcomeScale = OutcomeScale::MODIFIED_RANKIN;

    #[test]
    fn exact_divisibility() {
        // 20 favorable (class 0), 30 unfavorable (class 4) → dichotomy == class strata here
        let outcomes: Vec<usize> = (0..50).map(|i| if i < 20 { 0 } else { 4 }).collect();
        let (_, labels) = stratified_kfold(&outcomes, MRS, 5, 9).unwrap();
        for f in 1..=5 {
            let fav = (0..50).filter(|&i| labels[i] == f && outcomes[i] == 0).count();
            let unfav = (0..50).filter(|&i| labels[i] == f && outcomes[i] == 4).count();
            assert_eq!((fav, unfav), (4, 6));
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let outcomes: Vec<usize> = (0..80).map(|i| (i * 7 + 3) % 7).collect();
        assert_eq!(
            stratified_kfold(&outcomes, MRS, 5, 42).unwrap(),
            stratified_kfold(&outcomes, MRS, 5, 42).unwrap()
        );
        assert_ne!(
            stratified_kfold(&outcomes, MRS, 5, 42).unwrap().1,
            stratified_kfold(&outcomes, MRS, 5, 43).unwrap().1
        );
        assert_eq!(
            train_val_split(&outcomes, MRS, 0.15, 1).unwrap(),
            train_val_split(&outcomes, MRS, 0.15, 1).unwrap()
        );
    }

    #[test]
    fn small_class_falls_back_to_dichotomy() {
        let mut outcomes = Vec::new();
        for class in 0..7 {
            let n = if class == 5 { 3 } else { 10 };
            outcomes.extend(std::iter::repeat_n(class, n));
        }
        let (kind, _) = stratified_kfold(&outcomes, MRS, 5, 0).unwrap();
        assert_eq!(kind, Stratification::Dichotomy);
        let full: Vec<usize> = (0..70).map(|i| i % 7).collect();
        assert_eq!(stratified_kfold(&full, MRS, 5, 0).unwrap().0, Stratification::OrdinalClass);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            stratified_kfold(&[0, 1, 2], MRS, 5, 0),
            Err(PreprocessError::TooFewRows { rows: 3, folds: 5 })
        ));
        assert!(train_val_split(&[0], MRS, 0.15, 0).is_err());
    }

    #[test]
    fn validation_sizes() {
        let outcomes: Vec<usize> = (0..100).map(|i| i % 7).collect();
        let flags = train_val_split(&outcomes, MRS, 0.15, 3).unwrap();
        assert_eq!(flags.iter().filter(|f| **f).count(), 15);
        let flags = train_val_split(&outcomes[..7], MRS, 0.15, 3).unwrap();
        assert_eq!(flags.iter().filter(|f| **f).count(), 1);
        assert_eq!(validation_size(10, 0.15), 2);
        assert_eq!(validation_size(2, 0.15), 1);
    }

    #[test]
    fn fold_plan_partitions_rows() {
        let outcomes: Vec<usize> = (0..449).map(|i| (i * 13) % 7).collect();
        let plan = FoldPlan::build(&outcomes, MRS, 5, 0.15, 11).unwrap();
        let mut seen = vec![0; 449];
        for f in 1..=5 {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
            let mut inner: Vec<usize> = plan
                .train_indices(f)
                .iter()
                .chain(plan.validation_indices(f))
                .copied()
                .collect();
            inner.sort();
            let complement: Vec<usize> = (0..449).filter(|&i| plan.labels[i] != f).collect();
            assert_eq!(inner, complement);
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    proptest! {
        #[test]
        fn folds_preserve_class_proportions(
            outcomes in prop::collection::vec(0usize..7, 10..300),
            seed in any::<u64>(),
        ) {
            let (kind, labels) = stratified_kfold(&outcomes, MRS, 5, seed).unwrap();
            let strata = choose_strata(&outcomes, MRS, 5).1;
            prop_assert_eq!(kind, choose_strata(&outcomes, MRS, 5).0);
            let n = outcomes.len() as f64;
            for f in 1..=5 {
                let size = labels.iter().filter(|&&l| l == f).count() as f64;
                for s in 0..7 {
                    let global = strata.iter().filter(|&&v| v == s).count() as f64;
                    let in_fold = (0..outcomes.len())
                        .filter(|&i| labels[i] == f && strata[i] == s)
                        .count() as f64;
                    prop_assert!((in_fold - global * size / n).abs() <= 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn validation_split_is_stratified(
            outcomes in prop::collection::vec(0usize..7, 2..200),
            seed in any::<u64>(),
        ) {
            let flags = train_val_split(&outcomes, MRS, 0.15, seed).unwrap();
            let n_val = flags.iter().filter(|f| **f).count();
            prop_assert_eq!(n_val, validation_size(outcomes.len(), 0.15));
            let strata = choose_strata(&outcomes, MRS, 2).1;
            let n = outcomes.len() as f64;
            for s in 0..7 {
                let global = strata.iter().filter(|&&v| v == s).count() as f64;
                let chosen = (0..outcomes.len()).filter(|&i| flags[i] && strata[i] == s).count() as f64;
                prop_assert!((chosen - global * n_val as f64 / n).abs() <= 1.0 + 1e-9);
            }
        }
    }
}
