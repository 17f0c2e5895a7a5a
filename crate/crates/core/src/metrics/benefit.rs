use std::cmp::Ordering;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::effects::IteRecord;

/// One treated and one control patient matched on predicted benefit rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub treated_id: String,
    pub control_id: String,
    /// Mean of the two patients' ITEs.
    pub predicted: f64,
    /// Treated favorable minus control favorable: −1, 0 or 1.
    pub observed: i8,
}

fn sorted_arm(records: &[IteRecord], arm: u8) -> Vec<&IteRecord> {
    let mut rows: Vec<&IteRecord> = records.iter().filter(|r| r.arm == arm).collect();
    // partial_cmp so that -0.0 and 0.0 tie; ITEs are finite
    rows.sort_by(|a, b| {
        a.ite
            .partial_cmp(&b.ite)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    rows
}

/// Keeps `keep` rows of `rows`, chosen uniformly without replacement, in their
/// original order.
fn truncate<'a>(rows: Vec<&'a IteRecord>, keep: usize, rng: &mut ChaCha8Rng) -> Vec<&'a IteRecord> {
    if rows.len() == keep {
        return rows;
    }
    let mut chosen = index::sample(rng, rows.len(), keep).into_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| rows[i]).collect()
}

/// Sorts each arm by `(ite, id)`, randomly truncates the larger arm to the size
/// of the smaller one, and pairs the arms rank to rank.
pub fn matched_pairs(records: &[IteRecord], seed: u64) -> Result<Vec<MatchedPair>> {
    let treated = sorted_arm(records, 1);
    let control = sorted_arm(records, 0);
    if treated.len() < 2 || control.len() < 2 {
        return Err(MetricsError::Undefined(format!(
            "C-for-Benefit needs two patients per arm, got {} treated and {} control",
            treated.len(),
            control.len()
        )));
    }
    let keep = treated.len().min(control.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let treated = truncate(treated, keep, &mut rng);
    let control = truncate(control, keep, &mut rng);
    Ok(treated
        .iter()
        .zip(&control)
        .map(|(t, c)| MatchedPair {
            treated_id: t.id.clone(),
            control_id: c.id.clone(),
            predicted: (t.ite + c.ite) / 2.0,
            observed: t.favorable as i8 - c.favorable as i8,
        })
        .collect())
}

/// Concordance between predicted and observed benefit over matched pairs.
///
/// Among all pairs-of-pairs whose observed benefits differ, the fraction where
/// the pair with the larger observed benefit also has the larger predicted
/// benefit; predicted ties count ½.
pub fn c_for_benefit(records: &[IteRecord], seed: u64) -> Result<f64> {
    let pairs = matched_pairs(records, seed)?;
    let (mut half_units, mut informative) = (0u64, 0u64);
    for (i, a) in pairs.iter().enumerate() {
        for b in &pairs[i + 1..] {
            if a.observed == b.observed {
                continue;
            }
            informative += 1;
            let (hi, lo) = if a.observed > b.observed { (a, b) } else { (b, a) };
            if hi.predicted > lo.predicted {
                half_units += 2;
            } else if hi.predicted == lo.predicted {
                half_units += 1;
            }
        }
    }
    if informative == 0 {
        return Err(MetricsError::Undefined(
            "no matched pairs with differing observed benefit".into(),
        ));
    }
    Ok(half_units as f64 / (2 * informative) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, ite: f64, arm: u8, favorable: u8) -> IteRecord {
        IteRecord {
            id: id.into(),
            p1: 0.0,
            p0: 0.0,
            ite,
            arm,
            favorable,
        }
    }

    #[test]
    fn perfectly_ordered_pairs() {
        // predicted benefit rises with observed benefit
        let records = vec![
            rec("t1", 0.1, 1, 0),
            rec("c1", 0.1, 0, 1), // pair 1: −1, predicted 0.1
            rec("t2", 0.2, 1, 1),
            rec("c2", 0.2, 0, 1), // pair 2: 0, predicted 0.2
            rec("t3", 0.3, 1, 1),
            rec("c3", 0.3, 0, 0), // pair 3: +1, predicted 0.3
        ];
        let pairs = matched_pairs(&records, 0).unwrap();
        assert_eq!(
            pairs.iter().map(|p| p.observed).collect::<Vec<_>>(),
            vec![-1, 0, 1]
        );
        assert_eq!(c_for_benefit(&records, 0).unwrap(), 1.0);
    }

    #[test]
    fn identical_predictions_give_half() {
        let records: Vec<IteRecord> = (0..8)
            .map(|i| {
                let favorable = if i % 2 == 1 { (i / 2) % 2 } else { (i / 4) % 2 };
                rec(&format!("p{i}"), 0.05, (i % 2) as u8, favorable as u8)
            })
            .collect();
        assert_eq!(c_for_benefit(&records, 3).unwrap(), 0.5);
    }

    #[test]
    fn truncation_is_seeded() {
        let mut records: Vec<IteRecord> = (0..9)
            .map(|i| rec(&format!("t{i}"), i as f64 / 10.0, 1, (i % 2) as u8))
            .collect();
        records.extend((0..3).map(|i| rec(&format!("c{i}"), 0.0, 0, (i % 2) as u8)));
        let a = matched_pairs(&records, 11).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, matched_pairs(&records, 11).unwrap());
        // kept treated rows stay in ascending ite order
        let ids: Vec<&str> = a.iter().map(|p| p.treated_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn undefined_cases() {
        let one_treated = vec![rec("a", 0.1, 1, 1), rec("b", 0.1, 0, 0), rec("c", 0.2, 0, 1)];
        assert!(matches!(c_for_benefit(&one_treated, 0), Err(MetricsError::Undefined(_))));
        let flat = vec![
            rec("a", 0.1, 1, 1),
            rec("b", 0.2, 1, 1),
            rec("c", 0.1, 0, 1),
            rec("d", 0.3, 0, 1),
        ];
        assert!(matches!(c_for_benefit(&flat, 0), Err(MetricsError::Undefined(_))));
    }
}
