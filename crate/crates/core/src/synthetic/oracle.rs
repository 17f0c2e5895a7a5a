use std::cmp::Ordering;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::effects::IteRecord;
use crate::metrics::MetricsError;
use crate::model::{
    CutpointVector, EmbeddingHead, LinearPredictor, ModelError, ModelParams, Observation,
    OutcomeScale,
};

/// AUC by literal enumeration of every (positive, negative) pair.
pub fn oracle_auc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricsError> {
    let mut wins = 0u64;
    let mut ties = 0u64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1;
            } else if scores[i] == scores[j] {
                ties += 1;
            }
        }
    }
    if pairs == 0 {
        return Err(MetricsError::SingleClass);
    }
    Ok((2 * wins + ties) as f64 / (2 * pairs) as f64)
}

/// Integer tallies behind a C-for-Benefit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenefitCounts {
    pub concordant: u64,
    pub tied: u64,
    pub informative: u64,
}

impl BenefitCounts {
    pub fn value(&self) -> f64 {
        (2 * self.concordant + self.tied) as f64 / (2 * self.informative) as f64
    }
}

/// Exhaustive pair-of-pairs count after the same rank matching and seeded
/// truncation as the production statistic.
pub fn oracle_c_for_benefit_counts(
    records: &[IteRecord],
    seed: u64,
) -> Result<BenefitCounts, MetricsError> {
    let arm = |a: u8| {
        let mut v: Vec<&IteRecord> = Vec::new();
        for r in records {
            if r.arm == a {
                v.push(r);
            }
        }
        v.sort_by(|x, y| match x.ite.partial_cmp(&y.ite) {
            Some(Ordering::Equal) | None => x.id.cmp(&y.id),
            Some(o) => o,
        });
        v
    };
    let mut treated = arm(1);
    let mut control = arm(0);
    if treated.len() < 2 || control.len() < 2 {
        return Err(MetricsError::Undefined("fewer than two patients in an arm".into()));
    }
    let m = treated.len().min(control.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for side in [&mut treated, &mut control] {
        if side.len() > m {
            let mut keep = index::sample(&mut rng, side.len(), m).into_vec();
            keep.sort_unstable();
            *side = keep.iter().map(|&k| side[k]).collect();
        }
    }
    let pairs: Vec<(f64, i32)> = (0..m)
        .map(|r| {
            (
                (treated[r].ite + control[r].ite) / 2.0,
                i32::from(treated[r].favorable) - i32::from(control[r].favorable),
            )
        })
        .collect();
    let mut counts = BenefitCounts {
        concordant: 0,
        tied: 0,
        informative: 0,
    };
    // every ordered (i, j) with a strictly larger observed benefit at i
    for (pi, oi) in &pairs {
        for (pj, oj) in &pairs {
            if oi <= oj {
                continue;
            }
            counts.informative += 1;
            if pi > pj {
                counts.concordant += 1;
            } else if pi == pj {
                counts.tied += 1;
            }
        }
    }
    if counts.informative == 0 {
        return Err(MetricsError::Undefined("no informative comparisons".into()));
    }
    Ok(counts)
}

pub fn oracle_c_for_benefit(records: &[IteRecord], seed: u64) -> Result<f64, MetricsError> {
    oracle_c_for_benefit_counts(records, seed).map(|c| c.value())
}

/// Central differences of the mean NLL (dropout off) in every coordinate of
/// the flattened `(γ, β, head)` vector.
pub fn finite_difference_gradient(
    params: &ModelParams,
    batch: &[Observation<'_>],
    step: f64,
) -> Result<Vec<f64>, ModelError> {
    let base = params.flatten();
    let mut grad = Vec::with_capacity(base.len());
    let mut probe = base.clone();
    for i in 0..base.len() {
        probe[i] = base[i] + step;
        let up = params.with_flat(&probe)?.negative_log_likelihood(batch)?;
        probe[i] = base[i] - step;
        let down = params.with_flat(&probe)?.negative_log_likelihood(batch)?;
        probe[i] = base[i];
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

/// Dimensions of a randomly drawn model.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomModelShape {
    pub classes: usize,
    pub features: usize,
    pub embedding_dim: Option<usize>,
    pub hidden: Vec<usize>,
}

impl RandomModelShape {
    /// `K ∈ 3..=7`, `P ∈ 1..=8`, and half the time an embedding of size
    /// `1..=8` with one or two hidden layers of width `2..=8`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let embedding_dim = rng.random_bool(0.5).then(|| rng.random_range(1..=8));
        let layers = rng.random_range(1..=2);
        RandomModelShape {
            classes: rng.random_range(3..=7),
            features: rng.random_range(1..=8),
            embedding_dim,
            hidden: (0..layers).map(|_| rng.random_range(2..=8)).collect(),
        }
    }
}

/// Random parameters: raw cut-points in `[−1, 1]`, coefficients in `[−1, 1]`,
/// Glorot head weights and biases in `[−0.5, 0.5]` (nonzero biases keep
/// hidden units away from the ReLU kink).
pub fn random_model<R: Rng + ?Sized>(rng: &mut R, shape: &RandomModelShape) -> ModelParams {
    let raw: Vec<f64> = (0..shape.classes - 1)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let names: Vec<String> = (0..shape.features).map(|j| format!("x{j}")).collect();
    let coefficients: Vec<f64> = (0..shape.features)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let treatment_index = rng.random_range(0..shape.features);
    let head = shape.embedding_dim.map(|d| {
        let mut head = EmbeddingHead::glorot(d, &shape.hidden, 0.3, rng);
        for layer in &mut head.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        head
    });
    ModelParams::new(
        OutcomeScale::new(shape.classes, rng.random_range(0..shape.classes - 1))
            .expect("valid scale"),
        CutpointVector::from_raw(raw).expect("finite raw cut-points"),
        LinearPredictor::new(names, coefficients, treatment_index).expect("valid predictor"),
        head,
    )
    .expect("consistent random model")
}

/// Owned inputs that can be viewed as a batch of [`Observation`]s.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedBatch {
    pub features: Vec<Vec<f64>>,
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub classes: Vec<usize>,
}

impl OwnedBatch {
    pub fn observations(&self) -> Vec<Observation<'_>> {
        (0..self.classes.len())
            .map(|i| Observation {
                features: &self.features[i],
                embedding: self.embeddings.as_ref().map(|e| e[i].as_slice()),
                class: self.classes[i],
            })
            .collect()
    }
}

/// `rows` random inputs for `params`: features in `[−2, 2]` with a 0/1
/// treatment entry, embeddings in `[−1, 1]`, uniformly random classes.
pub fn random_batch<R: Rng + ?Sized>(rng: &mut R, params: &ModelParams, rows: usize) -> OwnedBatch {
    let p = params.linear.len();
    let t = params.linear.treatment_index;
    let features = (0..rows)
        .map(|_| {
            (0..p)
                .map(|j| {
                    if j == t {
                        f64::from(u8::from(rng.random_bool(0.5)))
                    } else {
                        rng.random_range(-2.0..2.0)
                    }
                })
                .collect()
        })
        .collect();
    let embeddings = params.head.as_ref().map(|h| {
        (0..rows)
            .map(|_| (0..h.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    });
    let classes = (0..rows)
        .map(|_| rng.random_range(0..params.scale.classes))
        .collect();
    OwnedBatch {
        features,
        embeddings,
        classes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_auc_trivial_cases() {
        let labels = [true, false, true, false];
        assert_eq!(oracle_auc(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap(), 1.0);
        assert_eq!(oracle_auc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(oracle_auc(&[0.5; 2], &[true, true]).is_err());
    }

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
    fn oracle_benefit_trivial_cases() {
        let single = vec![
            rec("t1", 0.1, 1, 0),
            rec("t2", 0.3, 1, 1),
            rec("c1", 0.1, 0, 0),
            rec("c2", 0.3, 0, 0),
        ];
        let counts = oracle_c_for_benefit_counts(&single, 0).unwrap();
        assert_eq!((counts.concordant, counts.informative), (1, 1));
        assert_eq!(counts.value(), 1.0);
        let flat: Vec<IteRecord> = single.iter().map(|r| IteRecord { ite: 0.2, ..r.clone() }).collect();
        assert_eq!(oracle_c_for_benefit(&flat, 0).unwrap(), 0.5);
    }

    #[test]
    fn finite_differences_zero_without_influence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shape = RandomModelShape {
            classes: 3,
            features: 2,
            embedding_dim: Some(2),
            hidden: vec![3],
        };
        let mut params = random_model(&mut rng, &shape);
        let head = params.head.as_mut().unwrap();
        head.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        let mut batch = random_batch(&mut rng, &params, 5);
        batch.embeddings = Some(vec![vec![0.0; 2]; 5]);
        let g = finite_difference_gradient(&params, &batch.observations(), 1e-5).unwrap();
        let first_layer = params.layout().head.start..params.layout().head.start + 6;
        assert!(g[first_layer].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let shape = RandomModelShape::sample(&mut rng);
            let params = random_model(&mut rng, &shape);
            let batch = random_batch(&mut rng, &params, 4);
            assert!(params.negative_log_likelihood(&batch.observations()).unwrap().is_finite());
        }
    }
}
