use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Result, TrainError};
use crate::model::{CutpointVector, EmbeddingHead, LinearPredictor, ModelParams, OutcomeScale};
use crate::preprocess::Dataset;

/// Initial cut-points are clamped to this magnitude.
pub const CUTPOINT_CLAMP: f64 = 6.0;
/// Minimum spacing enforced between consecutive initial cut-points.
pub const CUTPOINT_MIN_GAP: f64 = 0.01;

/// Hidden-layer widths and dropout rate of the embedding head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadArchitecture {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for HeadArchitecture {
    fn default() -> Self {
        HeadArchitecture {
            hidden: EmbeddingHead::PAPER_HIDDEN.to_vec(),
            dropout: EmbeddingHead::PAPER_DROPOUT,
        }
    }
}

/// `θ_k = logit(P̂(Y ≤ k − 1))`, clamped to ±6 and forced strictly increasing.
pub fn cutpoint_init(outcomes: &[usize], scale: OutcomeScale) -> Result<CutpointVector> {
    scale.validate()?;
    let mut counts = vec![0usize; scale.classes];
    for &y in outcomes {
        if y >= scale.classes {
            return Err(TrainError::Init(format!(
                "outcome {y} outside 0..{}",
                scale.classes
            )));
        }
        counts[y] += 1;
    }
    if counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Err(TrainError::Init(
            "outcome distribution has fewer than two observed classes".into(),
        ));
    }
    let n = outcomes.len() as f64;
    let mut cumulative = 0usize;
    let mut theta = Vec::with_capacity(scale.cut_count());
    for &c in &counts[..scale.cut_count()] {
        cumulative += c;
        let p = cumulative as f64 / n;
        let logit = (p / (1.0 - p)).ln();
        let mut t = logit.clamp(-CUTPOINT_CLAMP, CUTPOINT_CLAMP);
        if let Some(&prev) = theta.last() {
            t = t.max(prev + CUTPOINT_MIN_GAP);
        }
        theta.push(t);
    }
    Ok(CutpointVector::from_thresholds(&theta)?)
}

/// Starting parameters for `data`: quantile-matched cut-points, `β = 0`, and
/// a Glorot-initialized head when `head` is given.
pub fn parameter_init(
    data: &Dataset,
    head: Option<&HeadArchitecture>,
    seed: u64,
) -> Result<ModelParams> {
    let cutpoints = cutpoint_init(&data.outcomes, data.scale)?;
    let linear = LinearPredictor::zeros(data.feature_names.clone(), data.treatment_index)?;
    let head = match head {
        None => None,
        Some(arch) => {
            let dim = data.embedding_dim().ok_or_else(|| {
                TrainError::Init("head requested but the data carry no embeddings".into())
            })?;
            Some(init_head(dim, arch, seed))
        }
    };
    Ok(ModelParams::new(data.scale, cutpoints, linear, head)?)
}

pub fn init_head(input_dim: usize, arch: &HeadArchitecture, seed: u64) -> EmbeddingHead {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    EmbeddingHead::glorot(input_dim, &arch.hidden, arch.dropout, &mut rng)
}
