use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{
    class_probability, logistic_density, sigmoid, DropoutMasks, ModelError, ModelParams,
    Observation, Result, PROBABILITY_FLOOR,
};

/// Trainable parameter groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Raw cut-point parameters `γ`.
    Cutpoints,
    /// Linear coefficients `β`.
    Linear,
    /// Embedding-head weights and biases.
    Head,
}

/// Where each group lives in the flattened parameter vector `(γ, β, head)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub cutpoints: Range<usize>,
    pub linear: Range<usize>,
    pub head: Range<usize>,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        self.head.end
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self, group: ParamGroup) -> Range<usize> {
        match group {
            ParamGroup::Cutpoints => self.cutpoints.clone(),
            ParamGroup::Linear => self.linear.clone(),
            ParamGroup::Head => self.head.clone(),
        }
    }

    /// `true` for every coordinate belonging to one of `groups`.
    pub fn mask(&self, groups: &[ParamGroup]) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        for g in groups {
            for m in &mut mask[self.range(*g)] {
                *m = true;
            }
        }
        mask
    }
}

/// Gradient with the same structure as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub cutpoints: Vec<f64>,
    pub linear: Vec<f64>,
    pub head: Vec<f64>,
}

impl ParamGradient {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cutpoints.len() + self.linear.len() + self.head.len());
        out.extend_from_slice(&self.cutpoints);
        out.extend_from_slice(&self.linear);
        out.extend_from_slice(&self.head);
        out
    }
}

impl ModelParams {
    pub fn layout(&self) -> ParamLayout {
        let c = self.cutpoints.len();
        let l = c + self.linear.len();
        let h = l + self.head.as_ref().map_or(0, |h| h.param_count());
        ParamLayout {
            cutpoints: 0..c,
            linear: c..l,
            head: l..h,
        }
    }

    /// Flattened `(γ, β, head)` vector.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.layout().len());
        out.extend_from_slice(self.cutpoints.raw());
        out.extend_from_slice(&self.linear.coefficients);
        if let Some(head) = &self.head {
            head.flatten_into(&mut out);
        }
        out
    }

    /// Copy of `self` with parameters taken from a flattened vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub(crate) fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let layout = self.layout();
        if flat.len() != layout.len() {
            return Err(ModelError::Shape(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                layout.len()
            )));
        }
        self.cutpoints.assign_raw(&flat[layout.cutpoints.clone()]);
        self.linear
            .coefficients
            .copy_from_slice(&flat[layout.linear.clone()]);
        if let Some(head) = &mut self.head {
            head.assign_flat(&flat[layout.head.clone()]);
        }
        Ok(())
    }

    /// Mean NLL with optional per-row dropout masks (training mode).
    pub fn nll_with_masks(
        &self,
        batch: &[Observation<'_>],
        masks: Option<&DropoutMasks>,
    ) -> Result<f64> {
        self.check_batch(batch)?;
        self.check_masks(batch.len(), masks)?;
        let theta = self.cutpoints.thresholds();
        let total: f64 = batch
            .iter()
            .enumerate()
            .map(|(i, obs)| {
                let mask = masks.map(|m| m.row(i));
                let s = self.shift_unchecked(obs.features, obs.embedding, mask);
                -class_probability(theta, s, obs.class)
                    .max(PROBABILITY_FLOOR)
                    .ln()
            })
            .sum();
        Ok(total / batch.len() as f64)
    }

    fn check_masks(&self, rows: usize, masks: Option<&DropoutMasks>) -> Result<()> {
        match (masks, &self.head) {
            (Some(m), Some(_)) if m.rows() != rows => Err(ModelError::Shape(format!(
                "{} dropout masks for {} rows",
                m.rows(),
                rows
            ))),
            (Some(m), Some(head)) if m.row(0).len() != head.hidden_unit_count() => {
                Err(ModelError::Shape("dropout mask width mismatch".into()))
            }
            _ => Ok(()),
        }
    }

    /// Exact gradient of the mean NLL.
    pub fn nll_gradient(
        &self,
        batch: &[Observation<'_>],
        masks: Option<&DropoutMasks>,
    ) -> Result<ParamGradient> {
        self.nll_and_gradient(batch, masks).map(|(_, g)| g)
    }

    /// Mean NLL together with its gradient, sharing one forward pass.
    pub fn nll_and_gradient(
        &self,
        batch: &[Observation<'_>],
        masks: Option<&DropoutMasks>,
    ) -> Result<(f64, ParamGradient)> {
        self.check_batch(batch)?;
        self.check_masks(batch.len(), masks)?;
        let theta = self.cutpoints.thresholds();
        let cuts = theta.len();
        let mut d_theta = vec![0.0; cuts];
        let mut d_beta = vec![0.0; self.linear.len()];
        let mut d_head = vec![0.0; self.head.as_ref().map_or(0, |h| h.param_count())];
        let mut total = 0.0;

        for (i, obs) in batch.iter().enumerate() {
            let mask = masks.map(|m| m.row(i));
            let (eta, trace) = match (&self.head, obs.embedding) {
                (Some(head), Some(e)) => {
                    let (eta, trace) = head.forward_trace(e, mask);
                    (eta, Some(trace))
                }
                _ => (0.0, None),
            };
            let s = self.linear.dot(obs.features) + eta;
            let k = obs.class;
            let p = class_probability(theta, s, k);
            if p < PROBABILITY_FLOOR {
                // Clamped region: the loss is locally constant.
                total -= PROBABILITY_FLOOR.ln();
                continue;
            }
            total -= p.ln();

            // ∂(−log p)/∂u for the upper cut, ∂(−log p)/∂l for the lower cut.
            let (d_upper, d_lower) = if cuts == 0 {
                (0.0, 0.0)
            } else if k == 0 {
                (-sigmoid(s - theta[0]), 0.0)
            } else if k == cuts {
                (0.0, sigmoid(theta[cuts - 1] - s))
            } else {
                let u = theta[k] - s;
                let l = theta[k - 1] - s;
                (-logistic_density(u) / p, logistic_density(l) / p)
            };
            if k < cuts {
                d_theta[k] += d_upper;
            }
            if k > 0 {
                d_theta[k - 1] += d_lower;
            }
            let d_shift = -(d_upper + d_lower);
            for (g, x) in d_beta.iter_mut().zip(obs.features) {
                *g += d_shift * x;
            }
            if let (Some(head), Some(trace)) = (&self.head, trace) {
                head.backward(&trace, d_shift, &mut d_head);
            }
        }

        let n = batch.len() as f64;
        // θ_i depends on γ_m for every m ≤ i: ∂θ_i/∂γ_1 = 1, ∂θ_i/∂γ_m = exp(γ_m).
        let raw = self.cutpoints.raw();
        let mut d_gamma = vec![0.0; cuts];
        let mut tail = 0.0;
        for m in (0..cuts).rev() {
            tail += d_theta[m];
            let jac = if m == 0 { 1.0 } else { raw[m].exp() };
            d_gamma[m] = tail * jac / n;
        }
        for g in d_beta.iter_mut().chain(d_head.iter_mut()) {
            *g /= n;
        }
        Ok((
            total / n,
            ParamGradient {
                cutpoints: d_gamma,
                linear: d_beta,
                head: d_head,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::super::{CutpointVector, EmbeddingHead, LinearPredictor, OutcomeScale};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn central_difference(params: &ModelParams, batch: &[Observation<'_>], masks: Option<&DropoutMasks>) -> Vec<f64> {
        let flat = params.flatten();
        let h = 1e-5;
        (0..flat.len())
            .map(|i| {
                let mut plus = flat.clone();
                plus[i] += h;
                let mut minus = flat.clone();
                minus[i] -= h;
                let fp = params.with_flat(&plus).unwrap().nll_with_masks(batch, masks).unwrap();
                let fm = params.with_flat(&minus).unwrap().nll_with_masks(batch, masks).unwrap();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_differences_with_dropout_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut head = EmbeddingHead::glorot(5, &[6, 4], 0.3, &mut rng);
        // Zero biases put fully dropped rows exactly on a ReLU kink.
        for layer in &mut head.layers {
            for b in &mut layer.bias {
                *b = rng.random_range(-0.5..0.5);
            }
        }
        let params = ModelParams::new(
            OutcomeScale::new(4, 1).unwrap(),
            CutpointVector::from_thresholds(&[-1.0, 0.2, 1.4]).unwrap(),
            LinearPredictor::new(
                vec!["a".into(), "b".into(), "t".into()],
                vec![0.4, -0.3, 0.8],
                2,
            )
            .unwrap(),
            Some(head),
        )
        .unwrap();
        let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
        let es: Vec<Vec<f64>> = (0..12).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch: Vec<Observation> = (0..12)
            .map(|i| Observation {
                features: &xs[i],
                embedding: Some(&es[i]),
                class: i % 4,
            })
            .collect();
        let masks = DropoutMasks::sample(params.head.as_ref().unwrap(), 12, &mut rng);
        let analytic = params.nll_gradient(&batch, Some(&masks)).unwrap().flatten();
        let numeric = central_difference(&params, &batch, Some(&masks));
        for (a, n) in analytic.iter().zip(&numeric) {
            let denom = a.abs().max(n.abs()).max(1e-3);
            assert!((a - n).abs() / denom < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn treatment_gradient_vanishes_on_balanced_symmetric_data() {
        let params = ModelParams::new(
            OutcomeScale::new(3, 0).unwrap(),
            CutpointVector::from_thresholds(&[-1.0, 1.0]).unwrap(),
            LinearPredictor::zeros(vec!["t".into()], 0).unwrap(),
            None,
        )
        .unwrap();
        let ones = [1.0];
        let zeros = [0.0];
        let mut batch = Vec::new();
        for x in [&ones, &zeros] {
            for class in 0..3 {
                batch.push(Observation {
                    features: x.as_slice(),
                    embedding: None,
                    class,
                });
            }
        }
        let g = params.nll_gradient(&batch, None).unwrap();
        assert!(g.linear[0].abs() < 1e-15);
    }

    #[test]
    fn two_class_gradient_matches_logistic_regression() {
        // P(Y = 1) = σ(xβ − θ): ∂BCE/∂θ = mean(y − p), ∂BCE/∂β = −mean((y − p)·x)
        let params = ModelParams::new(
            OutcomeScale::new(2, 0).unwrap(),
            CutpointVector::from_raw(vec![0.2]).unwrap(),
            LinearPredictor::new(vec!["a".into()], vec![0.7], 0).unwrap(),
            None,
        )
        .unwrap();
        let xs = [[1.0], [-0.5], [0.3], [2.0]];
        let ys = [1usize, 0, 0, 1];
        let batch: Vec<Observation> = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| Observation {
                features: x,
                embedding: None,
                class: y,
            })
            .collect();
        let mut d_theta = 0.0;
        let mut d_beta = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let p1 = 1.0 / (1.0 + (-(0.7 * x[0] - 0.2f64)).exp());
            let resid = y as f64 - p1;
            d_theta += resid / 4.0;
            d_beta -= resid * x[0] / 4.0;
        }
        let g = params.nll_gradient(&batch, None).unwrap();
        assert!((g.cutpoints[0] - d_theta).abs() < 1e-14);
        assert!((g.linear[0] - d_beta).abs() < 1e-14);
    }

    #[test]
    fn layout_masks_cover_groups() {
        let params = ModelParams::new(
            OutcomeScale::new(3, 0).unwrap(),
            CutpointVector::from_thresholds(&[-1.0, 1.0]).unwrap(),
            LinearPredictor::zeros(vec!["t".into(), "a".into()], 0).unwrap(),
            Some(EmbeddingHead::zeros(2, &[3], 0.3)),
        )
        .unwrap();
        let layout = params.layout();
        assert_eq!(layout.cutpoints, 0..2);
        assert_eq!(layout.linear, 2..4);
        assert_eq!(layout.head, 4..4 + 2 * 3 + 3 + 3 + 1);
        let mask = layout.mask(&[ParamGroup::Head]);
        assert_eq!(mask.iter().filter(|m| **m).count(), 13);
        assert_eq!(params.flatten().len(), layout.len());
        assert!(params.with_flat(&[0.0]).is_err());
    }
}
