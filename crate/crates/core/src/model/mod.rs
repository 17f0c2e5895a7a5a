//! Ordinal transformation model.
//!
//! The outcome distribution is obtained by pushing a standard logistic latent
//! variable through the transformation `h_k = θ_k − x·β − η(e)`:
//!
//! ```text
//! P(Y ≤ k | x, e) = F_Z(θ_{k+1} − x·β − η(e)),   k = 0 … K−2
//! ```
//!
//! Classes are 0-based at every public interface (class index = mRS value).
//! Cut-points are 1-based: cut `k` separates class `k − 1` from class `k`, so
//! there are `K − 1` finite cut-points with the conventions `F_Z(h_0) = 0` and
//! `F_Z(h_K) = 1`.

mod gradient;
mod head;

pub use gradient::{ParamGradient, ParamGroup, ParamLayout};
pub use head::{DenseLayer, DropoutMasks, EmbeddingHead};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower bound applied to a class probability before taking its logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("latent distribution evaluated at non-finite value {0}")]
    NonFinite(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("negative log-likelihood of an empty batch is undefined")]
    EmptyBatch,
    #[error("observed class {class} outside the valid range 0..={max}")]
    ClassOutOfRange { class: usize, max: usize },
    #[error("cut-point index {index} outside 1..={max}")]
    CutIndex { index: usize, max: usize },
    #[error("invalid outcome scale: {0}")]
    Scale(String),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Standard logistic CDF, checked.
pub fn latent_cdf(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(ModelError::NonFinite(z));
    }
    Ok(sigmoid(z))
}

/// Standard logistic CDF without the finiteness check. Saturates cleanly at ±∞.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic density `F_Z(z)(1 − F_Z(z))`.
#[inline]
pub(crate) fn logistic_density(z: f64) -> f64 {
    sigmoid(z) * sigmoid(-z)
}

/// Number of outcome classes and the favorable/unfavorable dichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeScale {
    pub classes: usize,
    /// Largest class index still counted as favorable.
    pub favorable_cut: usize,
}

impl OutcomeScale {
    /// mRS 0–6, favorable = 0–2.
    pub const MODIFIED_RANKIN: OutcomeScale = OutcomeScale {
        classes: 7,
        favorable_cut: 2,
    };

    pub fn new(classes: usize, favorable_cut: usize) -> Result<Self> {
        let scale = OutcomeScale {
            classes,
            favorable_cut,
        };
        scale.validate()?;
        Ok(scale)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(ModelError::Scale(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.favorable_cut + 1 >= self.classes {
            return Err(ModelError::Scale(format!(
                "favorable cut {} must be below {}",
                self.favorable_cut,
                self.classes - 1
            )));
        }
        Ok(())
    }

    pub fn cut_count(&self) -> usize {
        self.classes - 1
    }

    pub fn is_favorable(&self, class: usize) -> bool {
        class <= self.favorable_cut
    }
}

/// Monotone cut-points parameterised by unconstrained reals.
///
/// `θ_1 = γ_1` and `θ_k = θ_{k−1} + exp(γ_k)`. Only `γ` is serialized; `θ` is
/// recomputed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutpointVector {
    raw: Vec<f64>,
    thresholds: Vec<f64>,
}

impl CutpointVector {
    pub fn from_raw(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(ModelError::Invalid("no cut-points".into()));
        }
        if let Some(v) = raw.iter().find(|v| !v.is_finite()) {
            return Err(ModelError::Invalid(format!("non-finite raw cut-point {v}")));
        }
        let thresholds = thresholds_from_raw(&raw);
        if thresholds.windows(2).any(|w| w[1] <= w[0]) || thresholds.iter().any(|t| !t.is_finite())
        {
            return Err(ModelError::Invalid(
                "cut-points are not strictly increasing and finite".into(),
            ));
        }
        Ok(CutpointVector { raw, thresholds })
    }

    /// Inverse of the reparameterisation; `thresholds` must be strictly increasing.
    pub fn from_thresholds(thresholds: &[f64]) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(ModelError::Invalid("no cut-points".into()));
        }
        if thresholds.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ModelError::Invalid(
                "cut-points must be strictly increasing".into(),
            ));
        }
        let mut raw = Vec::with_capacity(thresholds.len());
        raw.push(thresholds[0]);
        raw.extend(thresholds.windows(2).map(|w| (w[1] - w[0]).ln()));
        Self::from_raw(raw)
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub(crate) fn assign_raw(&mut self, raw: &[f64]) {
        self.raw.copy_from_slice(raw);
        self.thresholds = thresholds_from_raw(&self.raw);
    }
}

fn thresholds_from_raw(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut acc = raw[0];
    out.push(acc);
    for g in &raw[1..] {
        acc += g.exp();
        out.push(acc);
    }
    out
}

impl TryFrom<Vec<f64>> for CutpointVector {
    type Error = ModelError;
    fn try_from(raw: Vec<f64>) -> Result<Self> {
        Self::from_raw(raw)
    }
}

impl From<CutpointVector> for Vec<f64> {
    fn from(c: CutpointVector) -> Self {
        c.raw
    }
}

/// Linear part `x·β` with named, ordered features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPredictor {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    /// Position of the treatment indicator within `names`.
    pub treatment_index: usize,
}

impl LinearPredictor {
    pub fn new(names: Vec<String>, coefficients: Vec<f64>, treatment_index: usize) -> Result<Self> {
        let lp = LinearPredictor {
            names,
            coefficients,
            treatment_index,
        };
        lp.validate()?;
        Ok(lp)
    }

    pub fn zeros(names: Vec<String>, treatment_index: usize) -> Result<Self> {
        let n = names.len();
        Self::new(names, vec![0.0; n], treatment_index)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.coefficients.len() {
            return Err(ModelError::Shape(format!(
                "{} feature names but {} coefficients",
                self.names.len(),
                self.coefficients.len()
            )));
        }
        if self.treatment_index >= self.names.len() {
            return Err(ModelError::Invalid(format!(
                "treatment index {} out of range for {} features",
                self.treatment_index,
                self.names.len()
            )));
        }
        let mut sorted: Vec<&String> = self.names.iter().collect();
        sorted.sort();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::Invalid(format!("duplicate feature name {}", w[0])));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn treatment_coefficient(&self) -> f64 {
        self.coefficients[self.treatment_index]
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coefficients.iter().zip(x).map(|(b, v)| b * v).sum()
    }
}

/// One patient as seen by the model.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub features: &'a [f64],
    pub embedding: Option<&'a [f64]>,
    /// Observed 0-based class.
    pub class: usize,
}

/// Length-K probability vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbabilities(pub Vec<f64>);

impl ClassProbabilities {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Sum of the probabilities of classes `0..=cut`.
    pub fn partial_sum(&self, cut: usize) -> f64 {
        self.0[..=cut].iter().sum()
    }
}

/// All trainable state of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub scale: OutcomeScale,
    pub cutpoints: CutpointVector,
    pub linear: LinearPredictor,
    pub head: Option<EmbeddingHead>,
}

impl ModelParams {
    pub fn new(
        scale: OutcomeScale,
        cutpoints: CutpointVector,
        linear: LinearPredictor,
        head: Option<EmbeddingHead>,
    ) -> Result<Self> {
        let params = ModelParams {
            scale,
            cutpoints,
            linear,
            head,
        };
        params.validate()?;
        Ok(params)
    }

    /// Re-checks dimensional consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if self.cutpoints.len() != self.scale.cut_count() {
            return Err(ModelError::Shape(format!(
                "{} classes need {} cut-points, got {}",
                self.scale.classes,
                self.scale.cut_count(),
                self.cutpoints.len()
            )));
        }
        self.linear.validate()?;
        if let Some(head) = &self.head {
            head.validate()?;
        }
        Ok(())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.linear.names
    }

    fn check_inputs(&self, x: &[f64], e: Option<&[f64]>) -> Result<()> {
        if x.len() != self.linear.len() {
            return Err(ModelError::Shape(format!(
                "expected {} features, got {}",
                self.linear.len(),
                x.len()
            )));
        }
        match (&self.head, e) {
            (None, None) => Ok(()),
            (Some(head), Some(e)) if e.len() == head.input_dim() => Ok(()),
            (Some(head), Some(e)) => Err(ModelError::Shape(format!(
                "expected embedding of length {}, got {}",
                head.input_dim(),
                e.len()
            ))),
            (Some(_), None) => Err(ModelError::Shape(
                "model has an embedding head but no embedding was supplied".into(),
            )),
            (None, Some(_)) => Err(ModelError::Shape(
                "embedding supplied to a model without an embedding head".into(),
            )),
        }
    }

    /// Additive shift `x·β + η(e)`; dropout off.
    pub fn shift(&self, x: &[f64], e: Option<&[f64]>) -> Result<f64> {
        self.check_inputs(x, e)?;
        Ok(self.shift_unchecked(x, e, None))
    }

    pub(crate) fn shift_unchecked(
        &self,
        x: &[f64],
        e: Option<&[f64]>,
        mask: Option<&[f64]>,
    ) -> f64 {
        let eta = match (&self.head, e) {
            (Some(head), Some(e)) => head.forward(e, mask),
            _ => 0.0,
        };
        self.linear.dot(x) + eta
    }

    /// `h_k = θ_k − x·β − η(e)` for a 1-based cut index `k`.
    pub fn transformation(&self, k: usize, x: &[f64], e: Option<&[f64]>) -> Result<f64> {
        let max = self.scale.cut_count();
        if k == 0 || k > max {
            return Err(ModelError::CutIndex { index: k, max });
        }
        Ok(self.cutpoints.thresholds()[k - 1] - self.shift(x, e)?)
    }

    /// `F_Z(h_k)` for k = 1 … K−1.
    pub fn cumulative_probabilities(&self, x: &[f64], e: Option<&[f64]>) -> Result<Vec<f64>> {
        let s = self.shift(x, e)?;
        Ok(self
            .cutpoints
            .thresholds()
            .iter()
            .map(|t| sigmoid(t - s))
            .collect())
    }

    pub fn class_probabilities(&self, x: &[f64], e: Option<&[f64]>) -> Result<ClassProbabilities> {
        let s = self.shift(x, e)?;
        Ok(ClassProbabilities(probabilities_at_shift(
            self.cutpoints.thresholds(),
            s,
        )))
    }

    /// Probability of a favorable outcome, `F_Z(h_{c+1})`.
    pub fn favorable_probability(&self, x: &[f64], e: Option<&[f64]>) -> Result<f64> {
        let s = self.shift(x, e)?;
        Ok(sigmoid(
            self.cutpoints.thresholds()[self.scale.favorable_cut] - s,
        ))
    }

    fn check_batch(&self, batch: &[Observation<'_>]) -> Result<()> {
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let max = self.scale.classes - 1;
        for obs in batch {
            if obs.class > max {
                return Err(ModelError::ClassOutOfRange {
                    class: obs.class,
                    max,
                });
            }
            self.check_inputs(obs.features, obs.embedding)?;
        }
        Ok(())
    }

    /// Mean negative log-likelihood of the observed classes, dropout off.
    pub fn negative_log_likelihood(&self, batch: &[Observation<'_>]) -> Result<f64> {
        self.check_batch(batch)?;
        let theta = self.cutpoints.thresholds();
        let total: f64 = batch
            .iter()
            .map(|obs| {
                let s = self.shift_unchecked(obs.features, obs.embedding, None);
                -class_probability(theta, s, obs.class)
                    .max(PROBABILITY_FLOOR)
                    .ln()
            })
            .sum();
        Ok(total / batch.len() as f64)
    }
}

/// Probability of one class given the shift; the difference of two logistic
/// CDFs is evaluated as `F(u)·F(−l)·(1 − e^{l−u})` to avoid cancellation.
pub(crate) fn class_probability(theta: &[f64], shift: f64, class: usize) -> f64 {
    let cuts = theta.len();
    if class == 0 {
        sigmoid(theta[0] - shift)
    } else if class == cuts {
        sigmoid(shift - theta[cuts - 1])
    } else {
        let u = theta[class] - shift;
        let l = theta[class - 1] - shift;
        sigmoid(u) * sigmoid(-l) * -(l - u).exp_m1()
    }
}

pub(crate) fn probabilities_at_shift(theta: &[f64], shift: f64) -> Vec<f64> {
    (0..=theta.len())
        .map(|k| class_probability(theta, shift, k))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_class(shift_coef: f64) -> ModelParams {
        ModelParams::new(
            OutcomeScale::new(3, 0).unwrap(),
            CutpointVector::from_thresholds(&[-1.0, 1.0]).unwrap(),
            LinearPredictor::new(vec!["t".into()], vec![shift_coef], 0).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn latent_cdf_values() {
        assert_eq!(latent_cdf(0.0).unwrap(), 0.5);
        assert!((latent_cdf(3f64.ln()).unwrap() - 0.75).abs() < 1e-15);
        for z in [-30.0, -2.5, 0.1, 7.0] {
            let s = latent_cdf(z).unwrap() + latent_cdf(-z).unwrap();
            assert!((s - 1.0).abs() < 1e-15);
        }
        assert!(matches!(latent_cdf(f64::NAN), Err(ModelError::NonFinite(_))));
        assert!(latent_cdf(f64::INFINITY).is_err());
    }

    #[test]
    fn cutpoint_round_trip() {
        let theta = [-2.0, -1.0, 0.0, 1.5, 2.0, 3.0];
        let c = CutpointVector::from_thresholds(&theta).unwrap();
        for (a, b) in c.thresholds().iter().zip(theta) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(CutpointVector::from_thresholds(&[0.0, 0.0]).is_err());
        assert!(CutpointVector::from_raw(vec![0.0, f64::NAN]).is_err());
        let json = serde_json_like(&c);
        assert_eq!(json.len(), 6);
    }

    fn serde_json_like(c: &CutpointVector) -> Vec<f64> {
        c.clone().into()
    }

    #[test]
    fn transformation_examples() {
        let m = ModelParams::new(
            OutcomeScale::new(2, 0).unwrap(),
            CutpointVector::from_raw(vec![-1.0]).unwrap(),
            LinearPredictor::zeros(vec!["a".into()], 0).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(m.transformation(1, &[3.0], None).unwrap(), -1.0);
        let m = ModelParams::new(
            OutcomeScale::new(2, 0).unwrap(),
            CutpointVector::from_raw(vec![0.0]).unwrap(),
            LinearPredictor::new(vec!["a".into(), "b".into()], vec![0.5, 0.25], 1).unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(m.transformation(1, &[1.0, 2.0], None).unwrap(), -1.0);
        assert!(matches!(
            m.transformation(2, &[1.0, 2.0], None),
            Err(ModelError::CutIndex { .. })
        ));
        assert!(matches!(
            m.transformation(1, &[1.0], None),
            Err(ModelError::Shape(_))
        ));
        assert!(m.transformation(1, &[1.0, 2.0], Some(&[0.0])).is_err());
    }

    #[test]
    fn class_probability_examples() {
        let p = three_class(1.0).class_probabilities(&[0.0], None).unwrap();
        let want = [0.26894142136999512, 0.46211715726000976, 0.26894142136999512];
        for (a, b) in p.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        let p = three_class(1.0).class_probabilities(&[1.0], None).unwrap();
        let want = [0.11920292202211756, 0.38079707797788244, 0.5];
        for (a, b) in p.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn favorable_probability_examples() {
        let m = ModelParams::new(
            OutcomeScale::MODIFIED_RANKIN,
            CutpointVector::from_thresholds(&[-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]).unwrap(),
            LinearPredictor::zeros(vec!["t".into()], 0).unwrap(),
            None,
        )
        .unwrap();
        let fav = m.favorable_probability(&[1.0], None).unwrap();
        assert!((fav - 0.5).abs() < 1e-15);
        let p = m.class_probabilities(&[1.0], None).unwrap();
        assert!((p.partial_sum(2) - fav).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        let m = three_class(1.0);
        let x = [0.0];
        let nll = m
            .negative_log_likelihood(&[Observation {
                features: &x,
                embedding: None,
                class: 1,
            }])
            .unwrap();
        assert!((nll - 0.7719368329053047).abs() < 1e-12, "{nll}");
        assert_eq!(m.negative_log_likelihood(&[]), Err(ModelError::EmptyBatch));
        assert!(matches!(
            m.negative_log_likelihood(&[Observation {
                features: &x,
                embedding: None,
                class: 3
            }]),
            Err(ModelError::ClassOutOfRange { class: 3, max: 2 })
        ));
    }

    #[test]
    fn two_class_nll_is_binary_cross_entropy() {
        let m = ModelParams::new(
            OutcomeScale::new(2, 0).unwrap(),
            CutpointVector::from_raw(vec![0.3]).unwrap(),
            LinearPredictor::new(vec!["a".into()], vec![-0.8], 0).unwrap(),
            None,
        )
        .unwrap();
        let xs = [[0.5], [-1.2], [2.0]];
        let ys = [0usize, 1, 1];
        let batch: Vec<Observation> = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| Observation {
                features: x,
                embedding: None,
                class: y,
            })
            .collect();
        let bce: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                // P(Y = 1) = 1 − F(θ − xβ)
                let p1 = 1.0 - 1.0 / (1.0 + (-(0.3 + 0.8 * x[0])).exp());
                if y == 1 {
                    -p1.ln()
                } else {
                    -(1.0 - p1).ln()
                }
            })
            .sum::<f64>()
            / 3.0;
        let nll = m.negative_log_likelihood(&batch).unwrap();
        assert!((nll - bce).abs() < 1e-12);
    }

    #[test]
    fn scale_validation() {
        assert!(OutcomeScale::new(1, 0).is_err());
        assert!(OutcomeScale::new(3, 2).is_err());
        assert!(OutcomeScale::new(7, 2).is_ok());
        assert!(OutcomeScale::MODIFIED_RANKIN.is_favorable(2));
        assert!(!OutcomeScale::MODIFIED_RANKIN.is_favorable(3));
    }

    #[test]
    fn duplicate_feature_names_rejected() {
        assert!(LinearPredictor::zeros(vec!["a".into(), "a".into()], 0).is_err());
        assert!(LinearPredictor::zeros(vec!["a".into()], 1).is_err());
    }
}
