//! Counterfactual predictions, individualized and average treatment effects,
//! and odds-ratio tables.
//!
//! ITE sign convention: `ite > 0` means the favorable-outcome probability is
//! higher under treatment. With the shift entering as `θ − x·β`, a negative
//! treatment coefficient is protective.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClassProbabilities, ModelError, ModelParams};
use crate::preprocess::Dataset;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EffectsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the {0} arm is empty")]
    EmptyArm(&'static str),
    #[error("2×2 table has an empty cell ({0}); continuity corrections are not applied")]
    ZeroCell(&'static str),
}

pub type Result<T> = std::result::Result<T, EffectsError>;

/// Predictions for one patient with the treatment entry forced to 1 and to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterfactualPair {
    pub treated: ClassProbabilities,
    pub control: ClassProbabilities,
    pub favorable_treated: f64,
    pub favorable_control: f64,
}

impl CounterfactualPair {
    pub fn ite(&self) -> f64 {
        self.favorable_treated - self.favorable_control
    }
}

fn with_treatment(params: &ModelParams, x: &[f64], value: f64) -> Result<Vec<f64>> {
    let index = params.linear.treatment_index;
    if x.len() != params.linear.len() {
        return Err(ModelError::Shape(format!(
            "expected {} features, got {}",
            params.linear.len(),
            x.len()
        ))
        .into());
    }
    let mut row = x.to_vec();
    row[index] = value;
    Ok(row)
}

pub fn counterfactual_predict(
    params: &ModelParams,
    x: &[f64],
    e: Option<&[f64]>,
) -> Result<CounterfactualPair> {
    let x1 = with_treatment(params, x, 1.0)?;
    let x0 = with_treatment(params, x, 0.0)?;
    Ok(CounterfactualPair {
        treated: params.class_probabilities(&x1, e)?,
        control: params.class_probabilities(&x0, e)?,
        favorable_treated: params.favorable_probability(&x1, e)?,
        favorable_control: params.favorable_probability(&x0, e)?,
    })
}

/// Cumulative odds `P(Y ≤ k−1) / P(Y ≥ k)` at every cut, for treatment 1 and 0.
///
/// Computed as `exp(θ_k − shift)` so the between-arm ratio is exact up to
/// floating-point rounding of the exponent.
pub fn counterfactual_cumulative_odds(
    params: &ModelParams,
    x: &[f64],
    e: Option<&[f64]>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let odds = |x: &[f64]| -> Result<Vec<f64>> {
        let s = params.shift(x, e)?;
        Ok(params
            .cutpoints
            .thresholds()
            .iter()
            .map(|t| (t - s).exp())
            .collect())
    };
    Ok((
        odds(&with_treatment(params, x, 1.0)?)?,
        odds(&with_treatment(params, x, 0.0)?)?,
    ))
}

/// Per-patient ITE row; serializes as `id,p1,p0,ite,arm,favorable`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteRecord {
    pub id: String,
    pub p1: f64,
    pub p0: f64,
    pub ite: f64,
    /// Observed arm (1 = treated).
    pub arm: u8,
    /// Observed favorable outcome (1 = yes).
    pub favorable: u8,
}

pub fn ite_table(params: &ModelParams, data: &Dataset) -> Result<Vec<IteRecord>> {
    (0..data.len())
        .map(|i| {
            let pair = counterfactual_predict(params, data.row(i), data.embedding(i))?;
            Ok(IteRecord {
                id: data.ids[i].clone(),
                p1: pair.favorable_treated,
                p0: pair.favorable_control,
                ite: pair.ite(),
                arm: u8::from(data.treated[i]),
                favorable: u8::from(data.favorable(i)),
            })
        })
        .collect()
}

/// Favorable/unfavorable counts by arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub treated_favorable: usize,
    pub treated_unfavorable: usize,
    pub control_favorable: usize,
    pub control_unfavorable: usize,
}

impl ArmCounts {
    pub fn from_flags(treated: &[bool], favorable: &[bool]) -> Self {
        let mut c = ArmCounts {
            treated_favorable: 0,
            treated_unfavorable: 0,
            control_favorable: 0,
            control_unfavorable: 0,
        };
        for (&t, &f) in treated.iter().zip(favorable) {
            match (t, f) {
                (true, true) => c.treated_favorable += 1,
                (true, false) => c.treated_unfavorable += 1,
                (false, true) => c.control_favorable += 1,
                (false, false) => c.control_unfavorable += 1,
            }
        }
        c
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let favorable: Vec<bool> = (0..data.len()).map(|i| data.favorable(i)).collect();
        Self::from_flags(&data.treated, &favorable)
    }

    pub fn from_records(records: &[IteRecord]) -> Self {
        let treated: Vec<bool> = records.iter().map(|r| r.arm == 1).collect();
        let favorable: Vec<bool> = records.iter().map(|r| r.favorable == 1).collect();
        Self::from_flags(&treated, &favorable)
    }

    pub fn treated_total(&self) -> usize {
        self.treated_favorable + self.treated_unfavorable
    }

    pub fn control_total(&self) -> usize {
        self.control_favorable + self.control_unfavorable
    }
}

/// Observed risk difference: favorable rate among treated minus among controls.
pub fn ate_observed(counts: &ArmCounts) -> Result<f64> {
    if counts.treated_total() == 0 {
        return Err(EffectsError::EmptyArm("treated"));
    }
    if counts.control_total() == 0 {
        return Err(EffectsError::EmptyArm("control"));
    }
    Ok(counts.treated_favorable as f64 / counts.treated_total() as f64
        - counts.control_favorable as f64 / counts.control_total() as f64)
}

/// Odds ratio of a favorable outcome, treated vs control, from raw counts.
pub fn ate_odds_ratio(counts: &ArmCounts) -> Result<f64> {
    let cells = [
        (counts.treated_favorable, "treated favorable"),
        (counts.treated_unfavorable, "treated unfavorable"),
        (counts.control_favorable, "control favorable"),
        (counts.control_unfavorable, "control unfavorable"),
    ];
    if let Some((_, name)) = cells.iter().find(|(c, _)| *c == 0) {
        return Err(EffectsError::ZeroCell(name));
    }
    let odds_t = counts.treated_favorable as f64 / counts.treated_unfavorable as f64;
    let odds_c = counts.control_favorable as f64 / counts.control_unfavorable as f64;
    Ok(odds_t / odds_c)
}

/// `ate_observed − mean(ite)` over the same patients; positive values mean the
/// model underestimates the observed effect.
pub fn ate_calibration(records: &[IteRecord]) -> Result<f64> {
    let ate = ate_observed(&ArmCounts::from_records(records))?;
    let mean = records.iter().map(|r| r.ite).sum::<f64>() / records.len() as f64;
    Ok(ate - mean)
}

/// `exp(β)` for one feature; values above 1 favor higher (worse) outcome classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatioRow {
    pub feature: String,
    pub coefficient: f64,
    pub odds_ratio: f64,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

pub fn odds_ratio_report(params: &ModelParams) -> Vec<OddsRatioRow> {
    params
        .linear
        .names
        .iter()
        .zip(&params.linear.coefficients)
        .map(|(name, &b)| OddsRatioRow {
            feature: name.clone(),
            coefficient: b,
            odds_ratio: b.exp(),
            lower: None,
            upper: None,
        })
        .collect()
}
