//! Synthetic randomized trials drawn from a known model, and brute-force
//! reference implementations used to cross-check the production code.

mod oracle;

pub use oracle::{
    finite_difference_gradient, oracle_auc, oracle_c_for_benefit, oracle_c_for_benefit_counts,
    random_batch, random_model, BenefitCounts, OwnedBatch, RandomModelShape,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::effects::counterfactual_predict;
use crate::model::{
    CutpointVector, EmbeddingHead, LinearPredictor, ModelError, ModelParams, OutcomeScale,
};
use crate::preprocess::{
    CohortTable, ColumnKind, ColumnRole, ColumnSpec, FeatureSchema, PatientRow, PreprocessError,
    Value,
};

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error("invalid generator spec: {0}")]
    Spec(String),
}

pub type Result<T> = std::result::Result<T, SyntheticError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CovariateDistribution {
    /// Standard normal on the model scale; written out as `mean + sd·z`.
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCovariate {
    pub name: String,
    pub distribution: CovariateDistribution,
    /// Per SD for normal covariates, per level switch for binary ones.
    pub coefficient: f64,
}

impl SyntheticCovariate {
    pub fn normal(name: &str, mean: f64, sd: f64, coefficient: f64) -> Self {
        SyntheticCovariate {
            name: name.into(),
            distribution: CovariateDistribution::Normal { mean, sd },
            coefficient,
        }
    }

    pub fn bernoulli(name: &str, p: f64, coefficient: f64) -> Self {
        SyntheticCovariate {
            name: name.into(),
            distribution: CovariateDistribution::Bernoulli { p },
            coefficient,
        }
    }
}

/// Everything needed to draw one synthetic trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub n: usize,
    pub scale: OutcomeScale,
    /// Strictly increasing true cut-points `θ_1 … θ_{K−1}`.
    pub cutpoints: Vec<f64>,
    pub covariates: Vec<SyntheticCovariate>,
    pub treatment_name: String,
    pub treatment_probability: f64,
    pub treatment_coefficient: f64,
    pub outcome_name: String,
    /// True embedding head; embeddings are drawn iid standard normal.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<EmbeddingHead>,
    /// Probability that any single covariate cell is blanked (MCAR).
    #[serde(default)]
    pub missing_rate: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    /// Two normal and two binary covariates plus treatment (`P = 5`) on the
    /// 7-class mRS scale, with a protective treatment effect of `−ln 2`.
    pub fn standard(n: usize, seed: u64) -> Self {
        GeneratorSpec {
            n,
            scale: OutcomeScale::MODIFIED_RANKIN,
            cutpoints: vec![-2.0, -1.0, -0.2, 0.5, 1.3, 2.4],
            covariates: vec![
                SyntheticCovariate::normal("age", 65.0, 13.0, 0.6),
                SyntheticCovariate::normal("nihss", 17.0, 6.0, 0.8),
                SyntheticCovariate::bernoulli("diabetes", 0.15, 0.4),
                SyntheticCovariate::bernoulli("smoker", 0.3, -0.3),
            ],
            treatment_name: "mt".into(),
            treatment_probability: 0.5,
            treatment_coefficient: -std::f64::consts::LN_2,
            outcome_name: "mrs".into(),
            head: None,
            missing_rate: 0.0,
            seed,
        }
    }

    /// Cohort shaped like the published one: 449 patients, about 210 treated,
    /// eleven baseline covariates with realistic marginal scales.
    pub fn trial_like(seed: u64) -> Self {
        GeneratorSpec {
            n: 449,
            scale: OutcomeScale::MODIFIED_RANKIN,
            cutpoints: vec![-3.2, -2.1, -1.0, 0.0, 0.9, 1.9],
            covariates: vec![
                SyntheticCovariate::bernoulli("ivt", 0.89, -0.2),
                SyntheticCovariate::normal("age", 66.0, 14.0, 0.45),
                SyntheticCovariate::normal("glucose", 7.2, 2.0, 0.2),
                SyntheticCovariate::bernoulli("pre_mrs", 0.2, 0.9),
                SyntheticCovariate::normal("nihss", 17.0, 5.5, 0.5),
                SyntheticCovariate::normal("systolic_bp", 145.0, 24.0, 0.15),
                SyntheticCovariate::bernoulli("diabetes", 0.13, 0.4),
                SyntheticCovariate::bernoulli("hypertension", 0.45, 0.2),
                SyntheticCovariate::bernoulli("smoker", 0.28, -0.3),
                SyntheticCovariate::bernoulli("prev_stroke", 0.11, 0.5),
                SyntheticCovariate::normal("onset_to_door", 140.0, 100.0, 0.05),
            ],
            treatment_name: "iat".into(),
            treatment_probability: 210.0 / 449.0,
            treatment_coefficient: -0.75,
            outcome_name: "mrs".into(),
            head: None,
            missing_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        if self.n == 0 {
            return Err(SyntheticError::Spec("n must be positive".into()));
        }
        if self.cutpoints.len() != self.scale.cut_count() {
            return Err(SyntheticError::Spec(format!(
                "{} classes need {} cut-points",
                self.scale.classes,
                self.scale.cut_count()
            )));
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !unit(self.treatment_probability) || !unit(self.missing_rate) || self.missing_rate >= 1.0 {
            return Err(SyntheticError::Spec("probabilities must lie in [0, 1]".into()));
        }
        for c in &self.covariates {
            let ok = match c.distribution {
                CovariateDistribution::Normal { sd, .. } => sd > 0.0,
                CovariateDistribution::Bernoulli { p } => unit(p),
            };
            if !ok || !c.coefficient.is_finite() {
                return Err(SyntheticError::Spec(format!("covariate `{}` is invalid", c.name)));
            }
        }
        self.true_params()?;
        self.schema()?;
        Ok(())
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.covariates
            .iter()
            .map(|c| c.name.clone())
            .chain(std::iter::once(self.treatment_name.clone()))
            .collect()
    }

    /// The generating model on the model scale (normal covariates as z-scores).
    pub fn true_params(&self) -> Result<ModelParams> {
        let mut coefficients: Vec<f64> = self.covariates.iter().map(|c| c.coefficient).collect();
        coefficients.push(self.treatment_coefficient);
        Ok(ModelParams::new(
            self.scale,
            CutpointVector::from_thresholds(&self.cutpoints)?,
            LinearPredictor::new(self.feature_names(), coefficients, self.covariates.len())?,
            self.head.clone(),
        )?)
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let mut columns = vec![ColumnSpec::new("id", ColumnKind::Continuous, ColumnRole::Identifier)];
        for c in &self.covariates {
            let kind = match c.distribution {
                CovariateDistribution::Normal { .. } => ColumnKind::Continuous,
                CovariateDistribution::Bernoulli { .. } => ColumnKind::Binary,
            };
            columns.push(ColumnSpec::new(c.name.clone(), kind, ColumnRole::Covariate));
        }
        columns.push(ColumnSpec::new(
            self.treatment_name.clone(),
            ColumnKind::Binary,
            ColumnRole::Treatment,
        ));
        columns.push(ColumnSpec::new(
            self.outcome_name.clone(),
            ColumnKind::Continuous,
            ColumnRole::Outcome,
        ));
        if let Some(head) = &self.head {
            for j in 0..head.input_dim() {
                columns.push(ColumnSpec::new(
                    format!("emb_{j}"),
                    ColumnKind::Continuous,
                    ColumnRole::Embedding,
                ));
            }
        }
        Ok(FeatureSchema::new(columns, self.scale)?)
    }
}

/// Ground-truth counterfactual favorable probabilities of one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub id: String,
    pub p1: f64,
    pub p0: f64,
    pub ite: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub table: CohortTable,
    pub truth: Vec<TruthRecord>,
    pub params: ModelParams,
}

impl SyntheticCohort {
    /// Population risk difference implied by the generating model: `mean(p1) − mean(p0)`.
    pub fn true_risk_difference(&self) -> f64 {
        let n = self.truth.len() as f64;
        self.truth.iter().map(|t| t.ite).sum::<f64>() / n
    }

    pub fn write_truth_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        for t in &self.truth {
            out.serialize(t).map_err(PreprocessError::from)?;
        }
        out.flush()
            .map_err(|e| PreprocessError::Csv(csv::Error::from(e)))?;
        Ok(())
    }
}

/// Draws a trial from `spec`.
///
/// Patient `i` uses its own random stream (key `seed`, stream `i`), so the
/// table does not depend on how generation is scheduled. Outcomes follow the
/// latent route: `z ~ Logistic(0, 1)` and `Y = #{k : θ_k − shift < z}`.
pub fn generate_rct(spec: &GeneratorSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let params = spec.true_params()?;
    let schema = spec.schema()?;
    let theta = params.cutpoints.thresholds().to_vec();
    let width = spec.covariates.len();
    let id_width = (spec.n - 1).to_string().len();

    let drawn: Vec<(PatientRow, TruthRecord)> = (0..spec.n)
        .into_par_iter()
        .map(|i| -> Result<(PatientRow, TruthRecord)> {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut x = Vec::with_capacity(width + 1);
            let mut covariates = Vec::with_capacity(width);
            for c in &spec.covariates {
                let (model_value, raw) = match c.distribution {
                    CovariateDistribution::Normal { mean, sd } => {
                        let z: f64 = rng.sample(StandardNormal);
                        (z, mean + sd * z)
                    }
                    CovariateDistribution::Bernoulli { p } => {
                        let b = if rng.random::<f64>() < p { 1.0 } else { 0.0 };
                        (b, b)
                    }
                };
                x.push(model_value);
                covariates.push(Value::Number(raw));
            }
            let treated = rng.random::<f64>() < spec.treatment_probability;
            x.push(if treated { 1.0 } else { 0.0 });
            let embedding: Option<Vec<f64>> = spec.head.as_ref().map(|h| {
                (0..h.input_dim())
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            });
            let shift = params.shift(&x, embedding.as_deref())?;
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            let z = (u / (1.0 - u)).ln();
            let outcome = theta.iter().filter(|&&t| t - shift < z).count();
            for v in &mut covariates {
                if spec.missing_rate > 0.0 && rng.random::<f64>() < spec.missing_rate {
                    *v = Value::Missing;
                }
            }
            let pair = counterfactual_predict(&params, &x, embedding.as_deref())
                .map_err(|e| SyntheticError::Spec(e.to_string()))?;
            let id = format!("p{i:0id_width$}");
            Ok((
                PatientRow {
                    id: id.clone(),
                    covariates,
                    treated,
                    outcome,
                    embedding,
                },
                TruthRecord {
                    id,
                    p1: pair.favorable_treated,
                    p0: pair.favorable_control,
                    ite: pair.ite(),
                },
            ))
        })
        .collect::<Result<_>>()?;

    let (rows, truth): (Vec<PatientRow>, Vec<TruthRecord>) = drawn.into_iter().unzip();
    Ok(SyntheticCohort {
        table: CohortTable::new(schema, rows)?,
        truth,
        params,
    })
}
