//! Fitting, prediction and scoring shared by the subcommands.

use std::collections::BTreeMap;
use std::path::Path;

use ontram_core::effects::{ate_calibration, counterfactual_predict, IteRecord};
use ontram_core::metrics::{
    basic_interval, bootstrap_ci_vec, brier, c_for_benefit, draw_resample, replicate_rng,
    roc_auc, test_binary_nll, BootstrapConfig, MetricsError,
};
use ontram_core::model::ModelParams;
use ontram_core::preprocess::{
    fit_standardizer, ingest_csv, CohortTable, Dataset, FeatureSchema, KnnImputer,
    StandardizerParams,
};
use ontram_core::train::{staged_fit, train, StagedConfig, StagedFit, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Metric, RunConfig};
use crate::error::{CliError, Result};

pub const PARAMS_VERSION: u32 = 1;
pub const CLINICAL: &str = "clinical";
pub const COMBINED: &str = "clinical+embeddings";

/// Everything needed to score new patients: the fitted preprocessing plus
/// one model per input configuration.
///
/// The imputer keeps its donor rows, so the file contains the training
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub version: u32,
    pub schema: FeatureSchema,
    pub imputer: KnnImputer,
    pub standardizer: StandardizerParams,
    pub models: BTreeMap<String, ModelParams>,
}

impl ParamsFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(PARAMS_VERSION)) {
            return Err(CliError::Config(format!(
                "{}: params version {version:?} is not supported (expected {PARAMS_VERSION})",
                path.display()
            )));
        }
        let file: ParamsFile = serde_json::from_value(value)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for params in file.models.values() {
            params.validate()?;
        }
        Ok(file)
    }

    /// Imputes and standardizes `table` with the stored transforms.
    pub fn prepare(&self, table: &CohortTable) -> Result<Dataset> {
        let imputed = self.imputer.transform(table)?;
        Ok(self.standardizer.apply(&imputed)?)
    }
}

/// Reads the configured cohort and attaches the companion embeddings.
pub fn load_cohort(config: &RunConfig, schema: &FeatureSchema) -> Result<CohortTable> {
    let input = config.input()?;
    let mut table = ingest_csv(input, schema)?;
    if let Some(path) = &config.paths.embeddings {
        if table.embedding_dim().is_some() {
            return Err(CliError::Config(
                "embeddings given both as schema columns and as a companion file".into(),
            ));
        }
        table.attach_embeddings(path)?;
    }
    Ok(table)
}

/// Preprocessing fit on `train`, applied to both `train` and `validation`.
pub struct Prepared {
    pub params: ParamsFile,
    pub train: Dataset,
    pub validation: Option<Dataset>,
}

pub fn prepare(
    train_table: &CohortTable,
    validation_table: Option<&CohortTable>,
    config: &RunConfig,
) -> Result<Prepared> {
    let imputer = KnnImputer::fit(train_table, config.imputation.neighbors)?;
    let imputed = imputer.transform(train_table)?;
    let standardizer = fit_standardizer(&imputed)?;
    let mut train = standardizer.apply(&imputed)?;
    let mut validation = validation_table
        .map(|v| -> Result<Dataset> { Ok(standardizer.apply(&imputer.transform(v)?)?) })
        .transpose()?;
    if !config.training.use_embeddings {
        train = train.without_embeddings();
        validation = validation.map(|v| v.without_embeddings());
    }
    Ok(Prepared {
        params: ParamsFile {
            version: PARAMS_VERSION,
            schema: train_table.schema.clone(),
            imputer,
            standardizer,
            models: BTreeMap::new(),
        },
        train,
        validation,
    })
}

/// Fits the clinical model and, when embeddings are present, the combined
/// model. The combined fit starts from the same stage-A run, so its first
/// stage is the clinical model.
pub fn fit_models(prepared: &mut Prepared, staged: &StagedConfig) -> Result<StagedFit> {
    let fit = staged_fit(&prepared.train, prepared.validation.as_ref(), staged)?;
    let models = &mut prepared.params.models;
    models.insert(CLINICAL.into(), fit.clinical().params.clone());
    if prepared.train.embedding_dim().is_some() {
        models.insert(COMBINED.into(), fit.params.clone());
    }
    Ok(fit)
}

pub const PREDICTION_HEADER: [&str; 10] = [
    "id", "fold", "arm", "outcome", "favorable", "model", "p_observed", "p1", "p0", "ite",
];

/// One patient scored by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub fold: usize,
    pub arm: u8,
    pub outcome: usize,
    pub favorable: u8,
    pub model: String,
    /// Favorable probability under the observed arm.
    pub p_observed: f64,
    pub p1: f64,
    pub p0: f64,
    pub ite: f64,
}

impl PredictionRow {
    pub fn record(&self) -> IteRecord {
        IteRecord {
            id: self.id.clone(),
            p1: self.p1,
            p0: self.p0,
            ite: self.ite,
            arm: self.arm,
            favorable: self.favorable,
        }
    }
}

/// Scores every row of `data` with `params`; models without a head ignore
/// any embeddings.
pub fn predict(params: &ModelParams, name: &str, data: &Dataset, fold: usize) -> Result<Vec<PredictionRow>> {
    check_alignment(params, data)?;
    (0..data.len())
        .map(|i| {
            let e = params.head.as_ref().and(data.embedding(i));
            let pair = counterfactual_predict(params, data.row(i), e)?;
            let treated = data.treated[i];
            Ok(PredictionRow {
                id: data.ids[i].clone(),
                fold,
                arm: u8::from(treated),
                outcome: data.outcomes[i],
                favorable: u8::from(data.favorable(i)),
                model: name.to_string(),
                p_observed: if treated {
                    pair.favorable_treated
                } else {
                    pair.favorable_control
                },
                p1: pair.favorable_treated,
                p0: pair.favorable_control,
                ite: pair.ite(),
            })
        })
        .collect()
}

/// Feature names, outcome scale and embedding availability must match.
pub fn check_alignment(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.feature_names() != data.feature_names.as_slice() {
        return Err(CliError::Data(format!(
            "feature mismatch: model expects [{}], data provide [{}]",
            params.feature_names().join(", "),
            data.feature_names.join(", ")
        )));
    }
    if params.scale != data.scale {
        return Err(CliError::Data(format!(
            "outcome scale mismatch: model has {} classes, data {}",
            params.scale.classes, data.scale.classes
        )));
    }
    match (&params.head, data.embedding_dim()) {
        (Some(h), None) => Err(CliError::Data(format!(
            "the model has an embedding head (input dimension {}) but the data carry no embeddings",
            h.input_dim()
        ))),
        (Some(h), Some(d)) if h.input_dim() != d => Err(CliError::Data(format!(
            "embedding dimension mismatch: model expects {}, data provide {d}",
            h.input_dim()
        ))),
        _ => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub point: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

/// Metric values keyed by metric name, plus the reasons for any metric
/// (or interval) that could not be computed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub values: BTreeMap<String, MetricValue>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub issues: BTreeMap<String, String>,
}

fn metric_value(metric: Metric, rows: &[&PredictionRow], truncation_seed: u64) -> std::result::Result<f64, MetricsError> {
    let scores: Vec<f64> = rows.iter().map(|r| r.p_observed).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.favorable == 1).collect();
    match metric {
        Metric::Nll => test_binary_nll(&scores, &labels),
        Metric::Auc => roc_auc(&scores, &labels),
        Metric::Brier => brier(&scores, &labels),
        Metric::CForBenefit => {
            let records: Vec<IteRecord> = rows.iter().map(|r| r.record()).collect();
            c_for_benefit(&records, truncation_seed)
        }
        Metric::AteCalibration => {
            let records: Vec<IteRecord> = rows.iter().map(|r| r.record()).collect();
            ate_calibration(&records).map_err(|e| MetricsError::Undefined(e.to_string()))
        }
    }
}

/// Point estimates and basic-bootstrap intervals for `metrics` over `rows`.
///
/// Metrics undefined on the full sample are reported as issues and left out
/// of the bootstrap; all remaining metrics share each resample.
pub fn score(
    rows: &[PredictionRow],
    metrics: &[Metric],
    bootstrap: Option<&BootstrapConfig>,
    truncation_seed: u64,
) -> MetricSet {
    let mut wanted: Vec<Metric> = metrics.to_vec();
    wanted.sort();
    wanted.dedup();
    let all: Vec<&PredictionRow> = rows.iter().collect();
    let mut set = MetricSet::default();
    let mut defined = Vec::new();
    for m in wanted {
        match metric_value(m, &all, truncation_seed) {
            Ok(v) => {
                set.values.insert(
                    m.key().into(),
                    MetricValue {
                        point: v,
                        lower: None,
                        upper: None,
                    },
                );
                defined.push(m);
            }
            Err(e) => {
                set.issues.insert(m.key().into(), e.to_string());
            }
        }
    }
    let Some(config) = bootstrap else {
        return set;
    };
    if defined.is_empty() {
        return set;
    }
    let statistic = |idx: &[usize]| -> std::result::Result<Vec<f64>, MetricsError> {
        let sample: Vec<&PredictionRow> = idx.iter().map(|&i| &rows[i]).collect();
        defined
            .iter()
            .map(|&m| metric_value(m, &sample, truncation_seed))
            .collect()
    };
    match bootstrap_ci_vec(rows.len(), statistic, config) {
        Ok(intervals) => {
            for (m, iv) in defined.iter().zip(intervals) {
                let v = set.values.get_mut(m.key()).expect("defined metric");
                v.lower = Some(iv.lower);
                v.upper = Some(iv.upper);
            }
        }
        Err(e) => {
            set.issues.insert("bootstrap".into(), e.to_string());
        }
    }
    set
}

/// Odds-ratio table row; bounds come from resampled refits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OddsRatio {
    pub feature: String,
    pub coefficient: f64,
    pub odds_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

pub fn odds_ratios(params: &ModelParams) -> Vec<OddsRatio> {
    ontram_core::effects::odds_ratio_report(params)
        .into_iter()
        .map(|r| OddsRatio {
            feature: r.feature,
            coefficient: r.coefficient,
            odds_ratio: r.odds_ratio,
            lower: r.lower,
            upper: r.upper,
        })
        .collect()
}

/// Attaches basic-bootstrap bounds to the clinical odds ratios.
///
/// Replicate `r` resamples patients with the bootstrap stream `r` and
/// re-trains the clinical stage for `epochs` epochs from `fitted`. Intervals
/// are formed on the coefficient scale and exponentiated.
pub fn odds_ratio_intervals(
    fitted: &ModelParams,
    data: &Dataset,
    base: &TrainConfig,
    replicates: usize,
    epochs: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<OddsRatio>> {
    let mut table = odds_ratios(fitted);
    if replicates == 0 {
        return Ok(table);
    }
    let clinical = data.without_embeddings();
    let draws: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = replicate_rng(seed, r);
            let idx = draw_resample(&mut rng, clinical.len());
            let sample = clinical.subset(&idx);
            let config = TrainConfig {
                epochs,
                seed: seed.wrapping_add(r as u64),
                ..base.clone()
            };
            let trace = train(fitted, &sample.all_observations(), None, &config)?;
            Ok(trace.params.linear.coefficients)
        })
        .collect::<Result<_>>()?;
    for (j, row) in table.iter_mut().enumerate() {
        let column: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let iv = basic_interval(row.coefficient, &column, alpha)?;
        row.lower = Some(iv.lower.exp());
        row.upper = Some(iv.upper.exp());
    }
    Ok(table)
}
