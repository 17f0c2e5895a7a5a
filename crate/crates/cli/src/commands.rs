//! The subcommands. Each writes only below `config.paths.output`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use ontram_core::effects::{ate_observed, ate_odds_ratio, ArmCounts};
use ontram_core::metrics::{descriptive_summary, roc_curve, BootstrapConfig};
use ontram_core::preprocess::{
    choose_strata, train_val_split, write_cohort_csv, CohortTable, FoldPlan,
};
use ontram_core::synthetic::generate_rct;
use ontram_core::train::{staged_fit, StagedFit};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{
    fit_models, load_cohort, odds_ratio_intervals, odds_ratios, predict, prepare, score,
    OddsRatio, ParamsFile, PredictionRow, CLINICAL, PREDICTION_HEADER,
};
use crate::report::{
    odds_ratio_csv, CohortStats, Comparison, EvaluationReport, FoldFailure, ModelReport,
    ReportKind, REPORT_VERSION,
};

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }
    std::fs::write(path, contents).map_err(CliError::io(path))
}

fn csv_string<T: Serialize>(rows: &[T], header: &[&str]) -> Result<String> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(!rows.is_empty())
        .from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Numerical(format!("cannot write CSV: {e}"));
    if rows.is_empty() {
        out.write_record(header).map_err(err)?;
    }
    for r in rows {
        out.serialize(r).map_err(err)?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn bootstrap_config(config: &RunConfig, seed: u64) -> Option<BootstrapConfig> {
    (config.evaluation.bootstrap_replicates > 0).then(|| BootstrapConfig {
        replicates: config.evaluation.bootstrap_replicates,
        alpha: config.evaluation.alpha,
        seed,
        ..Default::default()
    })
}

fn cohort_stats(table: &CohortTable) -> CohortStats {
    let treated: Vec<bool> = table.rows.iter().map(|r| r.treated).collect();
    let favorable: Vec<bool> = table
        .rows
        .iter()
        .map(|r| table.schema.scale.is_favorable(r.outcome))
        .collect();
    let counts = ArmCounts::from_flags(&treated, &favorable);
    CohortStats {
        patients: table.len(),
        treated: counts.treated_total(),
        control: counts.control_total(),
        favorable: favorable.iter().filter(|&&f| f).count(),
        missing_cells: table.missing_count(),
        ate_observed: ate_observed(&counts).ok(),
        ate_odds_ratio: ate_odds_ratio(&counts).ok(),
    }
}

/// Predictions of every model, grouped by model name.
fn by_model(rows: &[PredictionRow]) -> BTreeMap<String, Vec<PredictionRow>> {
    let mut map: BTreeMap<String, Vec<PredictionRow>> = BTreeMap::new();
    for r in rows {
        map.entry(r.model.clone()).or_default().push(r.clone());
    }
    map
}

fn mean_ite(rows: &[PredictionRow]) -> f64 {
    rows.iter().map(|r| r.ite).sum::<f64>() / rows.len() as f64
}

#[derive(Serialize)]
struct RocRow<'a> {
    model: &'a str,
    threshold: f64,
    fpr: f64,
    tpr: f64,
}

#[derive(Serialize)]
struct IteRow<'a> {
    model: &'a str,
    id: &'a str,
    fold: usize,
    arm: u8,
    favorable: u8,
    p1: f64,
    p0: f64,
    ite: f64,
}

#[derive(Serialize)]
struct OddsRow<'a> {
    model: &'a str,
    feature: &'a str,
    coefficient: f64,
    odds_ratio: f64,
    lower: Option<f64>,
    upper: Option<f64>,
}

/// `plots/roc.csv`, `plots/ite.csv` and `plots/odds_ratios.csv`.
fn write_plots(
    out: &Path,
    models: &BTreeMap<String, Vec<PredictionRow>>,
    ors: &BTreeMap<String, Vec<OddsRatio>>,
) -> Result<()> {
    let mut roc = Vec::new();
    let mut ite = Vec::new();
    for (name, rows) in models {
        let scores: Vec<f64> = rows.iter().map(|r| r.p_observed).collect();
        let labels: Vec<bool> = rows.iter().map(|r| r.favorable == 1).collect();
        // a single-class cohort has no ROC curve; the report records why
        if let Ok(curve) = roc_curve(&scores, &labels) {
            roc.extend(curve.into_iter().map(|p| RocRow {
                model: name,
                threshold: p.threshold,
                fpr: p.fpr,
                tpr: p.tpr,
            }));
        }
        ite.extend(rows.iter().map(|r| IteRow {
            model: name,
            id: &r.id,
            fold: r.fold,
            arm: r.arm,
            favorable: r.favorable,
            p1: r.p1,
            p0: r.p0,
            ite: r.ite,
        }));
    }
    let mut odds = Vec::new();
    for (name, table) in ors {
        odds.extend(table.iter().map(|o| OddsRow {
            model: name,
            feature: &o.feature,
            coefficient: o.coefficient,
            odds_ratio: o.odds_ratio,
            lower: o.lower,
            upper: o.upper,
        }));
    }
    let plots = out.join("plots");
    write_file(
        &plots.join("roc.csv"),
        csv_string(&roc, &["model", "threshold", "fpr", "tpr"])?,
    )?;
    write_file(
        &plots.join("ite.csv"),
        csv_string(&ite, &["model", "id", "fold", "arm", "favorable", "p1", "p0", "ite"])?,
    )?;
    write_file(
        &plots.join("odds_ratios.csv"),
        csv_string(
            &odds,
            &["model", "feature", "coefficient", "odds_ratio", "lower", "upper"],
        )?,
    )
}

fn params_json(params: &ParamsFile) -> Result<String> {
    let mut text = serde_json::to_string_pretty(params)
        .map_err(|e| CliError::Numerical(format!("cannot serialize parameters: {e}")))?;
    text.push('\n');
    Ok(text)
}

/// What `simulate` wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateSummary {
    pub output: PathBuf,
    pub patients: usize,
    pub treated: usize,
    pub favorable: usize,
    pub true_risk_difference: f64,
}

impl fmt::Display for SimulateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "wrote {} patients ({} treated, {} favorable; true risk difference {:.4}) to {}",
            self.patients,
            self.treated,
            self.favorable,
            self.true_risk_difference,
            self.output.display()
        )
    }
}

/// Draws a synthetic trial: `cohort.csv`, `truth.csv`, and a `config.toml`
/// that points at the cohort and declares its schema.
pub fn cmd_simulate(config: &RunConfig) -> Result<SimulateSummary> {
    config.validate()?;
    let spec = config.simulate.generator();
    spec.validate()?;
    let cohort = generate_rct(&spec)?;
    let out = &config.paths.output;

    let mut csv = Vec::new();
    write_cohort_csv(&cohort.table, &mut csv)?;
    let mut truth = Vec::new();
    cohort.write_truth_csv(&mut truth)?;
    let mut echo = config.clone();
    echo.schema = Some(cohort.table.schema.clone());
    echo.paths.input = Some(out.join("cohort.csv"));
    echo.paths.embeddings = None;

    write_file(&out.join("cohort.csv"), csv)?;
    write_file(&out.join("truth.csv"), truth)?;
    write_file(&out.join("config.toml"), echo.to_toml()?)?;

    let stats = cohort_stats(&cohort.table);
    Ok(SimulateSummary {
        output: out.clone(),
        patients: stats.patients,
        treated: stats.treated,
        favorable: stats.favorable,
        true_risk_difference: cohort.true_risk_difference(),
    })
}

#[derive(Serialize)]
struct StageSummary {
    stage: String,
    epochs: usize,
    final_train_nll: Option<f64>,
    final_validation_nll: Option<f64>,
}

fn stage_summaries(fit: &StagedFit) -> Vec<StageSummary> {
    fit.stages
        .iter()
        .map(|t| StageSummary {
            stage: format!("{:?}", t.config.stage).to_lowercase(),
            epochs: t.config.epochs,
            final_train_nll: t.train_nll.last().copied(),
            final_validation_nll: t.validation_nll.last().copied(),
        })
        .collect()
}

/// Fits on the whole input (with a stratified validation split for
/// monitoring) and writes `params.json`, `training.csv` and `odds_ratios.csv`.
pub fn cmd_train(config: &RunConfig) -> Result<ParamsFile> {
    config.validate()?;
    let schema = config.schema()?;
    let table = load_cohort(config, schema)?;
    let flags = train_val_split(
        &table.outcomes(),
        schema.scale,
        config.cv.validation_fraction,
        config.seeds.split,
    )?;
    let train_idx: Vec<usize> = (0..table.len()).filter(|&i| !flags[i]).collect();
    let val_idx: Vec<usize> = (0..table.len()).filter(|&i| flags[i]).collect();
    let val_table = table.subset(&val_idx);
    let mut prepared = prepare(&table.subset(&train_idx), Some(&val_table), config)?;
    let fit = fit_models(&mut prepared, &config.training.staged(config.seeds.train))?;

    let out = &config.paths.output;
    write_file(&out.join("params.json"), params_json(&prepared.params)?)?;
    write_file(
        &out.join("training.csv"),
        csv_string(
            &stage_summaries(&fit),
            &["stage", "epochs", "final_train_nll", "final_validation_nll"],
        )?,
    )?;
    let mut ors = BTreeMap::new();
    for (name, params) in &prepared.params.models {
        ors.insert(name.clone(), odds_ratios(params));
    }
    let mut odds = Vec::new();
    for (name, table) in &ors {
        odds.extend(table.iter().map(|o| OddsRow {
            model: name,
            feature: &o.feature,
            coefficient: o.coefficient,
            odds_ratio: o.odds_ratio,
            lower: o.lower,
            upper: o.upper,
        }));
    }
    write_file(
        &out.join("odds_ratios.csv"),
        csv_string(
            &odds,
            &["model", "feature", "coefficient", "odds_ratio", "lower", "upper"],
        )?,
    )?;
    Ok(prepared.params)
}

struct FoldOutput {
    params: ParamsFile,
    predictions: Vec<PredictionRow>,
}

fn run_fold(table: &CohortTable, plan: &FoldPlan, fold: usize, config: &RunConfig) -> Result<FoldOutput> {
    let train_table = table.subset(plan.train_indices(fold));
    let val_table = table.subset(plan.validation_indices(fold));
    let test_table = table.subset(&plan.test_indices(fold));
    let mut prepared = prepare(&train_table, Some(&val_table), config)?;
    let seed = config.seeds.train.wrapping_add(fold as u64);
    fit_models(&mut prepared, &config.training.staged(seed))?;
    let mut test = prepared.params.prepare(&test_table)?;
    if !config.training.use_embeddings {
        test = test.without_embeddings();
    }
    let mut predictions = Vec::new();
    for (name, params) in &prepared.params.models {
        predictions.extend(predict(params, name, &test, fold)?);
    }
    Ok(FoldOutput {
        params: prepared.params,
        predictions,
    })
}

#[derive(Serialize)]
struct FoldAssignment<'a> {
    id: &'a str,
    fold: usize,
    outcome: usize,
    stratum: usize,
}

/// Stratified cross-validation of every model, written as
///
/// ```text
/// out/config.toml          the effective configuration
/// out/folds.csv            id, fold, outcome, stratum
/// out/fold_{i}/params.json
/// out/fold_{i}/predictions.csv
/// out/summary.csv          descriptive table by outcome group
/// out/plots/{roc,ite,odds_ratios}.csv
/// out/report.json
/// ```
///
/// Folds run in parallel; a failing fold is recorded in the report and the
/// rest are pooled. Odds ratios come from a clinical fit on the full cohort.
pub fn cmd_cv(config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let schema = config.schema()?;
    let table = load_cohort(config, schema)?;
    let outcomes = table.outcomes();
    let plan = FoldPlan::build(
        &outcomes,
        schema.scale,
        config.cv.folds,
        config.cv.validation_fraction,
        config.seeds.split,
    )?;
    let out = &config.paths.output;

    let results: Vec<Result<FoldOutput>> = (1..=plan.folds)
        .into_par_iter()
        .map(|f| run_fold(&table, &plan, f, config))
        .collect();

    let mut failed = Vec::new();
    let mut pooled = Vec::new();
    let mut fold_rows: BTreeMap<usize, Vec<PredictionRow>> = BTreeMap::new();
    let mut first_error = None;
    for (i, result) in results.into_iter().enumerate() {
        let fold = i + 1;
        match result {
            Ok(output) => {
                let dir = out.join(format!("fold_{fold}"));
                write_file(&dir.join("params.json"), params_json(&output.params)?)?;
                write_file(
                    &dir.join("predictions.csv"),
                    csv_string(&output.predictions, &PREDICTION_HEADER)?,
                )?;
                pooled.extend(output.predictions.iter().cloned());
                fold_rows.insert(fold, output.predictions);
            }
            Err(e) => {
                failed.push(FoldFailure {
                    fold,
                    error: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if pooled.is_empty() {
        return Err(first_error.unwrap_or_else(|| CliError::Data("no folds were run".into())));
    }

    let (_, strata) = choose_strata(&outcomes, schema.scale, plan.folds);
    let assignments: Vec<FoldAssignment> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| FoldAssignment {
            id: &r.id,
            fold: plan.labels[i],
            outcome: r.outcome,
            stratum: strata[i],
        })
        .collect();

    // odds ratios of the clinical model on the full cohort
    let mut full = prepare(&table, None, config)?;
    full.train = full.train.without_embeddings();
    let staged = config.training.staged(config.seeds.train);
    let clinical_fit = staged_fit(&full.train, None, &staged)?;
    let clinical_ors = odds_ratio_intervals(
        &clinical_fit.params,
        &full.train,
        &staged.clinical,
        config.evaluation.odds_ratio_replicates,
        config.evaluation.odds_ratio_refit_epochs,
        config.evaluation.alpha,
        config.seeds.bootstrap,
    )?;

    let grouped = by_model(&pooled);
    let metrics = &config.evaluation.metrics;
    let mut models = BTreeMap::new();
    for (name, rows) in &grouped {
        let pooled_set = score(
            rows,
            metrics,
            bootstrap_config(config, config.seeds.bootstrap).as_ref(),
            config.seeds.truncation,
        );
        let mut folds = BTreeMap::new();
        for (&fold, all) in &fold_rows {
            let rows: Vec<PredictionRow> = all.iter().filter(|r| &r.model == name).cloned().collect();
            let seed = |s: u64| s.wrapping_add(fold as u64);
            folds.insert(
                fold,
                score(
                    &rows,
                    metrics,
                    bootstrap_config(config, seed(config.seeds.bootstrap)).as_ref(),
                    seed(config.seeds.truncation),
                ),
            );
        }
        models.insert(
            name.clone(),
            ModelReport {
                pooled: pooled_set,
                folds,
                mean_ite: mean_ite(rows),
                odds_ratios: if name == CLINICAL {
                    clinical_ors.clone()
                } else {
                    Vec::new()
                },
            },
        );
    }
    let report = EvaluationReport {
        version: REPORT_VERSION,
        kind: ReportKind::CrossValidation,
        config: config.clone(),
        cohort: cohort_stats(&table),
        stratification: Some(plan.stratification),
        failed_folds: failed,
        models,
    };

    let mut ors = BTreeMap::new();
    ors.insert(CLINICAL.to_string(), clinical_ors);
    write_file(&out.join("config.toml"), config.to_toml()?)?;
    write_file(
        &out.join("folds.csv"),
        csv_string(&assignments, &["id", "fold", "outcome", "stratum"])?,
    )?;
    write_file(
        &out.join("summary.csv"),
        descriptive_summary(&table)?.to_csv(),
    )?;
    write_plots(out, &grouped, &ors)?;
    write_file(&out.join("report.json"), report.to_json()?)?;
    Ok(report)
}

/// Scores the configured cohort with a saved params file; writes
/// `evaluation.json`, `predictions.csv` and the plot CSVs.
pub fn cmd_evaluate(params_path: &Path, config: &RunConfig) -> Result<EvaluationReport> {
    config.validate()?;
    let params = ParamsFile::load(params_path)?;
    let schema = config.schema.as_ref().unwrap_or(&params.schema);
    let table = load_cohort(config, schema)?;
    let data = params.prepare(&table)?;
    let mut predictions = Vec::new();
    for (name, model) in &params.models {
        predictions.extend(predict(model, name, &data, 0)?);
    }
    let grouped = by_model(&predictions);
    let mut models = BTreeMap::new();
    let mut ors = BTreeMap::new();
    for (name, rows) in &grouped {
        let odds = odds_ratios(&params.models[name]);
        ors.insert(name.clone(), odds.clone());
        models.insert(
            name.clone(),
            ModelReport {
                pooled: score(
                    rows,
                    &config.evaluation.metrics,
                    bootstrap_config(config, config.seeds.bootstrap).as_ref(),
                    config.seeds.truncation,
                ),
                folds: BTreeMap::new(),
                mean_ite: mean_ite(rows),
                odds_ratios: odds,
            },
        );
    }
    let report = EvaluationReport {
        version: REPORT_VERSION,
        kind: ReportKind::Evaluation,
        config: config.clone(),
        cohort: cohort_stats(&table),
        stratification: None,
        failed_folds: Vec::new(),
        models,
    };
    let out = &config.paths.output;
    write_file(&out.join("predictions.csv"), csv_string(&predictions, &PREDICTION_HEADER)?)?;
    write_plots(out, &grouped, &ors)?;
    write_file(&out.join("evaluation.json"), report.to_json()?)?;
    Ok(report)
}

/// Side-by-side comparison of saved reports: writes `comparison.csv`,
/// `comparison.txt` and `odds_ratios.csv` to `out` and returns the text table.
pub fn cmd_report(reports: &[PathBuf], out: &Path) -> Result<String> {
    let loaded = reports
        .iter()
        .map(|p| Ok((p.clone(), EvaluationReport::load(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let comparison = Comparison::build(&loaded)?;
    let text = comparison.to_text();
    write_file(&out.join("comparison.csv"), comparison.to_csv()?)?;
    write_file(&out.join("comparison.txt"), &text)?;
    write_file(&out.join("odds_ratios.csv"), odds_ratio_csv(&loaded)?)?;
    Ok(text)
}
