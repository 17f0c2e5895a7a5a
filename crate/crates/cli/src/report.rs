//! The JSON evaluation report and the side-by-side comparison of several.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ontram_core::preprocess::Stratification;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{MetricSet, OddsRatio};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    CrossValidation,
    Evaluation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortStats {
    pub patients: usize,
    pub treated: usize,
    pub control: usize,
    pub favorable: usize,
    /// Missing covariate cells before imputation.
    pub missing_cells: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate_observed: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ate_odds_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub pooled: MetricSet,
    /// Keyed by 1-based fold; empty for a single evaluation.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub folds: BTreeMap<usize, MetricSet>,
    pub mean_ite: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub odds_ratios: Vec<OddsRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub kind: ReportKind,
    pub config: RunConfig,
    pub cohort: CohortStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stratification: Option<Stratification>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_folds: Vec<FoldFailure>,
    pub models: BTreeMap<String, ModelReport>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Numerical(format!("cannot serialize report: {e}")))?;
        text.push('\n');
        Ok(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        if version != Some(u64::from(REPORT_VERSION)) {
            return Err(CliError::Config(format!(
                "{}: report version {version:?} is not supported (expected {REPORT_VERSION})",
                path.display()
            )));
        }
        serde_json::from_value(value).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
    }
}

/// One column of the comparison: a model inside a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub label: String,
    pub metrics: MetricSet,
}

/// Rows are metrics, columns are `report/model`.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metrics: Vec<String>,
    pub columns: Vec<Column>,
}

fn report_label(path: &Path, index: usize) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    if stem == "report" || stem == "evaluation" {
        if let Some(dir) = path.parent().and_then(Path::file_name).and_then(|s| s.to_str()) {
            return dir.to_string();
        }
    }
    if stem.is_empty() {
        format!("report{}", index + 1)
    } else {
        stem.to_string()
    }
}

impl Comparison {
    pub fn build(reports: &[(PathBuf, EvaluationReport)]) -> Result<Self> {
        if reports.is_empty() {
            return Err(CliError::Config("at least one report is required".into()));
        }
        let mut columns: Vec<Column> = Vec::new();
        let mut metrics: Vec<String> = Vec::new();
        for (i, (path, report)) in reports.iter().enumerate() {
            let base = report_label(path, i);
            for (model, r) in &report.models {
                let mut label = format!("{base}/{model}");
                if columns.iter().any(|c| c.label == label) {
                    label = format!("{label}#{}", i + 1);
                }
                for key in r.pooled.values.keys() {
                    if !metrics.contains(key) {
                        metrics.push(key.clone());
                    }
                }
                columns.push(Column {
                    label,
                    metrics: r.pooled.clone(),
                });
            }
        }
        metrics.sort();
        Ok(Comparison { metrics, columns })
    }

    /// `true` when the cell's interval and the first column's interval are
    /// both present and disjoint.
    pub fn differs_from_first(&self, metric: &str, column: usize) -> bool {
        if column == 0 {
            return false;
        }
        let get = |c: usize| {
            self.columns[c]
                .metrics
                .values
                .get(metric)
                .and_then(|v| Some((v.lower?, v.upper?)))
        };
        match (get(0), get(column)) {
            (Some((l0, u0)), Some((l, u))) => u < l0 || l > u0,
            _ => false,
        }
    }

    fn cell(&self, metric: &str, column: usize) -> String {
        let Some(v) = self.columns[column].metrics.values.get(metric) else {
            return "NA".into();
        };
        let mut s = match (v.lower, v.upper) {
            (Some(l), Some(u)) => format!("{:.3} [{:.3}, {:.3}]", v.point, l, u),
            _ => format!("{:.3}", v.point),
        };
        if self.differs_from_first(metric, column) {
            s.push('*');
        }
        s
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut out = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        let csv_err = |e: csv::Error| CliError::Numerical(e.to_string());
        out.write_record(&header).map_err(csv_err)?;
        for m in &self.metrics {
            let mut record = vec![m.clone()];
            record.extend((0..self.columns.len()).map(|c| self.cell(m, c)));
            out.write_record(&record).map_err(csv_err)?;
        }
        let bytes = out
            .into_inner()
            .map_err(|e| CliError::Numerical(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Fixed-width text rendering of the CSV table.
    pub fn to_text(&self) -> String {
        let mut rows: Vec<Vec<String>> = Vec::new();
        let mut header = vec!["metric".to_string()];
        header.extend(self.columns.iter().map(|c| c.label.clone()));
        rows.push(header);
        for m in &self.metrics {
            let mut r = vec![m.clone()];
            r.extend((0..self.columns.len()).map(|c| self.cell(m, c)));
            rows.push(r);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut text = String::new();
        for r in &rows {
            let line: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(cell, &w)| format!("{cell:<w$}"))
                .collect();
            let _ = writeln!(text, "{}", line.join("  ").trim_end());
        }
        if self.columns.len() > 1 {
            text.push_str("* interval disjoint from the first column\n");
        }
        text
    }
}

/// Odds-ratio rows of every report and model, for forest plots.
pub fn odds_ratio_csv(reports: &[(PathBuf, EvaluationReport)]) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        report: &'a str,
        model: &'a str,
        feature: &'a str,
        odds_ratio: f64,
        lower: Option<f64>,
        upper: Option<f64>,
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Numerical(e.to_string());
    let mut wrote = false;
    for (i, (path, report)) in reports.iter().enumerate() {
        let label = report_label(path, i);
        for (model, r) in &report.models {
            for o in &r.odds_ratios {
                out.serialize(Row {
                    report: &label,
                    model,
                    feature: &o.feature,
                    odds_ratio: o.odds_ratio,
                    lower: o.lower,
                    upper: o.upper,
                })
                .map_err(csv_err)?;
                wrote = true;
            }
        }
    }
    if !wrote {
        out.write_record(["report", "model", "feature", "odds_ratio", "lower", "upper"])
            .map_err(csv_err)?;
    }
    let bytes = out
        .into_inner()
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
