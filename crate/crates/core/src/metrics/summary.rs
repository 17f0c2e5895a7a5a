use std::fmt;

use serde::{Deserialize, Serialize};

use super::{quantile_sorted, MetricsError, Result};
use crate::preprocess::{CohortTable, ColumnKind, Value};

/// Column headers of the summary, in order.
pub const SUMMARY_GROUPS: [&str; 3] = ["Unfavorable", "Favorable", "All"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SummaryCell {
    /// Median and quartiles of the observed values.
    Median {
        median: f64,
        q1: f64,
        q3: f64,
        missing: usize,
    },
    /// Rows at this level; the percentage is over observed rows.
    Count {
        count: usize,
        percent: f64,
        missing: usize,
    },
}

impl fmt::Display for SummaryCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SummaryCell::Median { median, q1, q3, .. } => write!(f, "{median} [{q1}, {q3}]"),
            SummaryCell::Count { count, percent, .. } => write!(f, "{count} ({percent:.1})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variable: String,
    /// Level shown for categorical rows; `None` for continuous and binary rows.
    pub level: Option<String>,
    /// One cell per entry of [`SummaryTable::groups`].
    pub cells: Vec<SummaryCell>,
}

/// Cohort characteristics split by favorable/unfavorable outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub groups: Vec<String>,
    pub group_sizes: Vec<usize>,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    /// CSV with columns `variable,level` followed by one column per group.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,level");
        for (g, n) in self.groups.iter().zip(&self.group_sizes) {
            out.push_str(&format!(",{g} (n={n})"));
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&csv_field(&row.variable));
            out.push(',');
            out.push_str(&csv_field(row.level.as_deref().unwrap_or("")));
            for cell in &row.cells {
                out.push(',');
                out.push_str(&csv_field(&cell.to_string()));
            }
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn median_cell(values: &[Value], rows: &[usize]) -> SummaryCell {
    let mut observed: Vec<f64> = rows
        .iter()
        .filter_map(|&i| match values[i] {
            Value::Number(v) => Some(v),
            _ => None,
        })
        .collect();
    let missing = rows.len() - observed.len();
    if observed.is_empty() {
        return SummaryCell::Median {
            median: f64::NAN,
            q1: f64::NAN,
            q3: f64::NAN,
            missing,
        };
    }
    observed.sort_by(f64::total_cmp);
    SummaryCell::Median {
        median: quantile_sorted(&observed, 0.5),
        q1: quantile_sorted(&observed, 0.25),
        q3: quantile_sorted(&observed, 0.75),
        missing,
    }
}

fn count_cell(values: &[Value], rows: &[usize], hit: impl Fn(&Value) -> bool) -> SummaryCell {
    let observed = rows.iter().filter(|&&i| !values[i].is_missing()).count();
    let count = rows.iter().filter(|&&i| hit(&values[i])).count();
    SummaryCell::Count {
        count,
        percent: if observed == 0 {
            f64::NAN
        } else {
            100.0 * count as f64 / observed as f64
        },
        missing: rows.len() - observed,
    }
}

/// Medians [quartiles] for continuous covariates and counts (percent) for
/// binary covariates, categorical levels and the treatment indicator, in the
/// groups Unfavorable, Favorable and All.
pub fn descriptive_summary(table: &CohortTable) -> Result<SummaryTable> {
    let scale = table.schema.scale;
    let all: Vec<usize> = (0..table.len()).collect();
    let (favorable, unfavorable): (Vec<usize>, Vec<usize>) = all
        .iter()
        .partition(|&&i| scale.is_favorable(table.rows[i].outcome));
    if favorable.is_empty() || unfavorable.is_empty() {
        return Err(MetricsError::Undefined(
            "summary needs both favorable and unfavorable patients".into(),
        ));
    }
    let groups = [&unfavorable, &favorable, &all];
    let mut rows = Vec::new();
    for (j, spec) in table.schema.covariate_specs().into_iter().enumerate() {
        let column: Vec<Value> = table.rows.iter().map(|r| r.covariates[j]).collect();
        match spec.kind {
            ColumnKind::Continuous => rows.push(SummaryRow {
                variable: spec.name.clone(),
                level: None,
                cells: groups.iter().map(|g| median_cell(&column, g)).collect(),
            }),
            ColumnKind::Binary => rows.push(SummaryRow {
                variable: spec.name.clone(),
                level: None,
                cells: groups
                    .iter()
                    .map(|g| count_cell(&column, g, |v| *v == Value::Number(1.0)))
                    .collect(),
            }),
            ColumnKind::Categorical => {
                for (l, name) in spec.levels.iter().enumerate() {
                    rows.push(SummaryRow {
                        variable: spec.name.clone(),
                        level: Some(name.clone()),
                        cells: groups
                            .iter()
                            .map(|g| count_cell(&column, g, |v| *v == Value::Level(l)))
                            .collect(),
                    });
                }
            }
        }
    }
    let treated: Vec<Value> = table
        .rows
        .iter()
        .map(|r| Value::Number(if r.treated { 1.0 } else { 0.0 }))
        .collect();
    rows.push(SummaryRow {
        variable: table.schema.columns[table.schema.treatment_column()].name.clone(),
        level: None,
        cells: groups
            .iter()
            .map(|g| count_cell(&treated, g, |v| *v == Value::Number(1.0)))
            .collect(),
    });
    Ok(SummaryTable {
        groups: SUMMARY_GROUPS.iter().map(|s| s.to_string()).collect(),
        group_sizes: groups.iter().map(|g| g.len()).collect(),
        rows,
    })
}
