//! Tabular ingestion and fold-local preprocessing.
//!
//! Every fitted artifact (imputation donors, standardizer, dummy layout) is
//! built from training rows only and then applied to held-out rows.

mod impute;
mod split;
mod standardize;

pub use impute::{knn_impute, KnnImputer, DEFAULT_NEIGHBORS};
pub use split::{
    choose_strata, stratified_kfold, train_val_split, FoldPlan, InnerSplit, Stratification,
    DEFAULT_VALIDATION_FRACTION,
};
pub use standardize::{fit_standardizer, Dataset, EncodedColumn, StandardizerParams};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OutcomeScale;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("unknown column `{0}` not declared in the schema")]
    UnknownColumn(String),
    #[error("column `{0}` declared in the schema is absent from the file")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },
    #[error("column `{0}` is missing in every fitting row and cannot be imputed")]
    Unimputable(String),
    #[error("column `{0}` is constant in the training rows")]
    ConstantColumn(String),
    #[error("row {row}, column `{column}` is still missing; impute before standardizing")]
    MissingValue { row: usize, column: String },
    #[error("column `{column}` has level `{level}` unseen at fit time")]
    UnseenLevel { column: String, level: String },
    #[error("cannot split {rows} rows into {folds} folds")]
    TooFewRows { rows: usize, folds: usize },
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    /// Also the default; ignored for identifier and outcome columns.
    #[default]
    Continuous,
    /// Coded 0/1 in the file.
    Binary,
    /// Levels listed in `ColumnSpec::levels`; the first is the reference.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Covariate,
    Treatment,
    Outcome,
    Embedding,
    Identifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    #[serde(default)]
    pub kind: ColumnKind,
    pub role: ColumnRole,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<String>,
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, role: ColumnRole) -> Self {
        ColumnSpec {
            name: name.into(),
            kind,
            role,
            levels: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, levels: &[&str]) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Categorical,
            role: ColumnRole::Covariate,
            levels: levels.iter().map(|l| l.to_string()).collect(),
        }
    }

    /// Level names as they appear in files; binary columns are `0`/`1`.
    pub fn level_names(&self) -> Vec<String> {
        match self.kind {
            ColumnKind::Binary => vec!["0".into(), "1".into()],
            _ => self.levels.clone(),
        }
    }
}

/// Column declarations plus the outcome scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<ColumnSpec>,
    #[serde(default = "default_scale")]
    pub scale: OutcomeScale,
}

fn default_scale() -> OutcomeScale {
    OutcomeScale::MODIFIED_RANKIN
}

impl FeatureSchema {
    pub fn new(columns: Vec<ColumnSpec>, scale: OutcomeScale) -> Result<Self> {
        let schema = FeatureSchema { columns, scale };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        self.scale
            .validate()
            .map_err(|e| PreprocessError::Schema(e.to_string()))?;
        let mut seen = HashMap::new();
        for (i, c) in self.columns.iter().enumerate() {
            if seen.insert(c.name.as_str(), i).is_some() {
                return Err(PreprocessError::Schema(format!("duplicate column `{}`", c.name)));
            }
        }
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        if count(ColumnRole::Treatment) != 1 {
            return Err(PreprocessError::Schema(
                "exactly one treatment column is required".into(),
            ));
        }
        if count(ColumnRole::Outcome) != 1 {
            return Err(PreprocessError::Schema(
                "exactly one outcome column is required".into(),
            ));
        }
        if count(ColumnRole::Identifier) > 1 {
            return Err(PreprocessError::Schema(
                "at most one identifier column is allowed".into(),
            ));
        }
        let treatment = &self.columns[self.treatment_column()];
        if treatment.kind != ColumnKind::Binary {
            return Err(PreprocessError::Schema(format!(
                "treatment column `{}` must be binary",
                treatment.name
            )));
        }
        let emb: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Embedding)
            .map(|(i, _)| i)
            .collect();
        if emb.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(PreprocessError::Schema(
                "embedding columns must be contiguous".into(),
            ));
        }
        for &i in &emb {
            if self.columns[i].kind != ColumnKind::Continuous {
                return Err(PreprocessError::Schema(format!(
                    "embedding column `{}` must be continuous",
                    self.columns[i].name
                )));
            }
        }
        for c in &self.columns {
            if c.kind == ColumnKind::Categorical {
                let mut levels = c.levels.clone();
                levels.sort();
                levels.dedup();
                if levels.len() < 2 || levels.len() != c.levels.len() {
                    return Err(PreprocessError::Schema(format!(
                        "categorical column `{}` needs at least two distinct levels",
                        c.name
                    )));
                }
            } else if !c.levels.is_empty() {
                return Err(PreprocessError::Schema(format!(
                    "only categorical columns take levels (`{}`)",
                    c.name
                )));
            }
        }
        Ok(())
    }

    fn index_of_role(&self, role: ColumnRole) -> Option<usize> {
        self.columns.iter().position(|c| c.role == role)
    }

    pub fn treatment_column(&self) -> usize {
        self.index_of_role(ColumnRole::Treatment)
            .expect("validated schema has a treatment column")
    }

    pub fn outcome_column(&self) -> usize {
        self.index_of_role(ColumnRole::Outcome)
            .expect("validated schema has an outcome column")
    }

    pub fn identifier_column(&self) -> Option<usize> {
        self.index_of_role(ColumnRole::Identifier)
    }

    /// Schema indices of covariate columns, in declaration order.
    pub fn covariate_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Covariate)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn embedding_columns(&self) -> Vec<usize> {
        self.columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Embedding)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn covariate_specs(&self) -> Vec<&ColumnSpec> {
        self.covariate_columns()
            .into_iter()
            .map(|i| &self.columns[i])
            .collect()
    }
}

/// A covariate cell. Binary values are stored as `Number(0.0 | 1.0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Missing,
    Number(f64),
    /// Index into the column's declared levels.
    Level(usize),
}

impl Value {
    pub fn is_missing(&self) -> bool {
        matches!(self, Value::Missing)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub id: String,
    /// Aligned with [`FeatureSchema::covariate_columns`].
    pub covariates: Vec<Value>,
    pub treated: bool,
    pub outcome: usize,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortTable {
    pub schema: FeatureSchema,
    pub rows: Vec<PatientRow>,
}

impl CohortTable {
    pub fn new(schema: FeatureSchema, rows: Vec<PatientRow>) -> Result<Self> {
        schema.validate()?;
        if rows.is_empty() {
            return Err(PreprocessError::Invalid("cohort has no rows".into()));
        }
        let width = schema.covariate_columns().len();
        let max = schema.scale.classes - 1;
        let emb_dim = rows[0].embedding.as_ref().map(Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.covariates.len() != width {
                return Err(PreprocessError::Invalid(format!(
                    "row {} has {} covariates, schema declares {width}",
                    i + 1,
                    r.covariates.len()
                )));
            }
            if r.outcome > max {
                return Err(PreprocessError::Cell {
                    row: i + 1,
                    column: schema.columns[schema.outcome_column()].name.clone(),
                    message: format!("outcome {} outside the valid range 0–{max}", r.outcome),
                });
            }
            if r.embedding.as_ref().map(Vec::len) != emb_dim {
                return Err(PreprocessError::Invalid(format!(
                    "row {} has an embedding of inconsistent length",
                    i + 1
                )));
            }
        }
        Ok(CohortTable { schema, rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.rows.first().and_then(|r| r.embedding.as_ref().map(Vec::len))
    }

    pub fn outcomes(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.outcome).collect()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> CohortTable {
        CohortTable {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    pub fn missing_count(&self) -> usize {
        self.rows
            .iter()
            .flat_map(|r| &r.covariates)
            .filter(|v| v.is_missing())
            .count()
    }

    /// Attaches embedding vectors from a companion CSV keyed by patient id.
    /// The companion's first column is the id; the rest are `emb_0 … emb_{d−1}`.
    pub fn attach_embeddings(&mut self, path: &Path) -> Result<()> {
        let mut reader = open_csv(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(PreprocessError::Invalid(format!(
                "embedding file {} needs an id column and at least one embedding column",
                path.display()
            )));
        }
        let mut by_id: HashMap<String, Vec<f64>> = HashMap::new();
        for (i, record) in reader.records().enumerate() {
            let record = record?;
            let id = record.get(0).unwrap_or("").trim().to_string();
            let values = record
                .iter()
                .skip(1)
                .zip(&header[1..])
                .map(|(cell, column)| {
                    parse_number(cell).ok_or_else(|| PreprocessError::Cell {
                        row: i + 1,
                        column: column.clone(),
                        message: format!("cannot parse `{cell}` as a finite number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            by_id.insert(id, values);
        }
        for row in &mut self.rows {
            let e = by_id.get(&row.id).ok_or_else(|| {
                PreprocessError::Invalid(format!("no embedding for patient `{}`", row.id))
            })?;
            row.embedding = Some(e.clone());
        }
        Ok(())
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|source| PreprocessError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_binary(cell: &str) -> Option<f64> {
    match parse_number(cell) {
        Some(v) if v == 0.0 || v == 1.0 => Some(v),
        _ => None,
    }
}

/// Reads a cohort CSV (UTF-8, header row, empty cell = missing).
pub fn ingest_csv(path: &Path, schema: &FeatureSchema) -> Result<CohortTable> {
    schema.validate()?;
    let mut reader = open_csv(path)?;
    read_cohort(&mut reader, schema)
}

/// As [`ingest_csv`], from any reader.
pub fn ingest_reader<R: std::io::Read>(reader: R, schema: &FeatureSchema) -> Result<CohortTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    read_cohort(&mut reader, schema)
}

/// Writes `table` in the layout [`ingest_reader`] accepts: one column per
/// schema column, in schema order, with missing cells left empty.
pub fn write_cohort_csv<W: std::io::Write>(table: &CohortTable, writer: W) -> Result<()> {
    let schema = &table.schema;
    let mut out = csv::Writer::from_writer(writer);
    out.write_record(schema.columns.iter().map(|c| c.name.as_str()))?;
    let covariate_pos: HashMap<usize, usize> = schema
        .covariate_columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| (col, j))
        .collect();
    let embedding_pos: HashMap<usize, usize> = schema
        .embedding_columns()
        .into_iter()
        .enumerate()
        .map(|(j, col)| (col, j))
        .collect();
    for row in &table.rows {
        let mut record = Vec::with_capacity(schema.columns.len());
        for (col, spec) in schema.columns.iter().enumerate() {
            let field = match spec.role {
                ColumnRole::Identifier => row.id.clone(),
                ColumnRole::Treatment => u8::from(row.treated).to_string(),
                ColumnRole::Outcome => row.outcome.to_string(),
                ColumnRole::Embedding => row
                    .embedding
                    .as_ref()
                    .map(|e| e[embedding_pos[&col]].to_string())
                    .unwrap_or_default(),
                ColumnRole::Covariate => match row.covariates[covariate_pos[&col]] {
                    Value::Missing => String::new(),
                    Value::Number(v) => v.to_string(),
                    Value::Level(l) => spec.levels[l].clone(),
                },
            };
            record.push(field);
        }
        out.write_record(&record)?;
    }
    out.flush().map_err(|e| PreprocessError::Csv(e.into()))?;
    Ok(())
}

fn read_cohort<R: std::io::Read>(
    reader: &mut csv::Reader<R>,
    schema: &FeatureSchema,
) -> Result<CohortTable> {
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let declared: HashMap<&str, usize> = schema
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();
    for h in &header {
        if !declared.contains_key(h.as_str()) {
            return Err(PreprocessError::UnknownColumn(h.clone()));
        }
    }
    // schema column index → file position
    let mut position = vec![usize::MAX; schema.columns.len()];
    for (pos, h) in header.iter().enumerate() {
        position[declared[h.as_str()]] = pos;
    }
    for (i, c) in schema.columns.iter().enumerate() {
        if position[i] == usize::MAX {
            return Err(PreprocessError::MissingColumn(c.name.clone()));
        }
    }

    let covariates = schema.covariate_columns();
    let embeddings = schema.embedding_columns();
    let treatment = schema.treatment_column();
    let outcome = schema.outcome_column();
    let identifier = schema.identifier_column();
    let max_class = schema.scale.classes - 1;

    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = r + 1;
        let cell = |col: usize| record.get(position[col]).unwrap_or("").trim();
        let err = |col: usize, message: String| PreprocessError::Cell {
            row: row_no,
            column: schema.columns[col].name.clone(),
            message,
        };

        let raw_t = cell(treatment);
        if raw_t.is_empty() {
            return Err(err(treatment, "treatment must not be missing".into()));
        }
        let treated = parse_binary(raw_t)
            .ok_or_else(|| err(treatment, format!("`{raw_t}` is not 0 or 1")))?
            == 1.0;

        let raw_y = cell(outcome);
        if raw_y.is_empty() {
            return Err(err(outcome, "outcome must not be missing".into()));
        }
        let y = raw_y
            .parse::<i64>()
            .map_err(|_| err(outcome, format!("`{raw_y}` is not an integer class")))?;
        if y < 0 || y as usize > max_class {
            return Err(err(
                outcome,
                format!("outcome {y} outside the valid range 0–{max_class}"),
            ));
        }

        let id = match identifier {
            Some(col) if !cell(col).is_empty() => cell(col).to_string(),
            Some(col) => return Err(err(col, "identifier must not be empty".into())),
            None => row_no.to_string(),
        };

        let mut values = Vec::with_capacity(covariates.len());
        for &col in &covariates {
            let raw = cell(col);
            let spec = &schema.columns[col];
            let v = if raw.is_empty() {
                Value::Missing
            } else {
                match spec.kind {
                    ColumnKind::Continuous => Value::Number(
                        parse_number(raw)
                            .ok_or_else(|| err(col, format!("cannot parse `{raw}` as a number")))?,
                    ),
                    ColumnKind::Binary => Value::Number(
                        parse_binary(raw)
                            .ok_or_else(|| err(col, format!("`{raw}` is not 0 or 1")))?,
                    ),
                    ColumnKind::Categorical => Value::Level(
                        spec.levels.iter().position(|l| l == raw).ok_or_else(|| {
                            err(
                                col,
                                format!("`{raw}` is not one of the levels {:?}", spec.levels),
                            )
                        })?,
                    ),
                }
            };
            values.push(v);
        }

        let embedding = if embeddings.is_empty() {
            None
        } else {
            Some(
                embeddings
                    .iter()
                    .map(|&col| {
                        let raw = cell(col);
                        parse_number(raw)
                            .ok_or_else(|| err(col, format!("embedding value `{raw}` is invalid")))
                    })
                    .collect::<Result<Vec<f64>>>()?,
            )
        };

        rows.push(PatientRow {
            id,
            covariates: values,
            treated,
            outcome: y as usize,
            embedding,
        });
    }
    CohortTable::new(schema.clone(), rows)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn small_schema() -> FeatureSchema {
        FeatureSchema::new(
            vec![
                ColumnSpec::new("id", ColumnKind::Continuous, ColumnRole::Identifier),
                ColumnSpec::new("age", ColumnKind::Continuous, ColumnRole::Covariate),
                ColumnSpec::new("diabetes", ColumnKind::Binary, ColumnRole::Covariate),
                ColumnSpec::categorical("occlusion", &["ica", "m1", "m2"]),
                ColumnSpec::new("mt", ColumnKind::Binary, ColumnRole::Treatment),
                ColumnSpec::new("mrs", ColumnKind::Continuous, ColumnRole::Outcome),
            ],
            OutcomeScale::MODIFIED_RANKIN,
        )
        .unwrap()
    }

    #[test]
    fn ingests_well_formed_file() {
        let csv = "id,age,diabetes,occlusion,mt,mrs\n\
                   a,70,0,m1,1,2\n\
                   b,,1,ica,0,5\n\
                   c,55.5,,m2,1,0\n";
        let table = ingest_reader(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(table.len(), 3);
        assert_eq!(table.rows[0].covariates[0], Value::Number(70.0));
        assert_eq!(table.rows[0].covariates[2], Value::Level(1));
        // empty cell is missing, not zero
        assert_eq!(table.rows[1].covariates[0], Value::Missing);
        assert_eq!(table.rows[2].covariates[1], Value::Missing);
        assert!(table.rows[0].treated);
        assert_eq!(table.rows[1].outcome, 5);
        assert_eq!(table.rows[2].id, "c");
        assert_eq!(table.missing_count(), 2);
    }

    #[test]
    fn header_order_may_differ_from_schema() {
        let csv = "mrs,mt,occlusion,diabetes,age,id\n3,0,m2,1,61,z\n";
        let table = ingest_reader(csv.as_bytes(), &small_schema()).unwrap();
        assert_eq!(table.rows[0].covariates[0], Value::Number(61.0));
        assert_eq!(table.rows[0].outcome, 3);
    }

    #[test]
    fn outcome_out_of_range_cites_range() {
        let csv = "id,age,diabetes,occlusion,mt,mrs\na,70,0,m1,1,7\n";
        let err = ingest_reader(csv.as_bytes(), &small_schema()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0–6"), "{msg}");
        assert!(msg.contains("row 1"), "{msg}");
        assert!(msg.contains("mrs"), "{msg}");
    }

    #[test]
    fn ingestion_errors() {
        let schema = small_schema();
        let unknown = "id,age,diabetes,occlusion,mt,mrs,extra\na,1,0,m1,1,2,9\n";
        assert!(matches!(
            ingest_reader(unknown.as_bytes(), &schema),
            Err(PreprocessError::UnknownColumn(c)) if c == "extra"
        ));
        let missing_col = "id,age,diabetes,mt,mrs\na,1,0,1,2\n";
        assert!(matches!(
            ingest_reader(missing_col.as_bytes(), &schema),
            Err(PreprocessError::MissingColumn(c)) if c == "occlusion"
        ));
        let bad_cell = "id,age,diabetes,occlusion,mt,mrs\na,old,0,m1,1,2\n";
        assert!(matches!(
            ingest_reader(bad_cell.as_bytes(), &schema),
            Err(PreprocessError::Cell { row: 1, column, .. }) if column == "age"
        ));
        let bad_level = "id,age,diabetes,occlusion,mt,mrs\na,1,0,m3,1,2\n";
        assert!(ingest_reader(bad_level.as_bytes(), &schema).is_err());
        let no_treatment = "id,age,diabetes,occlusion,mt,mrs\na,1,0,m1,,2\n";
        assert!(matches!(
            ingest_reader(no_treatment.as_bytes(), &schema),
            Err(PreprocessError::Cell { column, .. }) if column == "mt"
        ));
        let no_outcome = "id,age,diabetes,occlusion,mt,mrs\na,1,0,m1,1,\n";
        assert!(ingest_reader(no_outcome.as_bytes(), &schema).is_err());
    }

    #[test]
    fn schema_validation() {
        let base = small_schema();
        let mut two_treatments = base.clone();
        two_treatments.columns[2].role = ColumnRole::Treatment;
        assert!(two_treatments.validate().is_err());
        let mut continuous_treatment = base.clone();
        continuous_treatment.columns[4].kind = ColumnKind::Continuous;
        assert!(continuous_treatment.validate().is_err());
        let mut dup = base.clone();
        dup.columns[1].name = "diabetes".into();
        assert!(dup.validate().is_err());
        let mut split_emb = base.clone();
        split_emb.columns.insert(1, ColumnSpec::new("emb_0", ColumnKind::Continuous, ColumnRole::Embedding));
        split_emb.columns.push(ColumnSpec::new("emb_1", ColumnKind::Continuous, ColumnRole::Embedding));
        assert!(split_emb.validate().is_err());
    }

    #[test]
    fn inline_and_companion_embeddings() {
        let mut schema = small_schema();
        schema.columns.push(ColumnSpec::new("emb_0", ColumnKind::Continuous, ColumnRole::Embedding));
        schema.columns.push(ColumnSpec::new("emb_1", ColumnKind::Continuous, ColumnRole::Embedding));
        let csv = "id,age,diabetes,occlusion,mt,mrs,emb_0,emb_1\na,70,0,m1,1,2,0.5,-1\n";
        let table = ingest_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(table.rows[0].embedding, Some(vec![0.5, -1.0]));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.csv");
        std::fs::write(&path, "id,emb_0,emb_1,emb_2\nb,1,2,3\na,4,5,6\n").unwrap();
        let csv = "id,age,diabetes,occlusion,mt,mrs\na,70,0,m1,1,2\nb,60,1,m2,0,4\n";
        let mut table = ingest_reader(csv.as_bytes(), &small_schema()).unwrap();
        table.attach_embeddings(&path).unwrap();
        assert_eq!(table.rows[0].embedding, Some(vec![4.0, 5.0, 6.0]));
        assert_eq!(table.embedding_dim(), Some(3));
    }

    #[test]
    fn written_csv_round_trips() {
        let mut schema = small_schema();
        schema.columns.push(ColumnSpec::new("emb_0", ColumnKind::Continuous, ColumnRole::Embedding));
        let csv = "id,age,diabetes,occlusion,mt,mrs,emb_0\n\
                   a,70.25,0,m1,1,2,0.1\n\
                   b,,1,,0,6,-3e-7\n";
        let table = ingest_reader(csv.as_bytes(), &schema).unwrap();
        let mut buf = Vec::new();
        write_cohort_csv(&table, &mut buf).unwrap();
        assert_eq!(ingest_reader(buf.as_slice(), &schema).unwrap(), table);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("id,age,diabetes,occlusion,mt,mrs,emb_0\na,70.25,0,m1,1,2,0.1\n"));
    }
}
