use serde::{Deserialize, Serialize};

use super::{CohortTable, ColumnKind, ColumnRole, FeatureSchema, PreprocessError, Result, Value};
use crate::model::{Observation, OutcomeScale};

/// One schema column's contribution to the design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncodedColumn {
    /// `(x − mean) / sd`, population SD.
    Continuous { name: String, mean: f64, sd: f64 },
    /// Passed through as 0/1.
    Binary { name: String },
    /// One dummy per non-reference level.
    Categorical {
        name: String,
        levels: Vec<String>,
        reference: String,
    },
    /// The treatment indicator, passed through as 0/1.
    Treatment { name: String },
}

impl EncodedColumn {
    pub fn name(&self) -> &str {
        match self {
            EncodedColumn::Continuous { name, .. }
            | EncodedColumn::Binary { name }
            | EncodedColumn::Categorical { name, .. }
            | EncodedColumn::Treatment { name } => name,
        }
    }

    fn feature_names(&self) -> Vec<String> {
        match self {
            EncodedColumn::Categorical {
                name,
                levels,
                reference,
            } => levels
                .iter()
                .filter(|l| *l != reference)
                .map(|l| format!("{name}_{l}"))
                .collect(),
            other => vec![other.name().to_string()],
        }
    }
}

/// Fitted standardization and dummy layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizerParams {
    pub columns: Vec<EncodedColumn>,
}

/// Fits means and SDs on `table`, which must hold training rows only and be
/// fully imputed.
pub fn fit_standardizer(table: &CohortTable) -> Result<StandardizerParams> {
    let schema = &table.schema;
    let covariates = schema.covariate_columns();
    let mut columns = Vec::new();
    for (col, spec) in schema.columns.iter().enumerate() {
        match spec.role {
            ColumnRole::Treatment => columns.push(EncodedColumn::Treatment {
                name: spec.name.clone(),
            }),
            ColumnRole::Covariate => {
                let j = covariates.iter().position(|&c| c == col).expect("covariate");
                match spec.kind {
                    ColumnKind::Continuous => {
                        let mut values = Vec::with_capacity(table.len());
                        for (r, row) in table.rows.iter().enumerate() {
                            match row.covariates[j] {
                                Value::Number(v) => values.push(v),
                                _ => {
                                    return Err(PreprocessError::MissingValue {
                                        row: r + 1,
                                        column: spec.name.clone(),
                                    })
                                }
                            }
                        }
                        let n = values.len() as f64;
                        let mean = values.iter().sum::<f64>() / n;
                        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                        if !(var > 0.0) {
                            return Err(PreprocessError::ConstantColumn(spec.name.clone()));
                        }
                        columns.push(EncodedColumn::Continuous {
                            name: spec.name.clone(),
                            mean,
                            sd: var.sqrt(),
                        });
                    }
                    ColumnKind::Binary => columns.push(EncodedColumn::Binary {
                        name: spec.name.clone(),
                    }),
                    ColumnKind::Categorical => columns.push(EncodedColumn::Categorical {
                        name: spec.name.clone(),
                        levels: spec.levels.clone(),
                        reference: spec.levels[0].clone(),
                    }),
                }
            }
            _ => {}
        }
    }
    Ok(StandardizerParams { columns })
}

impl StandardizerParams {
    pub fn feature_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .flat_map(EncodedColumn::feature_names)
            .collect()
    }

    pub fn treatment_index(&self) -> usize {
        let mut offset = 0;
        for c in &self.columns {
            if matches!(c, EncodedColumn::Treatment { .. }) {
                return offset;
            }
            offset += c.feature_names().len();
        }
        unreachable!("standardizer always encodes the treatment column")
    }

    /// Builds the numeric design matrix for `table`.
    pub fn apply(&self, table: &CohortTable) -> Result<Dataset> {
        let schema = &table.schema;
        let covariates = schema.covariate_columns();
        let names = self.feature_names();
        let width = names.len();
        let mut features = Vec::with_capacity(width * table.len());

        // Resolve each encoded column against the table's schema once.
        let mut sources = Vec::with_capacity(self.columns.len());
        for enc in &self.columns {
            let col = schema
                .columns
                .iter()
                .position(|c| c.name == enc.name())
                .ok_or_else(|| PreprocessError::MissingColumn(enc.name().to_string()))?;
            let slot = covariates.iter().position(|&c| c == col);
            sources.push((col, slot));
        }

        for (r, row) in table.rows.iter().enumerate() {
            for (enc, &(col, slot)) in self.columns.iter().zip(&sources) {
                let value = || -> Result<Value> {
                    let slot = slot.ok_or_else(|| {
                        PreprocessError::Invalid(format!(
                            "column `{}` is not a covariate in this table",
                            enc.name()
                        ))
                    })?;
                    match row.covariates[slot] {
                        Value::Missing => Err(PreprocessError::MissingValue {
                            row: r + 1,
                            column: enc.name().to_string(),
                        }),
                        v => Ok(v),
                    }
                };
                match enc {
                    EncodedColumn::Treatment { .. } => {
                        features.push(if row.treated { 1.0 } else { 0.0 })
                    }
                    EncodedColumn::Continuous { mean, sd, .. } => match value()? {
                        Value::Number(v) => features.push((v - mean) / sd),
                        _ => return Err(kind_mismatch(enc)),
                    },
                    EncodedColumn::Binary { .. } => match value()? {
                        Value::Number(v) => features.push(v),
                        _ => return Err(kind_mismatch(enc)),
                    },
                    EncodedColumn::Categorical {
                        name,
                        levels,
                        reference,
                    } => {
                        let level = match value()? {
                            Value::Level(l) => schema.columns[col].levels[l].clone(),
                            _ => return Err(kind_mismatch(enc)),
                        };
                        if !levels.contains(&level) {
                            return Err(PreprocessError::UnseenLevel {
                                column: name.clone(),
                                level,
                            });
                        }
                        for l in levels.iter().filter(|l| *l != reference) {
                            features.push(if *l == level { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
        }

        let embeddings = table.embedding_dim().map(|_| {
            table
                .rows
                .iter()
                .map(|r| r.embedding.clone().unwrap_or_default())
                .collect()
        });

        Ok(Dataset {
            ids: table.rows.iter().map(|r| r.id.clone()).collect(),
            treatment_index: self.treatment_index(),
            feature_names: names,
            features,
            outcomes: table.outcomes(),
            treated: table.rows.iter().map(|r| r.treated).collect(),
            embeddings,
            scale: schema.scale,
        })
    }
}

fn kind_mismatch(enc: &EncodedColumn) -> PreprocessError {
    PreprocessError::Invalid(format!(
        "column `{}` has a different kind than at fit time",
        enc.name()
    ))
}

/// Numeric model input: standardized design matrix plus outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub feature_names: Vec<String>,
    /// Row-major, `len() × feature_names.len()`.
    pub features: Vec<f64>,
    pub outcomes: Vec<usize>,
    pub treated: Vec<bool>,
    pub treatment_index: usize,
    pub embeddings: Option<Vec<Vec<f64>>>,
    pub scale: OutcomeScale,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.features[i * w..(i + 1) * w]
    }

    pub fn embedding(&self, i: usize) -> Option<&[f64]> {
        self.embeddings.as_ref().map(|e| e[i].as_slice())
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        self.embeddings
            .as_ref()
            .and_then(|e| e.first().map(Vec::len))
    }

    pub fn favorable(&self, i: usize) -> bool {
        self.scale.is_favorable(self.outcomes[i])
    }

    pub fn observation(&self, i: usize) -> Observation<'_> {
        Observation {
            features: self.row(i),
            embedding: self.embedding(i),
            class: self.outcomes[i],
        }
    }

    pub fn observations(&self, indices: &[usize]) -> Vec<Observation<'_>> {
        indices.iter().map(|&i| self.observation(i)).collect()
    }

    pub fn all_observations(&self) -> Vec<Observation<'_>> {
        (0..self.len()).map(|i| self.observation(i)).collect()
    }

    /// Copy without the embedding block (clinical-only view).
    pub fn without_embeddings(&self) -> Dataset {
        Dataset {
            embeddings: None,
            ..self.clone()
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.width());
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Dataset {
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            feature_names: self.feature_names.clone(),
            features,
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            treated: indices.iter().map(|&i| self.treated[i]).collect(),
            treatment_index: self.treatment_index,
            embeddings: self
                .embeddings
                .as_ref()
                .map(|e| indices.iter().map(|&i| e[i].clone()).collect()),
            scale: self.scale,
        }
    }
}

// Convenience for callers holding the schema but not yet a table.
impl FeatureSchema {
    pub fn encoded_feature_count(&self) -> usize {
        self.columns
            .iter()
            .map(|c| match (c.role, c.kind) {
                (ColumnRole::Treatment, _) => 1,
                (ColumnRole::Covariate, ColumnKind::Categorical) => c.levels.len() - 1,
                (ColumnRole::Covariate, _) => 1,
                _ => 0,
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_schema;
    use super::super::{ingest_reader, PatientRow};
    use super::*;

    fn table(rows: &[(f64, f64, usize, bool)]) -> CohortTable {
        CohortTable::new(
            small_schema(),
            rows.iter()
                .enumerate()
                .map(|(i, &(age, diab, occ, t))| PatientRow {
                    id: i.to_string(),
                    covariates: vec![Value::Number(age), Value::Number(diab), Value::Level(occ)],
                    treated: t,
                    outcome: i % 7,
                    embedding: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_point_statistics() {
        let t = table(&[(0.0, 0.0, 0, false), (2.0, 1.0, 1, true)]);
        let p = fit_standardizer(&t).unwrap();
        assert_eq!(
            p.columns[0],
            EncodedColumn::Continuous {
                name: "age".into(),
                mean: 1.0,
                sd: 1.0
            }
        );
    }

    #[test]
    fn layout_and_treatment_passthrough() {
        let t = table(&[(50.0, 0.0, 0, false), (70.0, 1.0, 2, true), (60.0, 1.0, 1, true)]);
        let p = fit_standardizer(&t).unwrap();
        assert_eq!(
            p.feature_names(),
            vec!["age", "diabetes", "occlusion_m1", "occlusion_m2", "mt"]
        );
        assert_eq!(p.treatment_index(), 4);
        let d = p.apply(&t).unwrap();
        assert!((d.row(0)[0] + 10.0 / (200.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(d.row(0)[1..], [0.0, 0.0, 0.0, 0.0]);
        assert_eq!(d.row(1)[1..], [1.0, 0.0, 1.0, 1.0]);
        assert_eq!(d.row(2)[0], 0.0);
        assert_eq!(d.row(2)[2..], [1.0, 0.0, 1.0]);
        assert_eq!(t.schema.encoded_feature_count(), 5);
    }

    #[test]
    fn reference_coding_of_two_level_categorical() {
        let mut schema = small_schema();
        schema.columns[3].levels = vec!["no".into(), "yes".into()];
        let csv = "id,age,diabetes,occlusion,mt,mrs\na,1,0,no,1,2\nb,3,1,yes,0,4\n";
        let t = ingest_reader(csv.as_bytes(), &schema).unwrap();
        let p = fit_standardizer(&t).unwrap();
        assert!(p.feature_names().contains(&"occlusion_yes".to_string()));
        assert!(!p.feature_names().contains(&"occlusion_no".to_string()));
    }

    #[test]
    fn training_rows_have_zero_mean_unit_sd() {
        let t = table(&[
            (43.0, 0.0, 0, false),
            (77.5, 1.0, 1, true),
            (61.0, 0.0, 2, true),
            (58.25, 1.0, 0, false),
        ]);
        let d = fit_standardizer(&t).unwrap().apply(&t).unwrap();
        let col: Vec<f64> = (0..d.len()).map(|i| d.row(i)[0]).collect();
        let mean = col.iter().sum::<f64>() / 4.0;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert!((sd - 1.0).abs() < 1e-10);
    }

    #[test]
    fn held_out_row_uses_training_params() {
        let train = table(&[(40.0, 0.0, 0, false), (60.0, 1.0, 1, true)]);
        let test = table(&[(65.0, 1.0, 2, false)]);
        let p = fit_standardizer(&train).unwrap();
        let d = p.apply(&test).unwrap();
        // mean 50, population sd 10
        assert!((d.row(0)[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let constant = table(&[(5.0, 0.0, 0, false), (5.0, 1.0, 1, true)]);
        assert!(matches!(
            fit_standardizer(&constant),
            Err(PreprocessError::ConstantColumn(c)) if c == "age"
        ));
        let mut missing = table(&[(5.0, 0.0, 0, false), (6.0, 1.0, 1, true)]);
        missing.rows[1].covariates[0] = Value::Missing;
        assert!(matches!(
            fit_standardizer(&missing),
            Err(PreprocessError::MissingValue { row: 2, .. })
        ));
        let train = table(&[(5.0, 0.0, 0, false), (6.0, 1.0, 1, true)]);
        let p = fit_standardizer(&train).unwrap();
        let mut wider = small_schema();
        wider.columns[3].levels.push("basilar".into());
        let other = CohortTable::new(
            wider,
            vec![PatientRow {
                id: "x".into(),
                covariates: vec![Value::Number(5.0), Value::Number(0.0), Value::Level(3)],
                treated: false,
                outcome: 0,
                embedding: None,
            }],
        )
        .unwrap();
        assert!(matches!(
            p.apply(&other),
            Err(PreprocessError::UnseenLevel { level, .. }) if level == "basilar"
        ));
    }
}
