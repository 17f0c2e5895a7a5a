use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{CohortTable, ColumnKind, ColumnSpec, PreprocessError, Result, Value};

pub const DEFAULT_NEIGHBORS: usize = 5;

/// k-nearest-neighbour imputer whose donors are the rows it was fitted on.
///
/// Distances use every covariate observed in both rows: continuous columns
/// contribute the squared difference in donor-standardized units, binary and
/// categorical columns a 0/1 mismatch. The sum is rescaled by
/// `columns / shared columns` so rows with gaps stay comparable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnImputer {
    k: usize,
    specs: Vec<ColumnSpec>,
    /// Per-column scale for distances (population SD, 1 when degenerate).
    scales: Vec<f64>,
    donors: Vec<Vec<Value>>,
}

impl KnnImputer {
    pub fn fit(table: &CohortTable, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(PreprocessError::Invalid("k must be positive".into()));
        }
        let specs: Vec<ColumnSpec> = table.schema.covariate_specs().into_iter().cloned().collect();
        let donors: Vec<Vec<Value>> = table.rows.iter().map(|r| r.covariates.clone()).collect();
        let mut scales = Vec::with_capacity(specs.len());
        for (j, spec) in specs.iter().enumerate() {
            let observed: Vec<f64> = donors
                .iter()
                .filter_map(|d| match d[j] {
                    Value::Number(v) => Some(v),
                    _ => None,
                })
                .collect();
            let any = donors.iter().any(|d| !d[j].is_missing());
            if !any {
                return Err(PreprocessError::Unimputable(spec.name.clone()));
            }
            let scale = if spec.kind == ColumnKind::Continuous {
                let n = observed.len() as f64;
                let mean = observed.iter().sum::<f64>() / n;
                let var = observed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            } else {
                1.0
            };
            scales.push(scale);
        }
        Ok(KnnImputer {
            k,
            specs,
            scales,
            donors,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn donor_count(&self) -> usize {
        self.donors.len()
    }

    fn distance(&self, a: &[Value], b: &[Value]) -> f64 {
        let mut sum = 0.0;
        let mut shared = 0usize;
        for (j, (x, y)) in a.iter().zip(b).enumerate() {
            let d = match (x, y) {
                (Value::Number(x), Value::Number(y)) => {
                    if self.specs[j].kind == ColumnKind::Continuous {
                        ((x - y) / self.scales[j]).powi(2)
                    } else if x == y {
                        0.0
                    } else {
                        1.0
                    }
                }
                (Value::Level(x), Value::Level(y)) => {
                    if x == y {
                        0.0
                    } else {
                        1.0
                    }
                }
                _ => continue,
            };
            sum += d;
            shared += 1;
        }
        if shared == 0 {
            f64::INFINITY
        } else {
            (sum * a.len() as f64 / shared as f64).sqrt()
        }
    }

    /// Fills every missing covariate of `table` from the fitted donors.
    pub fn transform(&self, table: &CohortTable) -> Result<CohortTable> {
        let specs = table.schema.covariate_specs();
        if specs.len() != self.specs.len()
            || specs.iter().zip(&self.specs).any(|(a, b)| a.name != b.name || a.kind != b.kind)
        {
            return Err(PreprocessError::Invalid(
                "table covariates do not match the imputer's".into(),
            ));
        }
        let mut out = table.clone();
        for row in &mut out.rows {
            if !row.covariates.iter().any(Value::is_missing) {
                continue;
            }
            let original = row.covariates.clone();
            let distances: Vec<f64> = self
                .donors
                .iter()
                .map(|d| self.distance(&original, d))
                .collect();
            for (j, value) in row.covariates.iter_mut().enumerate() {
                if !value.is_missing() {
                    continue;
                }
                let mut candidates: Vec<usize> = (0..self.donors.len())
                    .filter(|&d| !self.donors[d][j].is_missing())
                    .collect();
                if candidates.is_empty() {
                    return Err(PreprocessError::Unimputable(self.specs[j].name.clone()));
                }
                candidates.sort_by(|&a, &b| {
                    distances[a]
                        .partial_cmp(&distances[b])
                        .unwrap_or(Ordering::Equal)
                        .then(a.cmp(&b))
                });
                candidates.truncate(self.k);
                let neighbours: Vec<Value> =
                    candidates.iter().map(|&d| self.donors[d][j]).collect();
                *value = self.aggregate(j, &neighbours);
            }
        }
        Ok(out)
    }

    fn aggregate(&self, column: usize, neighbours: &[Value]) -> Value {
        let spec = &self.specs[column];
        match spec.kind {
            ColumnKind::Continuous => {
                let sum: f64 = neighbours
                    .iter()
                    .map(|v| match v {
                        Value::Number(x) => *x,
                        _ => 0.0,
                    })
                    .sum();
                Value::Number(sum / neighbours.len() as f64)
            }
            ColumnKind::Binary | ColumnKind::Categorical => {
                let names = spec.level_names();
                let mut counts = vec![0usize; names.len()];
                for v in neighbours {
                    match v {
                        Value::Level(l) => counts[*l] += 1,
                        Value::Number(x) => counts[*x as usize] += 1,
                        Value::Missing => {}
                    }
                }
                let best = counts.iter().copied().max().unwrap_or(0);
                // ties go to the lexicographically smallest level name
                let level = (0..names.len())
                    .filter(|&l| counts[l] == best)
                    .min_by(|&a, &b| names[a].cmp(&names[b]))
                    .unwrap_or(0);
                if spec.kind == ColumnKind::Binary {
                    Value::Number(level as f64)
                } else {
                    Value::Level(level)
                }
            }
        }
    }
}

/// Imputes `table` using its own rows as donors.
pub fn knn_impute(table: &CohortTable, k: usize) -> Result<CohortTable> {
    if table.missing_count() == 0 {
        return Ok(table.clone());
    }
    KnnImputer::fit(table, k)?.transform(table)
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_schema;
    use super::super::PatientRow;
    use super::*;

    fn row(id: &str, cov: Vec<Value>) -> PatientRow {
        PatientRow {
            id: id.into(),
            covariates: cov,
            treated: false,
            outcome: 0,
            embedding: None,
        }
    }

    fn table(rows: Vec<PatientRow>) -> CohortTable {
        CohortTable::new(small_schema(), rows).unwrap()
    }

    use Value::{Level as L, Missing as M, Number as N};

    #[test]
    fn complete_table_unchanged() {
        let t = table(vec![
            row("a", vec![N(60.0), N(1.0), L(0)]),
            row("b", vec![N(70.0), N(0.0), L(2)]),
        ]);
        assert_eq!(knn_impute(&t, 1).unwrap(), t);
        let imputer = KnnImputer::fit(&t, 3).unwrap();
        assert_eq!(imputer.transform(&t).unwrap(), t);
    }

    #[test]
    fn nearest_neighbour_copies_age() {
        // Row d matches b on diabetes and occlusion; a and c differ on both.
        let t = table(vec![
            row("a", vec![N(50.0), N(0.0), L(0)]),
            row("b", vec![N(80.0), N(1.0), L(2)]),
            row("c", vec![N(65.0), N(0.0), L(1)]),
            row("d", vec![M, N(1.0), L(2)]),
        ]);
        let out = knn_impute(&t, 1).unwrap();
        assert_eq!(out.rows[3].covariates[0], N(80.0));
        assert_eq!(out.rows[..3], t.rows[..3]);
    }

    #[test]
    fn mode_of_three_neighbours() {
        // Ages put rows b, c, d closest to e; their diabetes values are 1, 1, 0.
        let t = table(vec![
            row("a", vec![N(20.0), N(0.0), L(0)]),
            row("b", vec![N(61.0), N(1.0), L(0)]),
            row("c", vec![N(59.0), N(1.0), L(0)]),
            row("d", vec![N(62.0), N(0.0), L(0)]),
            row("e", vec![N(60.0), M, L(0)]),
            row("f", vec![N(95.0), N(0.0), L(0)]),
        ]);
        let out = knn_impute(&t, 3).unwrap();
        assert_eq!(out.rows[4].covariates[1], N(1.0));
    }

    #[test]
    fn continuous_mean_and_categorical_tie_break() {
        let t = table(vec![
            row("a", vec![N(60.0), N(0.0), L(2)]),
            row("b", vec![N(60.0), N(0.0), L(1)]),
            row("c", vec![M, N(0.0), M]),
        ]);
        let out = knn_impute(&t, 2).unwrap();
        assert_eq!(out.rows[2].covariates[0], N(60.0));
        // one vote each for m2 and m1 → "m1" sorts first
        assert_eq!(out.rows[2].covariates[2], L(1));
    }

    #[test]
    fn donors_restricted_to_fitting_rows() {
        let train = table(vec![
            row("a", vec![N(50.0), N(0.0), L(0)]),
            row("b", vec![N(52.0), N(0.0), L(0)]),
        ]);
        let held_out = table(vec![
            row("x", vec![N(90.0), N(1.0), L(1)]),
            row("y", vec![M, N(1.0), L(1)]),
        ]);
        let imputer = KnnImputer::fit(&train, 1).unwrap();
        let out = imputer.transform(&held_out).unwrap();
        // x would be the nearest row, but it is not a donor
        assert!(matches!(out.rows[1].covariates[0], N(v) if v == 50.0 || v == 52.0));
    }

    #[test]
    fn column_missing_everywhere_is_unimputable() {
        let t = table(vec![
            row("a", vec![M, N(0.0), L(0)]),
            row("b", vec![M, N(1.0), L(1)]),
        ]);
        assert!(matches!(
            knn_impute(&t, 1),
            Err(PreprocessError::Unimputable(c)) if c == "age"
        ));
    }

    #[test]
    fn idempotent_on_imputed_output() {
        let t = table(vec![
            row("a", vec![N(50.0), N(0.0), L(0)]),
            row("b", vec![N(80.0), M, L(2)]),
            row("c", vec![M, N(1.0), L(1)]),
        ]);
        let once = knn_impute(&t, 2).unwrap();
        assert_eq!(knn_impute(&once, 2).unwrap(), once);
    }
}
