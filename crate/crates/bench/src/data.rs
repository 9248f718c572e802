//! CSV ingestion and preprocessing: continuous columns are min-max scaled to
//! `[0,1]`, categorical columns label-encoded then scaled the same way, all
//! with statistics of the training split only.

use std::path::Path;

use hrf_core::forest::Targets;
use hrf_core::Dataset;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ColumnKind, Schema};
use crate::error::BenchError;

/// String cells in schema column order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub schema: Schema,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }
}

fn clean(cell: &str) -> String {
    cell.trim().to_string()
}

/// Reads the schema's columns from a CSV file. With a header row columns
/// are matched by name; without one, by position.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<RawTable, BenchError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(schema.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?;
    let positions: Vec<usize> = if schema.header {
        let header = reader
            .headers()
            .map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?
            .clone();
        schema
            .columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c.name)
                    .ok_or_else(|| BenchError::Data(format!("unknown column `{}` in {}", c.name, path.display())))
            })
            .collect::<Result<_, _>>()?
    } else {
        (0..schema.columns.len()).collect()
    };
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| BenchError::Data(format!("{}: {e}", path.display())))?;
        // blank trailing lines and comment rows
        if record.iter().all(|c| c.is_empty()) || record.get(0).is_some_and(|c| c.starts_with('|')) {
            continue;
        }
        let row = positions
            .iter()
            .map(|&p| {
                record.get(p).map(clean).ok_or_else(|| {
                    BenchError::Data(format!("{}: record {} has no column {p}", path.display(), i + 1))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(BenchError::Data(format!("{} has no data rows", path.display())));
    }
    Ok(RawTable {
        schema: schema.clone(),
        rows,
    })
}

/// Labels differ across Adult files only by a trailing period.
fn label_key(cell: &str) -> String {
    cell.trim().trim_end_matches('.').to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Continuous { column: usize, min: f64, max: f64 },
    /// Codes in sorted category order, scaled by `codes - 1`.
    Categorical { column: usize, categories: Vec<String> },
}

/// Train-split statistics of every feature column plus the label map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub feature_names: Vec<String>,
    pub transforms: Vec<ColumnTransform>,
    pub label_column: usize,
    /// Class index -> label.
    pub classes: Vec<String>,
}

/// Value of a category not seen in training: the top of the range,
/// outside which no encrypted input may lie.
pub const UNSEEN_CATEGORY: f64 = 1.0;

impl Preprocessor {
    pub fn fit(train: &RawTable) -> Result<Self, BenchError> {
        let schema = &train.schema;
        let mut names = Vec::new();
        let mut transforms = Vec::new();
        let mut label_column = None;
        for (j, col) in schema.columns.iter().enumerate() {
            match col.kind {
                ColumnKind::Continuous => {
                    let mut min = f64::INFINITY;
                    let mut max = f64::NEG_INFINITY;
                    for (i, row) in train.rows.iter().enumerate() {
                        let v = parse_number(&row[j], i, &col.name)?;
                        min = min.min(v);
                        max = max.max(v);
                    }
                    names.push(col.name.clone());
                    transforms.push(ColumnTransform::Continuous { column: j, min, max });
                }
                ColumnKind::Categorical => {
                    let mut categories: Vec<String> = train.rows.iter().map(|r| r[j].clone()).collect();
                    categories.sort_unstable();
                    categories.dedup();
                    names.push(col.name.clone());
                    transforms.push(ColumnTransform::Categorical { column: j, categories });
                }
                ColumnKind::Label => label_column = Some(j),
                ColumnKind::Ignore => {}
            }
        }
        let label_column = label_column.ok_or_else(|| BenchError::Config("schema has no label column".into()))?;
        let mut classes: Vec<String> = train.rows.iter().map(|r| label_key(&r[label_column])).collect();
        classes.sort_unstable();
        classes.dedup();
        if let Some(pos) = &schema.positive_label {
            let pos = label_key(pos);
            let Some(at) = classes.iter().position(|c| *c == pos) else {
                return Err(BenchError::Data(format!("positive label `{pos}` absent from the training split")));
            };
            if classes.len() == 2 {
                classes.swap(at, 1);
            }
        }
        if classes.len() < 2 {
            return Err(BenchError::Data(format!("need at least two classes, found {classes:?}")));
        }
        Ok(Self {
            feature_names: names,
            transforms,
            label_column,
            classes,
        })
    }

    pub fn n_features(&self) -> usize {
        self.transforms.len()
    }

    /// Scaled features of one row, clipped to `[0,1]`. Returns the number of
    /// unseen categories met.
    pub fn transform_row(&self, row: &[String], line: usize) -> Result<(Vec<f64>, usize), BenchError> {
        let mut unseen = 0;
        let mut out = Vec::with_capacity(self.transforms.len());
        for (t, name) in self.transforms.iter().zip(&self.feature_names) {
            let v = match t {
                ColumnTransform::Continuous { column, min, max } => {
                    let x = parse_number(&row[*column], line, name)?;
                    if max > min {
                        (x - min) / (max - min)
                    } else {
                        0.0
                    }
                }
                ColumnTransform::Categorical { column, categories } => {
                    match categories.binary_search(&row[*column]) {
                        Ok(code) if categories.len() > 1 => code as f64 / (categories.len() - 1) as f64,
                        Ok(_) => 0.0,
                        Err(_) => {
                            unseen += 1;
                            UNSEEN_CATEGORY
                        }
                    }
                }
            };
            out.push(v.clamp(0.0, 1.0));
        }
        Ok((out, unseen))
    }

    pub fn label(&self, row: &[String], line: usize) -> Result<usize, BenchError> {
        let key = label_key(&row[self.label_column]);
        self.classes
            .iter()
            .position(|c| *c == key)
            .ok_or_else(|| BenchError::Data(format!("row {line}: unknown label `{key}`")))
    }

    pub fn transform(&self, table: &RawTable) -> Result<Dataset, BenchError> {
        let d = self.n_features();
        let mut features = Array2::zeros((table.len(), d));
        let mut labels = Vec::with_capacity(table.len());
        let mut unseen = 0;
        for (i, row) in table.rows.iter().enumerate() {
            let (x, u) = self.transform_row(row, i + 1)?;
            unseen += u;
            features.row_mut(i).assign(&ndarray::Array1::from(x));
            labels.push(self.label(row, i + 1)?);
        }
        if unseen > 0 {
            log::warn!("{unseen} cells held categories unseen in training; mapped to the reserved value {UNSEEN_CATEGORY}");
        }
        Dataset::new(
            features,
            Targets::Classes {
                labels,
                classes: self.classes.len(),
            },
            self.feature_names.clone(),
        )
        .map_err(|e| BenchError::Data(e.to_string()))
    }
}

fn parse_number(cell: &str, line: usize, column: &str) -> Result<f64, BenchError> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| BenchError::Data(format!("row {line}, column `{column}`: non-numeric value `{cell}`")))
}

/// Seeded shuffle split into (train, validation) row indices.
pub fn split_indices(rows: usize, validation_ratio: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..rows).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = ((rows as f64 * validation_ratio).round() as usize).clamp(1, rows.saturating_sub(1));
    let val = idx.split_off(rows - n_val);
    (idx, val)
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub preprocessor: Preprocessor,
    pub train: Dataset,
    pub validation: Dataset,
}

pub fn prepare(table: &RawTable, validation_ratio: f64, seed: u64) -> Result<Prepared, BenchError> {
    if table.len() < 2 {
        return Err(BenchError::Data("need at least two rows to split".into()));
    }
    let (train_idx, val_idx) = split_indices(table.len(), validation_ratio, seed);
    let train_raw = table.subset(&train_idx);
    let preprocessor = Preprocessor::fit(&train_raw)?;
    Ok(Prepared {
        train: preprocessor.transform(&train_raw)?,
        validation: preprocessor.transform(&table.subset(&val_idx))?,
        preprocessor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ColumnSpec;
    use std::io::Write;

    fn schema() -> Schema {
        Schema {
            columns: vec![
                ColumnSpec { name: "num".into(), kind: ColumnKind::Continuous },
                ColumnSpec { name: "cat".into(), kind: ColumnKind::Categorical },
                ColumnSpec { name: "skip".into(), kind: ColumnKind::Ignore },
                ColumnSpec { name: "y".into(), kind: ColumnKind::Label },
            ],
            header: true,
            positive_label: Some(">50K".into()),
        }
    }

    fn table(rows: &[[&str; 4]]) -> RawTable {
        RawTable {
            schema: schema(),
            rows: rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect(),
        }
    }

    #[test]
    fn min_max_and_label_encoding() {
        let t = table(&[["10", "b", "?", ">50K"], ["20", "a", "?", "<=50K"], ["30", "c", "?", ">50K."]]);
        let p = Preprocessor::fit(&t).unwrap();
        let d = p.transform(&t).unwrap();
        let col = |j: usize| d.features().column(j).to_vec();
        assert_eq!(col(0), vec![0.0, 0.5, 1.0]);
        assert_eq!(col(1), vec![0.5, 0.0, 1.0]);
        assert_eq!(d.labels().unwrap(), &[1, 0, 1]);
        assert_eq!(p.classes, vec!["<=50K".to_string(), ">50K".to_string()]);
    }

    #[test]
    fn validation_uses_training_statistics() {
        let train = table(&[["0", "a", "", "x"], ["10", "b", "", "y"]]);
        let p = Preprocessor::fit(&RawTable {
            schema: Schema { positive_label: None, ..schema() },
            rows: train.rows.clone(),
        })
        .unwrap();
        let val = vec!["5".to_string(), "zzz".into(), "".into(), "y".into()];
        let (x, unseen) = p.transform_row(&val, 1).unwrap();
        assert_eq!(x, vec![0.5, UNSEEN_CATEGORY]);
        assert_eq!(unseen, 1);
        // out-of-range values are clipped
        let (x, _) = p.transform_row(&["25".into(), "a".into(), "".into(), "x".into()], 1).unwrap();
        assert_eq!(x, vec![1.0, 0.0]);
    }

    #[test]
    fn errors_are_reported() {
        let t = table(&[["ten", "a", "", ">50K"], ["1", "b", "", "<=50K"]]);
        assert!(matches!(Preprocessor::fit(&t), Err(BenchError::Data(m)) if m.contains("non-numeric")));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "num,cat,y").unwrap();
        writeln!(f, "1,a,>50K").unwrap();
        assert!(matches!(load_csv(f.path(), &schema()), Err(BenchError::Data(m)) if m.contains("unknown column")));
    }

    #[test]
    fn csv_with_and_without_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "y,num,cat,skip").unwrap();
        writeln!(f, ">50K, 1.5, a, q").unwrap();
        writeln!(f).unwrap();
        writeln!(f, "<=50K, 2.5, b, q").unwrap();
        let t = load_csv(f.path(), &schema()).unwrap();
        assert_eq!(t.rows, vec![vec!["1.5", "a", "q", ">50K"], vec!["2.5", "b", "q", "<=50K"]]);

        let mut g = tempfile::NamedTempFile::new().unwrap();
        writeln!(g, "3, c, q, >50K.").unwrap();
        let t = load_csv(g.path(), &Schema { header: false, ..schema() }).unwrap();
        assert_eq!(t.rows, vec![vec!["3", "c", "q", ">50K."]]);
    }

    #[test]
    fn split_is_a_seeded_partition() {
        let (a, b) = split_indices(100, 0.2, 3);
        assert_eq!((a.len(), b.len()), (80, 20));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_eq!(split_indices(100, 0.2, 3), (a, b));
        assert_ne!(split_indices(100, 0.2, 4).1, split_indices(100, 0.2, 3).1);
    }
}
