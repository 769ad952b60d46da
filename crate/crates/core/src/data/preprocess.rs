use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::csv::{Cell, RawTable};
use super::DataError;
use crate::mlp::Matrix;

/// Fraction of rows assigned to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Minimum row count so both splits are non-empty.
pub const MIN_ROWS: usize = 5;

/// A preprocessed, immutable dataset ready for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dataset_id: String,
    pub label_column: String,
    pub feature_names: Vec<String>,
    pub class_names: Vec<String>,
    /// Row-major, every value in `[0, 1]`.
    pub features: Matrix,
    /// Row-major one-hot encoding over `class_names`.
    pub labels_one_hot: Matrix,
    pub column_mins: Vec<f64>,
    pub column_maxs: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.features.rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// `(features, labels)` of the training rows.
    pub fn train_split(&self) -> (Matrix, Matrix) {
        (
            self.features.select_rows(&self.train_indices),
            self.labels_one_hot.select_rows(&self.train_indices),
        )
    }

    /// `(features, labels)` of the test rows.
    pub fn test_split(&self) -> (Matrix, Matrix) {
        (
            self.features.select_rows(&self.test_indices),
            self.labels_one_hot.select_rows(&self.test_indices),
        )
    }

    /// Class token of a row.
    pub fn label_of(&self, row: usize) -> &str {
        let hot = self
            .labels_one_hot
            .row(row)
            .iter()
            .position(|&v| v == 1.0)
            .expect("one-hot row");
        &self.class_names[hot]
    }
}

/// Index of the first training row in a split of `n` rows.
pub fn train_size(n: usize) -> usize {
    (TRAIN_FRACTION * n as f64).floor() as usize
}

/// Turns a parsed table into a [`Dataset`].
///
/// Steps run in a fixed order: missing feature cells are filled with 0,
/// each feature column is min-max scaled over the whole table (a constant
/// column becomes all zeros), labels are one-hot encoded in first-appearance
/// order, and the shuffled row indices are cut at `floor(0.8 n)`.
///
/// A filled 0 is scaled like any other value, so it lands above 0 when the
/// column minimum is negative. Scaling uses whole-table statistics, so test
/// rows influence the bounds.
pub fn preprocess(
    table: &RawTable,
    label_column: &str,
    split_seed: u64,
) -> Result<Dataset, DataError> {
    let label_idx = table
        .column_index(label_column)
        .ok_or_else(|| DataError::UnknownLabel(label_column.to_string()))?;
    if table.n_cols() < 2 {
        return Err(DataError::TooFewColumns(table.n_cols()));
    }
    let n = table.n_rows();
    if n < MIN_ROWS {
        return Err(DataError::TooFewRows { rows: n, min: MIN_ROWS });
    }

    let feature_cols: Vec<usize> = (0..table.n_cols()).filter(|&c| c != label_idx).collect();
    let n_features = feature_cols.len();

    // (1) fill
    let mut raw = Matrix::zeros(n, n_features);
    let mut labels = Vec::with_capacity(n);
    for (r, row) in table.rows.iter().enumerate() {
        for (f, &c) in feature_cols.iter().enumerate() {
            let v = match &row[c] {
                Cell::Number(v) => *v,
                Cell::Missing => 0.0,
                Cell::Text(t) => {
                    return Err(DataError::Format {
                        row: Some(r + 1),
                        column: Some(table.header[c].clone()),
                        message: format!("non-numeric value `{t}` in feature column"),
                    })
                }
            };
            raw.set(r, f, v);
        }
        labels.push(match &row[label_idx] {
            Cell::Text(t) => t.clone(),
            Cell::Number(v) => v.to_string(),
            Cell::Missing => {
                return Err(DataError::InvalidRow {
                    row: r + 1,
                    message: format!("missing value in label column `{label_column}`"),
                })
            }
        });
    }

    // (2) scale
    let mut column_mins = vec![f64::INFINITY; n_features];
    let mut column_maxs = vec![f64::NEG_INFINITY; n_features];
    for r in 0..n {
        for (f, &v) in raw.row(r).iter().enumerate() {
            column_mins[f] = column_mins[f].min(v);
            column_maxs[f] = column_maxs[f].max(v);
        }
    }
    let mut features = raw;
    for r in 0..n {
        for (f, v) in features.row_mut(r).iter_mut().enumerate() {
            *v = scale(*v, column_mins[f], column_maxs[f]);
        }
    }

    // (3) one-hot
    let mut class_names: Vec<String> = Vec::new();
    let mut class_of_row = Vec::with_capacity(n);
    for label in &labels {
        let idx = match class_names.iter().position(|c| c == label) {
            Some(i) => i,
            None => {
                class_names.push(label.clone());
                class_names.len() - 1
            }
        };
        class_of_row.push(idx);
    }
    if class_names.len() < 2 {
        return Err(DataError::DegenerateLabel {
            column: label_column.to_string(),
        });
    }
    let mut labels_one_hot = Matrix::zeros(n, class_names.len());
    for (r, &c) in class_of_row.iter().enumerate() {
        labels_one_hot.set(r, c, 1.0);
    }

    // (4) split
    let (train_indices, test_indices) = split_indices(n, split_seed);

    Ok(Dataset {
        dataset_id: uuid::Uuid::new_v4().to_string(),
        label_column: label_column.to_string(),
        feature_names: feature_cols.iter().map(|&c| table.header[c].clone()).collect(),
        class_names,
        features,
        labels_one_hot,
        column_mins,
        column_maxs,
        train_indices,
        test_indices,
    })
}

/// Min-max scaling into `[0, 1]`; constant columns map to 0.
pub fn scale(v: f64, min: f64, max: f64) -> f64 {
    if max > min {
        ((v - min) / (max - min)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Shuffles `0..n` with a seeded generator and cuts at `floor(0.8 n)`.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = order.split_off(train_size(n));
    (order, test)
}
