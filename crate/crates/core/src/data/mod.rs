//! CSV ingestion and preprocessing: parse, fill missing values, min-max
//! scale, one-hot encode labels and split 80/20.

mod csv;
mod preprocess;
pub mod synthetic;

pub use self::csv::{parse_csv, Cell, RawTable};
pub use preprocess::{
    preprocess, scale, split_indices, train_size, Dataset, MIN_ROWS, TRAIN_FRACTION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DataError {
    #[error("{}", format_error(*row, column.as_deref(), message))]
    Format {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },
    #[error("label column `{0}` not found in header")]
    UnknownLabel(String),
    #[error("label column `{column}` has fewer than two distinct values")]
    DegenerateLabel { column: String },
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("need at least {min} data rows, found {rows}")]
    TooFewRows { rows: usize, min: usize },
    #[error("need at least 2 columns, found {0}")]
    TooFewColumns(usize),
}

fn format_error(row: Option<usize>, column: Option<&str>, message: &str) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!("row {r}, column `{c}`: {message}"),
        (Some(r), None) => format!("row {r}: {message}"),
        _ => message.to_string(),
    }
}

/// Parses and preprocesses CSV bytes in one step.
pub fn load_csv(bytes: &[u8], label_column: &str, split_seed: u64) -> Result<Dataset, DataError> {
    let table = parse_csv(bytes, label_column)?;
    preprocess(&table, label_column, split_seed)
}
