use serde::{Deserialize, Serialize};

use super::DataError;

/// One parsed CSV cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Number(f64),
    Missing,
    Text(String),
}

impl Cell {
    fn parse(raw: &str, keep_text: bool) -> Self {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Cell::Missing;
        }
        if !keep_text {
            if let Ok(v) = trimmed.parse::<f64>() {
                if v.is_finite() {
                    return Cell::Number(v);
                }
            }
        }
        Cell::Text(trimmed.to_string())
    }
}

/// Header plus rectangular rows of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn n_cols(&self) -> usize {
        self.header.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// Parses UTF-8 CSV text with a mandatory header row.
///
/// Comma-delimited, double-quote quoting with `""` escapes, LF or CRLF line
/// endings. Empty cells become [`Cell::Missing`]. Cells in `label_column` are
/// kept verbatim as text so class tokens like `1` and `1.0` stay distinct;
/// other cells become numbers when they parse as finite reals.
///
/// Data rows are numbered from 1 in errors; the header is row 0.
pub fn parse_csv(bytes: &[u8], label_column: &str) -> Result<RawTable, DataError> {
    if bytes.iter().all(|b| b.is_ascii_whitespace()) {
        return Err(DataError::Format {
            row: None,
            column: None,
            message: "file is empty".into(),
        });
    }
    let text = std::str::from_utf8(bytes).map_err(|e| DataError::Format {
        row: None,
        column: None,
        message: format!("not valid UTF-8: {e}"),
    })?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();

    let header: Vec<String> = match records.next() {
        Some(rec) => rec
            .map_err(|e| csv_error(e, 0))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect(),
        None => {
            return Err(DataError::Format {
                row: None,
                column: None,
                message: "file is empty".into(),
            })
        }
    };
    let n_cols = header.len();
    let label_idx = header
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| DataError::UnknownLabel(label_column.to_string()))?;

    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        let row_no = i + 1;
        let rec = rec.map_err(|e| csv_error(e, row_no))?;
        if rec.len() != n_cols {
            return Err(DataError::Format {
                row: Some(row_no),
                column: None,
                message: format!("expected {n_cols} cells, found {}", rec.len()),
            });
        }
        rows.push(
            rec.iter()
                .enumerate()
                .map(|(c, raw)| Cell::parse(raw, c == label_idx))
                .collect(),
        );
    }
    Ok(RawTable { header, rows })
}

fn csv_error(err: csv::Error, row: usize) -> DataError {
    DataError::Format {
        row: Some(row),
        column: None,
        message: err.to_string(),
    }
}
