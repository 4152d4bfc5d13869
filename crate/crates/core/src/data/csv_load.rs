//! CSV ingestion (numeric features, label in the last column by default).

use std::path::Path;

use ndarray::Array2;

use super::{DataError, Dataset, LabelKind};

/// Loader options; defaults match plain UCI-style files: comma separated,
/// no header, label in the last column.
#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub has_header: bool,
    pub label_kind: LabelKind,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { has_header: false, label_kind: LabelKind::Binary }
    }
}

/// Reads rows in file order; every cell but the last is parsed as a real
/// feature, the last as an integer label.
pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let path_str = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: path_str.clone(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => DataError::Parse { path: path_str.clone(), line: 0, reason: e.to_string() },
        })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<u32> = Vec::new();
    let header_lines = options.has_header as usize;
    let mut width: Option<usize> = None;

    for (ix, record) in reader.records().enumerate() {
        let line = ix + 1 + header_lines;
        let record = record.map_err(|e| DataError::Parse {
            path: path_str.clone(),
            line,
            reason: e.to_string(),
        })?;
        if record.len() < 2 {
            return Err(DataError::Parse {
                path: path_str.clone(),
                line,
                reason: format!("expected at least 2 columns, got {}", record.len()),
            });
        }
        if let Some(w) = width {
            if record.len() != w {
                return Err(DataError::Schema {
                    path: path_str.clone(),
                    reason: format!("row {line} has {} columns, expected {w}", record.len()),
                });
            }
        } else {
            width = Some(record.len());
        }
        let mut row = Vec::with_capacity(record.len() - 1);
        for cell in record.iter().take(record.len() - 1) {
            let v: f64 = cell.parse().map_err(|_| DataError::Parse {
                path: path_str.clone(),
                line,
                reason: format!("non-numeric feature cell {cell:?}"),
            })?;
            row.push(v);
        }
        let label_cell = record.get(record.len() - 1).unwrap();
        // Tolerate labels written as floats ("1.0").
        let label = label_cell
            .parse::<u32>()
            .or_else(|_| label_cell.parse::<f64>().map(|f| f as u32))
            .map_err(|_| DataError::Parse {
                path: path_str.clone(),
                line,
                reason: format!("bad label cell {label_cell:?}"),
            })?;
        rows.push(row);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(DataError::Empty);
    }
    let d = width.unwrap() - 1;
    let mut features = Array2::<f64>::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    Dataset::new(features, labels, options.label_kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_line_file_loads_three_rows() {
        let f = write_temp("1.0,2.0,0\n3.0,4.0,1\n5.5,6.5,0\n");
        let ds = load_csv(f.path(), &CsvOptions::default()).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.feature_count(), 2);
        assert_eq!(ds.all_labels(), &[0, 1, 0]);
    }

    #[test]
    fn non_numeric_cell_reports_line() {
        let f = write_temp("1.0,2.0,0\nx,4.0,1\n");
        match load_csv(f.path(), &CsvOptions::default()) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ragged_rows_rejected() {
        let f = write_temp("1.0,2.0,0\n1.0,1\n");
        assert!(load_csv(f.path(), &CsvOptions::default()).is_err());
    }

    #[test]
    fn header_skipped_when_requested() {
        let f = write_temp("a,b,label\n1.0,2.0,1\n");
        let opts = CsvOptions { has_header: true, ..CsvOptions::default() };
        let ds = load_csv(f.path(), &opts).unwrap();
        assert_eq!(ds.len(), 1);
    }
}
