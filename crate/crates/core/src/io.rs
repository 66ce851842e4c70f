//! Dataset CSV reading and writing.
//!
//! Datasets use a header of feature columns `x1..xd` followed by label
//! columns `y1..ym`, one 0/1 value per cell.

use std::io::Read;

use crate::error::{Error, Result};
use crate::synth::Dataset;

pub fn dataset_header(n_features: usize, n_labels: usize) -> Vec<String> {
    (1..=n_features)
        .map(|i| format!("x{i}"))
        .chain((1..=n_labels).map(|i| format!("y{i}")))
        .collect()
}

pub fn write_dataset_csv(data: &Dataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(dataset_header(data.n_features(), data.n_labels())).map_err(csv_error)?;
    let mut row = Vec::with_capacity(data.n_features() + data.n_labels());
    for r in 0..data.len() {
        row.clear();
        row.extend(data.x(r).iter().chain(data.y(r)).map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    finish(w)
}

/// Binary label rows under a `y1..ym` header.
pub fn write_labels_csv(n_labels: usize, rows: &[Vec<u8>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record((1..=n_labels).map(|i| format!("y{i}"))).map_err(csv_error)?;
    for row in rows {
        if row.len() != n_labels {
            return Err(Error::Dimension("prediction row width differs from header".into()));
        }
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is ascii"))
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse { line, message: e.to_string() }
}

/// Reads a dataset; the header decides which columns are features and which
/// are labels. Label columns may be absent (prediction input).
pub fn read_dataset_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let mut n_features = 0;
    let mut n_labels = 0;
    for (j, name) in header.iter().enumerate() {
        let expected_x = format!("x{}", n_features + 1);
        let expected_y = format!("y{}", n_labels + 1);
        if n_labels == 0 && name == expected_x {
            n_features += 1;
        } else if name == expected_y {
            n_labels += 1;
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected column {name:?} at position {}", j + 1),
            });
        }
    }
    if n_features + n_labels == 0 {
        return Err(Error::Parse { line: 1, message: "empty header".into() });
    }
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n_features + n_labels {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, found {}", n_features + n_labels, record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            let v = match field {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(Error::Parse {
                        line,
                        message: format!("column {} holds {other:?}, expected 0 or 1", j + 1),
                    })
                }
            };
            if j < n_features {
                features.push(v);
            } else {
                labels.push(v);
            }
        }
    }
    Dataset::new(n_features, n_labels, features, labels)
}
