//! Delimited text with a header row: one column holds integer class labels,
//! every other column is a real-valued feature.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, IoError};
use crate::dataset::{Dataset, Example};

/// Which column carries the label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelColumn {
    Index(usize),
    Name(String),
}

/// Read a delimited file. `classes` defaults to `max label + 1`.
pub fn read_delimited(
    path: &Path,
    delimiter: u8,
    label: &LabelColumn,
    classes: Option<usize>,
) -> Result<Dataset, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let label_at = match label {
        LabelColumn::Index(i) if *i < headers.len() => *i,
        LabelColumn::Index(i) => {
            return Err(IoError::Parse {
                path: path.to_path_buf(),
                line: 1,
                message: format!("label column {i} out of range for {} columns", headers.len()),
            })
        }
        LabelColumn::Name(name) => headers.iter().position(|h| h == name).ok_or_else(|| IoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("no column named `{name}`"),
        })?,
    };
    let dim = headers.len() - 1;
    let mut examples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let parse_err = |message: String| IoError::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        if record.len() != headers.len() {
            return Err(parse_err(format!("{} fields, expected {}", record.len(), headers.len())));
        }
        let mut features = Vec::with_capacity(dim);
        let mut y = 0;
        for (col, field) in record.iter().enumerate() {
            if col == label_at {
                y = field
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("label `{field}` is not a non-negative integer")))?;
            } else {
                let v = field
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("column {} value `{field}` is not a number", col + 1)))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("column {} value is not finite", col + 1)));
                }
                features.push(v);
            }
        }
        examples.push(Example::new(features, y));
    }
    let classes = classes.unwrap_or_else(|| examples.iter().map(|z| z.label + 1).max().unwrap_or(0));
    Ok(Dataset::new(examples, dim, classes)?)
}

fn csv_err(path: &Path, e: csv::Error) -> IoError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path)(source),
        kind => IoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn reads_named_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "x1,label,x2\n0.5,1,2\n-1,0,3.25\n").unwrap();
        let data = read_delimited(&p, b',', &LabelColumn::Name("label".into()), None).unwrap();
        assert_eq!((data.len(), data.dim(), data.classes()), (2, 2, 2));
        assert_eq!(data.examples()[1], Example::new(vec![-1.0, 3.25], 0));
    }

    #[test]
    fn malformed_values_name_their_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        fs::write(&p, "a\tb\n1\t0\nfoo\t1\n").unwrap();
        match read_delimited(&p, b'\t', &LabelColumn::Index(1), None) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(&p, "a\tb\n1\t0\n2\n").unwrap();
        assert!(matches!(read_delimited(&p, b'\t', &LabelColumn::Index(1), None), Err(IoError::Parse { line: 3, .. })));
    }
}
