//! Influence scores as JSON Lines.
//!
//! One object per line with the fields `format_version`, `train_index`,
//! `test_index` (`null` for self-influence), `score`, `solver` and
//! `damping`. Floats are written in shortest round-trip form, so reading
//! a file back reproduces every score bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, write_atomic, IoError};
use crate::attribution::InfluenceRecord;

pub const SCORES_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    format_version: u64,
    train_index: usize,
    test_index: Option<usize>,
    score: f64,
    solver: String,
    damping: f64,
}

pub fn write_scores(path: &Path, records: &[InfluenceRecord]) -> Result<(), IoError> {
    let mut out = Vec::new();
    for r in records {
        let line = Line {
            format_version: SCORES_VERSION,
            train_index: r.train_index,
            test_index: r.test_index,
            score: r.score,
            solver: r.solver.clone(),
            damping: r.damping,
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| IoError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        out.push(b'\n');
    }
    write_atomic(path, &out)
}

pub fn read_scores(path: &Path) -> Result<Vec<InfluenceRecord>, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let line: Line = serde_json::from_str(raw).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.format_version != SCORES_VERSION {
            return Err(IoError::UnsupportedVersion {
                path: path.to_path_buf(),
                found: line.format_version,
                supported: SCORES_VERSION,
            });
        }
        records.push(InfluenceRecord {
            train_index: line.train_index,
            test_index: line.test_index,
            score: line.score,
            solver: line.solver,
            damping: line.damping,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn record(score: f64, test_index: Option<usize>) -> InfluenceRecord {
        InfluenceRecord {
            train_index: 3,
            test_index,
            score,
            solver: "ekfac".into(),
            damping: 1e-3,
        }
    }

    #[test]
    fn random_records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let mut r = rng::seeded(1);
        let records: Vec<_> = (0..1000)
            .map(|i| {
                let bits: u64 = r.random();
                let score = f64::from_bits(bits);
                let score = if score.is_finite() { score } else { i as f64 };
                record(score, if i % 3 == 0 { None } else { Some(i) })
            })
            .collect();
        write_scores(&p, &records).unwrap();
        let back = read_scores(&p).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            assert_eq!(a.score.to_bits(), b.score.to_bits());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn edge_cases() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        fs::write(&p, "").unwrap();
        assert!(read_scores(&p).unwrap().is_empty());
        let tiny = f64::from_bits(1);
        write_scores(&p, &[record(tiny, None)]).unwrap();
        assert_eq!(read_scores(&p).unwrap()[0].score.to_bits(), 1);
        fs::write(&p, "{\"format_version\":1,\"train_index\":0,\"test_index\":null,\"score\":1.0,\"solver\":\"exact\",\"damping\":0.1}\nnot json\n").unwrap();
        assert!(matches!(read_scores(&p), Err(IoError::Parse { line: 2, .. })));
        fs::write(&p, "{\"format_version\":2,\"train_index\":0,\"test_index\":null,\"score\":1.0,\"solver\":\"exact\",\"damping\":0.1}\n").unwrap();
        assert!(matches!(read_scores(&p), Err(IoError::UnsupportedVersion { found: 2, .. })));
    }
}
