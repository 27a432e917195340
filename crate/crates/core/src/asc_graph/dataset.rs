//! JSONL interchange: one `{"label": int, "centers": [[A, alpha, L, phi, gamma, x, y], ...]}` per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ScatteringCenter, PARAM_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "RawRecord", into = "RawRecord")]
pub struct DatasetRecord {
    pub label: usize,
    pub centers: Vec<ScatteringCenter>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    label: usize,
    centers: Vec<[f64; PARAM_COUNT]>,
}

impl From<RawRecord> for DatasetRecord {
    fn from(raw: RawRecord) -> Self {
        Self {
            label: raw.label,
            centers: raw.centers.into_iter().map(ScatteringCenter::from_array).collect(),
        }
    }
}

impl From<DatasetRecord> for RawRecord {
    fn from(rec: DatasetRecord) -> Self {
        Self {
            label: rec.label,
            centers: rec.centers.iter().map(ScatteringCenter::to_array).collect(),
        }
    }
}

pub fn read_jsonl<R: Read>(reader: R) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord = serde_json::from_str(&line).map_err(|e| Error::Dataset {
            line: n + 1,
            reason: e.to_string(),
        })?;
        for (i, c) in rec.centers.iter().enumerate() {
            c.validate(i).map_err(|e| Error::Dataset {
                line: n + 1,
                reason: e.to_string(),
            })?;
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(writer: W, records: &[DatasetRecord]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl_file(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    read_jsonl(File::open(path)?)
}

pub fn write_jsonl_file(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    write_jsonl(File::create(path)?, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_interchange_line() {
        let text = r#"{"label": 2, "centers": [[1.0, 0.5, 0.0, 0.1, 0.0, 1.5, -2.0], [0.3, -1, 0.2, 0, 0, 0, 0]]}"#;
        let recs = read_jsonl(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].label, 2);
        assert_eq!(recs[0].centers[0].y, -2.0);
        assert_eq!(recs[0].centers[1].alpha, -1.0);

        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        assert_eq!(read_jsonl(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn bad_lines_report_position() {
        let text = "{\"label\": 0, \"centers\": []}\n{\"label\": -1, \"centers\": []}\n";
        assert!(matches!(read_jsonl(text.as_bytes()), Err(Error::Dataset { line: 2, .. })));
        let neg = r#"{"label": 0, "centers": [[-1, 0, 0, 0, 0, 0, 0]]}"#;
        assert!(matches!(read_jsonl(neg.as_bytes()), Err(Error::Dataset { line: 1, .. })));
    }
}
