//! File formats: JSON-lines observation streams, JSON model snapshots and CSV
//! logs. Every writer is deterministic: fixed key order and shortest
//! round-trip float formatting.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::oda::Annealer;
use crate::twin::HybridNdtModel;
use crate::types::{CellId, Observation};

pub const SNAPSHOT_VERSION: u32 = 1;

fn float(v: f64) -> Result<String> {
    if !v.is_finite() {
        return Err(Error::RejectedRecord(format!("non-finite value {v}")));
    }
    Ok(serde_json::to_string(&v)?)
}

/// One stream line: `{"t":…,"x":[…],"rsrp":…,"sinr":…,"cell":…}` with `t`
/// printed to six decimals.
pub fn format_record(obs: &Observation) -> Result<String> {
    if obs.q.len() != 2 {
        return Err(Error::LengthMismatch {
            expected: 2,
            got: obs.q.len(),
        });
    }
    if !obs.t.is_finite() {
        return Err(Error::RejectedRecord(format!("non-finite time {}", obs.t)));
    }
    let x = obs
        .x
        .iter()
        .map(|v| float(*v))
        .collect::<Result<Vec<_>>>()?;
    Ok(format!(
        "{{\"t\":{:.6},\"x\":[{}],\"rsrp\":{},\"sinr\":{},\"cell\":{}}}",
        obs.t,
        x.join(","),
        float(obs.q[0])?,
        float(obs.q[1])?,
        obs.cell
    ))
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str, line: usize) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Parse {
        line,
        reason: format!("missing key `{key}`"),
    })
}

fn number(v: &Value, key: &str, line: usize) -> Result<f64> {
    v.as_f64().ok_or_else(|| Error::Parse {
        line,
        reason: format!("`{key}` must be a number"),
    })
}

/// Parses one stream line; `line` is the 1-based line number used in errors.
pub fn parse_record(text: &str, line: usize) -> Result<Observation> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        reason: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| Error::Parse {
        line,
        reason: "record must be an object".into(),
    })?;
    let t = number(field(obj, "t", line)?, "t", line)?;
    let x = field(obj, "x", line)?
        .as_array()
        .ok_or_else(|| Error::Parse {
            line,
            reason: "`x` must be an array".into(),
        })?
        .iter()
        .map(|v| number(v, "x", line))
        .collect::<Result<Vec<_>>>()?;
    let rsrp = number(field(obj, "rsrp", line)?, "rsrp", line)?;
    let sinr = number(field(obj, "sinr", line)?, "sinr", line)?;
    let cell = field(obj, "cell", line)?
        .as_u64()
        .and_then(|c| CellId::try_from(c).ok())
        .ok_or_else(|| Error::Parse {
            line,
            reason: "`cell` must be a nonnegative integer".into(),
        })?;
    Ok(Observation {
        t,
        x,
        q: vec![rsrp, sinr],
        cell,
    })
}

pub fn write_stream<'a, W, I>(mut out: W, observations: I) -> Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Observation>,
{
    for obs in observations {
        writeln!(out, "{}", format_record(obs)?).map_err(|e| Error::Io {
            path: "<stream>".into(),
            source: e,
        })?;
    }
    out.flush().map_err(|e| Error::Io {
        path: "<stream>".into(),
        source: e,
    })
}

pub fn write_stream_file<'a, I>(path: &Path, observations: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Observation>,
{
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_stream(BufWriter::new(file), observations).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Lazy line-by-line stream reader. Blank lines are skipped.
pub struct StreamReader<R> {
    lines: Lines<R>,
    line: usize,
}

impl<R: BufRead> StreamReader<R> {
    pub fn new(reader: R) -> Self {
        StreamReader {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for StreamReader<R> {
    type Item = Result<Observation>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line += 1;
            let text = match self.lines.next()? {
                Ok(t) => t,
                Err(e) => {
                    return Some(Err(Error::Parse {
                        line: self.line,
                        reason: e.to_string(),
                    }))
                }
            };
            if !text.trim().is_empty() {
                return Some(parse_record(&text, self.line));
            }
        }
    }
}

pub fn open_stream(path: &Path) -> Result<StreamReader<BufReader<File>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(StreamReader::new(BufReader::new(file)))
}

pub fn read_stream(path: &Path) -> Result<Vec<Observation>> {
    open_stream(path)?.collect()
}

/// Hex SHA-256 of the canonical configuration text.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Everything needed to resume training or evaluate the twin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub version: u32,
    pub config_hash: String,
    pub annealer: Annealer,
    pub twin: HybridNdtModel,
}

impl Snapshot {
    pub fn new(config_hash: String, annealer: Annealer, twin: HybridNdtModel) -> Self {
        Snapshot {
            version: SNAPSHOT_VERSION,
            config_hash,
            annealer,
            twin,
        }
    }
}

pub fn write_snapshot(path: &Path, snapshot: &Snapshot) -> Result<()> {
    let mut text = serde_json::to_string_pretty(snapshot)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a snapshot. A different format version is an error; a config hash
/// differing from `expected_hash` only logs a warning and is reported in the
/// returned flag.
pub fn read_snapshot(path: &Path, expected_hash: Option<&str>) -> Result<(Snapshot, bool)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let found = value.get("version").and_then(Value::as_u64).unwrap_or(0) as u32;
    if found != SNAPSHOT_VERSION {
        return Err(Error::SnapshotVersion {
            found,
            expected: SNAPSHOT_VERSION,
        });
    }
    let snapshot: Snapshot = serde_json::from_value(value)?;
    let matches = expected_hash.is_none_or(|h| h == snapshot.config_hash);
    if !matches {
        log::warn!(
            "{}: config hash {} differs from the current configuration",
            path.display(),
            snapshot.config_hash
        );
    }
    Ok((snapshot, matches))
}

/// Training log row, shared by the twin and the baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub t_sim: f64,
    pub lambda: Option<f64>,
    #[serde(rename = "K")]
    pub k: usize,
    pub running_mse: Option<f64>,
    pub running_class_err: Option<f64>,
    pub trigger_flags: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRow {
    pub t: f64,
    pub kind: String,
    pub mode: Option<CellId>,
    pub magnitude: f64,
    pub action_taken: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes only the header row of `T` (for empty logs).
pub fn write_csv_header(path: &Path, header: &[&str]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(BufReader::new(file));
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn obs(t: f64) -> Observation {
        Observation {
            t,
            x: vec![1.25, 19.0],
            q: vec![-61.3, 4.0],
            cell: 2,
        }
    }

    #[test]
    fn record_layout() {
        assert_eq!(
            format_record(&obs(0.05)).unwrap(),
            r#"{"t":0.050000,"x":[1.25,19.0],"rsrp":-61.3,"sinr":4.0,"cell":2}"#
        );
    }

    #[test]
    fn empty_file_is_empty_stream() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(read_stream(f.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_key_names_line_and_key() {
        let text = format!(
            "{}\n{}\n",
            format_record(&obs(0.0)).unwrap(),
            r#"{"t":0.05,"x":[1,2],"rsrp":-60,"sinr":3}"#
        );
        let mut r = StreamReader::new(text.as_bytes());
        assert!(r.next().unwrap().is_ok());
        let err = r.next().unwrap().unwrap_err();
        match &err {
            Error::Parse { line, reason } => {
                assert_eq!(*line, 2);
                assert!(reason.contains("`cell`"), "{reason}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let bad = StreamReader::new("not json\n".as_bytes()).next().unwrap();
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn non_finite_values_are_refused() {
        let mut o = obs(0.0);
        o.q[1] = f64::NAN;
        assert!(format_record(&o).is_err());
    }

    #[test]
    fn hash_is_stable_hex() {
        let h = config_hash("seed = 1\n");
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash("seed = 1\n"));
        assert_ne!(h, config_hash("seed = 2\n"));
    }

    #[test]
    fn csv_round_trip() {
        let f = tempfile::NamedTempFile::new().unwrap();
        let rows = vec![
            TrainLogRow {
                step: 1,
                t_sim: 0.05,
                lambda: Some(0.9),
                k: 2,
                running_mse: None,
                running_class_err: Some(0.0),
                trigger_flags: String::new(),
            },
            TrainLogRow {
                step: 2,
                t_sim: 0.1,
                lambda: None,
                k: 100,
                running_mse: Some(1.0 / 3.0),
                running_class_err: None,
                trigger_flags: "R".into(),
            },
        ];
        write_csv(f.path(), &rows).unwrap();
        let text = std::fs::read_to_string(f.path()).unwrap();
        assert!(
            text.starts_with("step,t_sim,lambda,K,running_mse,running_class_err,trigger_flags\n")
        );
        assert_eq!(read_csv::<TrainLogRow>(f.path()).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn stream_round_trip_is_bit_exact(
            records in prop::collection::vec(
                (0u64..100_000_000, -1e3..1e3f64, -1e3..1e3f64, -150.0..0.0f64, -20.0..40.0f64, 0u32..10),
                0..200,
            )
        ) {
            let stream: Vec<Observation> = records
                .iter()
                .map(|(t, a, b, r, s, c)| Observation {
                    t: *t as f64 / 1e6,
                    x: vec![*a, *b],
                    q: vec![*r, *s],
                    cell: *c,
                })
                .collect();
            let mut buf = Vec::new();
            write_stream(&mut buf, &stream).unwrap();
            let back: Vec<Observation> = StreamReader::new(buf.as_slice()).collect::<Result<_>>().unwrap();
            prop_assert_eq!(back.len(), stream.len());
            for (a, b) in back.iter().zip(&stream) {
                prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
                prop_assert_eq!(a.x[0].to_bits(), b.x[0].to_bits());
                prop_assert_eq!(a.x[1].to_bits(), b.x[1].to_bits());
                prop_assert_eq!(a.q[0].to_bits(), b.q[0].to_bits());
                prop_assert_eq!(a.q[1].to_bits(), b.q[1].to_bits());
                prop_assert_eq!(a.cell, b.cell);
            }
        }
    }
}
