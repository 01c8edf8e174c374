//! Session log files: a CSV body with one row per trial plus a JSON sidecar
//! holding the protocol, observer, seed and fingerprints.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    Fingerprints, ObserverDescriptor, ProcedureMetadata, ReferenceSide, Response, SessionLog, StimulusProtocol, Trial,
    TrialRecord,
};

pub const SCHEMA_VERSION: u32 = 1;

const COLUMNS: [&str; 7] = [
    "trial_index",
    "comparison_nm",
    "reference_side",
    "chose_comparison",
    "correct",
    "rendered_k_ref",
    "rendered_k_cmp",
];

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, field `{field}`: {message}")]
    Field { line: u64, field: &'static str, message: String },
    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error("unsupported schema version {0} (expected {SCHEMA_VERSION})")]
    Version(u32),
    #[error("sidecar declares {expected} trials but the log has {found}")]
    TrialCount { expected: usize, found: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    schema_version: u32,
    protocol: StimulusProtocol,
    observer: ObserverDescriptor,
    seed: u64,
    n_trials: usize,
    fingerprints: Fingerprints,
    procedure: ProcedureMetadata,
}

/// `session.csv` → `session.json`
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_log_csv<W: Write>(log: &SessionLog, writer: W) -> Result<(), LogError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(COLUMNS)?;
    for r in &log.records {
        w.write_record([
            r.trial.index.to_string(),
            r.trial.comparison.to_string(),
            r.trial.reference_side.as_str().to_string(),
            r.response.chose_comparison_stiffer.to_string(),
            r.response.correct.map(|c| c.to_string()).unwrap_or_default(),
            r.rendered_k_ref.to_string(),
            r.rendered_k_cmp.to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn field<T: std::str::FromStr>(value: &str, line: u64, name: &'static str) -> Result<T, LogError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| LogError::Field { line, field: name, message: format!("`{value}`: {e}") })
}

/// Parse a CSV body into trial records.
pub fn read_log_csv<R: Read>(reader: R) -> Result<Vec<TrialRecord>, LogError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut idx = [0usize; COLUMNS.len()];
    for (slot, name) in idx.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| LogError::MissingColumn(name.to_string()))?;
    }
    let mut records = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let get = |i: usize| row.get(idx[i]).unwrap_or("");
        let index: usize = field(get(0), line, COLUMNS[0])?;
        let comparison: f64 = field(get(1), line, COLUMNS[1])?;
        let reference_side = match get(2).trim() {
            "left" => ReferenceSide::Left,
            "right" => ReferenceSide::Right,
            other => {
                return Err(LogError::Field {
                    line,
                    field: COLUMNS[2],
                    message: format!("`{other}` is neither left nor right"),
                })
            }
        };
        let chose: bool = field(get(3), line, COLUMNS[3])?;
        let correct = match get(4).trim() {
            "" => None,
            v => Some(field::<bool>(v, line, COLUMNS[4])?),
        };
        records.push(TrialRecord {
            trial: Trial { index, comparison, reference_side, seed_stream: index as u64 + 1 },
            response: Response { chose_comparison_stiffer: chose, correct, latency_s: None },
            rendered_k_ref: field(get(5), line, COLUMNS[5])?,
            rendered_k_cmp: field(get(6), line, COLUMNS[6])?,
        });
    }
    Ok(records)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LogError + '_ {
    move |source| LogError::Io { path: path.to_path_buf(), source }
}

/// Write `path` (CSV body) and its JSON sidecar.
pub fn export_log(log: &SessionLog, path: &Path) -> Result<(), LogError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    write_log_csv(log, &mut w)?;
    w.flush().map_err(io_err(path))?;

    let side = sidecar_path(path);
    let meta = Sidecar {
        schema_version: SCHEMA_VERSION,
        protocol: log.protocol.clone(),
        observer: log.observer.clone(),
        seed: log.seed,
        n_trials: log.records.len(),
        fingerprints: log.fingerprints.clone(),
        procedure: log.procedure.clone(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(&side, text).map_err(io_err(&side))?;
    Ok(())
}

pub fn import_log(path: &Path) -> Result<SessionLog, LogError> {
    let side = sidecar_path(path);
    let text = std::fs::read_to_string(&side).map_err(io_err(&side))?;
    let version: serde_json::Value = serde_json::from_str(&text)?;
    match version.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err(LogError::Version(v as u32)),
        None => return Err(LogError::MissingColumn("schema_version".into())),
    }
    let meta: Sidecar = serde_json::from_value(version)?;
    let file = File::open(path).map_err(io_err(path))?;
    let records = read_log_csv(BufReader::new(file))?;
    if records.len() != meta.n_trials {
        return Err(LogError::TrialCount { expected: meta.n_trials, found: records.len() });
    }
    Ok(SessionLog {
        protocol: meta.protocol,
        observer: meta.observer,
        seed: meta.seed,
        records,
        fingerprints: meta.fingerprints,
        procedure: meta.procedure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_column_is_named() {
        let body = "trial_index,comparison_nm,reference_side,chose_comparison,correct,rendered_k_ref\n0,10,left,false,true,100\n";
        match read_log_csv(body.as_bytes()) {
            Err(LogError::MissingColumn(c)) => assert_eq!(c, "rendered_k_cmp"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_field_reports_line() {
        let body = "trial_index,comparison_nm,reference_side,chose_comparison,correct,rendered_k_ref,rendered_k_cmp\n\
                    0,10,left,false,true,100,10\n\
                    1,abc,left,false,true,100,10\n";
        match read_log_csv(body.as_bytes()) {
            Err(LogError::Field { line, field, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(field, "comparison_nm");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn columns_may_be_reordered() {
        let body = "rendered_k_cmp,rendered_k_ref,correct,chose_comparison,reference_side,comparison_nm,trial_index\n\
                    10.5,99.5,,true,right,100,4\n";
        let recs = read_log_csv(body.as_bytes()).unwrap();
        assert_eq!(recs[0].trial.index, 4);
        assert_eq!(recs[0].response.correct, None);
        assert_eq!(recs[0].rendered_k_cmp, 10.5);
        assert_eq!(recs[0].trial.reference_side, ReferenceSide::Right);
    }
}
