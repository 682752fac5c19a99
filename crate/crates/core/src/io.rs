//! CSV ingestion and export.
//!
//! EEG files carry a `time,<label1>,...,<labelK>` header followed by one row
//! per sample (time in seconds, values in microvolts). Trajectory files carry
//! `time,angle_deg`. The sampling rate is the mean rate over the time span,
//! snapped to an integer within 1e-9 relative; steps may deviate from the
//! median by at most `MAX_JITTER`.
//! Marker files carry `trial_id,cue_time,movement_onset`.

use crate::record::{EegRecord, JointAngleRecord, RecordError, TrialMarker, TrialMarkerSet};
use ndarray::{Array1, Array2};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use thiserror::Error;

/// Largest tolerated deviation of any time step from the median, relative.
pub const MAX_JITTER: f64 = 0.01;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("time column not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, found: usize, expected: usize },
    #[error("unparseable number `{text}` at row {row}, column {column}")]
    BadNumber { row: usize, column: usize, text: String },
    #[error("sampling jitter {jitter:.4} exceeds {max}", max = MAX_JITTER)]
    NonUniformSampling { jitter: f64 },
    #[error("joint angle {value} at row {row} outside [0, 180] degrees")]
    OutOfRangeAngle { row: usize, value: f64 },
    #[error("file has no data rows")]
    EmptyRecord,
    #[error("need at least two rows to infer the sampling rate")]
    TooShort,
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

struct Table {
    header: Vec<String>,
    time: Vec<f64>,
    columns: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, LoadError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut rows = reader.records();
    let header: Vec<String> = match rows.next() {
        Some(h) => h?.iter().map(|s| s.trim().to_string()).collect(),
        None => return Err(LoadError::MalformedHeader("file is empty".into())),
    };
    if header.first().map(String::as_str) != Some("time") {
        return Err(LoadError::MalformedHeader("first column must be `time`".into()));
    }
    if header.len() < 2 {
        return Err(LoadError::MalformedHeader("no data columns".into()));
    }
    if header[1..].iter().any(String::is_empty) {
        return Err(LoadError::MalformedHeader("empty column label".into()));
    }
    let width = header.len();
    let mut time = Vec::new();
    let mut columns = vec![Vec::new(); width - 1];
    for (i, rec) in rows.enumerate() {
        let rec = rec?;
        let row = i + 1;
        if rec.len() != width {
            return Err(LoadError::RaggedRow { row, found: rec.len(), expected: width });
        }
        for (column, field) in rec.iter().enumerate() {
            let text = field.trim();
            let v: f64 = text
                .parse()
                .map_err(|_| LoadError::BadNumber { row, column, text: text.to_string() })?;
            if !v.is_finite() {
                return Err(LoadError::NonFinite { row, column });
            }
            if column == 0 {
                if let Some(&prev) = time.last() {
                    if v <= prev {
                        return Err(LoadError::NonMonotoneTime { row });
                    }
                }
                time.push(v);
            } else {
                columns[column - 1].push(v);
            }
        }
    }
    if time.is_empty() {
        return Err(LoadError::EmptyRecord);
    }
    Ok(Table { header, time, columns })
}

/// Sampling rate from a strictly increasing time column.
pub fn infer_rate(time: &[f64]) -> Result<f64, LoadError> {
    if time.len() < 2 {
        return Err(LoadError::TooShort);
    }
    let mut dt: Vec<f64> = time.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = dt.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let jitter = dt.iter_mut().map(|d| (*d - median).abs() / median).fold(0.0, f64::max);
    if jitter > MAX_JITTER {
        return Err(LoadError::NonUniformSampling { jitter });
    }
    let rate = (time.len() - 1) as f64 / (time[time.len() - 1] - time[0]);
    let rounded = rate.round();
    Ok(if (rate - rounded).abs() <= 1e-9 * rate { rounded } else { rate })
}

pub fn load_eeg_csv(path: impl AsRef<Path>) -> Result<EegRecord, LoadError> {
    let table = read_table(path.as_ref())?;
    let fs = infer_rate(&table.time)?;
    let n = table.time.len();
    let k = table.columns.len();
    let flat: Vec<f64> = table.columns.into_iter().flatten().collect();
    let samples = Array2::from_shape_vec((k, n), flat).expect("column lengths checked");
    let labels = table.header[1..].to_vec();
    Ok(EegRecord::new(samples, fs, labels, table.time[0])?)
}

pub fn load_trajectory_csv(path: impl AsRef<Path>) -> Result<JointAngleRecord, LoadError> {
    let table = read_table(path.as_ref())?;
    if table.header.len() != 2 || table.header[1] != "angle_deg" {
        return Err(LoadError::MalformedHeader("expected `time,angle_deg`".into()));
    }
    let angle = &table.columns[0];
    if let Some((i, &value)) = angle.iter().enumerate().find(|(_, v)| !(0.0..=180.0).contains(*v)) {
        return Err(LoadError::OutOfRangeAngle { row: i + 1, value });
    }
    let fs = infer_rate(&table.time)?;
    Ok(JointAngleRecord::new(Array1::from(angle.clone()), fs, table.time[0])?)
}

pub fn write_eeg_csv(record: &EegRecord, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "time")?;
    for l in record.labels() {
        write!(w, ",{l}")?;
    }
    writeln!(w)?;
    let x = record.samples();
    for j in 0..record.n_samples() {
        write!(w, "{}", record.t0() + j as f64 / record.fs())?;
        for c in 0..record.n_channels() {
            write!(w, ",{}", x[[c, j]])?;
        }
        writeln!(w)?;
    }
    w.flush()
}

pub fn write_trajectory_csv(record: &JointAngleRecord, path: impl AsRef<Path>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "time,angle_deg")?;
    for (j, a) in record.angle().iter().enumerate() {
        writeln!(w, "{},{a}", record.t0() + j as f64 / record.fs())?;
    }
    w.flush()
}

pub fn load_markers_csv(path: impl AsRef<Path>) -> Result<TrialMarkerSet, LoadError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != ["trial_id", "cue_time", "movement_onset"] {
        return Err(LoadError::MalformedHeader("expected `trial_id,cue_time,movement_onset`".into()));
    }
    let trials = reader.deserialize().collect::<Result<Vec<TrialMarker>, _>>()?;
    if trials.is_empty() {
        return Err(LoadError::EmptyRecord);
    }
    Ok(TrialMarkerSet::new(trials)?)
}

pub fn write_markers_csv(markers: &TrialMarkerSet, path: impl AsRef<Path>) -> Result<(), LoadError> {
    let mut w = csv::Writer::from_path(path)?;
    for t in markers.trials() {
        w.serialize(t)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn three_rows_at_500hz() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "a.csv", "time,Fp1,Cz\n0,1,2\n0.002,3,4\n0.004,5,6\n");
        let r = load_eeg_csv(p).unwrap();
        assert!((r.fs() - 500.0).abs() < 1e-9);
        assert_eq!(r.n_channels(), 2);
        assert_eq!(r.n_samples(), 3);
        assert_eq!(r.labels(), ["Fp1", "Cz"]);
        assert_eq!(r.samples()[[1, 2]], 6.0);
    }

    #[test]
    fn header_without_time() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "a.csv", "t,Fp1\n0,1\n0.1,2\n");
        assert!(matches!(load_eeg_csv(p), Err(LoadError::MalformedHeader(_))));
    }

    #[test]
    fn jittered_grid_rejected() {
        // steps alternate 5% short and long around 2 ms
        let d = tempfile::tempdir().unwrap();
        let mut body = String::from("time,Cz\n");
        let mut t = 0.0;
        for i in 0..50 {
            body += &format!("{t},{i}\n");
            t += if i % 2 == 0 { 0.002 * 1.05 } else { 0.002 * 0.95 };
        }
        let p = write(&d, "j.csv", &body);
        assert!(matches!(load_eeg_csv(p), Err(LoadError::NonUniformSampling { .. })));
    }

    #[test]
    fn distinct_errors() {
        let d = tempfile::tempdir().unwrap();
        let p = write(&d, "m.csv", "time,Cz\n0,1\n0,2\n");
        assert!(matches!(load_eeg_csv(p), Err(LoadError::NonMonotoneTime { row: 2 })));
        let p = write(&d, "n.csv", "time,Cz\n0,1\n0.1,NaN\n");
        assert!(matches!(load_eeg_csv(p), Err(LoadError::NonFinite { row: 2, column: 1 })));
        let p = write(&d, "r.csv", "time,Cz,Pz\n0,1,2\n0.1,2\n");
        assert!(matches!(load_eeg_csv(p), Err(LoadError::RaggedRow { row: 2, found: 2, expected: 3 })));
        let p = write(&d, "e.csv", "time,Cz\n");
        assert!(matches!(load_eeg_csv(p), Err(LoadError::EmptyRecord)));
    }

    #[test]
    fn trajectory_loading() {
        let d = tempfile::tempdir().unwrap();
        let mut body = String::from("time,angle_deg\n");
        for i in 0..125 {
            body += &format!("{},{}\n", i as f64 / 125.0, 90.0);
        }
        let r = load_trajectory_csv(write(&d, "t.csv", &body)).unwrap();
        assert!((r.fs() - 125.0).abs() < 1e-9);
        assert_eq!(r.len(), 125);

        let p = write(&d, "bad.csv", "time,angle_deg\n0,10\n0.008,200\n");
        assert!(matches!(load_trajectory_csv(p), Err(LoadError::OutOfRangeAngle { row: 2, .. })));
        let p = write(&d, "empty.csv", "time,angle_deg\n");
        assert!(matches!(load_trajectory_csv(p), Err(LoadError::EmptyRecord)));
        let p = write(&d, "hdr.csv", "time,angle\n0,1\n");
        assert!(matches!(load_trajectory_csv(p), Err(LoadError::MalformedHeader(_))));
    }

    #[test]
    fn markers_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let m = TrialMarkerSet::new(vec![
            TrialMarker { trial_id: 0, cue_time: 0.0, movement_onset: 0.41 },
            TrialMarker { trial_id: 1, cue_time: 6.0, movement_onset: 6.3 },
        ])
        .unwrap();
        let p = d.path().join("m.csv");
        write_markers_csv(&m, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().next(), Some("trial_id,cue_time,movement_onset"));
        assert_eq!(load_markers_csv(&p).unwrap(), m);

        let p = write(&d, "unsorted.csv", "trial_id,cue_time,movement_onset\n1,6,6.2\n0,0,0.3\n");
        assert!(matches!(load_markers_csv(p), Err(LoadError::Record(_))));
        let p = write(&d, "hdr.csv", "id,cue,onset\n0,0,1\n");
        assert!(matches!(load_markers_csv(p), Err(LoadError::MalformedHeader(_))));
    }
}
