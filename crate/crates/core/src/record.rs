//! Recording types shared across the pipeline.
//!
//! Every constructor validates its invariants, so a value of one of these
//! types is always well formed. The types are immutable once built.

use ndarray::{Array1, Array2};
use std::collections::HashSet;
use thiserror::Error;

/// Default channel count of the recording cap.
pub const DEFAULT_CHANNELS: usize = 16;

/// Sampling rate of the joint-angle tracker.
pub const TRAJECTORY_FS: f64 = 125.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecordError {
    #[error("sampling rate must be positive, got {0}")]
    BadRate(f64),
    #[error("{labels} labels for {rows} channel rows")]
    LabelCount { labels: usize, rows: usize },
    #[error("duplicate channel label `{0}`")]
    DuplicateLabel(String),
    #[error("non-finite sample at channel {channel}, index {index}")]
    NonFinite { channel: usize, index: usize },
    #[error("joint angle {value} at index {index} outside [0, 180] degrees")]
    OutOfRangeAngle { index: usize, value: f64 },
    #[error("record has no samples")]
    Empty,
    #[error("trial markers: {0}")]
    BadMarkers(String),
}

/// Multichannel EEG, `channels × time`, in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecord {
    samples: Array2<f64>,
    fs: f64,
    labels: Vec<String>,
    t0: f64,
}

impl EegRecord {
    pub fn new(samples: Array2<f64>, fs: f64, labels: Vec<String>, t0: f64) -> Result<Self, RecordError> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(RecordError::BadRate(fs));
        }
        if labels.len() != samples.nrows() {
            return Err(RecordError::LabelCount { labels: labels.len(), rows: samples.nrows() });
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(RecordError::DuplicateLabel(l.clone()));
            }
        }
        if let Some(((channel, index), _)) = samples.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(RecordError::NonFinite { channel, index });
        }
        Ok(Self { samples, fs, labels, t0 })
    }

    pub fn samples(&self) -> &Array2<f64> {
        &self.samples
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    /// Same metadata, new sample matrix (and possibly rate).
    pub fn with_samples(&self, samples: Array2<f64>, fs: f64) -> Result<Self, RecordError> {
        Self::new(samples, fs, self.labels.clone(), self.t0)
    }

    pub fn channel_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn into_samples(self) -> Array2<f64> {
        self.samples
    }
}

/// Elbow joint angle in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct JointAngleRecord {
    angle: Array1<f64>,
    fs: f64,
    t0: f64,
}

impl JointAngleRecord {
    pub fn new(angle: Array1<f64>, fs: f64, t0: f64) -> Result<Self, RecordError> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(RecordError::BadRate(fs));
        }
        if angle.is_empty() {
            return Err(RecordError::Empty);
        }
        for (index, &value) in angle.iter().enumerate() {
            if !value.is_finite() {
                return Err(RecordError::NonFinite { channel: 0, index });
            }
            if !(0.0..=180.0).contains(&value) {
                return Err(RecordError::OutOfRangeAngle { index, value });
            }
        }
        Ok(Self { angle, fs, t0 })
    }

    pub fn angle(&self) -> &Array1<f64> {
        &self.angle
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.angle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angle.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialMarker {
    pub trial_id: u32,
    pub cue_time: f64,
    pub movement_onset: f64,
}

/// Trial structure of a session. A trial spans from its cue to the next
/// trial's cue; the last one runs to the end of the recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialMarkerSet {
    trials: Vec<TrialMarker>,
}

impl TrialMarkerSet {
    pub fn new(trials: Vec<TrialMarker>) -> Result<Self, RecordError> {
        let mut ids = HashSet::new();
        for (i, t) in trials.iter().enumerate() {
            if !(t.cue_time < t.movement_onset) {
                return Err(RecordError::BadMarkers(format!(
                    "trial {} cue {} not before onset {}",
                    t.trial_id, t.cue_time, t.movement_onset
                )));
            }
            if !ids.insert(t.trial_id) {
                return Err(RecordError::BadMarkers(format!("duplicate trial id {}", t.trial_id)));
            }
            if i > 0 {
                let prev = &trials[i - 1];
                if !(prev.cue_time < t.cue_time) || prev.trial_id >= t.trial_id {
                    return Err(RecordError::BadMarkers("trials not sorted by time and id".into()));
                }
            }
        }
        Ok(Self { trials })
    }

    /// A single trial covering a whole recording, for data without markers.
    pub fn single(t0: f64) -> Self {
        Self { trials: vec![TrialMarker { trial_id: 0, cue_time: t0, movement_onset: t0 + 1e-6 }] }
    }

    pub fn trials(&self) -> &[TrialMarker] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    /// `[start, end)` times of each trial, with `end_time` closing the last.
    pub fn spans(&self, end_time: f64) -> Vec<(u32, f64, f64)> {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let end = self.trials.get(i + 1).map_or(end_time, |n| n.cue_time);
                (t.trial_id, t.cue_time, end)
            })
            .collect()
    }
}
