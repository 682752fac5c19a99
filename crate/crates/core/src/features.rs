//! Feature families, lagged windowing, grouped splits and augmentation.

use crate::dwt::{band_matrix, Band, BandSet, DwtError, WaveletSpec};
use crate::harmonics::{build_basis_matrix, analysis_matrix, Domain, HarmonicsError, TransformMethod, DEFAULT_ORDER};
use crate::montage::{Montage, MontageError};
use crate::record::{EegRecord, JointAngleRecord, TrialMarkerSet};
use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use thiserror::Error;

pub const DEFAULT_WINDOWS_MS: [u32; 4] = [320, 800, 1200, 1600];
pub const DEFAULT_LAGS_MS: [u32; 5] = [8, 40, 80, 160, 240];

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("invalid window spec: {0}")]
    BadWindowSpec(String),
    #[error("no complete windows could be extracted")]
    NoWindows,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least {needed} groups, found {found}")]
    TooFewGroups { needed: usize, found: usize },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios((f64, f64, f64)),
    #[error("unknown feature tag `{0}`")]
    UnknownTag(String),
    #[error("augmentation needs at least one operation")]
    NoAugmentOps,
    #[error("malformed dataset shard at line {line}: {msg}")]
    BadShard { line: usize, msg: String },
    #[error(transparent)]
    Dwt(#[from] DwtError),
    #[error(transparent)]
    Harmonics(#[from] HarmonicsError),
    #[error(transparent)]
    Montage(#[from] MontageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Window length, target lag and overlap between successive windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub window_ms: u32,
    pub lag_ms: u32,
    #[serde(default = "default_overlap")]
    pub overlap: f64,
    #[serde(default = "default_fs")]
    pub fs: f64,
}

fn default_overlap() -> f64 {
    0.95
}

fn default_fs() -> f64 {
    125.0
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { window_ms: 1600, lag_ms: 240, overlap: default_overlap(), fs: default_fs() }
    }
}

fn ms_to_samples(ms: u32, fs: f64) -> Option<usize> {
    let v = ms as f64 * fs / 1000.0;
    ((v - v.round()).abs() < 1e-9).then_some(v.round() as usize)
}

impl WindowSpec {
    pub fn new(window_ms: u32, lag_ms: u32) -> Self {
        Self { window_ms, lag_ms, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        if !(self.fs > 0.0) {
            return Err(FeatureError::BadWindowSpec(format!("fs {} must be positive", self.fs)));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return Err(FeatureError::BadWindowSpec(format!("overlap {} outside [0, 1)", self.overlap)));
        }
        match ms_to_samples(self.window_ms, self.fs) {
            Some(n) if n >= 2 => {}
            _ => {
                return Err(FeatureError::BadWindowSpec(format!(
                    "window {} ms is not a whole number of samples (≥ 2) at {} Hz",
                    self.window_ms, self.fs
                )))
            }
        }
        if ms_to_samples(self.lag_ms, self.fs).is_none() {
            return Err(FeatureError::BadWindowSpec(format!("lag {} ms is not a whole number of samples", self.lag_ms)));
        }
        Ok(())
    }

    /// Window length in samples.
    pub fn n_samples(&self) -> usize {
        ms_to_samples(self.window_ms, self.fs).expect("validated window")
    }

    pub fn lag_samples(&self) -> usize {
        ms_to_samples(self.lag_ms, self.fs).expect("validated lag")
    }

    pub fn stride(&self) -> usize {
        ((self.n_samples() as f64 * (1.0 - self.overlap)).round() as usize).max(1)
    }
}

/// One training pair: a feature window and the trajectory segment it predicts.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedExample {
    /// `Nc × N` features.
    pub x: Array2<f64>,
    /// `N` joint angles in degrees.
    pub y: Array1<f64>,
    pub trial_id: u32,
    /// Subject or session the trial belongs to.
    pub group: u32,
    /// Start time of the feature window in seconds.
    pub t_start: f64,
}

impl WindowedExample {
    /// Sample span `[start, end)` of the feature window on the session clock.
    pub fn support(&self, fs: f64) -> (i64, i64) {
        let start = (self.t_start * fs).round() as i64;
        (start, start + self.x.ncols() as i64)
    }
}

/// Cuts lagged windows out of each trial.
///
/// The feature window covers `[t, t+W)` and its target `[t+L, t+L+W)`;
/// both must lie inside the trial, otherwise the window is skipped.
pub fn make_windows(
    features: &Array2<f64>,
    features_t0: f64,
    trajectory: &JointAngleRecord,
    spec: &WindowSpec,
    markers: &TrialMarkerSet,
    group: u32,
) -> Result<Vec<WindowedExample>, FeatureError> {
    spec.validate()?;
    if (trajectory.fs() - spec.fs).abs() > 1e-9 {
        return Err(FeatureError::ShapeMismatch(format!("trajectory at {} Hz, windows at {} Hz", trajectory.fs(), spec.fs)));
    }
    let fs = spec.fs;
    let (n, lag, stride) = (spec.n_samples(), spec.lag_samples(), spec.stride());
    let t_len = features.ncols();
    let offset = ((trajectory.t0() - features_t0) * fs).round() as i64;
    let end_time = features_t0 + t_len as f64 / fs;
    let angle = trajectory.angle();
    let mut out = Vec::new();
    for (trial_id, start, end) in markers.spans(end_time) {
        let first = ((start - features_t0) * fs - 1e-6).ceil().max(0.0) as usize;
        let last = (((end - features_t0) * fs + 1e-6).floor().max(0.0) as usize).min(t_len);
        let mut s0 = first;
        while s0 + lag + n <= last {
            let ts = s0 as i64 + lag as i64 - offset;
            if ts < 0 || ts as usize + n > angle.len() {
                s0 += stride;
                continue;
            }
            let ts = ts as usize;
            out.push(WindowedExample {
                x: features.slice(s![.., s0..s0 + n]).to_owned(),
                y: angle.slice(s![ts..ts + n]).to_owned(),
                trial_id,
                group,
                t_start: features_t0 + s0 as f64 / fs,
            });
            s0 += stride;
        }
    }
    if out.is_empty() {
        return Err(FeatureError::NoWindows);
    }
    Ok(out)
}

/// Row-stacks feature blocks sharing one time axis.
pub fn combine_features(blocks: &[&Array2<f64>]) -> Result<Array2<f64>, FeatureError> {
    let Some(first) = blocks.first() else {
        return Err(FeatureError::ShapeMismatch("no feature blocks".into()));
    };
    if let Some(b) = blocks.iter().find(|b| b.ncols() != first.ncols()) {
        return Err(FeatureError::ShapeMismatch(format!("{} vs {} samples", first.ncols(), b.ncols())));
    }
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    Ok(concatenate(Axis(0), &views).expect("column counts checked"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    Spatial,
    Sh,
    H2,
}

/// A row of the feature comparison table: one band (or broadband) in one
/// family, or the combined delta stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureTag {
    Single { band: Option<Band>, family: Family },
    Combined,
}

impl FeatureTag {
    pub fn all() -> Vec<FeatureTag> {
        let mut v = Vec::new();
        for family in [Family::Spatial, Family::Sh, Family::H2] {
            v.push(FeatureTag::Single { band: None, family });
            for b in Band::ALL {
                v.push(FeatureTag::Single { band: Some(b), family });
            }
        }
        v.push(FeatureTag::Combined);
        v
    }

    pub fn n_channels(self, n_electrodes: usize) -> usize {
        let k = crate::harmonics::n_coeffs(DEFAULT_ORDER);
        match self {
            FeatureTag::Single { family: Family::Spatial, .. } => n_electrodes,
            FeatureTag::Single { .. } => k,
            FeatureTag::Combined => n_electrodes + 2 * k,
        }
    }
}

impl fmt::Display for FeatureTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureTag::Combined => write!(f, "V_com"),
            FeatureTag::Single { band, family } => {
                write!(f, "V")?;
                if let Some(b) = band {
                    write!(f, "_{}", b.name())?;
                }
                match family {
                    Family::Spatial => Ok(()),
                    Family::Sh => write!(f, "_SH"),
                    Family::H2 => write!(f, "_H2"),
                }
            }
        }
    }
}

impl FromStr for FeatureTag {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FeatureTag::all()
            .into_iter()
            .find(|t| t.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| FeatureError::UnknownTag(s.to_string()))
    }
}

impl Serialize for FeatureTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FeatureTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Every feature family of one preprocessed session.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub spatial: Array2<f64>,
    pub bands: BandSet,
    sh: [Array2<f64>; 6],
    h2: [Array2<f64>; 6],
    pub t0: f64,
    pub fs: f64,
}

impl FeatureBank {
    pub fn compute(
        record: &EegRecord,
        montage: &Montage,
        wavelet: &WaveletSpec,
        method: &TransformMethod,
    ) -> Result<Self, FeatureError> {
        let montage = montage.select(record.labels())?;
        let spatial = record.samples().clone();
        let bands = band_matrix(&spatial, record.fs(), wavelet)?;
        let project = |domain: Domain| -> Result<[Array2<f64>; 6], FeatureError> {
            let basis = build_basis_matrix(&montage, domain, DEFAULT_ORDER)?;
            let a = analysis_matrix(&basis, method)?;
            Ok([
                a.dot(&spatial),
                a.dot(bands.band(Band::Delta)),
                a.dot(bands.band(Band::Theta)),
                a.dot(bands.band(Band::Alpha)),
                a.dot(bands.band(Band::Beta)),
                a.dot(bands.band(Band::Gamma)),
            ])
        };
        let sh = project(Domain::Sh)?;
        let h2 = project(Domain::H2)?;
        Ok(Self { spatial, bands, sh, h2, t0: record.t0(), fs: record.fs() })
    }

    pub fn select(&self, tag: FeatureTag) -> Array2<f64> {
        let idx = |band: Option<Band>| band.map_or(0, |b| Band::ALL.iter().position(|x| *x == b).unwrap() + 1);
        match tag {
            FeatureTag::Single { band: None, family: Family::Spatial } => self.spatial.clone(),
            FeatureTag::Single { band: Some(b), family: Family::Spatial } => self.bands.band(b).clone(),
            FeatureTag::Single { band, family: Family::Sh } => self.sh[idx(band)].clone(),
            FeatureTag::Single { band, family: Family::H2 } => self.h2[idx(band)].clone(),
            FeatureTag::Combined => {
                combine_features(&[self.bands.delta(), &self.sh[1], &self.h2[1]]).expect("shared time axis")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    #[default]
    ByTrial,
    ByWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<WindowedExample>,
    pub val: Vec<WindowedExample>,
    pub test: Vec<WindowedExample>,
    pub ratios: (f64, f64, f64),
    pub grouping: Grouping,
    pub seed: u64,
}

pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.8, 0.1, 0.1);

/// Distinct `(group, trial)` keys in first-seen order.
pub fn trial_keys(examples: &[WindowedExample]) -> Vec<(u32, u32)> {
    let mut seen = BTreeSet::new();
    examples.iter().map(|e| (e.group, e.trial_id)).filter(|k| seen.insert(*k)).collect()
}

fn split_counts(n: usize, ratios: (f64, f64, f64)) -> (usize, usize, usize) {
    let val = (n as f64 * ratios.1).round() as usize;
    let test = (n as f64 * ratios.2).round() as usize;
    (n.saturating_sub(val + test), val, test)
}

/// Deterministic train/validation/test split. Under [`Grouping::ByTrial`]
/// whole trials go to one side so overlapping windows never straddle.
pub fn split_dataset(
    examples: Vec<WindowedExample>,
    ratios: (f64, f64, f64),
    grouping: Grouping,
    seed: u64,
) -> Result<DatasetSplit, FeatureError> {
    let (a, b, c) = ratios;
    if a < 0.0 || b < 0.0 || c < 0.0 || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(FeatureError::BadRatios(ratios));
    }
    let needed = [a, b, c].iter().filter(|r| **r > 0.0).count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = DatasetSplit { train: vec![], val: vec![], test: vec![], ratios, grouping, seed };
    match grouping {
        Grouping::ByTrial => {
            let mut keys = trial_keys(&examples);
            if keys.len() < needed {
                return Err(FeatureError::TooFewGroups { needed, found: keys.len() });
            }
            keys.shuffle(&mut rng);
            let (n_train, n_val, n_test) = split_counts(keys.len(), ratios);
            if (a > 0.0 && n_train == 0) || (b > 0.0 && n_val == 0) || (c > 0.0 && n_test == 0) {
                return Err(FeatureError::TooFewGroups { needed, found: keys.len() });
            }
            let side: BTreeMap<(u32, u32), usize> = keys
                .iter()
                .enumerate()
                .map(|(i, k)| (*k, if i < n_train { 0 } else if i < n_train + n_val { 1 } else { 2 }))
                .collect();
            debug_assert_eq!(n_train + n_val + n_test, keys.len());
            for e in examples {
                match side[&(e.group, e.trial_id)] {
                    0 => split.train.push(e),
                    1 => split.val.push(e),
                    _ => split.test.push(e),
                }
            }
        }
        Grouping::ByWindow => {
            if examples.len() < needed {
                return Err(FeatureError::TooFewGroups { needed, found: examples.len() });
            }
            let mut idx: Vec<usize> = (0..examples.len()).collect();
            idx.shuffle(&mut rng);
            let (n_train, n_val, _) = split_counts(examples.len(), ratios);
            let mut slots: Vec<Option<WindowedExample>> = examples.into_iter().map(Some).collect();
            for (rank, i) in idx.into_iter().enumerate() {
                let e = slots[i].take().expect("each index once");
                if rank < n_train {
                    split.train.push(e)
                } else if rank < n_train + n_val {
                    split.val.push(e)
                } else {
                    split.test.push(e)
                }
            }
        }
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentOp {
    Flip,
    Roll,
}

pub fn flip(e: &WindowedExample) -> WindowedExample {
    let mut out = e.clone();
    out.x.invert_axis(Axis(1));
    out.y.invert_axis(Axis(0));
    out.x = out.x.as_standard_layout().to_owned();
    out.y = out.y.as_standard_layout().to_owned();
    out
}

/// Circular shift of `x` and `y` by `k` samples towards later times.
pub fn roll(e: &WindowedExample, k: usize) -> WindowedExample {
    let n = e.y.len();
    let k = k % n.max(1);
    let mut out = e.clone();
    for t in 0..n {
        let src = (t + n - k) % n;
        out.y[t] = e.y[src];
        out.x.column_mut(t).assign(&e.x.column(src));
    }
    out
}

/// The example followed by one transformed copy per operation.
pub fn augment(example: &WindowedExample, ops: &BTreeSet<AugmentOp>, seed: u64) -> Result<Vec<WindowedExample>, FeatureError> {
    if ops.is_empty() {
        return Err(FeatureError::NoAugmentOps);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = example.y.len();
    let mut out = vec![example.clone()];
    for op in ops {
        out.push(match op {
            AugmentOp::Flip => flip(example),
            AugmentOp::Roll if n > 1 => roll(example, rng.random_range(1..n)),
            AugmentOp::Roll => example.clone(),
        });
    }
    Ok(out)
}

/// Augments a whole training set; each example draws its own seed.
pub fn augment_set(examples: &[WindowedExample], ops: &BTreeSet<AugmentOp>, seed: u64) -> Result<Vec<WindowedExample>, FeatureError> {
    if ops.is_empty() {
        return Ok(examples.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(examples.len() * (1 + ops.len()));
    for e in examples {
        out.extend(augment(e, ops, rng.random())?);
    }
    Ok(out)
}

const SHARD_HEADER: &str = "group,trial_id,t_start,n_channels,n_samples,values";

/// One line per example: metadata, then `x` row-major, then `y`.
pub fn write_shard(examples: &[WindowedExample], path: impl AsRef<Path>) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{SHARD_HEADER}")?;
    for e in examples {
        write!(w, "{},{},{},{},{}", e.group, e.trial_id, e.t_start, e.x.nrows(), e.x.ncols())?;
        for v in e.x.iter().chain(e.y.iter()) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<Vec<WindowedExample>, FeatureError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |msg: String| FeatureError::BadShard { line: i + 1, msg };
        if i == 0 {
            if line.trim() != SHARD_HEADER {
                return Err(bad(format!("expected header `{SHARD_HEADER}`")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 5 {
            return Err(bad("too few fields".into()));
        }
        let int = |s: &str| s.trim().parse::<u64>().map_err(|e| bad(format!("{s}: {e}")));
        let (group, trial_id) = (int(fields[0])? as u32, int(fields[1])? as u32);
        let t_start: f64 = fields[2].trim().parse().map_err(|e| bad(format!("{}: {e}", fields[2])))?;
        let (nc, n) = (int(fields[3])? as usize, int(fields[4])? as usize);
        if fields.len() != 5 + nc * n + n {
            return Err(bad(format!("expected {} values, found {}", nc * n + n, fields.len() - 5)));
        }
        let vals = fields[5..]
            .iter()
            .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("{s}: {e}"))))
            .collect::<Result<Vec<f64>, _>>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        let x = Array2::from_shape_vec((nc, n), vals[..nc * n].to_vec()).expect("length checked");
        let y = Array1::from(vals[nc * n..].to_vec());
        out.push(WindowedExample { x, y, trial_id, group, t_start });
    }
    Ok(out)
}

/// Provenance of a dataset directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub feature: FeatureTag,
    pub window: WindowSpec,
    pub grouping: Grouping,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub n_channels: usize,
    pub counts: (usize, usize, usize),
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn write_dataset(dir: impl AsRef<Path>, split: &DatasetSplit, manifest: &DatasetManifest) -> Result<(), FeatureError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_shard(&split.train, dir.join("train.csv"))?;
    write_shard(&split.val, dir.join("val.csv"))?;
    write_shard(&split.test, dir.join("test.csv"))?;
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(manifest)? + "\n")?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<(DatasetSplit, DatasetManifest), FeatureError> {
    let dir = dir.as_ref();
    let manifest: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let split = DatasetSplit {
        train: read_shard(dir.join("train.csv"))?,
        val: read_shard(dir.join("val.csv"))?,
        test: read_shard(dir.join("test.csv"))?,
        ratios: manifest.ratios,
        grouping: manifest.grouping,
        seed: manifest.seed,
    };
    Ok((split, manifest))
}
