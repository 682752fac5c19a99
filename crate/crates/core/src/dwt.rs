//! Multilevel orthogonal discrete wavelet transform and EEG rhythm bands.
//!
//! With four levels at 125 Hz the dyadic split lands on the classical
//! rhythms: the level-4 approximation is δ, and the level-4, 3, 2, 1 details
//! are θ, α, β, γ. Each band is returned as a full-rate signal obtained by
//! reconstructing from a single level, so the five bands sum back to the
//! input exactly.

use crate::record::EegRecord;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DwtError {
    #[error("signal of length {len} too short for {levels} levels")]
    InsufficientLength { len: usize, levels: usize },
    #[error("pyramid does not match the wavelet spec: {0}")]
    InconsistentPyramid(String),
    #[error("unknown wavelet `{0}`")]
    UnknownWavelet(String),
    #[error("rhythm bands need exactly 4 levels, got {0}")]
    UnsupportedLevels(usize),
    #[error("levels must be at least 1")]
    ZeroLevels,
}

/// Orthogonal Daubechies family members (reconstruction low-pass taps).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Wavelet {
    Db1,
    Db2,
    Db4,
    Db8,
}

const DB1: [f64; 2] = [std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2];
const DB2: [f64; 4] = [0.48296291314453414, 0.83651630373780791, 0.22414386804201338, -0.12940952255126038];
const DB4: [f64; 8] = [
    0.2303778133088965,
    0.71484657055291565,
    0.63088076792985891,
    -0.027983769416859854,
    -0.18703481171909308,
    0.030841381835560764,
    0.0328830116668852,
    -0.010597401785069032,
];
const DB8: [f64; 16] = [
    0.05441584224310401,
    0.31287159091429997,
    0.67563073629728981,
    0.58535468365420671,
    -0.015829105256349306,
    -0.28401554296154693,
    0.00047248457391328277,
    0.12874742662047846,
    -0.017369301001807546,
    -0.044088253930794752,
    0.013981027917398282,
    0.0087460940474057767,
    -0.0048703529934515743,
    -0.00039174037337694705,
    0.00067544940645056937,
    -0.00011747678412476953,
];

impl Wavelet {
    pub fn scaling_filter(self) -> &'static [f64] {
        match self {
            Wavelet::Db1 => &DB1,
            Wavelet::Db2 => &DB2,
            Wavelet::Db4 => &DB4,
            Wavelet::Db8 => &DB8,
        }
    }

    /// Quadrature mirror of the scaling filter.
    pub fn wavelet_filter(self) -> Vec<f64> {
        let h = self.scaling_filter();
        let l = h.len();
        (0..l).map(|n| if n % 2 == 0 { h[l - 1 - n] } else { -h[l - 1 - n] }).collect()
    }

    pub fn len(self) -> usize {
        self.scaling_filter().len()
    }
}

impl FromStr for Wavelet {
    type Err = DwtError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "db1" | "haar" => Ok(Wavelet::Db1),
            "db2" => Ok(Wavelet::Db2),
            "db4" => Ok(Wavelet::Db4),
            "db8" => Ok(Wavelet::Db8),
            _ => Err(DwtError::UnknownWavelet(s.to_string())),
        }
    }
}

impl fmt::Display for Wavelet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Wavelet::Db1 => "db1",
            Wavelet::Db2 => "db2",
            Wavelet::Db4 => "db4",
            Wavelet::Db8 => "db8",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Extension {
    /// Circular wrap; the transform is exactly orthogonal.
    #[default]
    Periodic,
    /// Mirror the signal to twice its length, then wrap.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletSpec {
    pub family: Wavelet,
    pub levels: usize,
    #[serde(default)]
    pub extension: Extension,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self { family: Wavelet::Db8, levels: 4, extension: Extension::Periodic }
    }
}

/// Coefficients of a multilevel decomposition. `details[j]` holds level
/// `j + 1` (finest first).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletPyramid {
    pub approx: Vec<f64>,
    pub details: Vec<Vec<f64>>,
    /// Length of the analysed signal before any extension.
    pub signal_len: usize,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn energy(&self) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        sq(&self.approx) + self.details.iter().map(|d| sq(d)).sum::<f64>()
    }
}

/// Which pyramid levels survive reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelMask {
    pub approximation: bool,
    /// Bit `j - 1` keeps detail level `j`.
    pub details: u32,
}

impl LevelMask {
    pub fn all() -> Self {
        Self { approximation: true, details: u32::MAX }
    }

    pub fn none() -> Self {
        Self { approximation: false, details: 0 }
    }

    pub fn approximation() -> Self {
        Self { approximation: true, details: 0 }
    }

    pub fn detail(level: usize) -> Self {
        Self { approximation: false, details: 1 << (level - 1) }
    }

    fn keeps_detail(&self, level: usize) -> bool {
        self.details & (1 << (level - 1)) != 0
    }
}

fn analysis_step(x: &[f64], h: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let half = n / 2;
    let mut a = vec![0.0; half];
    let mut d = vec![0.0; half];
    for k in 0..half {
        let (mut sa, mut sd) = (0.0, 0.0);
        for (t, (&hl, &gl)) in h.iter().zip(g).enumerate() {
            let v = x[(2 * k + t) % n];
            sa += hl * v;
            sd += gl * v;
        }
        a[k] = sa;
        d[k] = sd;
    }
    (a, d)
}

fn synthesis_step(a: &[f64], d: &[f64], h: &[f64], g: &[f64]) -> Vec<f64> {
    let n = 2 * a.len();
    let mut x = vec![0.0; n];
    for k in 0..a.len() {
        for (t, (&hl, &gl)) in h.iter().zip(g).enumerate() {
            x[(2 * k + t) % n] += hl * a[k] + gl * d[k];
        }
    }
    x
}

/// Length the signal is extended to before the periodic transform.
fn working_len(len: usize, spec: &WaveletSpec) -> usize {
    let base = match spec.extension {
        Extension::Periodic => len,
        Extension::Symmetric => 2 * len,
    };
    base.next_multiple_of(1 << spec.levels)
}

fn extend(signal: &[f64], spec: &WaveletSpec) -> Vec<f64> {
    let mut x = signal.to_vec();
    if spec.extension == Extension::Symmetric {
        x.extend(signal.iter().rev());
    }
    // pad to a dyadic multiple by continuing the mirror
    let target = working_len(signal.len(), spec);
    let n = x.len();
    let mut i = 0;
    while x.len() < target {
        let v = x[n - 1 - (i % n)];
        x.push(v);
        i += 1;
    }
    x
}

pub fn dwt_decompose(signal: &[f64], spec: &WaveletSpec) -> Result<WaveletPyramid, DwtError> {
    if spec.levels == 0 {
        return Err(DwtError::ZeroLevels);
    }
    let len = signal.len();
    if len < (1 << spec.levels) {
        return Err(DwtError::InsufficientLength { len, levels: spec.levels });
    }
    let h = spec.family.scaling_filter();
    let g = spec.family.wavelet_filter();
    let mut approx = extend(signal, spec);
    let mut details = Vec::with_capacity(spec.levels);
    for _ in 0..spec.levels {
        let (a, d) = analysis_step(&approx, h, &g);
        details.push(d);
        approx = a;
    }
    Ok(WaveletPyramid { approx, details, signal_len: len })
}

pub fn idwt_reconstruct(pyramid: &WaveletPyramid, keep: LevelMask, spec: &WaveletSpec) -> Result<Vec<f64>, DwtError> {
    if pyramid.levels() != spec.levels {
        return Err(DwtError::InconsistentPyramid(format!(
            "{} levels, wavelet config has {}",
            pyramid.levels(),
            spec.levels
        )));
    }
    let total = working_len(pyramid.signal_len, spec);
    for (j, d) in pyramid.details.iter().enumerate() {
        if d.len() != total >> (j + 1) {
            return Err(DwtError::InconsistentPyramid(format!(
                "level {} has {} coefficients, expected {}",
                j + 1,
                d.len(),
                total >> (j + 1)
            )));
        }
    }
    if pyramid.approx.len() != total >> spec.levels {
        return Err(DwtError::InconsistentPyramid("approximation length".into()));
    }
    let h = spec.family.scaling_filter();
    let g = spec.family.wavelet_filter();
    let mut x = if keep.approximation { pyramid.approx.clone() } else { vec![0.0; pyramid.approx.len()] };
    for level in (1..=spec.levels).rev() {
        let d = &pyramid.details[level - 1];
        x = if keep.keeps_detail(level) {
            synthesis_step(&x, d, h, &g)
        } else {
            synthesis_step(&x, &vec![0.0; d.len()], h, &g)
        };
    }
    x.truncate(pyramid.signal_len);
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Delta,
    Theta,
    Alpha,
    Beta,
    Gamma,
}

impl Band {
    pub const ALL: [Band; 5] = [Band::Delta, Band::Theta, Band::Alpha, Band::Beta, Band::Gamma];

    pub fn name(self) -> &'static str {
        match self {
            Band::Delta => "delta",
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::Beta => "beta",
            Band::Gamma => "gamma",
        }
    }

    /// Pyramid level kept when reconstructing this band from a 4-level
    /// decomposition.
    pub fn mask(self) -> LevelMask {
        match self {
            Band::Delta => LevelMask::approximation(),
            Band::Theta => LevelMask::detail(4),
            Band::Alpha => LevelMask::detail(3),
            Band::Beta => LevelMask::detail(2),
            Band::Gamma => LevelMask::detail(1),
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl FromStr for Band {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Band::ALL.into_iter().find(|b| b.name() == s.to_ascii_lowercase()).ok_or_else(|| format!("unknown band `{s}`"))
    }
}

/// Nominal `(low, high)` edges in Hz. δ starts at the baseline-removal cutoff.
pub fn band_edges(fs: f64, baseline_cutoff_hz: f64) -> [(f64, f64); 5] {
    let e = |j: i32| fs / 2f64.powi(j + 1);
    [(baseline_cutoff_hz, e(4)), (e(4), e(3)), (e(3), e(2)), (e(2), e(1)), (e(1), e(0))]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: [Array2<f64>; 5],
    pub band_edges: [(f64, f64); 5],
}

impl BandSet {
    /// Bands in `Band::ALL` order; all must share one shape.
    pub fn from_bands(bands: [Array2<f64>; 5], band_edges: [(f64, f64); 5]) -> Self {
        assert!(bands.iter().all(|b| b.dim() == bands[0].dim()), "band shapes differ");
        Self { bands, band_edges }
    }

    pub fn band(&self, band: Band) -> &Array2<f64> {
        &self.bands[band.index()]
    }

    pub fn delta(&self) -> &Array2<f64> {
        self.band(Band::Delta)
    }

    pub fn gamma(&self) -> &Array2<f64> {
        self.band(Band::Gamma)
    }

    pub fn sum(&self) -> Array2<f64> {
        self.bands.iter().skip(1).fold(self.bands[0].clone(), |acc, b| acc + b)
    }
}

/// Splits a `channels × time` matrix into the five rhythm bands.
pub fn band_matrix(x: &Array2<f64>, fs: f64, spec: &WaveletSpec) -> Result<BandSet, DwtError> {
    if spec.levels != 4 {
        return Err(DwtError::UnsupportedLevels(spec.levels));
    }
    let shape = x.raw_dim();
    let mut bands: [Array2<f64>; 5] = std::array::from_fn(|_| Array2::zeros(shape));
    for (c, row) in x.axis_iter(Axis(0)).enumerate() {
        let pyramid = dwt_decompose(&row.to_vec(), spec)?;
        for band in Band::ALL {
            let y = idwt_reconstruct(&pyramid, band.mask(), spec)?;
            bands[band.index()].row_mut(c).assign(&ndarray::ArrayView1::from(&y[..]));
        }
    }
    Ok(BandSet { bands, band_edges: band_edges(fs, 0.5) })
}

pub fn band_signals(record: &EegRecord, spec: &WaveletSpec) -> Result<BandSet, DwtError> {
    band_matrix(record.samples(), record.fs(), spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn energy(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn filters_are_orthonormal() {
        for w in [Wavelet::Db1, Wavelet::Db2, Wavelet::Db4, Wavelet::Db8] {
            let h = w.scaling_filter();
            assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-12, "{w}");
            for shift in (0..h.len()).step_by(2) {
                let dot: f64 = (0..h.len() - shift).map(|n| h[n] * h[n + shift]).sum();
                let expect = if shift == 0 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-12, "{w} shift {shift}: {dot}");
            }
        }
    }

    #[test]
    fn pyramid_lengths() {
        let p = dwt_decompose(&random(512, 1), &WaveletSpec::default()).unwrap();
        let lens: Vec<usize> = p.details.iter().map(Vec::len).collect();
        assert_eq!(lens, vec![256, 128, 64, 32]);
        assert_eq!(p.approx.len(), 32);
    }

    #[test]
    fn constant_has_no_detail() {
        let p = dwt_decompose(&[2.5; 256], &WaveletSpec::default()).unwrap();
        for d in &p.details {
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn parseval() {
        let x = random(256, 2);
        let p = dwt_decompose(&x, &WaveletSpec::default()).unwrap();
        let rel = (p.energy() - energy(&x)).abs() / energy(&x);
        assert!(rel < 1e-8, "{rel}");
    }

    #[test]
    fn too_short() {
        assert_eq!(
            dwt_decompose(&[1.0; 8], &WaveletSpec::default()),
            Err(DwtError::InsufficientLength { len: 8, levels: 4 })
        );
    }

    #[test]
    fn reconstruction_masks() {
        for ext in [Extension::Periodic, Extension::Symmetric] {
            let spec = WaveletSpec { extension: ext, ..Default::default() };
            for n in [256, 300, 1001] {
                let x = random(n, n as u64);
                let p = dwt_decompose(&x, &spec).unwrap();
                let full = idwt_reconstruct(&p, LevelMask::all(), &spec).unwrap();
                let err = x.iter().zip(&full).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / energy(&x).sqrt();
                assert!(err < 1e-8, "{ext:?} {n}: {err}");
                let none = idwt_reconstruct(&p, LevelMask::none(), &spec).unwrap();
                assert_eq!(none.len(), n);
                assert!(none.iter().all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn approximation_keeps_slow_sine() {
        let fs = 125.0;
        let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * 2.0 * i as f64 / fs).sin()).collect();
        let spec = WaveletSpec::default();
        let p = dwt_decompose(&x, &spec).unwrap();
        let y = idwt_reconstruct(&p, LevelMask::approximation(), &spec).unwrap();
        assert!(energy(&y) >= 0.95 * energy(&x), "{}", energy(&y) / energy(&x));
    }

    #[test]
    fn inconsistent_pyramid() {
        let spec = WaveletSpec::default();
        let mut p = dwt_decompose(&random(256, 3), &spec).unwrap();
        p.details[1].pop();
        assert!(matches!(idwt_reconstruct(&p, LevelMask::all(), &spec), Err(DwtError::InconsistentPyramid(_))));
        let three = WaveletSpec { levels: 3, ..spec };
        let p = dwt_decompose(&random(256, 3), &spec).unwrap();
        assert!(matches!(idwt_reconstruct(&p, LevelMask::all(), &three), Err(DwtError::InconsistentPyramid(_))));
    }

    #[test]
    fn edges_at_125() {
        let e = band_edges(125.0, 0.5);
        // the nominal table truncates to one decimal
        let trunc = |v: f64| (v * 10.0).floor() / 10.0;
        let got: Vec<(f64, f64)> = e.iter().map(|&(a, b)| (trunc(a), trunc(b))).collect();
        assert_eq!(got, vec![(0.5, 3.9), (3.9, 7.8), (7.8, 15.6), (15.6, 31.2), (31.2, 62.5)]);
    }

    #[test]
    fn alpha_tone() {
        let fs = 125.0;
        let x: Vec<f64> = (0..2048).map(|i| (2.0 * PI * 10.0 * i as f64 / fs).sin()).collect();
        let bands = band_matrix(&Array2::from_shape_vec((1, 2048), x).unwrap(), fs, &WaveletSpec::default()).unwrap();
        let e: Vec<f64> = Band::ALL.iter().map(|b| energy(bands.band(*b).row(0).as_slice().unwrap())).collect();
        let total: f64 = e.iter().sum();
        assert!(e[2] / total >= 0.9, "alpha share {}", e[2] / total);
    }

    #[test]
    fn noise_bands_sum_to_input() {
        let x = Array2::from_shape_vec((2, 777), random(1554, 9)).unwrap();
        let bands = band_matrix(&x, 125.0, &WaveletSpec::default()).unwrap();
        let s = bands.sum();
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in s.iter().zip(x.iter()) {
            assert!((a - b).abs() <= 1e-8 * scale);
        }
    }
}
