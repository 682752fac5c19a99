//! Resampling, baseline-wander removal, amplitude normalisation and
//! synthetic artifact injection.
//!
//! The canonical order is resample → [`remove_baseline`] →
//! [`normalize_amplitude`].

use crate::montage::builtin_montage_1020;
use crate::record::{EegRecord, RecordError};
use crate::spectral::{brickwall_bandpass, fft_padded, ifft_real, mean_square, next_pow2};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("cannot resample {from} Hz to {to} Hz: ratio is not an integer")]
    UnsupportedRatio { from: f64, to: f64 },
    #[error("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")]
    InvalidCutoff { cutoff: f64, nyquist: f64 },
    #[error("DFT length {n_dft} shorter than signal length {len}")]
    DftTooShort { n_dft: usize, len: usize },
    #[error("record has no samples")]
    EmptyRecord,
    #[error("channel {0} is identically zero")]
    DegenerateChannel(String),
    #[error("invalid artifact spec: {0}")]
    InvalidArtifactSpec(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

/// Settings for DFT-threshold baseline removal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineRemovalSpec {
    #[serde(default = "default_cutoff")]
    pub cutoff_hz: f64,
    /// DFT length; `None` means the next power of two ≥ the signal length.
    #[serde(default)]
    pub n_dft: Option<usize>,
}

fn default_cutoff() -> f64 {
    0.5
}

impl Default for BaselineRemovalSpec {
    fn default() -> Self {
        Self { cutoff_hz: default_cutoff(), n_dft: None }
    }
}

/// Highest zeroed DFT bin, `floor(cutoff · n_dft / fs)`.
pub fn baseline_cutoff_bin(cutoff_hz: f64, n_dft: usize, fs: f64) -> usize {
    (cutoff_hz * n_dft as f64 / fs).floor() as usize
}

// ---------------------------------------------------------------------------
// resampling

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Kaiser-windowed sinc low-pass. `pass` and `stop` are band edges as
/// fractions of the sampling rate; the gain at DC is `gain`.
pub fn kaiser_lowpass(pass: f64, stop: f64, atten_db: f64, gain: f64) -> Vec<f64> {
    let beta = if atten_db > 50.0 {
        0.1102 * (atten_db - 8.7)
    } else if atten_db >= 21.0 {
        0.5842 * (atten_db - 21.0).powf(0.4) + 0.07886 * (atten_db - 21.0)
    } else {
        0.0
    };
    let width = 2.0 * PI * (stop - pass);
    let mut len = ((atten_db - 8.0) / (2.285 * width)).ceil() as usize + 1;
    if len % 2 == 0 {
        len += 1;
    }
    let cutoff = 0.5 * (pass + stop);
    let half = (len / 2) as f64;
    let i0b = bessel_i0(beta);
    let mut h: Vec<f64> = (0..len)
        .map(|i| {
            let t = i as f64 - half;
            let sinc = if t == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * t).sin() / (PI * t) };
            let r = t / half;
            sinc * bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / i0b
        })
        .collect();
    let dc: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v *= gain / dc);
    h
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut j = i.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Centered FIR filtering evaluated at `out_len` positions `m·step`, over the
/// (virtually) reflected input.
fn fir_at(x: &[f64], h: &[f64], step: usize, out_len: usize) -> Vec<f64> {
    let half = (h.len() / 2) as isize;
    (0..out_len)
        .map(|m| {
            let c = (m * step) as isize;
            h.iter().enumerate().map(|(k, &hk)| hk * x[reflect(c + k as isize - half, x.len())]).sum()
        })
        .collect()
}

fn integer_ratio(a: f64, b: f64) -> Option<usize> {
    let r = a / b;
    let ri = r.round();
    ((r - ri).abs() < 1e-9 && ri >= 1.0).then_some(ri as usize)
}

/// Resamples by an integer factor with a zero-phase anti-alias FIR whose
/// passband ends at 0.45·(lower rate) and stopband starts at its Nyquist.
pub fn resample(record: &EegRecord, target_fs: f64) -> Result<EegRecord, PreprocessError> {
    let fs = record.fs();
    if (fs - target_fs).abs() < 1e-9 * fs {
        return Ok(record.clone());
    }
    let n = record.n_samples();
    if n == 0 {
        return Err(PreprocessError::EmptyRecord);
    }
    let (out_len, rows): (usize, Vec<Vec<f64>>) = if let Some(r) = integer_ratio(fs, target_fs) {
        let h = kaiser_lowpass(0.45 / r as f64, 0.5 / r as f64, 70.0, 1.0);
        let out_len = n.div_ceil(r);
        let rows = record.samples().rows().into_iter().map(|x| fir_at(&x.to_vec(), &h, r, out_len)).collect();
        (out_len, rows)
    } else if let Some(r) = integer_ratio(target_fs, fs) {
        let h = kaiser_lowpass(0.45 / r as f64, 0.5 / r as f64, 70.0, r as f64);
        let out_len = n * r;
        let rows = record
            .samples()
            .rows()
            .into_iter()
            .map(|x| {
                let x = x.to_vec();
                let half = (h.len() / 2) as isize;
                (0..out_len)
                    .map(|j| {
                        h.iter()
                            .enumerate()
                            .filter_map(|(k, &hk)| {
                                let pos = j as isize + k as isize - half;
                                (pos.rem_euclid(r as isize) == 0).then(|| hk * x[reflect(pos.div_euclid(r as isize), n)])
                            })
                            .sum()
                    })
                    .collect()
            })
            .collect();
        (out_len, rows)
    } else {
        return Err(PreprocessError::UnsupportedRatio { from: fs, to: target_fs });
    };
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    let samples = Array2::from_shape_vec((record.n_channels(), out_len), flat).expect("row lengths agree");
    Ok(record.with_samples(samples, target_fs)?)
}

// ---------------------------------------------------------------------------
// baseline removal

/// Zeroes DFT bins `0..=k` and `n_dft-k..n_dft` of one channel.
pub fn remove_baseline_channel(x: ArrayView1<f64>, fs: f64, spec: &BaselineRemovalSpec) -> Result<Array1<f64>, PreprocessError> {
    let len = x.len();
    if len == 0 {
        return Err(PreprocessError::EmptyRecord);
    }
    let nyquist = fs / 2.0;
    if !(spec.cutoff_hz > 0.0 && spec.cutoff_hz < nyquist) {
        return Err(PreprocessError::InvalidCutoff { cutoff: spec.cutoff_hz, nyquist });
    }
    let n_dft = spec.n_dft.unwrap_or_else(|| next_pow2(len));
    if n_dft < len {
        return Err(PreprocessError::DftTooShort { n_dft, len });
    }
    let k = baseline_cutoff_bin(spec.cutoff_hz, n_dft, fs).min(n_dft / 2);
    let mut spectrum = fft_padded(&x.to_vec(), n_dft);
    let zero = Complex64::new(0.0, 0.0);
    for c in &mut spectrum[..=k] {
        *c = zero;
    }
    for c in &mut spectrum[n_dft - k..] {
        *c = zero;
    }
    let (mut y, imag) = ifft_real(spectrum);
    debug_assert!(imag <= 1e-9 * (1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()))), "imag residue {imag}");
    y.truncate(len);
    Ok(Array1::from(y))
}

pub fn remove_baseline(record: &EegRecord, spec: &BaselineRemovalSpec) -> Result<EegRecord, PreprocessError> {
    let mut out = Array2::zeros(record.samples().raw_dim());
    for (c, x) in record.samples().axis_iter(Axis(0)).enumerate() {
        out.row_mut(c).assign(&remove_baseline_channel(x, record.fs(), spec)?);
    }
    Ok(record.with_samples(out, record.fs())?)
}

// ---------------------------------------------------------------------------
// normalisation

pub fn normalize_rows(x: &Array2<f64>, labels: &[String]) -> Result<Array2<f64>, PreprocessError> {
    let mut out = x.clone();
    for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let peak = row.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if peak == 0.0 {
            return Err(PreprocessError::DegenerateChannel(labels.get(c).cloned().unwrap_or_else(|| c.to_string())));
        }
        row.mapv_inplace(|v| v / peak);
    }
    Ok(out)
}

/// Divides every channel by its peak absolute value.
pub fn normalize_amplitude(record: &EegRecord) -> Result<EegRecord, PreprocessError> {
    let out = normalize_rows(record.samples(), record.labels())?;
    Ok(record.with_samples(out, record.fs())?)
}

// ---------------------------------------------------------------------------
// artifacts

/// Synthetic ocular bursts plus band-limited EMG-like noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactSpec {
    /// Ocular events per second.
    pub ocular_rate: f64,
    /// Peak ocular amplitude in microvolts at the most frontal electrode.
    pub ocular_amp: f64,
    pub emg_band: (f64, f64),
    /// Per-channel signal-to-EMG power ratio; `+inf` disables EMG.
    pub emg_snr_db: f64,
    pub seed: u64,
}

impl Default for ArtifactSpec {
    fn default() -> Self {
        Self { ocular_rate: 0.2, ocular_amp: 60.0, emg_band: (20.0, 60.0), emg_snr_db: 10.0, seed: 11 }
    }
}

impl ArtifactSpec {
    pub fn validate(&self, fs: f64) -> Result<(), PreprocessError> {
        let bad = |m: String| Err(PreprocessError::InvalidArtifactSpec(m));
        if !(self.ocular_rate >= 0.0 && self.ocular_rate.is_finite()) {
            return bad(format!("ocular_rate {}", self.ocular_rate));
        }
        if !(self.ocular_amp >= 0.0 && self.ocular_amp.is_finite()) {
            return bad(format!("ocular_amp {}", self.ocular_amp));
        }
        let (lo, hi) = self.emg_band;
        if !(0.0 < lo && lo < hi && hi < fs / 2.0) {
            return bad(format!("emg band ({lo}, {hi}) Hz at fs {fs}"));
        }
        if self.emg_snr_db.is_nan() || self.emg_snr_db == f64::NEG_INFINITY {
            return bad(format!("emg_snr_db {}", self.emg_snr_db));
        }
        Ok(())
    }
}

/// Weight of ocular activity at an electrode: squared frontal component of
/// its position, zero for unknown labels.
fn ocular_weight(label: &str) -> f64 {
    builtin_montage_1020().get(label).map_or(0.0, |e| e.unit_vector()[0].max(0.0).powi(2))
}

pub fn inject_artifacts(record: &EegRecord, spec: &ArtifactSpec) -> Result<EegRecord, PreprocessError> {
    let fs = record.fs();
    spec.validate(fs)?;
    let n = record.n_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = record.samples().clone();

    // ocular: smooth Hann bumps of 0.5–0.8 s, main lobe below 4 Hz
    let mut blink = vec![0.0; n];
    if spec.ocular_amp > 0.0 && spec.ocular_rate > 0.0 {
        let gap = Exp::new(spec.ocular_rate).expect("positive rate");
        let duration = n as f64 / fs;
        let mut t: f64 = rng.sample(gap);
        while t < duration {
            let d = rng.random_range(0.5..0.8);
            let a = spec.ocular_amp * rng.random_range(0.7..1.3);
            let start = (t * fs).round() as usize;
            let len = (d * fs).round() as usize;
            for i in 0..len {
                if start + i >= n {
                    break;
                }
                blink[start + i] += a * 0.5 * (1.0 - (2.0 * PI * i as f64 / len as f64).cos());
            }
            t += d + rng.sample(gap);
        }
    }

    for (c, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        let w = ocular_weight(&record.labels()[c]);
        let signal_power = mean_square(row.as_slice().expect("standard layout"));
        if w > 0.0 {
            row.iter_mut().zip(&blink).for_each(|(v, b)| *v += w * b);
        }
        if spec.emg_snr_db.is_finite() && signal_power > 0.0 {
            let white: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let emg = brickwall_bandpass(&white, fs, spec.emg_band.0, spec.emg_band.1);
            let p = mean_square(&emg);
            if p > 0.0 {
                let target = signal_power / 10f64.powf(spec.emg_snr_db / 10.0);
                let g = (target / p).sqrt();
                row.iter_mut().zip(&emg).for_each(|(v, e)| *v += g * e);
            }
        }
    }
    Ok(record.with_samples(out, fs)?)
}
