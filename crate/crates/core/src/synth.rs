//! Seeded synthetic sessions: rhythmic elbow curls with an optional lagged
//! delta-band drive mixed into the motor channels over 1/f background noise.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::montage::CAP_LABELS;
use crate::record::{EegRecord, JointAngleRecord, RecordError, TrialMarker, TrialMarkerSet};
use crate::spectral::{bin_frequency, brickwall_bandpass, fft_padded, ifft_real, mean_square};

/// Passband of the latent drive in Hz.
pub const DRIVE_BAND: (f64, f64) = (0.5, 3.9);

/// Channels receiving the drive and their mixing weights.
pub const MOTOR_WEIGHTS: [(&str, f64); 3] = [("C3", 1.0), ("Cz", 0.8), ("C4", 0.6)];

/// Resting elbow angle in degrees.
pub const REST_ANGLE: f64 = 5.0;

/// Lowest frequency shaped by the 1/f background; bins below are zeroed.
const PINK_FLOOR_HZ: f64 = 0.1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Record(#[from] RecordError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    LinearDelta,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_trials: usize,
    pub trial_len_s: f64,
    pub fs_eeg: f64,
    pub coupling: Coupling,
    /// RMS of the drive at the strongest motor channel, in microvolts.
    pub coupling_gain: f64,
    pub lag_ms_true: f64,
    /// Drive-to-background power ratio; `None` means no background.
    pub noise_snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_trials: 40,
            trial_len_s: 6.0,
            fs_eeg: 125.0,
            coupling: Coupling::LinearDelta,
            coupling_gain: 5.0,
            lag_ms_true: 240.0,
            noise_snr_db: Some(-5.0),
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::BadSpec(m));
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if !(self.trial_len_s >= 2.0 && self.trial_len_s.is_finite()) {
            return bad(format!("trial_len_s {} must be at least 2 s", self.trial_len_s));
        }
        if !(self.fs_eeg >= 2.0 * DRIVE_BAND.1 && self.fs_eeg.is_finite()) {
            return bad(format!("fs_eeg {}", self.fs_eeg));
        }
        if !(self.coupling_gain > 0.0 && self.coupling_gain.is_finite()) {
            return bad(format!("coupling_gain {}", self.coupling_gain));
        }
        if !(self.lag_ms_true >= 0.0 && self.lag_ms_true.is_finite()) {
            return bad(format!("lag_ms_true {}", self.lag_ms_true));
        }
        if self.noise_snr_db.is_some_and(|s| !s.is_finite()) {
            return bad(format!("noise_snr_db {:?}", self.noise_snr_db));
        }
        Ok(())
    }

    pub fn trial_samples(&self) -> usize {
        (self.trial_len_s * self.fs_eeg).round() as usize
    }

    pub fn lag_samples(&self) -> usize {
        (self.lag_ms_true * self.fs_eeg / 1000.0).round() as usize
    }
}

/// A generated session with its latent drive kept for inspection.
#[derive(Debug, Clone)]
pub struct SynthSession {
    pub eeg: EegRecord,
    pub trajectory: JointAngleRecord,
    pub markers: TrialMarkerSet,
    /// Unit-free drive before channel weighting; zero without coupling.
    pub drive: Array1<f64>,
}

pub fn generate_session(spec: &SynthSpec) -> Result<(EegRecord, JointAngleRecord, TrialMarkerSet), SynthError> {
    let s = synthesize(spec)?;
    Ok((s.eeg, s.trajectory, s.markers))
}

pub fn synthesize(spec: &SynthSpec) -> Result<SynthSession, SynthError> {
    spec.validate()?;
    let fs = spec.fs_eeg;
    let per_trial = spec.trial_samples();
    let n = per_trial * spec.n_trials;
    let lag = spec.lag_samples();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // trials are drawn from child seeds so each one is independent of the others
    let mut angle = Vec::with_capacity(n + lag);
    let mut markers = Vec::with_capacity(spec.n_trials);
    for t in 0..spec.n_trials {
        let mut trial_rng = ChaCha8Rng::seed_from_u64(rng.random());
        let (curls, onset) = curl_trial(per_trial, fs, &mut trial_rng);
        let cue = (t * per_trial) as f64 / fs;
        markers.push(TrialMarker { trial_id: t as u32, cue_time: cue, movement_onset: cue + onset });
        angle.extend(curls);
    }
    angle.resize(n + lag, REST_ANGLE);

    let drive = match spec.coupling {
        Coupling::LinearDelta => latent_drive(&angle, lag, n, fs),
        Coupling::None => vec![0.0; n],
    };

    let noise_rms = spec.noise_snr_db.map(|db| spec.coupling_gain / 10f64.powf(db / 20.0));
    let mut samples = Array2::zeros((CAP_LABELS.len(), n));
    for (c, label) in CAP_LABELS.iter().enumerate() {
        let mut row = samples.row_mut(c);
        if let Some(&(_, w)) = MOTOR_WEIGHTS.iter().find(|(l, _)| l == label) {
            row.iter_mut().zip(&drive).for_each(|(v, d)| *v += w * spec.coupling_gain * d);
        }
        if let Some(rms) = noise_rms {
            let bg = pink_noise(n, fs, &mut rng);
            row.iter_mut().zip(&bg).for_each(|(v, b)| *v += rms * b);
        }
    }

    angle.truncate(n);
    let labels = CAP_LABELS.iter().map(|s| s.to_string()).collect();
    Ok(SynthSession {
        eeg: EegRecord::new(samples, fs, labels, 0.0)?,
        trajectory: JointAngleRecord::new(Array1::from(angle), fs, 0.0)?,
        markers: TrialMarkerSet::new(markers)?,
        drive: Array1::from(drive),
    })
}

/// One trial of back-to-back curls separated by short rests, stretched to
/// fill exactly `len` samples. Returns the angles and the first onset in s.
fn curl_trial(len: usize, fs: f64, rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let duration = len as f64 / fs;
    // (rest before, rise, hold, fall, peak)
    let mut plan: Vec<[f64; 5]> = Vec::new();
    let mut used = 0.0;
    loop {
        let step = [
            rng.random_range(0.2..0.45),
            rng.random_range(0.4..0.55),
            rng.random_range(0.1..0.25),
            rng.random_range(0.4..0.55),
            rng.random_range(120.0..150.0),
        ];
        let d = step[0] + step[1] + step[2] + step[3];
        if used + d > duration && !plan.is_empty() {
            break;
        }
        used += d;
        plan.push(step);
    }
    let tail: f64 = rng.random_range(0.2..0.45);
    let scale = duration / (used + tail);

    let mut out = vec![REST_ANGLE; len];
    let mut t = 0.0;
    let mut onset = 0.0;
    let at = |s: f64| ((s * fs).round() as usize).min(len);
    for (i, &[rest, rise, hold, fall, peak]) in plan.iter().enumerate() {
        t += rest * scale;
        if i == 0 {
            onset = t;
        }
        let (a, b, c, d) = (at(t), at(t + rise * scale), at(t + (rise + hold) * scale), at(t + (rise + hold + fall) * scale));
        let amp = peak - REST_ANGLE;
        for (k, v) in out[a..b].iter_mut().enumerate() {
            *v = REST_ANGLE + amp * 0.5 * (1.0 - (PI * k as f64 / (b - a) as f64).cos());
        }
        out[b..c].fill(peak);
        for (k, v) in out[c..d].iter_mut().enumerate() {
            *v = peak - amp * 0.5 * (1.0 - (PI * k as f64 / (d - c) as f64).cos());
        }
        t += (rise + hold + fall) * scale;
    }
    (out, onset.max(1.0 / fs))
}

/// The trajectory `lag` samples ahead, band-limited to the delta band and
/// scaled to unit RMS.
fn latent_drive(angle: &[f64], lag: usize, n: usize, fs: f64) -> Vec<f64> {
    let ahead = &angle[lag..lag + n];
    let mut d = brickwall_bandpass(ahead, fs, DRIVE_BAND.0, DRIVE_BAND.1);
    let rms = mean_square(&d).sqrt();
    if rms > 0.0 {
        d.iter_mut().for_each(|v| *v /= rms);
    }
    d
}

/// Zero-mean noise with power spectral density proportional to `1/f` above
/// a small floor, scaled to unit RMS.
pub fn pink_noise<R: Rng + ?Sized>(n: usize, fs: f64, rng: &mut R) -> Vec<f64> {
    let white: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut spec = fft_padded(&white, n);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = bin_frequency(k, n, fs);
        *c = if f < PINK_FLOOR_HZ { Complex64::new(0.0, 0.0) } else { *c / f.sqrt() };
    }
    let mut x = ifft_real(spec).0;
    let rms = mean_square(&x).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dwt::{band_matrix, WaveletSpec};
    use crate::metrics::pcc;
    use crate::montage::builtin_montage_1020;
    use crate::spectral::band_energy_fraction;

    fn small(coupling: Coupling, snr: Option<f64>, seed: u64) -> SynthSpec {
        SynthSpec { n_trials: 20, coupling, noise_snr_db: snr, seed, ..SynthSpec::default() }
    }

    #[test]
    fn same_seed_same_output() {
        let spec = small(Coupling::LinearDelta, Some(0.0), 3);
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(a.eeg, b.eeg);
        assert_eq!(a.trajectory, b.trajectory);
        assert_eq!(a.markers, b.markers);
        let c = synthesize(&SynthSpec { seed: 4, ..spec }).unwrap();
        assert_ne!(a.eeg, c.eeg);
    }

    #[test]
    fn record_shapes_and_labels() {
        let spec = small(Coupling::LinearDelta, Some(0.0), 1);
        let s = synthesize(&spec).unwrap();
        let montage = builtin_montage_1020();
        let expected: Vec<String> = montage.electrodes().iter().map(|e| e.label.clone()).collect();
        assert_eq!(s.eeg.labels(), &expected[..]);
        assert_eq!(s.eeg.n_samples(), 20 * 750);
        assert_eq!(s.trajectory.len(), s.eeg.n_samples());
        assert_eq!(s.markers.len(), 20);
        for (i, m) in s.markers.trials().iter().enumerate() {
            assert!((m.cue_time - 6.0 * i as f64).abs() < 1e-12);
            assert!(m.movement_onset > m.cue_time && m.movement_onset < m.cue_time + 1.0);
        }
    }

    #[test]
    fn trajectory_in_range_and_curls() {
        for seed in 0..10 {
            let s = synthesize(&small(Coupling::None, Some(0.0), seed)).unwrap();
            let a = s.trajectory.angle();
            assert!(a.iter().all(|v| (0.0..=180.0).contains(v)));
            let max = a.iter().cloned().fold(f64::MIN, f64::max);
            assert!(max >= 120.0 && max <= 150.0);
        }
    }

    #[test]
    fn drive_mass_in_delta_band() {
        for seed in 0..10 {
            let s = synthesize(&small(Coupling::LinearDelta, None, seed)).unwrap();
            let d = s.drive.to_vec();
            let frac = band_energy_fraction(&d, 125.0, DRIVE_BAND.0, DRIVE_BAND.1);
            assert!(frac >= 0.9, "seed {seed}: {frac}");
            let traj = band_energy_fraction(s.trajectory.angle().as_slice().unwrap(), 125.0, DRIVE_BAND.0, DRIVE_BAND.1);
            assert!(traj >= 0.9, "seed {seed}: trajectory {traj}");
        }
    }

    #[test]
    fn pink_noise_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = pink_noise(1 << 16, 125.0, &mut rng);
        assert!((mean_square(&x) - 1.0).abs() < 1e-12);
        // equal power per octave
        let a = band_energy_fraction(&x, 125.0, 2.0, 4.0);
        let b = band_energy_fraction(&x, 125.0, 8.0, 16.0);
        assert!((a / b - 1.0).abs() < 0.1, "{a} {b}");
    }

    #[test]
    fn snr_sets_background_level() {
        let clean = synthesize(&small(Coupling::LinearDelta, None, 2)).unwrap();
        let noisy = synthesize(&small(Coupling::LinearDelta, Some(6.0), 2)).unwrap();
        let c3 = clean.eeg.channel_index("C3").unwrap();
        let s = clean.eeg.samples().row(c3).to_owned();
        let noise = &noisy.eeg.samples().row(c3) - &s;
        let snr = 10.0 * (mean_square(s.as_slice().unwrap()) / mean_square(noise.as_slice().unwrap())).log10();
        assert!((snr - 6.0).abs() < 1e-9, "{snr}");
        let fz = clean.eeg.channel_index("Fz").unwrap();
        assert!(clean.eeg.samples().row(fz).iter().all(|v| *v == 0.0));
    }

    fn delta(s: &SynthSession) -> Array2<f64> {
        band_matrix(s.eeg.samples(), 125.0, &WaveletSpec::default()).unwrap().delta().clone()
    }

    #[test]
    fn uncoupled_delta_is_uninformative() {
        let mut worst: f64 = 0.0;
        for seed in 0..3 {
            let s = synthesize(&SynthSpec { n_trials: 40, ..small(Coupling::None, Some(0.0), seed) }).unwrap();
            let d = delta(&s);
            let y = s.trajectory.angle();
            let n = y.len();
            for row in d.rows() {
                for lag in (0..=60).step_by(2) {
                    let r = pcc(&row.as_slice().unwrap()[..n - lag], &y.as_slice().unwrap()[lag..]).unwrap();
                    worst = worst.max(r.abs());
                }
            }
        }
        assert!(worst < 0.2, "{worst}");
    }

    /// Ridge fit `y ≈ X w + b` by Gaussian elimination on the normal equations.
    fn ridge_predict(x: &Array2<f64>, y: &[f64], lambda: f64) -> Vec<f64> {
        let (n, p) = x.dim();
        let q = p + 1;
        let row = |i: usize, j: usize| if j < p { x[[i, j]] } else { 1.0 };
        let mut a = vec![vec![0.0; q + 1]; q];
        for i in 0..n {
            for r in 0..q {
                for s in 0..q {
                    a[r][s] += row(i, r) * row(i, s);
                }
                a[r][q] += row(i, r) * y[i];
            }
        }
        for (r, ar) in a.iter_mut().enumerate().take(p) {
            ar[r] += lambda;
        }
        for col in 0..q {
            let piv = (col..q).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..q {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    for c in col..=q {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let w: Vec<f64> = (0..q).map(|r| a[r][q] / a[r][r]).collect();
        (0..n).map(|i| (0..q).map(|j| row(i, j) * w[j]).sum()).collect()
    }

    #[test]
    fn noiseless_ridge_oracle_recovers_trajectory() {
        for seed in 0..3 {
            let spec = small(Coupling::LinearDelta, None, seed);
            let s = synthesize(&spec).unwrap();
            let lag = spec.lag_samples();
            let d = delta(&s);
            let y = s.trajectory.angle().as_slice().unwrap();
            let n = y.len() - lag;
            let x = d.slice(ndarray::s![.., ..n]).t().to_owned();
            let pred = ridge_predict(&x, &y[lag..], 1e-6);
            let r = pcc(&pred, &y[lag..]).unwrap();
            assert!(r > 0.95, "seed {seed}: {r}");
        }
    }
}
