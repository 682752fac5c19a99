//! FFT helpers shared by the preprocessing and synthesis code.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// Complex spectrum of `x` zero-padded to `n` points.
pub fn fft_padded(x: &[f64], n: usize) -> Vec<Complex64> {
    assert!(n >= x.len(), "DFT length shorter than signal");
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(n, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf
}

/// Inverse DFT returning the real part, scaled by `1/n`, together with the
/// largest imaginary magnitude left over.
pub fn ifft_real(mut spectrum: Vec<Complex64>) -> (Vec<f64>, f64) {
    let n = spectrum.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    let imag = spectrum.iter().map(|c| (c.im * scale).abs()).fold(0.0, f64::max);
    (spectrum.into_iter().map(|c| c.re * scale).collect(), imag)
}

/// Frequency in Hz of bin `k` of an `n`-point DFT, folded to `[0, fs/2]`.
pub fn bin_frequency(k: usize, n: usize, fs: f64) -> f64 {
    let k = k.min(n - k);
    k as f64 * fs / n as f64
}

/// Keeps only spectral content whose frequency lies in `[lo, hi]` Hz.
pub fn brickwall_bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = fft_padded(x, n);
    for (k, c) in spec.iter_mut().enumerate() {
        let f = bin_frequency(k, n, fs);
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    ifft_real(spec).0
}

/// Fraction of (mean-removed) signal energy whose frequency lies in `[lo, hi]`.
pub fn band_energy_fraction(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let spec = fft_padded(x, n);
    let mut inside = 0.0;
    let mut total = 0.0;
    for (k, c) in spec.iter().enumerate().skip(1) {
        let p = c.norm_sqr();
        total += p;
        let f = bin_frequency(k, n, fs);
        if f >= lo && f <= hi {
            inside += p;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        inside / total
    }
}

pub fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
    }
}
