//! Regression metrics and sweep tables.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} samples")]
    TooShort(usize),
    #[error("series has zero variance")]
    DegenerateSeries,
    #[error("duplicate sweep cell ({feature}, {window_ms} ms, {lag_ms} ms)")]
    DuplicateCell { feature: String, window_ms: u32, lag_ms: u32 },
    #[error("no results to report")]
    Empty,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson correlation with sample (N−1) normalisation.
pub fn pcc(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    let n = actual.len();
    if n != predicted.len() {
        return Err(MetricsError::LengthMismatch(n, predicted.len()));
    }
    if n < 2 {
        return Err(MetricsError::TooShort(2));
    }
    let (ma, mp) = (mean(actual), mean(predicted));
    let sd = |x: &[f64], m: f64| (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let (sa, sp) = (sd(actual, ma), sd(predicted, mp));
    // relative guard: constant series can leave rounding-level spread
    let tiny = |s: f64, m: f64| s <= 1e-13 * m.abs().max(f64::MIN_POSITIVE) || s == 0.0;
    if tiny(sa, ma) || tiny(sp, mp) {
        return Err(MetricsError::DegenerateSeries);
    }
    let s: f64 = actual.iter().zip(predicted).map(|(a, p)| ((a - ma) / sa) * ((p - mp) / sp)).sum();
    Ok((s / (n - 1) as f64).clamp(-1.0, 1.0))
}

pub fn mse(actual: &[f64], predicted: &[f64]) -> Result<f64, MetricsError> {
    if actual.len() != predicted.len() {
        return Err(MetricsError::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(MetricsError::TooShort(1));
    }
    Ok(actual.iter().zip(predicted).map(|(a, p)| (a - p).powi(2)).sum::<f64>() / actual.len() as f64)
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(values);
    if values.len() < 2 {
        return (m, 0.0);
    }
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64;
    (m, v.sqrt())
}

/// One cell of a feature × window × lag sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub feature: String,
    pub window_ms: u32,
    pub lag_ms: u32,
    pub pcc_mean: f64,
    pub pcc_std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub features: Vec<String>,
    pub windows_ms: Vec<u32>,
    pub lags_ms: Vec<u32>,
    /// Index into `results` of the highest mean PCC.
    pub best: usize,
    pub results: Vec<SweepResult>,
}

pub const REPORT_CSV_HEADER: &str = "feature,window_ms,lag_ms,pcc_mean,pcc_std,n";

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for r in &self.results {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.feature, r.window_ms, r.lag_ms, r.pcc_mean, r.pcc_std, r.n);
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.results).expect("plain data serialises")
    }

    pub fn best(&self) -> &SweepResult {
        &self.results[self.best]
    }

    /// Fixed-width grid: one row per feature, one column per (window, lag);
    /// the best cell is starred.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<14}", "feature");
        for w in &self.windows_ms {
            for l in &self.lags_ms {
                let _ = write!(out, " {:>11}", format!("{w}/{l}"));
            }
        }
        out.push('\n');
        for f in &self.features {
            let _ = write!(out, "{f:<14}");
            for w in &self.windows_ms {
                for l in &self.lags_ms {
                    let cell = self
                        .results
                        .iter()
                        .position(|r| &r.feature == f && r.window_ms == *w && r.lag_ms == *l);
                    let text = match cell {
                        Some(i) if i == self.best => format!("*{:.3}", self.results[i].pcc_mean),
                        Some(i) => format!("{:.3}", self.results[i].pcc_mean),
                        None => "-".to_string(),
                    };
                    let _ = write!(out, " {text:>11}");
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn n_cells(&self) -> usize {
        self.results.len()
    }
}

/// Orders axes by first appearance and flags the best cell.
pub fn sweep_report(results: Vec<SweepResult>) -> Result<SweepReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut seen = BTreeSet::new();
    for r in &results {
        if !seen.insert((r.feature.clone(), r.window_ms, r.lag_ms)) {
            return Err(MetricsError::DuplicateCell { feature: r.feature.clone(), window_ms: r.window_ms, lag_ms: r.lag_ms });
        }
    }
    fn ordered<T: PartialEq + Clone>(it: impl Iterator<Item = T>) -> Vec<T> {
        let mut v: Vec<T> = Vec::new();
        for x in it {
            if !v.contains(&x) {
                v.push(x);
            }
        }
        v
    }
    let features = ordered(results.iter().map(|r| r.feature.clone()));
    let mut windows_ms = ordered(results.iter().map(|r| r.window_ms));
    let mut lags_ms = ordered(results.iter().map(|r| r.lag_ms));
    windows_ms.sort_unstable();
    lags_ms.sort_unstable();
    let best = results
        .iter()
        .enumerate()
        .filter(|(_, r)| r.pcc_mean.is_finite())
        .max_by(|a, b| a.1.pcc_mean.total_cmp(&b.1.pcc_mean))
        .map_or(0, |(i, _)| i);
    Ok(SweepReport { features, windows_ms, lags_ms, best, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook two-pass evaluation, written out independently.
    fn pcc_oracle(a: &[f64], p: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mp = p.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(p).map(|(x, y)| (x - ma) * (y - mp)).sum();
        let va: f64 = a.iter().map(|x| (x - ma) * (x - ma)).sum();
        let vp: f64 = p.iter().map(|y| (y - mp) * (y - mp)).sum();
        cov / (va * vp).sqrt()
    }

    #[test]
    fn unit_vector() {
        let r = pcc(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 4.0]).unwrap();
        // cov 3.5 over sqrt(5 * 4.75)
        assert!((r - 3.5 / 23.75f64.sqrt()).abs() < 1e-14);
        assert!((r - 0.7181848).abs() < 1e-6);
        assert!((r - pcc_oracle(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 5.0, 4.0])).abs() < 1e-14);
    }

    #[test]
    fn perfect_and_anti() {
        let a = [0.3, 1.0, -2.0, 5.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pcc(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&a, &neg).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(pcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(MetricsError::DegenerateSeries));
        assert_eq!(pcc(&[1.0], &[1.0]), Err(MetricsError::TooShort(2)));
        assert_eq!(pcc(&[1.0, 2.0], &[1.0]), Err(MetricsError::LengthMismatch(2, 1)));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(mse(&[], &[]), Err(MetricsError::TooShort(1)));
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p: Vec<f64> = (0..100).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut acc = 0.0;
        for i in 0..100 {
            let d = a[i] - p[i];
            acc += d * d;
        }
        assert!((mse(&a, &p).unwrap() - acc / 100.0).abs() < 1e-12);
    }

    fn cell(f: &str, w: u32, l: u32, p: f64) -> SweepResult {
        SweepResult { feature: f.into(), window_ms: w, lag_ms: l, pcc_mean: p, pcc_std: 0.0, n: 1 }
    }

    #[test]
    fn single_cell_report() {
        let r = sweep_report(vec![cell("V_delta", 1600, 240, 0.5)]).unwrap();
        assert_eq!(r.n_cells(), 1);
        assert_eq!(r.best, 0);
        assert!(r.table().contains("*0.500"));
        assert_eq!(r.to_csv().lines().next().unwrap(), REPORT_CSV_HEADER);
    }

    #[test]
    fn full_grid_and_argmax() {
        let windows = [320, 800, 1200, 1600];
        let lags = [8, 40, 80, 160, 240];
        let mut results = Vec::new();
        let mut k = 0u64;
        for f in 0..18 {
            for w in windows {
                for l in lags {
                    k = k.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    results.push(cell(&format!("F{f}"), w, l, (k >> 11) as f64 / (1u64 << 53) as f64));
                }
            }
        }
        let report = sweep_report(results.clone()).unwrap();
        assert_eq!(report.n_cells(), 360);
        assert_eq!(report.features.len(), 18);
        let mut best = 0;
        for i in 0..results.len() {
            if results[i].pcc_mean > results[best].pcc_mean {
                best = i;
            }
        }
        assert_eq!(report.best, best);
        assert_eq!(report.table().lines().count(), 19);
    }

    #[test]
    fn duplicate_cells_rejected() {
        let err = sweep_report(vec![cell("V", 320, 8, 0.1), cell("V", 320, 8, 0.2)]).unwrap_err();
        assert!(matches!(err, MetricsError::DuplicateCell { .. }));
        assert_eq!(sweep_report(vec![]), Err(MetricsError::Empty));
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (3usize..40).prop_flat_map(|n| (prop::collection::vec(-100.0f64..100.0, n), prop::collection::vec(-100.0f64..100.0, n)))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn bounded_symmetric_affine_invariant(
            (a, p) in pair(),
            sa in 0.01f64..50.0, ba in -50.0f64..50.0,
            sp in 0.01f64..50.0, bp in -50.0f64..50.0,
        ) {
            let base = match pcc(&a, &p) { Ok(v) => v, Err(_) => return Ok(()) };
            prop_assert!((-1.0..=1.0).contains(&base));
            prop_assert!((pcc(&p, &a).unwrap() - base).abs() < 1e-12);
            let a2: Vec<f64> = a.iter().map(|v| sa * v + ba).collect();
            let p2: Vec<f64> = p.iter().map(|v| sp * v + bp).collect();
            prop_assert!((pcc(&a2, &p2).unwrap() - base).abs() < 1e-10);
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            prop_assert!((pcc(&a, &neg).unwrap() + base).abs() < 1e-12);
        }
    }
}
