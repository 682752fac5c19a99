//! Spatial harmonic transforms of multichannel EEG.
//!
//! Two orthonormal bases are provided:
//!
//! * [`Domain::Sh`]: real spherical harmonics `Y_l^m` on the full sphere.
//! * [`Domain::H2`]: head harmonics on the spherical cap `θ ∈ [0, 2π/3]`.
//!   The radial part evaluates associated Legendre functions at the stretched
//!   elevation `3θ/2` (which maps the cap onto `[0, π]`) and is then
//!   Gram–Schmidt orthonormalised per azimuthal degree, in increasing order,
//!   under the cap measure `sin θ dθ dφ`. Stretching alone does not give
//!   orthogonality on the cap; the per-degree orthonormalisation does, and
//!   leaves `H_0^0` constant.
//!
//! Coefficients are ordered order-major: `(0,0), (1,-1), (1,0), (1,1),
//! (2,-2), …, (2,2)`.

use crate::dwt::{Band, BandSet};
use crate::montage::{Montage, CAP_MAX_THETA};
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Harmonic order used for a 16-electrode cap: `(L + 1)² = 9 ≤ 16`.
pub const DEFAULT_ORDER: usize = 2;

/// Default Tikhonov weight of the least-squares transform.
pub const DEFAULT_LAMBDA: f64 = 1e-6;

/// Largest accepted condition number of `BᵀB`.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Debug, Error, PartialEq)]
pub enum HarmonicsError {
    #[error("degree {m} invalid for order {l}")]
    InvalidDegree { l: usize, m: i64 },
    #[error("elevation {theta} rad outside the head cap [0, 2π/3]")]
    OutsideCap { theta: f64 },
    #[error("elevation {theta} rad outside [0, π]")]
    OutsideSphere { theta: f64 },
    #[error("basis normal equations ill-conditioned (condition {condition:.3e})")]
    IllConditionedMontage { condition: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "sh")]
    Sh,
    #[serde(rename = "h2")]
    H2,
}

impl Domain {
    /// Area of the domain's support on the unit sphere.
    pub fn area(self) -> f64 {
        match self {
            Domain::Sh => 4.0 * PI,
            Domain::H2 => 2.0 * PI * (1.0 - CAP_MAX_THETA.cos()),
        }
    }
}

impl FromStr for Domain {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sh" => Ok(Domain::Sh),
            "h2" => Ok(Domain::H2),
            _ => Err(format!("unknown harmonic domain `{s}`")),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Sh => "SH",
            Domain::H2 => "H2",
        })
    }
}

/// Number of basis functions up to order `l_max`.
pub fn n_coeffs(l_max: usize) -> usize {
    (l_max + 1) * (l_max + 1)
}

/// Order-major `(l, m)` pairs.
pub fn lm_pairs(l_max: usize) -> Vec<(usize, i64)> {
    (0..=l_max).flat_map(|l| (-(l as i64)..=l as i64).map(move |m| (l, m))).collect()
}

fn factorial_ratio(l: usize, m: usize) -> f64 {
    // (l - m)! / (l + m)!
    ((l - m + 1)..=(l + m)).fold(1.0, |acc, k| acc / k as f64)
}

/// Associated Legendre function without the Condon–Shortley phase.
pub fn assoc_legendre(l: usize, m: usize, x: f64) -> f64 {
    debug_assert!(m <= l);
    let s = (1.0 - x * x).max(0.0).sqrt();
    let mut pmm = 1.0;
    for i in 0..m {
        pmm *= (2 * i + 1) as f64 * s;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = x * (2 * m + 1) as f64 * pmm;
    if l == m + 1 {
        return pm1;
    }
    let mut pll = 0.0;
    for ll in (m + 2)..=l {
        pll = ((2 * ll - 1) as f64 * x * pm1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
        pmm = pm1;
        pm1 = pll;
    }
    pll
}

fn azimuthal(m: i64, phi: f64) -> f64 {
    match m.cmp(&0) {
        std::cmp::Ordering::Equal => 1.0,
        std::cmp::Ordering::Greater => (m as f64 * phi).cos(),
        std::cmp::Ordering::Less => ((-m) as f64 * phi).sin(),
    }
}

fn check_degree(l: usize, m: i64) -> Result<usize, HarmonicsError> {
    let am = m.unsigned_abs() as usize;
    if am > l {
        Err(HarmonicsError::InvalidDegree { l, m })
    } else {
        Ok(am)
    }
}

/// Real orthonormal spherical harmonic `Y_l^m(θ, φ)`.
pub fn real_sh_basis(l: usize, m: i64, theta: f64, phi: f64) -> Result<f64, HarmonicsError> {
    let am = check_degree(l, m)?;
    if !(0.0..=PI + 1e-12).contains(&theta) {
        return Err(HarmonicsError::OutsideSphere { theta });
    }
    let norm = ((2 * l + 1) as f64 / (4.0 * PI) * factorial_ratio(l, am)).sqrt();
    let scale = if m == 0 { 1.0 } else { 2f64.sqrt() };
    Ok(scale * norm * assoc_legendre(l, am, theta.cos()) * azimuthal(m, phi))
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
                p1 = x;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

const CAP_STRETCH: f64 = 1.5;
const CAP_QUADRATURE_NODES: usize = 64;

/// Coefficients expressing the orthonormal cap radial functions of degree
/// `am` (orders `am..=l_max`) in the stretched Legendre functions.
/// Row `i` corresponds to order `am + i`; the matrix is lower triangular.
fn cap_radial_coefficients(am: usize, l_max: usize) -> Vec<Vec<f64>> {
    let k = l_max + 1 - am;
    let (nodes, weights) = gauss_legendre(CAP_QUADRATURE_NODES);
    // ∫_0^{θmax} f(θ) sinθ dθ with θ = θmax (x + 1) / 2
    let half = CAP_MAX_THETA / 2.0;
    let mut gram = vec![vec![0.0; k]; k];
    for (&x, &w) in nodes.iter().zip(&weights) {
        let theta = half * (x + 1.0);
        let t = (CAP_STRETCH * theta).cos();
        let p: Vec<f64> = (0..k).map(|i| assoc_legendre(am + i, am, t)).collect();
        let wt = w * half * theta.sin();
        for i in 0..k {
            for j in 0..=i {
                gram[i][j] += wt * p[i] * p[j];
            }
        }
    }
    // Cholesky G = R Rᵀ, coefficients = R⁻¹
    let mut r = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let s: f64 = gram[i][j] - (0..j).map(|q| r[i][q] * r[j][q]).sum::<f64>();
            r[i][j] = if i == j { s.sqrt() } else { s / r[j][j] };
        }
    }
    let mut inv = vec![vec![0.0; k]; k];
    for col in 0..k {
        for i in col..k {
            let rhs = if i == col { 1.0 } else { 0.0 };
            let s: f64 = (col..i).map(|q| r[i][q] * inv[q][col]).sum();
            inv[i][col] = (rhs - s) / r[i][i];
        }
    }
    inv
}

/// Precomputed head-harmonic basis up to a given order.
#[derive(Debug, Clone)]
pub struct H2Basis {
    l_max: usize,
    // radial[am][i][j]: order am+i in terms of stretched P_{am+j}^{am}
    radial: Vec<Vec<Vec<f64>>>,
}

impl H2Basis {
    pub fn new(l_max: usize) -> Self {
        Self { l_max, radial: (0..=l_max).map(|am| cap_radial_coefficients(am, l_max)).collect() }
    }

    pub fn eval(&self, l: usize, m: i64, theta: f64, phi: f64) -> Result<f64, HarmonicsError> {
        let am = check_degree(l, m)?;
        if l > self.l_max {
            return Err(HarmonicsError::InvalidDegree { l, m });
        }
        if !(0.0..=CAP_MAX_THETA + 1e-12).contains(&theta) {
            return Err(HarmonicsError::OutsideCap { theta });
        }
        let t = (CAP_STRETCH * theta).cos();
        let row = &self.radial[am][l - am];
        let radial: f64 = row.iter().enumerate().map(|(j, c)| c * assoc_legendre(am + j, am, t)).sum();
        let az_norm = if m == 0 { (2.0 * PI).sqrt() } else { PI.sqrt() };
        Ok(radial * azimuthal(m, phi) / az_norm)
    }
}

/// Head harmonic `H_l^m(θ, φ)`, orthonormal over the cap.
pub fn h2_basis(l: usize, m: i64, theta: f64, phi: f64) -> Result<f64, HarmonicsError> {
    check_degree(l, m)?;
    H2Basis::new(l).eval(l, m, theta, phi)
}

/// Basis functions evaluated at the electrodes, `S × (L+1)²`.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    values: Array2<f64>,
    domain: Domain,
    order: usize,
    condition: f64,
}

impl BasisMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Condition number of `BᵀB`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn n_sensors(&self) -> usize {
        self.values.nrows()
    }
}

/// Eigenvalues of a small symmetric matrix (cyclic Jacobi).
pub fn symmetric_eigenvalues(a: &Array2<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut a = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn build_basis_matrix(montage: &Montage, domain: Domain, order: usize) -> Result<BasisMatrix, HarmonicsError> {
    let pairs = lm_pairs(order);
    let h2 = (domain == Domain::H2).then(|| H2Basis::new(order));
    let mut values = Array2::zeros((montage.len(), pairs.len()));
    for (s, e) in montage.electrodes().iter().enumerate() {
        for (k, &(l, m)) in pairs.iter().enumerate() {
            values[[s, k]] = match &h2 {
                None => real_sh_basis(l, m, e.theta, e.phi)?,
                Some(b) => b.eval(l, m, e.theta, e.phi)?,
            };
        }
    }
    let gram = values.t().dot(&values);
    let ev = symmetric_eigenvalues(&gram);
    let condition = if ev[0] <= 0.0 { f64::INFINITY } else { ev[ev.len() - 1] / ev[0] };
    if !(condition <= MAX_CONDITION) {
        return Err(HarmonicsError::IllConditionedMontage { condition });
    }
    Ok(BasisMatrix { values, domain, order, condition })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TransformMethod {
    /// Solve `(BᵀB + λI) c = Bᵀv` per time sample.
    LeastSquares { lambda: f64 },
    /// `c = Bᵀ diag(z) v`; `None` uses equal weights `area / S`.
    Quadrature { weights: Option<Vec<f64>> },
}

impl Default for TransformMethod {
    fn default() -> Self {
        TransformMethod::LeastSquares { lambda: DEFAULT_LAMBDA }
    }
}

/// Harmonic coefficients over time, `(L+1)² × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFeatures {
    pub coeffs: Array2<f64>,
    pub domain: Domain,
    pub order: usize,
}

fn solve_spd(a: &Array2<f64>, b: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s = a[[i, j]] - (0..j).map(|k| l[[i, k]] * l[[j, k]]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    let mut x = b.clone();
    for col in 0..b.ncols() {
        for i in 0..n {
            let s = x[[i, col]] - (0..i).map(|k| l[[i, k]] * x[[k, col]]).sum::<f64>();
            x[[i, col]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let s = x[[i, col]] - (i + 1..n).map(|k| l[[k, i]] * x[[k, col]]).sum::<f64>();
            x[[i, col]] = s / l[[i, i]];
        }
    }
    Some(x)
}

/// Linear map from sensor values to coefficients, `(L+1)² × S`.
pub fn analysis_matrix(basis: &BasisMatrix, method: &TransformMethod) -> Result<Array2<f64>, HarmonicsError> {
    let b = basis.values();
    let s = b.nrows();
    match method {
        TransformMethod::LeastSquares { lambda } => {
            let k = b.ncols();
            let normal = b.t().dot(b) + Array2::<f64>::eye(k) * *lambda;
            let rhs = b.t().to_owned();
            solve_spd(&normal, &rhs).ok_or(HarmonicsError::IllConditionedMontage { condition: f64::INFINITY })
        }
        TransformMethod::Quadrature { weights } => {
            let z = match weights {
                Some(w) if w.len() != s => {
                    return Err(HarmonicsError::ShapeMismatch(format!("{} weights for {s} sensors", w.len())))
                }
                Some(w) => Array1::from(w.clone()),
                None => Array1::from_elem(s, basis.domain().area() / s as f64),
            };
            Ok(b.t().to_owned() * &z)
        }
    }
}

pub fn forward_transform(signal: &Array2<f64>, basis: &BasisMatrix, method: &TransformMethod) -> Result<HarmonicFeatures, HarmonicsError> {
    if signal.nrows() != basis.n_sensors() {
        return Err(HarmonicsError::ShapeMismatch(format!(
            "signal has {} channels, basis {} sensors",
            signal.nrows(),
            basis.n_sensors()
        )));
    }
    let a = analysis_matrix(basis, method)?;
    Ok(HarmonicFeatures { coeffs: a.dot(signal), domain: basis.domain(), order: basis.order() })
}

/// Harmonic coefficients of each rhythm band, in `Band::ALL` order.
pub fn harmonic_band_features(
    bands: &BandSet,
    montage: &Montage,
    domain: Domain,
    method: &TransformMethod,
) -> Result<[HarmonicFeatures; 5], HarmonicsError> {
    let basis = build_basis_matrix(montage, domain, DEFAULT_ORDER)?;
    let a = analysis_matrix(&basis, method)?;
    if bands.delta().nrows() != montage.len() {
        return Err(HarmonicsError::ShapeMismatch(format!(
            "bands have {} channels, montage {}",
            bands.delta().nrows(),
            montage.len()
        )));
    }
    Ok(Band::ALL.map(|b| HarmonicFeatures { coeffs: a.dot(bands.band(b)), domain, order: DEFAULT_ORDER }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dwt::{band_matrix, WaveletSpec};
    use crate::montage::builtin_montage_1020;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_and_pole_values() {
        for (t, p) in [(0.0, 0.0), (1.0, 2.0), (3.0, 5.0)] {
            assert!((real_sh_basis(0, 0, t, p).unwrap() - 0.28209479177387814).abs() < 1e-12);
        }
        assert!((real_sh_basis(1, 0, 0.0, 0.3).unwrap() - (3.0 / (4.0 * PI)).sqrt()).abs() < 1e-12);
        assert!((real_sh_basis(1, 0, 0.0, 0.0).unwrap() - 0.4886025119029199).abs() < 1e-12);
        assert_eq!(real_sh_basis(1, 2, 0.0, 0.0), Err(HarmonicsError::InvalidDegree { l: 1, m: 2 }));
    }

    #[test]
    fn h2_constant_over_cap() {
        let expect = 1.0 / (3.0 * PI).sqrt();
        for t in [0.0, 0.5, 1.2, CAP_MAX_THETA] {
            assert!((h2_basis(0, 0, t, 1.0).unwrap() - expect).abs() < 1e-12);
        }
        assert!(matches!(h2_basis(1, 0, 2.2, 0.0), Err(HarmonicsError::OutsideCap { .. })));
        assert!(matches!(h2_basis(1, -2, 0.2, 0.0), Err(HarmonicsError::InvalidDegree { .. })));
    }

    #[test]
    fn h2_azimuthal_vanish_at_pole() {
        for (l, m) in lm_pairs(2) {
            if m != 0 {
                assert!(h2_basis(l, m, 0.0, 0.7).unwrap().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn basis_shapes_and_condition() {
        let m = builtin_montage_1020();
        for d in [Domain::Sh, Domain::H2] {
            let b = build_basis_matrix(&m, d, 2).unwrap();
            assert_eq!(b.values().dim(), (16, 9));
            let first = b.values().column(0);
            assert!(first.iter().all(|v| (v - first[0]).abs() < 1e-12));
            assert!(b.condition() < 1e4, "{d}: {}", b.condition());
        }
    }

    #[test]
    fn condition_regression_values() {
        let m = builtin_montage_1020();
        let sh = build_basis_matrix(&m, Domain::Sh, 2).unwrap().condition();
        let h2 = build_basis_matrix(&m, Domain::H2, 2).unwrap().condition();
        assert!((sh - SH_CONDITION).abs() < 1e-6 * SH_CONDITION, "{sh}");
        assert!((h2 - H2_CONDITION).abs() < 1e-6 * H2_CONDITION, "{h2}");
    }

    const SH_CONDITION: f64 = 105.04030858512736;
    const H2_CONDITION: f64 = 2.962626401634297;

    #[test]
    fn ill_conditioned_montage() {
        // all electrodes on one ring cannot separate the zonal terms
        let ring: Vec<_> = (0..16)
            .map(|i| crate::montage::Electrode { label: format!("e{i}"), theta: 1.0, phi: i as f64 * 2.0 * PI / 16.0 })
            .collect();
        let m = Montage::new(ring).unwrap();
        assert!(matches!(build_basis_matrix(&m, Domain::Sh, 2), Err(HarmonicsError::IllConditionedMontage { .. })));
    }

    fn random_coeffs(seed: u64, n: usize) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((9, n), |_| rng.random_range(-2.0..2.0))
    }

    #[test]
    fn synthesis_analysis_round_trip() {
        let m = builtin_montage_1020();
        for d in [Domain::Sh, Domain::H2] {
            let b = build_basis_matrix(&m, d, 2).unwrap();
            let c0 = random_coeffs(5, 20);
            let v = b.values().dot(&c0);
            let c = forward_transform(&v, &b, &TransformMethod::LeastSquares { lambda: 0.0 }).unwrap();
            let err = (&c.coeffs - &c0).iter().map(|x| x * x).sum::<f64>().sqrt() / c0.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err < 1e-6, "{d}: {err}");
        }
    }

    #[test]
    fn constant_signal_sh() {
        let b = build_basis_matrix(&builtin_montage_1020(), Domain::Sh, 2).unwrap();
        let v = Array2::ones((16, 3));
        let c = forward_transform(&v, &b, &TransformMethod::LeastSquares { lambda: 0.0 }).unwrap();
        for col in c.coeffs.columns() {
            assert!((col[0] - (4.0 * PI).sqrt()).abs() < 1e-6);
            assert!(col.iter().skip(1).all(|x| x.abs() < 1e-6));
        }
    }

    #[test]
    fn zero_and_shape_errors() {
        let b = build_basis_matrix(&builtin_montage_1020(), Domain::H2, 2).unwrap();
        let c = forward_transform(&Array2::zeros((16, 4)), &b, &TransformMethod::default()).unwrap();
        assert!(c.coeffs.iter().all(|x| *x == 0.0));
        assert_eq!(c.coeffs.dim(), (9, 4));
        assert!(matches!(
            forward_transform(&Array2::zeros((15, 4)), &b, &TransformMethod::default()),
            Err(HarmonicsError::ShapeMismatch(_))
        ));
        let q = TransformMethod::Quadrature { weights: Some(vec![1.0; 3]) };
        assert!(matches!(forward_transform(&Array2::zeros((16, 4)), &b, &q), Err(HarmonicsError::ShapeMismatch(_))));
    }

    #[test]
    fn quadrature_default_weights() {
        let b = build_basis_matrix(&builtin_montage_1020(), Domain::H2, 2).unwrap();
        let v = Array2::ones((16, 1));
        let c = forward_transform(&v, &b, &TransformMethod::Quadrature { weights: None }).unwrap();
        // Σ z_w H_0^0 = 3π · 1/√(3π)
        assert!((c.coeffs[[0, 0]] - (3.0 * PI).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn band_features_commute() {
        let m = builtin_montage_1020();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((16, 400), |_| rng.random_range(-1.0..1.0));
        let spec = WaveletSpec::default();
        let bands = band_matrix(&x, 125.0, &spec).unwrap();
        for d in [Domain::Sh, Domain::H2] {
            let method = TransformMethod::default();
            let per_band = harmonic_band_features(&bands, &m, d, &method).unwrap();
            let basis = build_basis_matrix(&m, d, 2).unwrap();
            let whole = forward_transform(&x, &basis, &method).unwrap();
            let banded = band_matrix(&whole.coeffs, 125.0, &spec).unwrap();
            for (i, b) in Band::ALL.iter().enumerate() {
                assert_eq!(per_band[i].coeffs.dim(), (9, 400));
                let diff = (&per_band[i].coeffs - banded.band(*b)).iter().fold(0.0f64, |a, v| a.max(v.abs()));
                assert!(diff < 1e-8, "{d} {b:?}: {diff}");
            }
        }
    }

    #[test]
    fn zero_gamma_gives_zero_coefficients() {
        let m = builtin_montage_1020();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bands: [Array2<f64>; 5] = std::array::from_fn(|_| Array2::from_shape_fn((16, 64), |_| rng.random_range(-1.0..1.0)));
        bands[4].fill(0.0);
        let set = BandSet::from_bands(bands, crate::dwt::band_edges(125.0, 0.5));
        let out = harmonic_band_features(&set, &m, Domain::Sh, &TransformMethod::default()).unwrap();
        assert!(out[4].coeffs.iter().all(|v| *v == 0.0));
        assert!(out[0].coeffs.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let integral: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((integral - 2.0 / 19.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn eigenvalues_of_known_matrix() {
        let a = ndarray::array![[2.0, 1.0], [1.0, 2.0]];
        let ev = symmetric_eigenvalues(&a);
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 3.0).abs() < 1e-12);
    }
}
