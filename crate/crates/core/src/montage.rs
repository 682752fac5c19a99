//! Electrode positions on the head surface.
//!
//! Angles follow the head-centred convention used by the harmonic
//! transforms: `theta` is the elevation measured down from the vertex and
//! `phi` the azimuth measured counter-clockwise from the +X axis, which
//! points at the nasion (+Y points at the left ear).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use thiserror::Error;

/// Largest elevation covered by the head cap.
pub const CAP_MAX_THETA: f64 = 2.0 * PI / 3.0;

/// Head radius in metres.
pub const HEAD_RADIUS_M: f64 = 0.10;

/// Channel order of the 16-electrode cap.
pub const CAP_LABELS: [&str; 16] = [
    "Fp1", "Fz", "F3", "C3", "T7", "Pz", "P3", "O1", "Oz", "O2", "P4", "Cz", "C4", "T8", "F4", "Fp2",
];

// BESA spherical coordinates (degrees) of the standard 10-20 positions.
// Sign of theta marks the hemisphere (negative = left); phi is measured from
// the T7-T8 axis.
const BESA_1020: [(&str, f64, f64); 16] = [
    ("Fp1", -92.0, -72.0),
    ("Fz", 45.0, 90.0),
    ("F3", -60.0, -51.0),
    ("C3", -46.0, 0.0),
    ("T7", -92.0, 0.0),
    ("Pz", 45.0, -90.0),
    ("P3", -60.0, 51.0),
    ("O1", -92.0, 72.0),
    ("Oz", 92.0, -90.0),
    ("O2", 92.0, -72.0),
    ("P4", 60.0, -51.0),
    ("Cz", 0.0, 0.0),
    ("C4", 46.0, 0.0),
    ("T8", 92.0, 0.0),
    ("F4", 60.0, 51.0),
    ("Fp2", 92.0, 72.0),
];

#[derive(Debug, Error)]
pub enum MontageError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("electrode `{label}` elevation {theta} outside [0, 2π/3]")]
    ElevationOutOfRange { label: String, theta: f64 },
    #[error("electrode `{label}` azimuth {phi} outside [0, 2π)")]
    AzimuthOutOfRange { label: String, phi: f64 },
    #[error("duplicate electrode `{0}`")]
    Duplicate(String),
    #[error("label `{0}` missing from montage")]
    MissingLabel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Electrode {
    pub label: String,
    pub theta: f64,
    pub phi: f64,
}

impl Electrode {
    /// Unit vector in head coordinates.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (st, ct) = self.theta.sin_cos();
        let (sp, cp) = self.phi.sin_cos();
        [st * cp, st * sp, ct]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Montage {
    electrodes: Vec<Electrode>,
}

impl Montage {
    pub fn new(electrodes: Vec<Electrode>) -> Result<Self, MontageError> {
        for (i, e) in electrodes.iter().enumerate() {
            if !(0.0..=CAP_MAX_THETA).contains(&e.theta) {
                return Err(MontageError::ElevationOutOfRange { label: e.label.clone(), theta: e.theta });
            }
            if !(0.0..2.0 * PI).contains(&e.phi) {
                return Err(MontageError::AzimuthOutOfRange { label: e.label.clone(), phi: e.phi });
            }
            if electrodes[..i].iter().any(|o| o.label == e.label) {
                return Err(MontageError::Duplicate(e.label.clone()));
            }
        }
        Ok(Self { electrodes })
    }

    pub fn electrodes(&self) -> &[Electrode] {
        &self.electrodes
    }

    pub fn len(&self) -> usize {
        self.electrodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.electrodes.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Electrode> {
        self.electrodes.iter().find(|e| e.label == label)
    }

    /// Reorders the montage to follow `labels` (e.g. a record's channel order).
    pub fn select(&self, labels: &[String]) -> Result<Montage, MontageError> {
        let electrodes = labels
            .iter()
            .map(|l| self.get(l).cloned().ok_or_else(|| MontageError::MissingLabel(l.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Montage { electrodes })
    }

    /// Parses an override file with one `label,theta_rad,phi_rad` line per
    /// channel. Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self, MontageError> {
        let mut electrodes = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: &str| MontageError::Parse { line: i + 1, msg: msg.to_string() };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(err("expected `label,theta_rad,phi_rad`"));
            }
            let theta: f64 = fields[1].parse().map_err(|_| err("bad theta"))?;
            let phi: f64 = fields[2].parse().map_err(|_| err("bad phi"))?;
            electrodes.push(Electrode { label: fields[0].to_string(), theta, phi });
        }
        Self::new(electrodes)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, MontageError> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn to_override_text(&self) -> String {
        self.electrodes.iter().map(|e| format!("{},{},{}\n", e.label, e.theta, e.phi)).collect()
    }
}

fn besa_to_head(theta_deg: f64, phi_deg: f64) -> (f64, f64) {
    let (t, p) = (theta_deg.to_radians(), phi_deg.to_radians());
    // BESA cartesian: x toward T8, y toward nasion.
    let bx = t.sin() * p.cos();
    let by = t.sin() * p.sin();
    let bz = t.cos();
    let (x, y, z) = (by, -bx, bz);
    let theta = z.clamp(-1.0, 1.0).acos();
    let phi = if x.abs() < 1e-12 && y.abs() < 1e-12 { 0.0 } else { y.atan2(x).rem_euclid(2.0 * PI) };
    // rem_euclid can round up to exactly 2π for tiny negative angles
    let phi = if phi >= 2.0 * PI { 0.0 } else { phi };
    (theta, phi)
}

/// The 16-channel 10-20 cap with standard spherical positions.
pub fn builtin_montage_1020() -> Montage {
    let electrodes = BESA_1020
        .iter()
        .map(|&(label, t, p)| {
            let (mut theta, phi) = besa_to_head(t, p);
            if theta > CAP_MAX_THETA {
                log::warn!("electrode {label} elevation {theta:.3} rad clamped to head cap");
                theta = CAP_MAX_THETA;
            }
            Electrode { label: label.to_string(), theta, phi }
        })
        .collect();
    Montage::new(electrodes).expect("embedded montage table is valid")
}
