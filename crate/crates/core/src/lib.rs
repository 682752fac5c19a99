//! EEG-based decoding of continuous elbow trajectories.
//!
//! The pipeline runs preprocessing, wavelet band splitting, spatial harmonic
//! features and a small convolutional regressor with channel attention.

pub mod decoder;
pub mod dwt;
pub mod features;
pub mod harmonics;
pub mod io;
pub mod metrics;
pub mod montage;
pub mod nn;
pub mod preprocess;
pub mod record;
pub mod spectral;
pub mod synth;

pub use record::{EegRecord, JointAngleRecord, TrialMarker, TrialMarkerSet};
