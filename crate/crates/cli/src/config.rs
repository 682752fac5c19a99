//! Run configuration, read from TOML. Every table rejects unknown keys.
//!
//! ```toml
//! out_dir = "runs/default"
//!
//! [data]
//! groups = 1                 # synthetic sessions, one per group
//! # sessions = [{ eeg = "eeg.csv", trajectory = "traj.csv", markers = "markers.csv" }]
//!
//! [synth]
//! n_trials = 40
//! noise_snr_db = -5.0
//! seed = 7
//!
//! [preprocess]
//! normalize = true
//! # artifacts = { ocular_rate = 0.2, ocular_amp = 60.0, emg_band = [20.0, 60.0], emg_snr_db = 10.0, seed = 11 }
//!
//! [features]
//! tag = "V_com"
//!
//! [window]
//! window_ms = 1600
//! lag_ms = 240
//!
//! [dataset]
//! ratios = [0.8, 0.1, 0.1]
//!
//! [model]
//! epochs = 100
//!
//! [sweep]
//! windows_ms = [320, 800, 1200, 1600]
//! lags_ms = [8, 40, 80, 160, 240]
//! features = ["V_com"]
//! ```

use std::path::{Path, PathBuf};

use bicurnet::decoder::ModelConfig;
use bicurnet::dwt::WaveletSpec;
use bicurnet::features::{FeatureTag, Grouping, WindowSpec, DEFAULT_LAGS_MS, DEFAULT_RATIOS, DEFAULT_WINDOWS_MS};
use bicurnet::harmonics::TransformMethod;
use bicurnet::preprocess::{ArtifactSpec, BaselineRemovalSpec};
use bicurnet::record::TRAJECTORY_FS;
use bicurnet::synth::SynthSpec;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub synth: SynthSpec,
    pub preprocess: PreprocessConfig,
    pub features: FeatureConfig,
    pub window: WindowSpec,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("bicurnet-run"),
            data: DataConfig::default(),
            synth: SynthSpec::default(),
            preprocess: PreprocessConfig::default(),
            features: FeatureConfig::default(),
            window: WindowSpec::default(),
            dataset: DatasetConfig::default(),
            model: ModelConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Where sessions come from: recorded files when `sessions` is non-empty,
/// otherwise `groups` synthetic sessions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub groups: u32,
    pub sessions: Vec<SessionPaths>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { groups: 1, sessions: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionPaths {
    pub eeg: PathBuf,
    pub trajectory: PathBuf,
    /// Without markers the whole session is one trial.
    #[serde(default)]
    pub markers: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub target_fs: f64,
    pub baseline: BaselineRemovalSpec,
    pub normalize: bool,
    /// Injected before baseline removal when present.
    pub artifacts: Option<ArtifactSpec>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { target_fs: TRAJECTORY_FS, baseline: BaselineRemovalSpec::default(), normalize: true, artifacts: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub tag: FeatureTag,
    pub wavelet: WaveletSpec,
    pub method: TransformMethod,
    /// Electrode position override file.
    pub montage: Option<PathBuf>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { tag: FeatureTag::Combined, wavelet: WaveletSpec::default(), method: TransformMethod::default(), montage: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub ratios: (f64, f64, f64),
    pub grouping: Grouping,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { ratios: DEFAULT_RATIOS, grouping: Grouping::ByTrial, seed: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub windows_ms: Vec<u32>,
    pub lags_ms: Vec<u32>,
    pub features: Vec<FeatureTag>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { windows_ms: DEFAULT_WINDOWS_MS.to_vec(), lags_ms: DEFAULT_LAGS_MS.to_vec(), features: vec![FeatureTag::Combined] }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::usage("config", e.message().trim()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The configuration at `path`, or the defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.sessions.is_empty() {
            self.synth.validate()?;
            if self.data.groups == 0 {
                return Err(CliError::usage("config", "data.groups must be at least 1"));
            }
        }
        self.window.validate()?;
        if (self.window.fs - self.preprocess.target_fs).abs() > 1e-9 {
            return Err(CliError::usage(
                "config",
                format!("window.fs {} differs from preprocess.target_fs {}", self.window.fs, self.preprocess.target_fs),
            ));
        }
        self.model.validate()?;
        if let Some(a) = &self.preprocess.artifacts {
            a.validate(self.preprocess.target_fs)?;
        }
        if self.sweep.windows_ms.is_empty() || self.sweep.lags_ms.is_empty() || self.sweep.features.is_empty() {
            return Err(CliError::usage("config", "sweep lists must be non-empty"));
        }
        Ok(())
    }

    /// Model configuration for a feature matrix of `n_channels` rows and
    /// the given window.
    pub fn model_for(&self, n_channels: usize, window: &WindowSpec) -> ModelConfig {
        ModelConfig { n_channels, n_samples: window.n_samples(), ..self.model.clone() }
    }
}
