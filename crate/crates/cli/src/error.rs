use bicurnet::decoder::DecoderError;
use bicurnet::features::FeatureError;
use bicurnet::io::LoadError;
use bicurnet::metrics::MetricsError;
use bicurnet::montage::MontageError;
use bicurnet::nn::NnError;
use bicurnet::preprocess::PreprocessError;
use bicurnet::synth::SynthError;
use thiserror::Error;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Numeric = 3,
}

/// An error tagged with the module that raised it.
#[derive(Debug, Error)]
#[error("[{module}] {message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub module: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(module: &'static str, message: impl ToString) -> Self {
        Self { kind: ExitKind::Usage, module, message: message.to_string() }
    }

    pub fn data(module: &'static str, message: impl ToString) -> Self {
        Self { kind: ExitKind::Data, module, message: message.to_string() }
    }

    pub fn numeric(module: &'static str, message: impl ToString) -> Self {
        Self { kind: ExitKind::Numeric, module, message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data("io", e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::data("io", e)
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        Self::data("io", e)
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::BadSpec(_) => Self::usage("synth", e),
            _ => Self::data("synth", e),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match e {
            PreprocessError::InvalidCutoff { .. } | PreprocessError::InvalidArtifactSpec(_) => Self::usage("preprocess", e),
            _ => Self::data("preprocess", e),
        }
    }
}

impl From<MontageError> for CliError {
    fn from(e: MontageError) -> Self {
        Self::data("montage", e)
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        use bicurnet::harmonics::HarmonicsError;
        match e {
            FeatureError::BadWindowSpec(_) | FeatureError::BadRatios(_) | FeatureError::UnknownTag(_) | FeatureError::NoAugmentOps => {
                Self::usage("features", e)
            }
            FeatureError::Harmonics(HarmonicsError::IllConditionedMontage { .. }) => Self::numeric("harmonics", e),
            _ => Self::data("features", e),
        }
    }
}

impl From<DecoderError> for CliError {
    fn from(e: DecoderError) -> Self {
        match e {
            DecoderError::NonFiniteLoss { .. } | DecoderError::Nn(NnError::NonFiniteGradient(_)) => Self::numeric("decoder", e),
            DecoderError::BadConfig(_) => Self::usage("decoder", e),
            DecoderError::Feature(f) => f.into(),
            _ => Self::data("decoder", e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::DegenerateSeries => Self::numeric("metrics", e),
            _ => Self::data("metrics", e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
