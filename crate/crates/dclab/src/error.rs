use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] ndgrad::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("format: {0}")]
    Format(String),

    #[error("timestep {t} out of range [1, {max}]")]
    TimestepOutOfRange { t: u32, max: u32 },

    #[error("class {class} out of range for {num_classes} classes")]
    ClassOutOfRange { class: usize, num_classes: usize },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("missing artifact {0}; run the producing stage first")]
    MissingArtifact(PathBuf),

    #[error("model must be frozen (pretrained) for this operation")]
    ModelNotFrozen,

    #[error("probe must be trained on clean images to >= 90% accuracy first")]
    UntrainedProbe,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable identifier for the machine-readable CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Engine(_) => "engine",
            Error::Config(_) => "config",
            Error::Dataset(_) => "dataset",
            Error::Format(_) => "format",
            Error::TimestepOutOfRange { .. } => "timestep-out-of-range",
            Error::ClassOutOfRange { .. } => "class-out-of-range",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::MissingArtifact(_) => "missing-artifact",
            Error::ModelNotFrozen => "model-not-frozen",
            Error::UntrainedProbe => "untrained-probe",
            Error::Io(_) => "io",
        }
    }
}
