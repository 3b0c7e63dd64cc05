use std::path::PathBuf;

/// Exit status for a failed run.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: mohone_core::Error,
    },

    #[error("stage {stage}: missing artifact {}; run `mohone {producer}` first", path.display())]
    MissingArtifact {
        stage: &'static str,
        path: PathBuf,
        producer: &'static str,
    },

    #[error("stage {stage}: {message}")]
    Artifact { stage: &'static str, message: String },

    #[error("stage {stage}: vocabulary hash mismatch for {}: expected {expected}, found {found}", path.display())]
    VocabMismatch {
        stage: &'static str,
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("output directory is locked by {}; remove it if no other run is active", path.display())]
    Locked { path: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Locked { .. } => EXIT_CONFIG,
            CliError::Stage { source, .. } => {
                if source.is_numeric_error() {
                    EXIT_NUMERIC
                } else if source.is_data_error() || matches!(source, mohone_core::Error::NoSampleableNodes) {
                    EXIT_DATA
                } else {
                    EXIT_CONFIG
                }
            }
            CliError::MissingArtifact { .. } | CliError::Artifact { .. } | CliError::VocabMismatch { .. } => EXIT_DATA,
        }
    }

    pub fn stage(stage: &'static str) -> impl Fn(mohone_core::Error) -> CliError {
        move |source| CliError::Stage { stage, source }
    }
}
