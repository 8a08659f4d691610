use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] lognet::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit status: 2 config, 3 data, 4 numeric overflow, 5 training divergence, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        use lognet::Error as E;
        match self {
            Self::Config(_) => 2,
            Self::Io { .. } => 3,
            Self::Core(e) => match e {
                E::InvalidArgument(_) | E::Shape { .. } => 2,
                E::Idx(_) | E::Format(_) | E::Io(_) => 3,
                E::Overflow { .. } => 4,
                E::Divergence { .. } => 5,
                _ => 1,
            },
        }
    }
}
