use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),

    #[error("missing input file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("{}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] longspan_core::Error),
}

impl CliError {
    /// 2 config, 3 missing input, 4 malformed input, 5 vocabulary or
    /// architecture mismatch, 6 invalid data for the operation, 7 write
    /// failure.
    pub fn exit_code(&self) -> u8 {
        use longspan_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Data(_) => 4,
            CliError::Output { .. } => 7,
            CliError::Core(e) => match e {
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 3,
                E::Io(_) => 7,
                E::Format(_) | E::Parse(_) => 4,
                E::VocabMismatch(_) | E::ArchMismatch { .. } | E::IdOutOfRange { .. } => 5,
                E::InvalidArgument(_)
                | E::EmptyCorpus
                | E::SequenceTooShort { .. }
                | E::Shape { .. }
                | E::NonFinite(_) => 6,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

/// `path` if it names an existing file.
pub fn input(path: &Path) -> Result<&Path> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Config("an input path is empty".into()));
    }
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingFile(path.to_owned()))
    }
}

pub fn output_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Output {
        path: path.to_owned(),
        source,
    }
}
