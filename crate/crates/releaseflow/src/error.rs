use std::path::PathBuf;

use releaseflow_core::dataset::FilmType;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] releaseflow_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{}: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error("film {film}: {source}")]
    Film { film: FilmType, source: Box<Error> },
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const INPUT: i32 = 1;
    pub const NOT_CONVERGED: i32 = 2;
    pub const DIVERGED: i32 = 3;
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn in_film(self, film: FilmType) -> Self {
        Error::Film { film, source: Box::new(self) }
    }

    pub fn core(&self) -> Option<&releaseflow_core::Error> {
        match self {
            Error::Core(e) => Some(e),
            Error::Film { source, .. } => source.core(),
            _ => None,
        }
    }

    /// 3 for numerical divergence, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        use releaseflow_core::Error as C;
        match self.core() {
            Some(C::NonFiniteLoss { .. } | C::EnsembleMemberFailed { .. } | C::DivergentTrajectory { .. }) => {
                exit::DIVERGED
            }
            _ => exit::INPUT,
        }
    }
}
