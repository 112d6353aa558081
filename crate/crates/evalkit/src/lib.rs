//! Experiment runners, result tables, reports and the CLI behind the `oda`
//! binary.

pub mod cli;
pub mod report;
pub mod studies;
pub mod table;

use std::path::{Path, PathBuf};

use oda_core::config::ConfigError;
use oda_core::data::DataError;
use oda_core::oda::OdaError;
use oda_core::sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Oda(#[from] OdaError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Table(String),
    #[error("missing inputs: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    Missing(Vec<PathBuf>),
    #[error("plot: {0}")]
    Plot(String),
}

impl EvalError {
    /// 2 for configuration problems, 3 for everything that fails at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            EvalError::Config(_) => 2,
            _ => 3,
        }
    }
}

pub(crate) fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<(), EvalError> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    }
    std::fs::write(path, contents).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}

pub(crate) fn read_file(path: impl AsRef<Path>) -> Result<String, EvalError> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.to_path_buf(), source })
}
