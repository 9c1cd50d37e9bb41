//! Library side of the `basisfm` command-line tool.
//!
//! A workspace directory holds everything a project produces:
//!
//! ```text
//! cache/     SPEC1 eigensystems, one per (mesh content hash, k)
//! train/     filter.json, transform.json, loss.csv
//! matches/   <x>__<y>.txt, one X index per Y vertex
//! reports/   <x>__<y>.json
//! plots/     CSV exports for external plotting
//! ```

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use config::ProjectConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: basisfm::Error,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{} failures:\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Many(Vec<CliError>),
}

impl CliError {
    /// 1 for configuration or input errors, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_numerical() => 2,
            CliError::Many(all) => all.iter().map(CliError::exit_code).max().unwrap_or(1),
            _ => 1,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for basisfm::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { context: what(), source })
    }
}
