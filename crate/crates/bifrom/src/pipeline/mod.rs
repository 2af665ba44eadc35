//! Workspace lifecycle, persistence formats, configuration, and the CLI.

pub mod cli;
pub mod config;
pub mod matrix_file;
pub mod plot;
pub mod workspace;

pub use cli::run_cli;
pub use config::{ConfigError, RomSolverKind, RunConfig};
pub use matrix_file::{load_matrix, save_matrix, MatrixFileError};
pub use workspace::{Workspace, WorkspaceError};
