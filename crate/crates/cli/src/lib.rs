//! File formats and subcommands of the `kantab` binary.

pub mod commands;
pub mod error;
pub mod files;

pub use error::CliError;
pub use files::{ChainFile, SystemFile};
