//! Library half of the `vidinpaint` command: argument types, command
//! implementations, report types and the published JSON schemas.

pub mod args;
pub mod commands;
mod error;
pub mod io;
pub mod reports;
pub mod schemas;

pub use args::{Cli, Command};
pub use commands::{run, Output};
pub use error::CliError;
