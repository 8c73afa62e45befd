//! Command-line entry points and the HTTP service.

pub mod cli;
pub mod server;

pub use cli::run_cli;
