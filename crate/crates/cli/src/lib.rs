//! Orchestration of the mobilicities pipeline: run directories, the k
//! sweep, and the JSON API served to the explorer.

pub mod config;
pub mod error;
pub mod pipeline;
pub mod serve;
pub mod sweep;

pub use config::Settings;
pub use error::{CliError, ExitKind};
