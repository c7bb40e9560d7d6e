//! Command-line layer for prmix: data ingestion, configuration, artifact
//! persistence and plotting.

pub mod config;
pub mod dataset;
pub mod error;
pub mod output;
pub mod plot;
pub mod run;

pub use config::{Command, RunConfig};
pub use error::ExitKind;
pub use run::{run, RunSummary};
