//! Pipelines for clustering Android apps by description or APK features
//! and for flagging apps whose sensitive-API usage deviates from their
//! cluster.
//!
//! Stages communicate through files in an output directory, so each can
//! be rerun on its own. The [`commands`] functions are the subcommands;
//! [`pipeline`] holds the same stages over in-memory data.

pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod synth;
pub mod vectorizer;

pub use config::{ConfigFlags, EmbedderChoice, FeatureGroup, KernelChoice, RunConfig};
pub use error::{CliError, Result};
pub use report::RunReport;
