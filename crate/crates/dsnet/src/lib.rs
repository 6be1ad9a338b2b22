//! Standard-library companion to `dsnet-core`: SemanticKITTI-style file
//! formats, TOML configuration, dataset helpers and parallel benchmark drivers.
//! The `dsnet` binary is built on top of these.

pub mod bench;
pub mod config;
pub mod dataset;
mod error;
pub mod io;

pub use dsnet_core as core;
pub use error::{Error, Result};
