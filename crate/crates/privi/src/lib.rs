//! Storage, providers, curation stages, experiments, CLI and HTTP service
//! for the primate-video toolkit. Algorithms live in `privi_core`.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod formats;
pub mod frames;
pub mod http;
pub mod labels;
pub mod pipeline;
pub mod server;
pub mod workspace;

pub use error::{Error, Result};
