//! Algorithmic core of the primate-video curation and behavior-recognition toolkit.
//!
//! Everything here is pure computation over in-memory data and builds with
//! `alloc` only: a small reverse-mode autodiff engine, the curation-pipeline
//! algorithms (cut detection, chunking, relevance filtering, NMS, subsampling),
//! the attentive classifier over frozen token features, evaluation metrics, and
//! a toy latent-prediction pretraining sandbox. File formats, HTTP providers and
//! the command line live in the `privi` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod classifier;
pub mod curation;
pub mod error;
pub mod jepa;
pub mod metrics;
pub mod numerics;
pub mod providers;
pub mod rng;

pub use error::{Error, Result};
pub use rng::{Rng, RngSeed};
