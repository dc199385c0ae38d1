//! Benchmark harness for measuring how controlled image degradation changes
//! the error rates of 1:n face identification, broken down by race and gender.
//!
//! The pipeline: [`cohort`] draws a demographically balanced gallery and probe
//! set per replication, [`degrade`] treats the probe images, an
//! [`ident::EmbeddingProvider`] embeds them, [`ident`] searches and tallies
//! outcomes, and [`metrics`] turns the per-replication rates into curves with
//! percentile intervals. [`report`] drives the whole thing from a config file.

pub mod codec;
pub mod cohort;
pub mod degrade;
pub mod error;
pub mod ident;
pub mod image;
pub mod metrics;
pub mod report;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use image::Image;
