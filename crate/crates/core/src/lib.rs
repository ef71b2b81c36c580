//! Generalist graph anomaly detection: feature alignment, residual graph
//! encoding, in-context anomaly scoring, episodic training and zero-shot
//! scoring with pseudo-normal context refinement.

pub mod align;
pub mod bench;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod inject;
pub mod kmeans;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod scoring;
pub mod synth;
pub mod trainer;
pub mod zero_shot;

pub use error::{Error, Result};
