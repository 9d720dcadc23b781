//! Unsupervised domain adaptation for lidar semantic segmentation, with a
//! surface-occupancy auxiliary task, on fully synthetic scenes.
//!
//! The crate is organized bottom-up: `nn` is a self-contained f64 autodiff
//! substrate; `geom` handles point-cloud indexing; `sim` produces labeled
//! scans from parametric scenes; `queries` samples the visibility supervision
//! used by the occupancy head; `model` wires the shared encoder and its two
//! heads; `train`, `validators`, and `metrics` implement the adaptation
//! procedures and their evaluation; `io` covers file formats and run
//! configuration; `benchmark` fixes the synthetic source/target pair used by
//! the CLI and the end-to-end tests.

pub mod benchmark;
pub mod cli;
pub mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod queries;
pub mod sim;
pub mod seeds;
pub mod train;
pub mod validators;

pub use error::{Error, Result};
