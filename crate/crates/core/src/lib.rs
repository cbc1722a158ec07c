//! Near-field positioning with a sectored uniform circular array.
//!
//! The pipeline synthesizes spherical-wave uplink snapshots, turns them into
//! normalized sample-covariance (or raw CSI) tensors, and regresses the
//! source's polar coordinates with an attention CNN.

pub mod channel;
pub mod dataset;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
