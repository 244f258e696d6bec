//! Eigenvector-guided contrastive learning over NDRE time series.
//!
//! The pipeline runs data → spectral weights → encoder training → k-means →
//! staging, statistics, early detection and downstream classifiers. Every
//! stage is deterministic for a fixed seed.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analysis;
pub mod clustering;
pub mod data;
pub mod encoder;
mod error;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod spectral;
pub mod trainer;
pub mod util;

pub use error::{Error, Result};
