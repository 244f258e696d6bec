//! Everything downstream of clustering.

pub mod classify;
pub mod detection;
pub mod pca;
pub mod staging;
pub mod stats;
pub mod transfer;
