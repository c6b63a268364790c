//! Cluster-based analysis of two related multivariate count time series.
//!
//! Each date's counts are clustered with an automatically chosen and
//! temporally smoothed number of clusters. The per-date structures of the
//! two series are then aligned to estimate their lag, and entities whose
//! progression from one series to the other stands out are scored.

pub mod anomaly;
pub mod cluster;
pub mod config;
pub mod error;
pub mod ingest;
pub mod kselect;
pub mod matrices;
pub mod offsets;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
