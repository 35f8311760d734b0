//! Wi-Fi access-point load forecasting: ingest association logs, cluster access
//! points by behavioural features, train global and cluster-specific LSTM
//! forecasters and choose which models to deploy.

pub mod cluster;
pub mod deploy;
pub mod error;
pub mod eval;
pub mod features;
pub mod forecast;
pub mod ingest;
pub mod pipeline;
pub mod reduce;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
