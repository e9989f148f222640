//! Downlink beamforming for cell-free massive MIMO integrated sensing and
//! communication: channel simulation, exact metrics, classical baselines and
//! a heterogeneous edge-GNN trained with a small reverse-mode autodiff tape.

pub mod autodiff;
pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod gnn;
pub mod metrics;
pub mod system;
pub mod training;

pub use config::SystemConfig;
pub use error::{Error, Result};
pub use metrics::{MetricsReport, MetricsSummary};
pub use system::{BeamformingSolution, ChannelSample};
