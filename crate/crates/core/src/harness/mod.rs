//! Evaluation tooling: virtual-clock replay, metrics, training data and
//! threshold sweeps.

pub mod dataset;
pub mod metrics;
pub mod sim;
pub mod sweep;
