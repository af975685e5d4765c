//! Paired-protocol backtesting for measuring how much of a strategy's
//! apparent performance comes from information it should not have had.
//!
//! Each protocol variant differs from the clean baseline by exactly one
//! switch. Running both under identical splits, seeds and costs and
//! differencing the metrics gives the leakage gain of that switch.

pub mod evaluate;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod panel;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod runner;
pub mod synth;

pub use panel::{load_panel, OhlcvPanel};
pub use protocol::{ProtocolSpec, Variant};
pub use runner::{run_grid, GridResults, RunConfig};
