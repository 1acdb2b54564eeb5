//! Throughput of code-division random access under an SINR capture model.
//!
//! Stations pick one of `n_seq` sequences at random and transmit in a shared
//! slot. A packet is detected when no other packet uses its sequence and its
//! SINR, with interference from every other packet scaled by the processing
//! gain, exceeds a threshold. Three schemes are modelled: conventional
//! constant power, and channel-adaptive transmission (wait for the small-scale
//! gain to reach a threshold) with either constant power or channel inversion.
//!
//! [`analytic`] holds the closed forms, [`simulator`] an independent seeded
//! Monte Carlo slot simulator, and [`sweep`] the λ-maximization and parameter
//! sweeps built on both.

pub mod analytic;
#[cfg(feature = "cli")]
pub mod cli;
pub mod model;
pub mod numerics;
pub mod simulator;
pub mod sweep;

pub use model::{InversionRule, PowerNorm, Scheme, SeqCount, SystemParams, ThroughputPoint};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
