//! Decentralized time-series classification with random convolutional
//! kernel features.
//!
//! The toolkit simulates federations of clients that each hold a shard of
//! a univariate classification dataset. Clients never exchange raw series:
//! they train linear models on positive-value proportions of random
//! convolutional kernels and exchange kernel seeds plus model weights.
//! Three training schemes are provided: sequential decentralized training
//! with per-hop kernel selection, server-mediated selection federation,
//! and weighted model averaging baselines.

// Numeric loops here update several parallel-indexed structures at once;
// explicit indices read better than zipped iterators.
#![allow(clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod experiment;
pub mod federation;
pub mod linreg;
pub mod metrics;
pub mod rng;
pub mod rocket;
pub mod synth;

pub use error::{Error, Result};
