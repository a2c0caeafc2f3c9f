//! Privacy-preserving, poisoning-robust federated learning.
//!
//! Clients encrypt their model updates under a decentralized inner-product
//! functional encryption scheme built on Paillier-style groups. The server can
//! only learn per-layer projections of each update onto the global model and
//! the masked average of the clients it selects; it filters suspected
//! poisoned updates by clustering those projections.

pub mod attacks;
pub mod cli;
pub mod config;
pub mod error;
pub mod fe;
pub mod fixedpoint;
pub mod hexint;
pub mod ml;
pub mod numtheory;
pub mod par;
pub mod protocol;
pub mod report;
pub mod rng;
pub mod robust;

pub use error::{Error, Result};

/// Crate version, echoed into every output header.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
