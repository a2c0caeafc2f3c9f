//! Round state machines for clients and server, the orchestrator that wires
//! them together, and the plaintext paths used as oracle and control.

pub mod client;
pub mod eta;
pub mod experiment;
pub mod messages;
pub mod oracle;
pub mod server;

pub use client::{local_update, ClientState, Participant};
pub use eta::{choose_eta, eta_ceiling};
pub use experiment::{
    prepare, run_experiment, run_fedavg, run_srfed, ExperimentReport, InvarianceProbe, PhaseTimes, Prepared,
    RoundRecord, RunReport, Simulation,
};
pub use messages::{
    restore_global, EncryptedUpdate, GammaBroadcast, GlobalModelNoised, PartialAggKeys, ProjectionKeys,
};
pub use server::{aggregate_encrypted, ServerState};

use crate::config::DefenseConfig;
use crate::error::Result;
use crate::rng::subseed;
use crate::robust::{detect, ClusterReport};

/// Selection for one round: clustering and filtering when the defense is
/// enabled, otherwise every client.
pub fn select_clients(points: &[Vec<f64>], defense: &DefenseConfig, seed: u64, round: u64) -> Result<ClusterReport> {
    if !defense.enabled {
        return Ok(ClusterReport::accept_all(points.len()));
    }
    detect(
        points,
        defense.k,
        subseed(seed, "kmeans", &[round]),
        defense.kmeans_max_iter,
        defense.filter,
    )
}
