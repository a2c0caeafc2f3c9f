//! The aggregator. It only ever handles protocol messages and its own
//! aggregate; it holds no key material beyond the public keys.

use std::ops::Range;
use std::sync::Arc;

use num_bigint::BigInt;
use num_traits::ToPrimitive;

use super::messages::{EncryptedUpdate, GammaBroadcast, GlobalModelNoised, PartialAggKeys, ProjectionKeys};
use super::select_clients;
use crate::config::DefenseConfig;
use crate::error::{Error, Result};
use crate::fe::{funkey_agg, Ciphertext, PartialAggKey, PublicKey, Scheme};
use crate::fixedpoint::FixedPointCodec;
use crate::numtheory::GroupParams;
use crate::par;
use crate::robust::{project_layer, ClusterReport, ProjectionVector};

#[derive(Debug)]
pub struct ServerState {
    scheme: Arc<Scheme>,
    codec: FixedPointCodec,
    client_pks: Vec<PublicKey>,
    layout: Vec<Range<usize>>,
    global: GlobalModelNoised,
    defense: DefenseConfig,
    seed: u64,
}

impl ServerState {
    pub fn new(
        scheme: Arc<Scheme>,
        codec: FixedPointCodec,
        client_pks: Vec<PublicKey>,
        layout: Vec<Range<usize>>,
        initial: GlobalModelNoised,
        defense: DefenseConfig,
        seed: u64,
    ) -> Self {
        ServerState {
            scheme,
            codec,
            client_pks,
            layout,
            global: initial,
            defense,
            seed,
        }
    }

    pub fn round(&self) -> u64 {
        self.global.round
    }

    pub fn group(&self) -> &GroupParams {
        &self.scheme.params
    }

    pub fn client_pks(&self) -> &[PublicKey] {
        &self.client_pks
    }

    pub fn global(&self) -> &GlobalModelNoised {
        &self.global
    }

    pub fn broadcast(&self) -> GlobalModelNoised {
        self.global.clone()
    }

    fn check_updates(&self, updates: &[EncryptedUpdate]) -> Result<()> {
        if updates.len() != self.client_pks.len() {
            return Err(Error::LengthMismatch {
                expected: self.client_pks.len(),
                actual: updates.len(),
            });
        }
        for (i, u) in updates.iter().enumerate() {
            if u.client_index as usize != i + 1 {
                return Err(Error::Malformed(format!("update {i} is from client {}", u.client_index)));
            }
            if u.round != self.round() {
                return Err(Error::RoundMismatch {
                    expected: self.round(),
                    actual: u.round,
                });
            }
            if u.ciphertexts.len() != self.global.len() {
                return Err(Error::LengthMismatch {
                    expected: self.global.len(),
                    actual: u.ciphertexts.len(),
                });
            }
        }
        Ok(())
    }

    /// Layer-wise projections of every client's encrypted update onto the
    /// server's model.
    pub fn project(&self, updates: &[EncryptedUpdate], keys: &[ProjectionKeys]) -> Result<Vec<ProjectionVector>> {
        self.check_updates(updates)?;
        if keys.len() != updates.len() {
            return Err(Error::LengthMismatch {
                expected: updates.len(),
                actual: keys.len(),
            });
        }
        let view = self.global.encoded();
        let round = self.round();
        let pairs: Vec<(&EncryptedUpdate, &ProjectionKeys)> = updates.iter().zip(keys).collect();
        par::collect_results(par::map(&pairs, |(u, k)| {
            if k.client_index != u.client_index || k.round != round {
                return Err(Error::Malformed(format!("projection keys of client {} do not match", k.client_index)));
            }
            if k.keys.len() != self.layout.len() {
                return Err(Error::LengthMismatch {
                    expected: self.layout.len(),
                    actual: k.keys.len(),
                });
            }
            let values = self
                .layout
                .iter()
                .zip(&k.keys)
                .map(|(r, key)| project_layer(&self.scheme, key, &u.ciphertexts[r.clone()], &view[r.clone()], &self.codec))
                .collect::<Result<Vec<f64>>>()?;
            Ok(ProjectionVector {
                values,
                client_index: u.client_index,
                round,
            })
        }))
    }

    /// Cluster the projections and broadcast the selection mask.
    pub fn select(&self, projections: &[ProjectionVector]) -> Result<(ClusterReport, GammaBroadcast)> {
        let points: Vec<Vec<f64>> = projections.iter().map(|p| p.values.clone()).collect();
        let report = select_clients(&points, &self.defense, self.seed, self.round())?;
        let gamma = GammaBroadcast {
            round: self.round(),
            gamma: report.benign_mask.clone(),
        };
        Ok((report, gamma))
    }

    /// Combine the partial keys, decrypt the selected sum element by element
    /// and move to the next round.
    pub fn aggregate(
        &mut self,
        updates: &[EncryptedUpdate],
        partials: &[PartialAggKeys],
        gamma: &GammaBroadcast,
    ) -> Result<GlobalModelNoised> {
        self.check_updates(updates)?;
        if gamma.round != self.round() || gamma.gamma.len() != self.client_pks.len() {
            return Err(Error::Malformed("selection mask does not match the round".into()));
        }
        let keys: Vec<PartialAggKey> = partials.iter().map(|p| p.key.clone()).collect();
        if keys.len() != self.client_pks.len() {
            return Err(Error::LengthMismatch {
                expected: self.client_pks.len(),
                actual: keys.len(),
            });
        }
        if let Some(k) = keys.iter().find(|k| k.round != self.round()) {
            return Err(Error::RoundMismatch {
                expected: self.round(),
                actual: k.round,
            });
        }
        let agg_key = funkey_agg(&keys)?;
        let divisor = gamma.selected() as u64;
        if divisor == 0 {
            return Err(Error::Malformed("no client selected".into()));
        }
        let sums = aggregate_encrypted(&self.scheme, updates, &agg_key, &gamma.gamma)?;
        self.global = GlobalModelNoised {
            round: self.round() + 1,
            sums,
            divisor,
        };
        Ok(self.broadcast())
    }
}

/// Per element, decrypt `sum_i gamma_i * x'_i` from the clients' ciphertexts
/// under the aggregated key.
pub fn aggregate_encrypted(
    scheme: &Scheme,
    updates: &[EncryptedUpdate],
    agg_key: &[BigInt],
    gamma: &[u8],
) -> Result<Vec<i128>> {
    let y: Vec<BigInt> = gamma.iter().map(|&g| BigInt::from(g)).collect();
    par::collect_results(par::map_range(agg_key.len(), |e| {
        let cts: Vec<&Ciphertext> = updates.iter().map(|u| &u.ciphertexts[e]).collect();
        let s = scheme.agg_dec(&agg_key[e], &cts, &y)?;
        s.to_i128()
            .ok_or_else(|| Error::PlaintextBound(format!("aggregate of element {e} exceeds 128 bits")))
    }))
}
