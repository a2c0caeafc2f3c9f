use std::ops::Range;

use num_bigint::{BigInt, BigUint};

use super::messages::{restore_global, EncryptedUpdate, GammaBroadcast, GlobalModelNoised, PartialAggKeys, ProjectionKeys};
use crate::attacks::{gaussian_poison, AttackConfig, AttackKind};
use crate::error::{Error, Result};
use crate::fe::{advance_noise, ClientKeyPair, NoiseChain, PublicKey, Scheme, SharedSecrets};
use crate::fixedpoint::FixedPointCodec;
use crate::ml::{train_local, LabeledDataset, Model, TrainConfig};
use crate::numtheory::GroupParams;
use crate::par;
use crate::rng::stream;

/// Train from `start` on local data, then apply the client's attack if it is
/// malicious. Clients without data return `start` unchanged.
#[allow(clippy::too_many_arguments)]
pub fn local_update(
    start: &Model,
    data: &LabeledDataset,
    malicious: bool,
    attack: &AttackConfig,
    cfg: &TrainConfig,
    seed: u64,
    client_index: u32,
    round: u64,
) -> Result<Model> {
    let idx = [client_index as u64, round];
    let trained = if data.is_empty() {
        start.clone()
    } else {
        train_local(start, data, cfg, &mut stream(seed, "train", &idx))?
    };
    if malicious && attack.kind == AttackKind::Gaussian {
        gaussian_poison(&trained, attack.noise_std, &mut stream(seed, "gaussian", &idx))
    } else {
        Ok(trained)
    }
}

/// The learning side of a client: data, attack role, and the current model.
#[derive(Debug, Clone)]
pub struct Participant {
    index: u32,
    dataset: LabeledDataset,
    attack: AttackConfig,
    malicious: bool,
    eta: i64,
    /// Noise carried by the most recent upload, removed on the next restore.
    applied_eta: i64,
    model: Model,
}

impl Participant {
    /// `dataset` is the client's partition; label flippers relabel it here.
    pub fn new(index: u32, dataset: LabeledDataset, attack: AttackConfig, malicious: bool, model: Model) -> Self {
        let dataset = if malicious && attack.kind == AttackKind::LabelFlip {
            crate::attacks::flip_labels(&dataset, attack.l_src, attack.l_tar)
        } else {
            dataset
        };
        Participant {
            index,
            dataset,
            attack,
            malicious,
            eta: 0,
            applied_eta: 0,
            model,
        }
    }

    pub fn index(&self) -> u32 {
        self.index
    }

    pub fn is_malicious(&self) -> bool {
        self.malicious
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn eta(&self) -> i64 {
        self.eta
    }

    pub fn set_model(&mut self, model: Model) {
        self.model = model;
    }

    /// Receive the shared perturbation over the client-to-client channel.
    pub fn receive_eta(&mut self, eta: i64) {
        self.eta = eta;
    }

    /// Replace the local model with the de-noised global model.
    pub fn receive_global(&mut self, msg: &GlobalModelNoised, codec: &FixedPointCodec) -> Result<()> {
        self.model = restore_global(&self.model, msg, self.applied_eta, codec)?;
        Ok(())
    }

    pub fn train(&mut self, cfg: &TrainConfig, seed: u64, round: u64) -> Result<()> {
        self.model = local_update(
            &self.model,
            &self.dataset,
            self.malicious,
            &self.attack,
            cfg,
            seed,
            self.index,
            round,
        )?;
        Ok(())
    }

    /// Perturbation for a round; zero in the final round.
    pub fn round_eta(&self, last_round: bool) -> i64 {
        if last_round {
            0
        } else {
            self.eta
        }
    }

    /// Encoded local parameters and the number clipped.
    pub fn encoding(&self, codec: &FixedPointCodec) -> (Vec<i64>, usize) {
        codec.encode_all(&self.model.flatten())
    }

    /// Encoded parameters plus the round's perturbation; records the
    /// perturbation for the next restore.
    pub fn noised_encoding(&mut self, codec: &FixedPointCodec, last_round: bool) -> (Vec<i64>, usize) {
        let eta = self.round_eta(last_round);
        self.applied_eta = eta;
        let (x, clipped) = self.encoding(codec);
        (x.into_iter().map(|v| v + eta).collect(), clipped)
    }
}

/// A client of the encrypted protocol.
#[derive(Debug)]
pub struct ClientState {
    pub participant: Participant,
    keypair: ClientKeyPair,
    shared: Option<SharedSecrets>,
    noise_chain: NoiseChain,
}

impl ClientState {
    pub fn new(participant: Participant, keypair: ClientKeyPair, noise_chain: NoiseChain) -> Self {
        ClientState {
            participant,
            keypair,
            shared: None,
            noise_chain,
        }
    }

    pub fn public(&self) -> &PublicKey {
        self.keypair.public()
    }

    pub fn noise_chain(&self) -> &NoiseChain {
        &self.noise_chain
    }

    /// Derive the pairwise Diffie-Hellman secrets once the public keys are known.
    pub fn establish(&mut self, params: &GroupParams, all_pks: &[PublicKey]) {
        self.shared = Some(self.keypair.shared_secrets(params, all_pks));
    }

    /// Encrypt every element of the local model with the round's noise.
    pub fn upload(
        &mut self,
        scheme: &Scheme,
        codec: &FixedPointCodec,
        round: u64,
        last_round: bool,
    ) -> Result<(EncryptedUpdate, usize)> {
        self.check_round(round)?;
        let p = &mut self.participant;
        let eta = p.round_eta(last_round);
        p.applied_eta = eta;
        let (x, clipped) = p.encoding(codec);
        let eta = BigUint::from(eta as u64);
        let kp = &self.keypair;
        let cts = par::collect_results(par::map_range(x.len(), |e| {
            scheme.encrypt(kp, &BigInt::from(x[e]), &eta, round, e as u64)
        }))?;
        Ok((
            EncryptedUpdate {
                client_index: kp.client_index(),
                round,
                ciphertexts: cts,
            },
            clipped,
        ))
    }

    /// One key per parameter group, built against the server's noised model.
    pub fn projection_keys(
        &self,
        scheme: &Scheme,
        view: &GlobalModelNoised,
        layout: &[Range<usize>],
        round: u64,
    ) -> Result<ProjectionKeys> {
        self.check_round(round)?;
        let y = view.encoded();
        let keys = layout
            .iter()
            .enumerate()
            .map(|(l, r)| {
                let yl: Vec<BigInt> = y[r.clone()].iter().map(|&v| BigInt::from(v)).collect();
                scheme.funkeygen_projection(&self.keypair, &yl, round, l, r.start as u64..r.end as u64)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ProjectionKeys {
            client_index: self.keypair.client_index(),
            round,
            keys,
        })
    }

    pub fn partial_key(&self, scheme: &Scheme, gamma: &GammaBroadcast, element_count: usize) -> Result<PartialAggKeys> {
        self.check_round(gamma.round)?;
        let shared = self
            .shared
            .as_ref()
            .ok_or_else(|| Error::Malformed("pairwise secrets not established".into()))?;
        let weight = gamma.weight(self.keypair.client_index())?;
        let key = scheme.funkeygen_partial_with(&self.keypair, shared, weight, gamma.round, element_count as u64)?;
        Ok(PartialAggKeys { key })
    }

    /// Advance the noise chain to the new round and restore the model.
    pub fn receive_global(&mut self, msg: &GlobalModelNoised, codec: &FixedPointCodec) -> Result<()> {
        if msg.round > 0 {
            self.noise_chain = advance_noise(&self.noise_chain, self.keypair.public(), msg.round - 1);
        }
        self.check_round(msg.round)?;
        self.participant.receive_global(msg, codec)
    }

    fn check_round(&self, round: u64) -> Result<()> {
        if self.noise_chain.round != round {
            return Err(Error::RoundMismatch {
                expected: self.noise_chain.round,
                actual: round,
            });
        }
        Ok(())
    }
}
