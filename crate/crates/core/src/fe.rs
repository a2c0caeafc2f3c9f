//! Decentralized inner-product functional encryption over the (2N)-th
//! residue subgroup of Z*_{N^2}.
//!
//! Each encryptor `i` holds a secret exponent `s_i` and publishes
//! `h_i = g^{s_i}`. An element is encrypted as `(1+N)^{x+eta} * g^r` with `r`
//! derived from the secret key and the counter `(round, element)`. A
//! functional key for `y` is `sum r * y`; decryption strips `g^{skf}` and reads
//! the exponent of `(1+N)` in closed form, so there is no discrete-log search.
//!
//! Multi-encryptor keys are assembled from per-client partial keys that carry
//! pairwise masks derived from Diffie-Hellman secrets `g^{s_i s_j}`; the masks
//! telescope away when the server sums the partials.

use std::ops::Range;

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{Signed, Zero};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hexint;
use crate::numtheory::{
    centered_lift, multi_pow, paillier_log, reduce_signed, sample_exponent, GroupParams,
    PlaintextBound,
};

/// Hash context tags.
const TAG_RANDOMNESS: u8 = 0x01;
const TAG_MASK: u8 = 0x02;
const TAG_NOISE: u8 = 0x03;

/// 256-bit hash to integer over a tagged, length-prefixed encoding.
fn h1(tag: u8, fields: &[&[u8]]) -> BigUint {
    let mut h = Sha256::new();
    h.update([tag]);
    for f in fields {
        h.update((f.len() as u64).to_be_bytes());
        h.update(f);
    }
    BigUint::from_bytes_be(&h.finalize())
}

/// Per-element encryption randomness `r = H1(sk, (round, element), aux)`.
pub fn derive_randomness(sk: &BigUint, round: u64, element_index: u64, aux: &[u8]) -> BigUint {
    h1(
        TAG_RANDOMNESS,
        &[
            &sk.to_bytes_be(),
            &round.to_be_bytes(),
            &element_index.to_be_bytes(),
            aux,
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicKey {
    pub client_index: u32,
    #[serde(with = "hexint::unsigned")]
    pub h: BigUint,
}

#[derive(Clone)]
pub struct ClientKeyPair {
    s: BigUint,
    public: PublicKey,
}

impl std::fmt::Debug for ClientKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientKeyPair")
            .field("client_index", &self.public.client_index)
            .field("s", &"<secret>")
            .finish()
    }
}

impl ClientKeyPair {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn client_index(&self) -> u32 {
        self.public.client_index
    }

    /// The secret exponent. Exposed for oracle checks.
    pub fn secret(&self) -> &BigUint {
        &self.s
    }

    pub fn randomness(&self, round: u64, element_index: u64, aux: &[u8]) -> BigUint {
        derive_randomness(&self.s, round, element_index, aux)
    }

    /// `h_j^{s_i} mod N^2` for every other client, indexed like `all_pks`.
    pub fn shared_secrets(&self, params: &GroupParams, all_pks: &[PublicKey]) -> SharedSecrets {
        let secrets = all_pks
            .iter()
            .map(|pk| {
                if pk.client_index == self.client_index() {
                    None
                } else {
                    Some(pk.h.modpow(&self.s, params.n_squared()))
                }
            })
            .collect();
        SharedSecrets {
            owner: self.client_index(),
            peers: all_pks.iter().map(|pk| pk.client_index).collect(),
            secrets,
        }
    }
}

/// Cached Diffie-Hellman values for one client; constant for a key set.
#[derive(Debug, Clone)]
pub struct SharedSecrets {
    owner: u32,
    peers: Vec<u32>,
    secrets: Vec<Option<BigUint>>,
}

impl SharedSecrets {
    pub fn get(&self, peer: u32) -> Option<&BigUint> {
        self.peers
            .iter()
            .position(|&p| p == peer)
            .and_then(|pos| self.secrets[pos].as_ref())
    }
}

/// Pairwise mask `phi^{i,j,e} = H1(g^{s_i s_j}, (round, element), aux)`.
pub fn pairwise_mask(shared: &BigUint, round: u64, element_index: u64, aux: &[u8]) -> BigUint {
    h1(
        TAG_MASK,
        &[
            &shared.to_bytes_be(),
            &round.to_be_bytes(),
            &element_index.to_be_bytes(),
            aux,
        ],
    )
}

/// Hash-chained noise `eta_t = H1(eta_{t-1}, pk, ctr) mod M`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoiseChain {
    pub eta_0: BigUint,
    pub current: BigUint,
    pub round: u64,
    pub m: BigUint,
}

impl NoiseChain {
    pub fn new(eta_0: BigUint, m: BigUint) -> Self {
        let eta_0 = eta_0 % &m;
        NoiseChain {
            current: eta_0.clone(),
            eta_0,
            round: 0,
            m,
        }
    }
}

pub fn advance_noise(chain: &NoiseChain, pk: &PublicKey, ctr: u64) -> NoiseChain {
    let next = h1(
        TAG_NOISE,
        &[&chain.current.to_bytes_be(), &pk.h.to_bytes_be(), &ctr.to_be_bytes()],
    ) % &chain.m;
    NoiseChain {
        eta_0: chain.eta_0.clone(),
        current: next,
        round: chain.round + 1,
        m: chain.m.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(with = "hexint::unsigned")]
    pub value: BigUint,
    pub round: u64,
    pub element_index: u64,
}

/// Single-encryptor functional key for one layer: `sum_e r_e * y_e`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionKey {
    #[serde(with = "hexint::signed")]
    pub value: BigInt,
    pub layer_index: usize,
    pub client_index: u32,
    pub round: u64,
}

/// One client's masked share of an aggregation key, one entry per element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialAggKey {
    pub client_index: u32,
    pub round: u64,
    #[serde(with = "hexint::signed_vec")]
    pub values: Vec<BigInt>,
}

/// Scheme instance: public parameters, plaintext bound and the auxiliary
/// string bound into every hash.
#[derive(Debug, Clone)]
pub struct Scheme {
    pub params: GroupParams,
    pub bound: PlaintextBound,
    pub aux: Vec<u8>,
}

impl Scheme {
    pub fn new(params: GroupParams, bound: PlaintextBound) -> Self {
        Scheme {
            params,
            bound,
            aux: Vec::new(),
        }
    }

    pub fn keygen<R: RngCore + ?Sized>(
        &self,
        client_index: u32,
        rng: &mut R,
        sigma_bits: u64,
    ) -> Result<ClientKeyPair> {
        if sigma_bits < self.params.bit_length() {
            return Err(Error::config(
                "sigma_bits",
                format!(
                    "{sigma_bits} is narrower than the {}-bit modulus",
                    self.params.bit_length()
                ),
            ));
        }
        let s = sample_exponent(rng, sigma_bits);
        let h = self.params.pow_g(&s);
        Ok(ClientKeyPair {
            s,
            public: PublicKey { client_index, h },
        })
    }

    pub fn noise_chain(&self, eta_0: BigUint) -> NoiseChain {
        NoiseChain::new(eta_0, self.bound.m.clone())
    }

    /// `(1+N)^{(x+eta) mod N} * g^r mod N^2`.
    pub fn encrypt(
        &self,
        kp: &ClientKeyPair,
        x: &BigInt,
        eta: &BigUint,
        round: u64,
        element_index: u64,
    ) -> Result<Ciphertext> {
        if x.magnitude() >= &self.bound.x {
            return Err(Error::PlaintextBound(format!("|x| = {} >= X", x.magnitude())));
        }
        if eta >= &self.bound.m {
            return Err(Error::PlaintextBound("eta >= M".into()));
        }
        let shifted = x + BigInt::from_biguint(Sign::Plus, eta.clone());
        let r = kp.randomness(round, element_index, &self.aux);
        let value = self
            .params
            .mul(&self.params.pow_one_plus_n(&shifted), &self.params.pow_g(&r));
        Ok(Ciphertext {
            value,
            round,
            element_index,
        })
    }

    /// Key for `<x', y>` over the elements in `elements`.
    pub fn funkeygen_projection(
        &self,
        kp: &ClientKeyPair,
        y: &[BigInt],
        round: u64,
        layer: usize,
        elements: Range<u64>,
    ) -> Result<ProjectionKey> {
        let span = (elements.end - elements.start) as usize;
        if y.len() != span {
            return Err(Error::LengthMismatch {
                expected: span,
                actual: y.len(),
            });
        }
        if let Some(big) = y.iter().find(|v| v.magnitude() >= &self.bound.y) {
            return Err(Error::PlaintextBound(format!("|y| = {} >= Y", big.magnitude())));
        }
        let mut value = BigInt::zero();
        for (e, yv) in elements.zip(y) {
            if yv.is_zero() {
                continue;
            }
            let r = BigInt::from_biguint(Sign::Plus, kp.randomness(round, e, &self.aux));
            value += r * yv;
        }
        Ok(ProjectionKey {
            value,
            layer_index: layer,
            client_index: kp.client_index(),
            round,
        })
    }

    /// Masked partial aggregation key for elements `0..element_count`.
    pub fn funkeygen_partial(
        &self,
        kp: &ClientKeyPair,
        all_pks: &[PublicKey],
        gamma_i: u8,
        round: u64,
        element_count: u64,
    ) -> Result<PartialAggKey> {
        let shared = kp.shared_secrets(&self.params, all_pks);
        self.funkeygen_partial_with(kp, &shared, gamma_i, round, element_count)
    }

    /// As [`Scheme::funkeygen_partial`], reusing cached shared secrets.
    pub fn funkeygen_partial_with(
        &self,
        kp: &ClientKeyPair,
        shared: &SharedSecrets,
        gamma_i: u8,
        round: u64,
        element_count: u64,
    ) -> Result<PartialAggKey> {
        if gamma_i > 1 {
            return Err(Error::Malformed(format!("gamma must be 0 or 1, got {gamma_i}")));
        }
        if shared.owner != kp.client_index() {
            return Err(Error::Malformed("shared secrets belong to another client".into()));
        }
        let me = kp.client_index();
        let peers: Vec<(u32, &BigUint)> = shared
            .peers
            .iter()
            .zip(&shared.secrets)
            .filter_map(|(&j, s)| s.as_ref().map(|s| (j, s)))
            .collect();
        let values = (0..element_count)
            .map(|e| {
                let mut v = if gamma_i == 1 {
                    BigInt::from_biguint(Sign::Plus, kp.randomness(round, e, &self.aux))
                } else {
                    BigInt::zero()
                };
                for (j, secret) in &peers {
                    let phi = BigInt::from_biguint(Sign::Plus, pairwise_mask(secret, round, e, &self.aux));
                    if *j < me {
                        v += phi;
                    } else {
                        v -= phi;
                    }
                }
                v
            })
            .collect();
        Ok(PartialAggKey {
            client_index: me,
            round,
            values,
        })
    }

    /// `centered_lift(log_{1+N}(prod ct^y * g^{-skf}))`.
    ///
    /// Negative coefficients invert the ciphertext; all inverses are folded
    /// into a single modular inversion at the end.
    pub fn agg_dec(&self, skf: &BigInt, cts: &[&Ciphertext], y: &[BigInt]) -> Result<BigInt> {
        if cts.len() != y.len() {
            return Err(Error::LengthMismatch {
                expected: cts.len(),
                actual: y.len(),
            });
        }
        let nsq = self.params.n_squared();
        let mut pos_b = Vec::new();
        let mut pos_e = Vec::new();
        let mut neg_b = Vec::new();
        let mut neg_e = Vec::new();
        for (ct, yv) in cts.iter().zip(y) {
            match yv.sign() {
                Sign::Plus => {
                    pos_b.push(&ct.value);
                    pos_e.push(yv.magnitude());
                }
                Sign::Minus => {
                    neg_b.push(&ct.value);
                    neg_e.push(yv.magnitude());
                }
                Sign::NoSign => {}
            }
        }
        let mut num = multi_pow(&pos_b, &pos_e, nsq);
        let mut den = multi_pow(&neg_b, &neg_e, nsq);
        let g_skf = self.params.pow_g(skf.magnitude());
        if skf.is_negative() {
            num = self.params.mul(&num, &g_skf);
        } else {
            den = self.params.mul(&den, &g_skf);
        }
        let inv = self
            .params
            .inverse(&den)
            .ok_or_else(|| Error::Malformed("ciphertext not invertible mod N^2".into()))?;
        let ct = self.params.mul(&num, &inv);
        let m = paillier_log(&ct, &self.params)?;
        Ok(centered_lift(&m, self.params.n()))
    }

    /// Reduce a signed plaintext into `[0, N)`.
    pub fn reduce(&self, v: &BigInt) -> BigUint {
        reduce_signed(v, self.params.n())
    }
}

/// Sum the partial keys element-wise; the pairwise masks cancel.
pub fn funkey_agg(partials: &[PartialAggKey]) -> Result<Vec<BigInt>> {
    let first = partials
        .first()
        .ok_or_else(|| Error::Malformed("no partial keys".into()))?;
    let mut seen = Vec::with_capacity(partials.len());
    for p in partials {
        if p.round != first.round {
            return Err(Error::RoundMismatch {
                expected: first.round,
                actual: p.round,
            });
        }
        if p.values.len() != first.values.len() {
            return Err(Error::LengthMismatch {
                expected: first.values.len(),
                actual: p.values.len(),
            });
        }
        if seen.contains(&p.client_index) {
            return Err(Error::Malformed(format!("duplicate partial key from client {}", p.client_index)));
        }
        seen.push(p.client_index);
    }
    let mut acc = vec![BigInt::zero(); first.values.len()];
    for p in partials {
        for (a, v) in acc.iter_mut().zip(&p.values) {
            *a += v;
        }
    }
    Ok(acc)
}

/// `noised - sum_i eta_i * y_i`.
pub fn usr_dec(noised: &BigInt, noise_list: &[BigInt], y: &[BigInt]) -> Result<BigInt> {
    if noise_list.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: noise_list.len(),
            actual: y.len(),
        });
    }
    Ok(noise_list
        .iter()
        .zip(y)
        .fold(noised.clone(), |acc, (eta, yv)| acc - eta * yv))
}

/// Serialized ciphertext vector: a length prefix and lowercase hex values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CiphertextVec {
    pub round: u64,
    pub first_element: u64,
    pub len: usize,
    pub values: Vec<String>,
}

impl CiphertextVec {
    pub fn pack(cts: &[Ciphertext]) -> Result<Self> {
        let round = cts.first().map_or(0, |c| c.round);
        let first_element = cts.first().map_or(0, |c| c.element_index);
        for (k, c) in cts.iter().enumerate() {
            if c.round != round || c.element_index != first_element + k as u64 {
                return Err(Error::Malformed("ciphertexts are not a contiguous run".into()));
            }
        }
        Ok(CiphertextVec {
            round,
            first_element,
            len: cts.len(),
            values: cts.iter().map(|c| c.value.to_str_radix(16)).collect(),
        })
    }

    pub fn unpack(&self) -> Result<Vec<Ciphertext>> {
        if self.values.len() != self.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                actual: self.values.len(),
            });
        }
        self.values
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let value = hexint::decode_unsigned(s)
                    .ok_or_else(|| Error::Malformed(format!("bad ciphertext hex {s:?}")))?;
                Ok(Ciphertext {
                    value,
                    round: self.round,
                    element_index: self.first_element + k as u64,
                })
            })
            .collect()
    }
}

/// Integer inner product, used as the plaintext reference.
pub fn inner_product(x: &[BigInt], y: &[BigInt]) -> BigInt {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}
