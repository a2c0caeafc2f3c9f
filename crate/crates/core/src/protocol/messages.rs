use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{Ciphertext, PartialAggKey, ProjectionKey};
use crate::fixedpoint::FixedPointCodec;
use crate::ml::Model;

/// Client to server: one ciphertext per model element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedUpdate {
    pub client_index: u32,
    pub round: u64,
    pub ciphertexts: Vec<Ciphertext>,
}

/// Client to server: one projection key per parameter group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionKeys {
    pub client_index: u32,
    pub round: u64,
    pub keys: Vec<ProjectionKey>,
}

/// Server to clients: the selection mask of the round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GammaBroadcast {
    pub round: u64,
    pub gamma: Vec<u8>,
}

impl GammaBroadcast {
    pub fn selected(&self) -> usize {
        self.gamma.iter().filter(|&&g| g == 1).count()
    }

    /// Weight of a client, by 1-based index.
    pub fn weight(&self, client_index: u32) -> Result<u8> {
        self.gamma
            .get(client_index as usize - 1)
            .copied()
            .ok_or_else(|| Error::Malformed(format!("no weight for client {client_index}")))
    }
}

/// Client to server: masked share of the aggregation key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialAggKeys {
    pub key: PartialAggKey,
}

/// Server to clients: the aggregate of the selected noised updates, kept as
/// exact integer sums together with the number of summands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalModelNoised {
    /// Number of completed aggregations that produced this model.
    pub round: u64,
    pub sums: Vec<i128>,
    pub divisor: u64,
}

impl GlobalModelNoised {
    /// The initial model as a single encoded summand.
    pub fn initial(encoded: &[i64]) -> Self {
        GlobalModelNoised {
            round: 0,
            sums: encoded.iter().map(|&v| v as i128).collect(),
            divisor: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.sums.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sums.is_empty()
    }

    /// Real-valued parameters `S / (n * scale)`, still carrying the noise.
    pub fn params(&self, codec: &FixedPointCodec) -> Vec<f64> {
        let d = self.divisor as f64 * codec.scale();
        self.sums.iter().map(|&s| s as f64 / d).collect()
    }

    /// The averaged model back in the encoded domain, `round_half_even(S / n)`.
    pub fn encoded(&self) -> Vec<i64> {
        let n = self.divisor as i128;
        self.sums.iter().map(|&s| div_round_even(s, n) as i64).collect()
    }
}

/// `a / b` rounded to nearest, ties to even. `b > 0`.
pub fn div_round_even(a: i128, b: i128) -> i128 {
    let q = a.div_euclid(b);
    let r = a.rem_euclid(b);
    match (2 * r).cmp(&b) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Remove the shared noise from an aggregate: every summand carried `eta`,
/// so the clean average is `(S - n * eta) / (n * scale)`.
pub fn restore_global(
    template: &Model,
    noised: &GlobalModelNoised,
    eta: i64,
    codec: &FixedPointCodec,
) -> Result<Model> {
    if noised.divisor == 0 {
        return Err(Error::Malformed("aggregate over zero clients".into()));
    }
    let n = noised.divisor as i128;
    let d = noised.divisor as f64 * codec.scale();
    let params: Vec<f64> = noised
        .sums
        .iter()
        .map(|&s| (s - n * eta as i128) as f64 / d)
        .collect();
    template.with_params(&params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rounding_division() {
        assert_eq!(div_round_even(7, 2), 4);
        assert_eq!(div_round_even(5, 2), 2);
        assert_eq!(div_round_even(-5, 2), -2);
        assert_eq!(div_round_even(-7, 2), -4);
        assert_eq!(div_round_even(10, 3), 3);
        assert_eq!(div_round_even(-10, 3), -3);
        assert_eq!(div_round_even(11, 3), 4);
    }

    #[test]
    fn restore_removes_noise_exactly() {
        let codec = FixedPointCodec::with_limit(16, 1 << 40);
        let model = Model::mlp(&[3, 4, 2], &mut stream(1, "m", &[]));
        let (enc, _) = codec.encode_all(&model.flatten());
        let eta = 37;
        let noised = GlobalModelNoised {
            round: 1,
            sums: enc.iter().map(|&v| 3 * (v as i128 + eta as i128)).collect(),
            divisor: 3,
        };
        let restored = restore_global(&model, &noised, eta, &codec).unwrap();
        let (back, _) = codec.encode_all(&restored.flatten());
        assert_eq!(back, enc);
        let same = restore_global(&model, &GlobalModelNoised::initial(&enc), 0, &codec).unwrap();
        assert_eq!(codec.encode_all(&same.flatten()).0, enc);
        assert_eq!(noised.encoded(), enc.iter().map(|v| v + eta).collect::<Vec<_>>());
    }
}
