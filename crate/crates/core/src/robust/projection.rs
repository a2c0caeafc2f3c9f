use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fe::{Ciphertext, ProjectionKey, Scheme};
use crate::fixedpoint::FixedPointCodec;

/// One projection per parameter group for a single client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionVector {
    pub values: Vec<f64>,
    pub client_index: u32,
    pub round: u64,
}

/// Euclidean norm of the encoded global layer, in real units.
pub fn layer_norm(encoded: &[i64], codec: &FixedPointCodec) -> f64 {
    encoded
        .iter()
        .map(|&v| codec.decode(v).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Projection of an encrypted client layer onto the global layer:
/// the functional decryption of `<W', W>` divided by `||W||`.
pub fn project_layer(
    scheme: &Scheme,
    key: &ProjectionKey,
    cts: &[Ciphertext],
    global_layer: &[i64],
    codec: &FixedPointCodec,
) -> Result<f64> {
    if cts.len() != global_layer.len() {
        return Err(Error::LengthMismatch {
            expected: global_layer.len(),
            actual: cts.len(),
        });
    }
    let norm = layer_norm(global_layer, codec);
    if norm == 0.0 {
        return Err(Error::ZeroNorm(key.layer_index));
    }
    let y: Vec<BigInt> = global_layer.iter().map(|&v| BigInt::from(v)).collect();
    let refs: Vec<&Ciphertext> = cts.iter().collect();
    let ip = scheme.agg_dec(&key.value, &refs, &y)?;
    Ok(codec.decode_product(&ip) / norm)
}

/// Same quantity from plaintext encoded values, using the exact integer inner
/// product so it matches the encrypted route bit for bit.
pub fn project_layer_plain(
    client_layer: &[i64],
    global_layer: &[i64],
    codec: &FixedPointCodec,
    layer_index: usize,
) -> Result<f64> {
    if client_layer.len() != global_layer.len() {
        return Err(Error::LengthMismatch {
            expected: global_layer.len(),
            actual: client_layer.len(),
        });
    }
    let norm = layer_norm(global_layer, codec);
    if norm == 0.0 {
        return Err(Error::ZeroNorm(layer_index));
    }
    let ip: i128 = client_layer
        .iter()
        .zip(global_layer)
        .map(|(&a, &b)| a as i128 * b as i128)
        .sum();
    Ok(codec.decode_product(&BigInt::from(ip)) / norm)
}
