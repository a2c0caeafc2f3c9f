//! Real <-> bounded-integer codec for model parameters.

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numtheory::PlaintextBound;

/// Largest magnitude kept exact through an `f64` round trip.
const F64_EXACT: i64 = 1 << 53;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointCodec {
    scale_bits: u32,
    /// Largest encodable magnitude, `min(X - 1, 2^53)`.
    limit: i64,
}

impl FixedPointCodec {
    pub fn new(scale_bits: u32, bound: &PlaintextBound) -> Self {
        let x_minus_1 = (&bound.x - 1u32).to_i64().unwrap_or(i64::MAX);
        FixedPointCodec {
            scale_bits,
            limit: x_minus_1.min(F64_EXACT),
        }
    }

    /// Codec with an explicit integer limit, for plaintext-only paths.
    pub fn with_limit(scale_bits: u32, limit: i64) -> Self {
        FixedPointCodec {
            scale_bits,
            limit: limit.min(F64_EXACT),
        }
    }

    pub fn scale(&self) -> f64 {
        (self.scale_bits as f64).exp2()
    }

    pub fn scale_bits(&self) -> u32 {
        self.scale_bits
    }

    pub fn limit(&self) -> i64 {
        self.limit
    }

    /// Round-half-to-even of `f * scale`.
    pub fn encode(&self, f: f64) -> Result<i64> {
        let v = (f * self.scale()).round_ties_even();
        if !v.is_finite() || v.abs() > self.limit as f64 {
            return Err(Error::PlaintextBound(format!("{f} does not fit the fixed-point range")));
        }
        Ok(v as i64)
    }

    /// Encode, clipping to `±limit`. The flag reports whether clipping happened.
    pub fn encode_clipped(&self, f: f64) -> (i64, bool) {
        match self.encode(f) {
            Ok(v) => (v, false),
            Err(_) if f.is_nan() => (0, true),
            Err(_) => (if f > 0.0 { self.limit } else { -self.limit }, true),
        }
    }

    /// Encode a slice; returns the encoded values and the number clipped.
    pub fn encode_all(&self, values: &[f64]) -> (Vec<i64>, usize) {
        let mut clipped = 0;
        let out = values
            .iter()
            .map(|&f| {
                let (v, c) = self.encode_clipped(f);
                clipped += c as usize;
                v
            })
            .collect();
        (out, clipped)
    }

    pub fn decode(&self, v: i64) -> f64 {
        v as f64 / self.scale()
    }

    /// Decode a value carrying one scale factor, held as a big integer.
    pub fn decode_big(&self, v: &BigInt) -> f64 {
        v.to_f64().unwrap_or(f64::NAN) / self.scale()
    }

    /// Decode the product of two encoded factors (scale squared).
    pub fn decode_product(&self, v: &BigInt) -> f64 {
        v.to_f64().unwrap_or(f64::NAN) / (self.scale() * self.scale())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn codec() -> FixedPointCodec {
        FixedPointCodec::with_limit(16, 1 << 40)
    }

    #[test]
    fn examples() {
        let c = codec();
        assert_eq!(c.encode(0.0).unwrap(), 0);
        assert_eq!(c.encode(0.5).unwrap(), 32768);
        assert_eq!(c.decode(0), 0.0);
        assert_eq!(c.decode(32768), 0.5);
        // ties go to even
        assert_eq!(c.encode(0.5 / 65536.0).unwrap(), 0);
        assert_eq!(c.encode(1.5 / 65536.0).unwrap(), 2);
        assert_eq!(c.decode_product(&BigInt::from(1i64 << 32)), 1.0);
    }

    #[test]
    fn out_of_range_is_an_error_and_clips() {
        let c = FixedPointCodec::with_limit(16, 1000);
        assert!(c.encode(1.0).is_err());
        assert!(c.encode(f64::INFINITY).is_err());
        assert_eq!(c.encode_clipped(1.0), (1000, true));
        assert_eq!(c.encode_clipped(-1.0), (-1000, true));
        let (v, clipped) = c.encode_all(&[0.001, 5.0, -5.0]);
        assert_eq!(v, vec![66, 1000, -1000]);
        assert_eq!(clipped, 2);
    }

    proptest! {
        #[test]
        fn rounding_bound(f in -1.0f64..1.0) {
            let c = codec();
            let back = c.decode(c.encode(f).unwrap());
            prop_assert!((f - back).abs() <= 0.5 / c.scale());
        }

        #[test]
        fn integer_round_trip(v in -(1i64 << 40)..(1i64 << 40)) {
            let c = codec();
            prop_assert_eq!(c.encode(c.decode(v)).unwrap(), v);
        }

        #[test]
        fn inner_product_consistency(pairs in proptest::collection::vec((-4.0f64..4.0, -4.0f64..4.0), 1..64)) {
            let c = codec();
            let exact: f64 = pairs.iter().map(|(a, b)| a * b).sum();
            let ip: BigInt = pairs
                .iter()
                .map(|(a, b)| BigInt::from(c.encode(*a).unwrap()) * c.encode(*b).unwrap())
                .sum();
            let amax = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max);
            let bmax = pairs.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
            let tol = pairs.len() as f64 * (amax + bmax + 1.0) / c.scale();
            prop_assert!((c.decode_product(&ip) - exact).abs() <= tol);
        }
    }
}
