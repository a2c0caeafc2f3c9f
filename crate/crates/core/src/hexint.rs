//! Serde helpers encoding big integers as lowercase hexadecimal strings.
//! Signed values carry a leading `-`.

use num_bigint::{BigInt, BigUint, Sign};
use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

pub fn encode_signed(v: &BigInt) -> String {
    match v.sign() {
        Sign::Minus => format!("-{}", v.magnitude().to_str_radix(16)),
        _ => v.magnitude().to_str_radix(16),
    }
}

pub fn decode_unsigned(s: &str) -> Option<BigUint> {
    if s.is_empty() || s.chars().any(|c| !matches!(c, '0'..='9' | 'a'..='f')) {
        return None;
    }
    BigUint::parse_bytes(s.as_bytes(), 16)
}

pub fn decode_signed(s: &str) -> Option<BigInt> {
    match s.strip_prefix('-') {
        Some(rest) => decode_unsigned(rest).map(|m| BigInt::from_biguint(Sign::Minus, m)),
        None => decode_unsigned(s).map(|m| BigInt::from_biguint(Sign::Plus, m)),
    }
}

pub mod unsigned {
    use super::*;

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        decode_unsigned(&s).ok_or_else(|| D::Error::custom(format!("bad hex integer {s:?}")))
    }
}

pub mod signed {
    use super::*;

    pub fn serialize<S: Serializer>(v: &BigInt, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&encode_signed(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigInt, D::Error> {
        let s = String::deserialize(d)?;
        decode_signed(&s).ok_or_else(|| D::Error::custom(format!("bad hex integer {s:?}")))
    }
}

pub mod signed_vec {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(v: &[BigInt], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(v.len()))?;
        for x in v {
            seq.serialize_element(&encode_signed(x))?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<BigInt>, D::Error> {
        let raw = Vec::<String>::deserialize(d)?;
        raw.iter()
            .map(|s| decode_signed(s).ok_or_else(|| D::Error::custom(format!("bad hex integer {s:?}"))))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_hex() {
        assert_eq!(encode_signed(&BigInt::from(-255)), "-ff");
        assert_eq!(decode_signed("-ff"), Some(BigInt::from(-255)));
        assert_eq!(decode_signed("0"), Some(BigInt::from(0)));
        assert_eq!(decode_signed("FF"), None);
        assert_eq!(decode_signed(""), None);
    }
}
