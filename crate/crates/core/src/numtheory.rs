//! Big-integer primitives for the functional-encryption layer: safe primes,
//! the (2N)-th residue subgroup of Z*_{N^2}, and the closed-form discrete log
//! base (1+N).

use std::sync::{Arc, OnceLock};

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Miller-Rabin rounds; error probability at most 4^-40 = 2^-80.
pub const MR_ROUNDS: usize = 40;

/// Smallest modulus size accepted by [`setup_group`].
pub const MIN_GROUP_BITS: u64 = 16;

/// Exponent width covered by the fixed-base table for `g`.
const TABLE_BITS: u64 = 320;

fn small_primes() -> &'static [u32] {
    static PRIMES: OnceLock<Vec<u32>> = OnceLock::new();
    PRIMES.get_or_init(|| {
        const LIMIT: usize = 2048;
        let mut sieve = vec![true; LIMIT];
        sieve[0] = false;
        sieve[1] = false;
        let mut i = 2;
        while i * i < LIMIT {
            if sieve[i] {
                let mut j = i * i;
                while j < LIMIT {
                    sieve[j] = false;
                    j += i;
                }
            }
            i += 1;
        }
        (0..LIMIT).filter(|&i| sieve[i]).map(|i| i as u32).collect()
    })
}

/// Uniform integer with at most `bits` bits.
pub fn random_bits<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    if bits == 0 {
        return BigUint::zero();
    }
    let nbytes = bits.div_ceil(8) as usize;
    let mut buf = vec![0u8; nbytes];
    rng.fill_bytes(&mut buf);
    let excess = (nbytes as u64) * 8 - bits;
    buf[0] &= 0xffu8 >> excess;
    BigUint::from_bytes_be(&buf)
}

/// Uniform integer in `[0, bound)` by rejection sampling.
pub fn random_below<R: RngCore + ?Sized>(rng: &mut R, bound: &BigUint) -> BigUint {
    assert!(!bound.is_zero(), "random_below: empty range");
    let bits = bound.bits();
    loop {
        let c = random_bits(rng, bits);
        if &c < bound {
            return c;
        }
    }
}

/// `Some(false)` if a small factor proves `n` composite, `Some(true)` if `n`
/// is itself a small prime, `None` if undecided.
fn trial_division(n: &BigUint) -> Option<bool> {
    if n < &BigUint::from(2u32) {
        return Some(false);
    }
    for &p in small_primes() {
        let pb = BigUint::from(p);
        if n == &pb {
            return Some(true);
        }
        if (n % &pb).is_zero() {
            return Some(false);
        }
    }
    None
}

fn miller_rabin<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    let one = BigUint::one();
    let two = BigUint::from(2u32);
    let n_minus_1 = n - &one;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    // bases drawn from [2, n-2]
    let span = n - BigUint::from(3u32);
    'witness: for _ in 0..rounds {
        let a = random_below(rng, &span) + &two;
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
            if x == one {
                return false;
            }
        }
        return false;
    }
    true
}

/// Probabilistic primality test: trial division followed by `rounds`
/// Miller-Rabin iterations with random bases.
pub fn is_probable_prime<R: RngCore + ?Sized>(n: &BigUint, rounds: usize, rng: &mut R) -> bool {
    match trial_division(n) {
        Some(v) => v,
        None => miller_rabin(n, rounds, rng),
    }
}

fn safe_prime_candidate<R: RngCore + ?Sized>(bits: u64, top_two: bool, rng: &mut R) -> BigUint {
    // p = 2p' + 1 with p' of bits-1 bits, top bit set, odd.
    let pb = bits - 1;
    let mut sub = random_bits(rng, pb);
    sub.set_bit(pb - 1, true);
    if top_two && pb >= 2 {
        sub.set_bit(pb - 2, true);
    }
    sub.set_bit(0, true);
    sub
}

fn search_safe_prime<R: RngCore + ?Sized>(bits: u64, top_two: bool, rng: &mut R) -> Result<BigUint> {
    if bits < 4 {
        return Err(Error::BitsTooSmall(bits, 4));
    }
    let budget = 16 * bits * bits + 10_000;
    for _ in 0..budget {
        let sub = safe_prime_candidate(bits, top_two, rng);
        let p = (&sub << 1u32) + 1u32;
        if trial_division(&sub) == Some(false) || trial_division(&p) == Some(false) {
            continue;
        }
        // one cheap round on each before paying for the full test
        if !is_probable_prime(&sub, 1, rng) || !is_probable_prime(&p, 1, rng) {
            continue;
        }
        if is_probable_prime(&sub, MR_ROUNDS, rng) && is_probable_prime(&p, MR_ROUNDS, rng) {
            return Ok(p);
        }
    }
    Err(Error::SearchExhausted(budget))
}

/// A prime `p` of exactly `bits` bits with `(p-1)/2` also prime.
pub fn generate_safe_prime<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<BigUint> {
    search_safe_prime(bits, false, rng)
}

/// Windowed table of `g^(d * 2^(8j))`, so `g^e` costs one multiplication per
/// nonzero exponent byte.
#[derive(Debug)]
struct FixedBaseTable {
    windows: Vec<Vec<BigUint>>,
}

impl FixedBaseTable {
    fn build(g: &BigUint, modulus: &BigUint, bits: u64) -> Self {
        let nwin = bits.div_ceil(8) as usize;
        let mut windows = Vec::with_capacity(nwin);
        let mut base = g.clone();
        for _ in 0..nwin {
            let mut row = Vec::with_capacity(256);
            row.push(BigUint::one());
            for d in 1..256 {
                let next = (&row[d - 1] * &base) % modulus;
                row.push(next);
            }
            // base^256 for the next window
            base = (&row[255] * &base) % modulus;
            windows.push(row);
        }
        FixedBaseTable { windows }
    }

    fn pow(&self, e: &BigUint, modulus: &BigUint) -> BigUint {
        let mut acc = BigUint::one();
        for (j, byte) in e.to_bytes_le().iter().enumerate() {
            if *byte != 0 {
                acc = (&acc * &self.windows[j][*byte as usize]) % modulus;
            }
        }
        acc
    }
}

/// Public group parameters: `N = pq` for safe primes `p, q`, and a generator
/// `g` of the (2N)-th residues in Z*_{N^2}.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(into = "GroupRecord", try_from = "GroupRecord")]
pub struct GroupParams {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
    bit_length: u64,
    table: Arc<OnceLock<FixedBaseTable>>,
}

/// Factorization of `N`. Only tests and setup ever hold this.
#[derive(Debug, Clone)]
pub struct GroupTrapdoor {
    pub p: BigUint,
    pub q: BigUint,
}

impl GroupTrapdoor {
    /// `N * p' * q'`, a multiple of the order of every (2N)-th residue.
    pub fn residue_exponent(&self) -> BigUint {
        let ps = (&self.p - 1u32) >> 1u32;
        let qs = (&self.q - 1u32) >> 1u32;
        &self.p * &self.q * ps * qs
    }
}

#[derive(Serialize, Deserialize)]
struct GroupRecord {
    #[serde(rename = "N")]
    n: String,
    g: String,
    bit_length: u64,
}

impl From<GroupParams> for GroupRecord {
    fn from(p: GroupParams) -> Self {
        GroupRecord {
            n: p.n.to_str_radix(16),
            g: p.g.to_str_radix(16),
            bit_length: p.bit_length,
        }
    }
}

impl TryFrom<GroupRecord> for GroupParams {
    type Error = Error;

    fn try_from(r: GroupRecord) -> Result<Self> {
        let parse = |s: &str, what: &str| {
            if s.chars().any(|c| c.is_ascii_uppercase()) {
                return Err(Error::Malformed(format!("{what}: hex must be lowercase")));
            }
            BigUint::parse_bytes(s.as_bytes(), 16)
                .ok_or_else(|| Error::Malformed(format!("{what}: not a hex integer")))
        };
        let n = parse(&r.n, "N")?;
        let g = parse(&r.g, "g")?;
        if n.bits() != r.bit_length {
            return Err(Error::Malformed(format!(
                "bit_length {} does not match N ({} bits)",
                r.bit_length,
                n.bits()
            )));
        }
        let params = GroupParams::from_parts(n, g);
        if params.g.is_zero() || params.g >= params.n_squared || !params.g.gcd(&params.n_squared).is_one() {
            return Err(Error::Malformed("g is not a unit mod N^2".into()));
        }
        Ok(params)
    }
}

impl PartialEq for GroupParams {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.g == other.g
    }
}

impl Eq for GroupParams {}

impl GroupParams {
    fn from_parts(n: BigUint, g: BigUint) -> Self {
        let n_squared = &n * &n;
        let bit_length = n.bits();
        GroupParams {
            n,
            n_squared,
            g,
            bit_length,
            table: Arc::new(OnceLock::new()),
        }
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn bit_length(&self) -> u64 {
        self.bit_length
    }

    /// `g^e mod N^2`.
    pub fn pow_g(&self, e: &BigUint) -> BigUint {
        if e.bits() <= TABLE_BITS {
            let table = self
                .table
                .get_or_init(|| FixedBaseTable::build(&self.g, &self.n_squared, TABLE_BITS));
            table.pow(e, &self.n_squared)
        } else {
            self.g.modpow(e, &self.n_squared)
        }
    }

    /// `(1+N)^m mod N^2 = 1 + (m mod N) N`.
    pub fn pow_one_plus_n(&self, m: &BigInt) -> BigUint {
        let m = reduce_signed(m, &self.n);
        (BigUint::one() + m * &self.n) % &self.n_squared
    }

    pub fn mul(&self, a: &BigUint, b: &BigUint) -> BigUint {
        (a * b) % &self.n_squared
    }

    pub fn inverse(&self, a: &BigUint) -> Option<BigUint> {
        a.modinv(&self.n_squared)
    }
}

/// Reduce a signed integer into `[0, m)`.
pub fn reduce_signed(v: &BigInt, m: &BigUint) -> BigUint {
    let mi = BigInt::from_biguint(Sign::Plus, m.clone());
    v.mod_floor(&mi).to_biguint().expect("mod_floor is non-negative")
}

/// Generate group parameters with an `bits`-bit-class modulus.
pub fn setup_group<R: RngCore + ?Sized>(bits: u64, rng: &mut R) -> Result<GroupParams> {
    setup_group_with_trapdoor(bits, rng).map(|(params, _)| params)
}

pub fn setup_group_with_trapdoor<R: RngCore + ?Sized>(
    bits: u64,
    rng: &mut R,
) -> Result<(GroupParams, GroupTrapdoor)> {
    if bits < MIN_GROUP_BITS {
        return Err(Error::BitsTooSmall(bits, MIN_GROUP_BITS));
    }
    let p_bits = bits / 2;
    let q_bits = bits - p_bits;
    // Pinning the top two bits makes N exactly `bits` long; tiny halves have
    // too few safe primes for that.
    let top_two = p_bits >= 32;
    let p = search_safe_prime(p_bits, top_two, rng)?;
    let q = loop {
        let q = search_safe_prime(q_bits, top_two, rng)?;
        if q != p {
            break q;
        }
    };
    let params = setup_from_primes(&p, &q, rng);
    Ok((params, GroupTrapdoor { p, q }))
}

/// Build parameters from known safe primes, sampling `g`.
pub fn setup_from_primes<R: RngCore + ?Sized>(p: &BigUint, q: &BigUint, rng: &mut R) -> GroupParams {
    let n = p * q;
    let n_squared = &n * &n;
    let two_n = &n << 1u32;
    let g = loop {
        let gp = random_below(rng, &n_squared);
        if gp.is_zero() || !gp.gcd(&n).is_one() {
            continue;
        }
        let g = gp.modpow(&two_n, &n_squared);
        if g.is_one() || g.modpow(&n, &n_squared).is_one() {
            continue;
        }
        break g;
    };
    GroupParams::from_parts(n, g)
}

/// `prod_i bases[i]^exps[i] mod m`, sharing one squaring chain.
pub fn multi_pow(bases: &[&BigUint], exps: &[&BigUint], m: &BigUint) -> BigUint {
    debug_assert_eq!(bases.len(), exps.len());
    let width = exps.iter().map(|e| e.bits()).max().unwrap_or(0);
    let mut acc = BigUint::one();
    if width <= 1 {
        for (b, e) in bases.iter().zip(exps) {
            if !e.is_zero() {
                acc = (&acc * *b) % m;
            }
        }
        return acc;
    }
    for bit in (0..width).rev() {
        acc = (&acc * &acc) % m;
        for (b, e) in bases.iter().zip(exps) {
            if e.bit(bit) {
                acc = (&acc * *b) % m;
            }
        }
    }
    acc
}

/// Closed-form log base (1+N): `((ct - 1) mod N^2) / N`.
pub fn paillier_log(ct: &BigUint, params: &GroupParams) -> Result<BigUint> {
    let nsq = params.n_squared();
    let c = ct % nsq;
    let u = if c.is_zero() { nsq - 1u32 } else { c - 1u32 };
    let (m, rem) = u.div_rem(params.n());
    if !rem.is_zero() {
        return Err(Error::NotInSubgroup);
    }
    Ok(m)
}

/// Map `[0, N)` to `(-N/2, N/2]`.
pub fn centered_lift(v: &BigUint, n: &BigUint) -> BigInt {
    let vi = BigInt::from_biguint(Sign::Plus, v.clone());
    if (v << 1u32) <= *n {
        vi
    } else {
        vi - BigInt::from_biguint(Sign::Plus, n.clone())
    }
}

/// Magnitude limits for messages and key vectors of dimension `dim`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlaintextBound {
    pub x: BigUint,
    pub y: BigUint,
    pub m: BigUint,
    pub dim: u64,
}

impl PlaintextBound {
    /// Widest bound: `M = floor(sqrt(N/dim) / 2)`, `X = Y = M - 1`.
    pub fn new(n: &BigUint, dim: u64) -> Result<Self> {
        let m = Self::m_for(n, dim);
        if m < BigUint::from(2u32) {
            return Err(Error::PlaintextBound(format!(
                "modulus of {} bits too small for dimension {dim}",
                n.bits()
            )));
        }
        let x = &m - 1u32;
        Ok(PlaintextBound { y: x.clone(), x, m, dim })
    }

    pub fn with_limits(n: &BigUint, dim: u64, x: BigUint, y: BigUint) -> Result<Self> {
        let m = Self::m_for(n, dim);
        if x.is_zero() || y.is_zero() || x >= m || y >= m || &(&x * &y) >= n {
            return Err(Error::PlaintextBound(format!("X={x}, Y={y} not below M={m}")));
        }
        Ok(PlaintextBound { x, y, m, dim })
    }

    fn m_for(n: &BigUint, dim: u64) -> BigUint {
        (n / BigUint::from(dim.max(1))).sqrt() >> 1u32
    }

    /// `2 * dim * M^2 < N`.
    pub fn no_wrap(&self, n: &BigUint) -> bool {
        BigUint::from(2 * self.dim) * &self.m * &self.m < *n
    }
}

/// Uniform sample in `[1, 2^bits)`.
pub fn sample_exponent<R: RngCore + ?Sized>(rng: &mut R, bits: u64) -> BigUint {
    loop {
        let s = random_bits(rng, bits);
        if !s.is_zero() {
            return s;
        }
    }
}

/// Uniform `i64` helper used by tests and benchmarks.
pub fn random_signed_below<R: Rng + ?Sized>(rng: &mut R, bound: &BigUint) -> BigInt {
    let mag = random_below(rng, bound);
    if rng.random::<bool>() {
        BigInt::from_biguint(Sign::Minus, mag)
    } else {
        BigInt::from_biguint(Sign::Plus, mag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn brute_is_prime(n: u64) -> bool {
        n >= 2 && (2..).take_while(|d| d * d <= n).all(|d| !n.is_multiple_of(d))
    }

    fn safe_primes_with_bits(bits: u32) -> Vec<u64> {
        ((1u64 << (bits - 1))..(1u64 << bits))
            .filter(|&p| brute_is_prime(p) && brute_is_prime((p - 1) / 2))
            .collect()
    }

    #[test]
    fn tiny_safe_primes_match_enumeration() {
        assert_eq!(safe_primes_with_bits(4), vec![11]);
        assert_eq!(safe_primes_with_bits(5), vec![23]);
        let mut rng = stream(1, "t", &[]);
        assert_eq!(generate_safe_prime(4, &mut rng).unwrap(), BigUint::from(11u32));
        assert_eq!(generate_safe_prime(5, &mut rng).unwrap(), BigUint::from(23u32));
    }

    #[test]
    fn safe_prime_postcondition() {
        let mut rng = stream(2, "t", &[]);
        for bits in [12u64, 16, 24, 64] {
            let p = generate_safe_prime(bits, &mut rng).unwrap();
            assert_eq!(p.bits(), bits);
            assert!(is_probable_prime(&p, MR_ROUNDS, &mut rng));
            assert!(is_probable_prime(&((&p - 1u32) >> 1u32), MR_ROUNDS, &mut rng));
        }
    }

    #[test]
    fn primality_matches_brute_force() {
        let mut rng = stream(3, "t", &[]);
        for n in 0u64..5000 {
            assert_eq!(is_probable_prime(&BigUint::from(n), 20, &mut rng), brute_is_prime(n), "n={n}");
        }
        // Carmichael numbers
        for n in [561u64, 1105, 1729, 2465, 2821, 6601, 8911, 41041, 825265] {
            assert!(!is_probable_prime(&BigUint::from(n), 20, &mut rng));
        }
    }

    #[test]
    fn group_from_small_primes() {
        let mut rng = stream(4, "t", &[]);
        let params = setup_from_primes(&BigUint::from(11u32), &BigUint::from(23u32), &mut rng);
        assert_eq!(params.n(), &BigUint::from(253u32));
        assert_eq!(params.n_squared(), &BigUint::from(64009u32));
        let trap = GroupTrapdoor {
            p: BigUint::from(11u32),
            q: BigUint::from(23u32),
        };
        assert!(params.g().modpow(&trap.residue_exponent(), params.n_squared()).is_one());
    }

    #[test]
    fn setup_invariants_and_determinism() {
        let (a, trap) = setup_group_with_trapdoor(64, &mut stream(5, "g", &[])).unwrap();
        let (b, _) = setup_group_with_trapdoor(64, &mut stream(5, "g", &[])).unwrap();
        let c = setup_group(64, &mut stream(6, "g", &[])).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.n(), c.n());
        assert_eq!(a.bit_length(), 64);
        assert_eq!(&(&trap.p * &trap.q), a.n());
        let g = a.g();
        assert!(!g.is_one());
        assert!(g.gcd(a.n_squared()).is_one());
        assert!(g.modpow(&trap.residue_exponent(), a.n_squared()).is_one());
        assert!(!g.modpow(a.n(), a.n_squared()).is_one());
    }

    #[test]
    fn rejects_tiny_groups() {
        assert!(matches!(
            setup_group(8, &mut stream(0, "g", &[])),
            Err(Error::BitsTooSmall(8, _))
        ));
    }

    #[test]
    fn paillier_log_examples() {
        let mut rng = stream(7, "t", &[]);
        let params = setup_from_primes(&BigUint::from(11u32), &BigUint::from(23u32), &mut rng);
        assert_eq!(paillier_log(&BigUint::one(), &params).unwrap(), BigUint::zero());
        assert_eq!(
            params.pow_one_plus_n(&BigInt::from(11)),
            BigUint::from(2784u32)
        );
        assert_eq!(
            paillier_log(&BigUint::from(2784u32), &params).unwrap(),
            BigUint::from(11u32)
        );
        // 2 is not of the form 1 + kN
        assert!(matches!(
            paillier_log(&BigUint::from(2u32), &params),
            Err(Error::NotInSubgroup)
        ));
    }

    #[test]
    fn paillier_log_round_trip_64_bit() {
        let params = setup_group(64, &mut stream(8, "g", &[])).unwrap();
        let one_plus_n = params.n() + 1u32;
        let mut rng = stream(8, "m", &[]);
        for _ in 0..10_000 {
            let m = random_below(&mut rng, params.n());
            // independent route: generic square-and-multiply
            let ct = one_plus_n.modpow(&m, params.n_squared());
            assert_eq!(paillier_log(&ct, &params).unwrap(), m);
        }
    }

    #[test]
    fn centered_lift_examples() {
        let n = BigUint::from(253u32);
        assert_eq!(centered_lift(&BigUint::zero(), &n), BigInt::from(0));
        assert_eq!(centered_lift(&BigUint::from(250u32), &n), BigInt::from(-3));
        assert_eq!(centered_lift(&BigUint::from(126u32), &n), BigInt::from(126));
        assert_eq!(centered_lift(&BigUint::from(127u32), &n), BigInt::from(-126));
        for x in -126i64..=126 {
            let v = reduce_signed(&BigInt::from(x), &n);
            assert_eq!(centered_lift(&v, &n), BigInt::from(x));
        }
    }

    #[test]
    fn fixed_base_matches_modpow() {
        let params = setup_group(128, &mut stream(9, "g", &[])).unwrap();
        let mut rng = stream(9, "e", &[]);
        for bits in [0u64, 1, 7, 8, 9, 255, 256, 320, 400] {
            let e = random_bits(&mut rng, bits);
            assert_eq!(params.pow_g(&e), params.g().modpow(&e, params.n_squared()));
        }
    }

    #[test]
    fn multi_pow_matches_naive() {
        let params = setup_group(64, &mut stream(10, "g", &[])).unwrap();
        let m = params.n_squared();
        let mut rng = stream(10, "e", &[]);
        let bases: Vec<BigUint> = (0..7).map(|_| random_below(&mut rng, m)).collect();
        let exps: Vec<BigUint> = (0..7).map(|i| random_bits(&mut rng, 3 + 9 * i)).collect();
        let naive = bases
            .iter()
            .zip(&exps)
            .fold(BigUint::one(), |acc, (b, e)| acc * b.modpow(e, m) % m);
        let br: Vec<&BigUint> = bases.iter().collect();
        let er: Vec<&BigUint> = exps.iter().collect();
        assert_eq!(multi_pow(&br, &er, m), naive);
    }

    #[test]
    fn plaintext_bound_invariants() {
        let params = setup_group(128, &mut stream(11, "g", &[])).unwrap();
        for dim in [1u64, 2, 20, 1000] {
            let b = PlaintextBound::new(params.n(), dim).unwrap();
            assert!(&(&b.x * &b.y) < params.n());
            assert!(b.x < b.m && b.y < b.m);
            assert!(b.no_wrap(params.n()));
        }
        assert!(PlaintextBound::new(&BigUint::from(253u32), 100).is_err());
    }

    #[test]
    fn group_record_round_trip() {
        let params = setup_group(64, &mut stream(12, "g", &[])).unwrap();
        let s = serde_json::to_string(&params).unwrap();
        assert!(s.contains("\"N\""));
        let back: GroupParams = serde_json::from_str(&s).unwrap();
        assert_eq!(back, params);
        assert_eq!(back.n_squared(), params.n_squared());
        let bad = s.replace("\"bit_length\":64", "\"bit_length\":65");
        assert!(serde_json::from_str::<GroupParams>(&bad).is_err());
    }
}
