//! Full-domain trapdoor permutations on `{0,1}^n`.
//!
//! Two families are provided. `MockTable` stores an explicit permutation
//! table and its inverse; it is what the exhaustive tests and the
//! enumerating prover use. `CycleWalkModular` restricts `x ↦ x^e mod N` to
//! the `n = floor(log2 N)` bit domain by cycle walking: the map is applied
//! repeatedly until the value falls back inside `[0, 2^n)`. Since
//! `2^n > N/2`, the expected walk length is below two.

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Value};
use thiserror::Error;

use crate::bits::BitString;

/// Largest domain a mock table may be generated for unless overridden.
pub const DEFAULT_MOCK_BOUND: usize = 20;
/// Smallest modulus bit-length accepted for randomly generated moduli.
pub const MIN_MODULUS_BITS: usize = 8;
/// Public exponent used for generated moduli.
pub const DEFAULT_EXPONENT: u64 = 65537;

#[derive(Debug, Error)]
pub enum TdpError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("mock table domain of {n} bits exceeds the bound of {bound} bits")]
    MockTooLarge { n: usize, bound: usize },
    #[error("table is not a permutation of 0..2^n")]
    NotPermutation,
    #[error("exponent {e} shares a factor with lambda(N) = {lambda}")]
    ExponentNotCoprime { e: BigUint, lambda: BigUint },
    #[error("input has {found} bits, key domain has {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("malformed key record: {0}")]
    KeyFormat(String),
    #[error("trapdoor does not belong to this public key")]
    KeyMismatch,
}

/// How to generate a key pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TdpConfig {
    MockIdentity { n: usize },
    MockRandom { n: usize },
    MockTable { table: Vec<u32> },
    /// Random modulus of exactly `modulus_bits` bits; the domain is one bit shorter.
    Modular { modulus_bits: usize },
    ModularPrimes { p: BigUint, q: BigUint, e: BigUint },
}

impl TdpConfig {
    /// Modular configuration whose cycle-walking domain has `n` bits.
    pub fn modular_for_domain(n: usize) -> Self {
        TdpConfig::Modular {
            modulus_bits: n + 1,
        }
    }

    pub fn domain_bits(&self) -> Option<usize> {
        match self {
            TdpConfig::MockIdentity { n } | TdpConfig::MockRandom { n } => Some(*n),
            TdpConfig::MockTable { table } => Some(table.len().trailing_zeros() as usize),
            TdpConfig::Modular { modulus_bits } => Some(modulus_bits.saturating_sub(1)),
            TdpConfig::ModularPrimes { p, q, .. } => Some((p * q).bits() as usize - 1),
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(
            self,
            TdpConfig::MockIdentity { .. } | TdpConfig::MockRandom { .. } | TdpConfig::MockTable { .. }
        )
    }
}

/// Modular exponentiation, with a native path for moduli below 2^64.
#[derive(Clone, PartialEq, Eq)]
enum PowMod {
    Native { modulus: u64, exponent: u64 },
    Big { modulus: BigUint, exponent: BigUint },
}

impl PowMod {
    fn new(modulus: &BigUint, exponent: &BigUint) -> Self {
        match (modulus.to_u64(), exponent.to_u64()) {
            (Some(modulus), Some(exponent)) => PowMod::Native { modulus, exponent },
            _ => PowMod::Big {
                modulus: modulus.clone(),
                exponent: exponent.clone(),
            },
        }
    }

    /// Iterates `v ↦ v^e mod N` until the value fits in `n` bits.
    fn cycle_walk(&self, x: &BitString) -> BitString {
        let n = x.len();
        match self {
            PowMod::Native { modulus, exponent } => {
                let bound = if n >= 64 { u64::MAX } else { (1u64 << n) - 1 };
                let mut v = x.to_u64().expect("domain fits below a 64-bit modulus");
                loop {
                    v = pow_mod_u64(v, *exponent, *modulus);
                    if v <= bound {
                        return BitString::from_u64(v, n).expect("value checked against bound");
                    }
                }
            }
            PowMod::Big { modulus, exponent } => {
                let mut v = x.to_biguint();
                loop {
                    v = v.modpow(exponent, modulus);
                    if (v.bits() as usize) <= n {
                        return BitString::from_biguint(&v, n).expect("value checked against bound");
                    }
                }
            }
        }
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod_u64(acc, base, m);
        }
        base = mul_mod_u64(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Public evaluation key.
#[derive(Clone, PartialEq, Eq)]
pub enum PublicKey {
    MockTable {
        n: usize,
        table: Vec<u32>,
    },
    CycleWalkModular {
        n: usize,
        modulus: BigUint,
        exponent: BigUint,
        pow: PowModHandle,
    },
}

/// Opaque cached exponentiation strategy; equality ignores it.
#[derive(Clone)]
pub struct PowModHandle(PowMod);

impl PartialEq for PowModHandle {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}
impl Eq for PowModHandle {}

/// Secret inversion data.
#[derive(Clone, PartialEq, Eq)]
pub enum Trapdoor {
    MockTable {
        n: usize,
        inverse: Vec<u32>,
    },
    CycleWalkModular {
        n: usize,
        modulus: BigUint,
        inverse_exponent: BigUint,
        pow: PowModHandle,
    },
}

// Secret material must never end up in logs.
impl fmt::Debug for Trapdoor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Trapdoor({}, n = {}, <redacted>)", self.variant(), self.n())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PublicKey::MockTable { n, .. } => write!(f, "PublicKey(MockTable, n = {n})"),
            PublicKey::CycleWalkModular {
                n,
                modulus,
                exponent,
                ..
            } => write!(
                f,
                "PublicKey(CycleWalkModular, n = {n}, N = {modulus}, e = {exponent})"
            ),
        }
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct TdpKeyPair {
    pub public: PublicKey,
    pub trapdoor: Trapdoor,
}

impl fmt::Debug for TdpKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TdpKeyPair")
            .field("public", &self.public)
            .field("trapdoor", &self.trapdoor)
            .finish()
    }
}

fn check_len(x: &BitString, n: usize) -> Result<(), TdpError> {
    if x.len() != n {
        return Err(TdpError::LengthMismatch {
            expected: n,
            found: x.len(),
        });
    }
    Ok(())
}

fn table_lookup(table: &[u32], x: &BitString, n: usize) -> BitString {
    let idx = x.to_u64().expect("mock domain fits in 64 bits") as usize;
    BitString::from_u64(table[idx] as u64, n).expect("table entries lie in the domain")
}

impl PublicKey {
    pub fn n(&self) -> usize {
        match self {
            PublicKey::MockTable { n, .. } | PublicKey::CycleWalkModular { n, .. } => *n,
        }
    }

    /// Security parameter: modulus length for modular keys, `n` for tables.
    pub fn security_bits(&self) -> usize {
        match self {
            PublicKey::MockTable { n, .. } => *n,
            PublicKey::CycleWalkModular { modulus, .. } => modulus.bits() as usize,
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            PublicKey::MockTable { .. } => "MockTable",
            PublicKey::CycleWalkModular { .. } => "CycleWalkModular",
        }
    }

    pub fn eval(&self, x: &BitString) -> Result<BitString, TdpError> {
        check_len(x, self.n())?;
        Ok(match self {
            PublicKey::MockTable { n, table } => table_lookup(table, x, *n),
            PublicKey::CycleWalkModular { pow, .. } => pow.0.cycle_walk(x),
        })
    }

    pub fn to_value(&self) -> Value {
        match self {
            PublicKey::MockTable { n, table } => json!({
                "variant": "MockTable",
                "n": n,
                "payload": { "table": table },
            }),
            PublicKey::CycleWalkModular {
                n,
                modulus,
                exponent,
                ..
            } => json!({
                "variant": "CycleWalkModular",
                "n": n,
                "payload": {
                    "exponent": exponent.to_string(),
                    "modulus": modulus.to_string(),
                },
            }),
        }
    }

    /// Sorted keys, no whitespace, big integers as decimal strings.
    pub fn to_canonical_json(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(v: &Value) -> Result<Self, TdpError> {
        let record = KeyRecord::parse(v)?;
        match record.variant {
            "MockTable" => {
                let table = record.table("table")?;
                validate_table(&table, record.n)?;
                Ok(PublicKey::MockTable { n: record.n, table })
            }
            "CycleWalkModular" => {
                let modulus = record.big("modulus")?;
                let exponent = record.big("exponent")?;
                let n = domain_of(&modulus)?;
                if n != record.n {
                    return Err(TdpError::KeyFormat(format!(
                        "declared n = {} but modulus gives n = {n}",
                        record.n
                    )));
                }
                Ok(modular_public(n, modulus, exponent))
            }
            other => Err(TdpError::KeyFormat(format!("unknown variant {other:?}"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, TdpError> {
        let v: Value = serde_json::from_str(s).map_err(|e| TdpError::KeyFormat(e.to_string()))?;
        Self::from_value(&v)
    }
}

impl Trapdoor {
    pub fn n(&self) -> usize {
        match self {
            Trapdoor::MockTable { n, .. } | Trapdoor::CycleWalkModular { n, .. } => *n,
        }
    }

    pub fn variant(&self) -> &'static str {
        match self {
            Trapdoor::MockTable { .. } => "MockTable",
            Trapdoor::CycleWalkModular { .. } => "CycleWalkModular",
        }
    }

    pub fn invert(&self, y: &BitString) -> Result<BitString, TdpError> {
        check_len(y, self.n())?;
        Ok(match self {
            Trapdoor::MockTable { n, inverse } => table_lookup(inverse, y, *n),
            Trapdoor::CycleWalkModular { pow, .. } => pow.0.cycle_walk(y),
        })
    }

    /// Checks that this trapdoor inverts `public` (structurally, not by sampling).
    pub fn matches(&self, public: &PublicKey) -> bool {
        match (self, public) {
            (Trapdoor::MockTable { n, inverse }, PublicKey::MockTable { n: pn, table }) => {
                n == pn
                    && inverse.len() == table.len()
                    && table
                        .iter()
                        .enumerate()
                        .all(|(x, &y)| inverse[y as usize] as usize == x)
            }
            (
                Trapdoor::CycleWalkModular { n, modulus, .. },
                PublicKey::CycleWalkModular {
                    n: pn, modulus: pm, ..
                },
            ) => n == pn && modulus == pm,
            _ => false,
        }
    }

    pub fn to_value(&self) -> Value {
        match self {
            Trapdoor::MockTable { n, inverse } => json!({
                "variant": "MockTable",
                "n": n,
                "payload": { "inverse": inverse },
            }),
            Trapdoor::CycleWalkModular {
                n,
                modulus,
                inverse_exponent,
                ..
            } => json!({
                "variant": "CycleWalkModular",
                "n": n,
                "payload": {
                    "inverse_exponent": inverse_exponent.to_string(),
                    "modulus": modulus.to_string(),
                },
            }),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        self.to_value().to_string()
    }

    pub fn from_value(v: &Value) -> Result<Self, TdpError> {
        let record = KeyRecord::parse(v)?;
        match record.variant {
            "MockTable" => {
                let inverse = record.table("inverse")?;
                validate_table(&inverse, record.n)?;
                Ok(Trapdoor::MockTable {
                    n: record.n,
                    inverse,
                })
            }
            "CycleWalkModular" => {
                let modulus = record.big("modulus")?;
                let inverse_exponent = record.big("inverse_exponent")?;
                let n = domain_of(&modulus)?;
                if n != record.n {
                    return Err(TdpError::KeyFormat(format!(
                        "declared n = {} but modulus gives n = {n}",
                        record.n
                    )));
                }
                Ok(modular_trapdoor(n, modulus, inverse_exponent))
            }
            other => Err(TdpError::KeyFormat(format!("unknown variant {other:?}"))),
        }
    }

    pub fn from_json(s: &str) -> Result<Self, TdpError> {
        let v: Value = serde_json::from_str(s).map_err(|e| TdpError::KeyFormat(e.to_string()))?;
        Self::from_value(&v)
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = Value::deserialize(deserializer)?;
        PublicKey::from_value(&v).map_err(serde::de::Error::custom)
    }
}

struct KeyRecord<'a> {
    variant: &'a str,
    n: usize,
    payload: &'a serde_json::Map<String, Value>,
}

impl<'a> KeyRecord<'a> {
    fn parse(v: &'a Value) -> Result<Self, TdpError> {
        let err = |m: &str| TdpError::KeyFormat(m.to_string());
        let obj = v.as_object().ok_or_else(|| err("key record must be an object"))?;
        if obj.len() != 3 {
            return Err(err("key record must have exactly variant, n, payload"));
        }
        let variant = obj
            .get("variant")
            .and_then(Value::as_str)
            .ok_or_else(|| err("missing variant"))?;
        let n = obj
            .get("n")
            .and_then(Value::as_u64)
            .ok_or_else(|| err("missing n"))? as usize;
        let payload = obj
            .get("payload")
            .and_then(Value::as_object)
            .ok_or_else(|| err("missing payload"))?;
        Ok(KeyRecord { variant, n, payload })
    }

    fn big(&self, field: &str) -> Result<BigUint, TdpError> {
        let s = self
            .payload
            .get(field)
            .and_then(Value::as_str)
            .ok_or_else(|| TdpError::KeyFormat(format!("missing {field}")))?;
        if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) || (s.len() > 1 && s.starts_with('0')) {
            return Err(TdpError::KeyFormat(format!("{field} is not a canonical decimal")));
        }
        s.parse()
            .map_err(|_| TdpError::KeyFormat(format!("{field} is not a decimal integer")))
    }

    fn table(&self, field: &str) -> Result<Vec<u32>, TdpError> {
        let arr = self
            .payload
            .get(field)
            .and_then(Value::as_array)
            .ok_or_else(|| TdpError::KeyFormat(format!("missing {field}")))?;
        arr.iter()
            .map(|v| {
                v.as_u64()
                    .and_then(|x| u32::try_from(x).ok())
                    .ok_or_else(|| TdpError::KeyFormat(format!("{field} entry is not a u32")))
            })
            .collect()
    }
}

fn validate_table(table: &[u32], n: usize) -> Result<(), TdpError> {
    if n == 0 || n > 31 || table.len() != 1usize << n {
        return Err(TdpError::KeyFormat(format!(
            "table of length {} does not cover an n = {n} domain",
            table.len()
        )));
    }
    let mut seen = vec![false; table.len()];
    for &y in table {
        let slot = seen.get_mut(y as usize).ok_or(TdpError::NotPermutation)?;
        if std::mem::replace(slot, true) {
            return Err(TdpError::NotPermutation);
        }
    }
    Ok(())
}

fn invert_table(table: &[u32]) -> Vec<u32> {
    let mut inverse = vec![0u32; table.len()];
    for (x, &y) in table.iter().enumerate() {
        inverse[y as usize] = x as u32;
    }
    inverse
}

fn domain_of(modulus: &BigUint) -> Result<usize, TdpError> {
    if modulus < &BigUint::from(2u32) {
        return Err(TdpError::InvalidConfig("modulus must be at least 2".into()));
    }
    Ok(modulus.bits() as usize - 1)
}

fn modular_public(n: usize, modulus: BigUint, exponent: BigUint) -> PublicKey {
    let pow = PowModHandle(PowMod::new(&modulus, &exponent));
    PublicKey::CycleWalkModular {
        n,
        modulus,
        exponent,
        pow,
    }
}

fn modular_trapdoor(n: usize, modulus: BigUint, inverse_exponent: BigUint) -> Trapdoor {
    let pow = PowModHandle(PowMod::new(&modulus, &inverse_exponent));
    Trapdoor::CycleWalkModular {
        n,
        modulus,
        inverse_exponent,
        pow,
    }
}

fn mock_pair(table: Vec<u32>, n: usize) -> Result<TdpKeyPair, TdpError> {
    validate_table(&table, n)?;
    let inverse = invert_table(&table);
    Ok(TdpKeyPair {
        public: PublicKey::MockTable { n, table },
        trapdoor: Trapdoor::MockTable { n, inverse },
    })
}

/// Generates a key pair with the default mock-table bound.
pub fn gen<R: Rng + ?Sized>(config: &TdpConfig, rng: &mut R) -> Result<TdpKeyPair, TdpError> {
    gen_bounded(config, DEFAULT_MOCK_BOUND, rng)
}

pub fn gen_bounded<R: Rng + ?Sized>(
    config: &TdpConfig,
    mock_bound: usize,
    rng: &mut R,
) -> Result<TdpKeyPair, TdpError> {
    let check_mock = |n: usize| {
        if n == 0 {
            Err(TdpError::InvalidConfig("mock domain must have n >= 1".into()))
        } else if n > mock_bound.min(31) {
            Err(TdpError::MockTooLarge {
                n,
                bound: mock_bound,
            })
        } else {
            Ok(())
        }
    };
    match config {
        TdpConfig::MockIdentity { n } => {
            check_mock(*n)?;
            mock_pair((0..1u32 << n).collect(), *n)
        }
        TdpConfig::MockRandom { n } => {
            check_mock(*n)?;
            let mut table: Vec<u32> = (0..1u32 << n).collect();
            table.shuffle(rng);
            mock_pair(table, *n)
        }
        TdpConfig::MockTable { table } => {
            if !table.len().is_power_of_two() || table.len() < 2 {
                return Err(TdpError::InvalidConfig(format!(
                    "table length {} is not 2^n for n >= 1",
                    table.len()
                )));
            }
            let n = table.len().trailing_zeros() as usize;
            check_mock(n)?;
            mock_pair(table.clone(), n)
        }
        TdpConfig::Modular { modulus_bits } => {
            if *modulus_bits < MIN_MODULUS_BITS {
                return Err(TdpError::InvalidConfig(format!(
                    "modulus must have at least {MIN_MODULUS_BITS} bits, got {modulus_bits}"
                )));
            }
            gen_modular(*modulus_bits, rng)
        }
        TdpConfig::ModularPrimes { p, q, e } => {
            if p == q {
                return Err(TdpError::InvalidConfig("p and q must be distinct".into()));
            }
            for f in [p, q] {
                if !is_probable_prime(f, rng) {
                    return Err(TdpError::InvalidConfig(format!("{f} is not prime")));
                }
            }
            modular_from_primes(p, q, e)
        }
    }
}

fn carmichael_lambda(p: &BigUint, q: &BigUint) -> BigUint {
    let one = BigUint::one();
    (p - &one).lcm(&(q - &one))
}

fn modular_from_primes(p: &BigUint, q: &BigUint, e: &BigUint) -> Result<TdpKeyPair, TdpError> {
    let modulus = p * q;
    let n = domain_of(&modulus)?;
    let lambda = carmichael_lambda(p, q);
    if e.is_zero() || !e.gcd(&lambda).is_one() {
        return Err(TdpError::ExponentNotCoprime {
            e: e.clone(),
            lambda,
        });
    }
    let d = e
        .modinv(&lambda)
        .ok_or_else(|| TdpError::ExponentNotCoprime {
            e: e.clone(),
            lambda: lambda.clone(),
        })?;
    Ok(TdpKeyPair {
        public: modular_public(n, modulus.clone(), e.clone()),
        trapdoor: modular_trapdoor(n, modulus, d),
    })
}

fn gen_modular<R: Rng + ?Sized>(modulus_bits: usize, rng: &mut R) -> Result<TdpKeyPair, TdpError> {
    let e = BigUint::from(DEFAULT_EXPONENT);
    let p_bits = modulus_bits.div_ceil(2);
    let q_bits = modulus_bits - p_bits;
    for _ in 0..10_000 {
        let p = random_prime(p_bits, rng);
        let q = random_prime(q_bits, rng);
        if p == q || (&p * &q).bits() as usize != modulus_bits {
            continue;
        }
        if !e.gcd(&carmichael_lambda(&p, &q)).is_one() {
            continue;
        }
        return modular_from_primes(&p, &q, &e);
    }
    Err(TdpError::InvalidConfig(format!(
        "could not find a {modulus_bits}-bit modulus coprime to e = {DEFAULT_EXPONENT}"
    )))
}

fn random_prime<R: Rng + ?Sized>(bits: usize, rng: &mut R) -> BigUint {
    assert!(bits >= 2);
    loop {
        let mut c = rng.gen_biguint(bits as u64);
        c.set_bit(bits as u64 - 1, true);
        if bits > 2 {
            c.set_bit(0, true);
        }
        if is_probable_prime(&c, rng) {
            return c;
        }
    }
}

const SMALL_PRIMES: [u32; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Miller–Rabin. Deterministic below 3.3·10^24; random extra bases above.
pub fn is_probable_prime<R: Rng + ?Sized>(c: &BigUint, rng: &mut R) -> bool {
    let two = BigUint::from(2u32);
    if c < &two {
        return false;
    }
    for &p in &SMALL_PRIMES {
        let p = BigUint::from(p);
        if c == &p {
            return true;
        }
        if (c % &p).is_zero() {
            return false;
        }
    }
    let one = BigUint::one();
    let c_minus_one = c - &one;
    let s = c_minus_one.trailing_zeros().unwrap_or(0);
    let d = &c_minus_one >> s;
    let witness = |a: &BigUint| -> bool {
        let mut x = a.modpow(&d, c);
        if x == one || x == c_minus_one {
            return false;
        }
        for _ in 1..s {
            x = x.modpow(&two, c);
            if x == c_minus_one {
                return false;
            }
        }
        true
    };
    if SMALL_PRIMES.iter().any(|&a| witness(&BigUint::from(a))) {
        return false;
    }
    if c.bits() > 80 {
        for _ in 0..24 {
            let a = rng.gen_biguint_range(&two, &c_minus_one);
            if witness(&a) {
                return false;
            }
        }
    }
    true
}
