//! Bit strings over GF(2) and the structured linear systems produced by
//! interactive hashing.
//!
//! Positions are 1-based and counted from the left, so position 1 is the
//! most significant bit. With that convention lexicographic order on equal
//! length strings coincides with numeric order, and a hash query for round
//! `j` is simply a string whose highest set bit sits at position `j`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

const WORD_BITS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BitsError {
    #[error("length mismatch: {left} vs {right} bits")]
    LengthMismatch { left: usize, right: usize },
    #[error("bit strings must have positive length")]
    EmptyLength,
    #[error("invalid character {found:?} at offset {offset} (expected '0' or '1')")]
    InvalidChar { offset: usize, found: char },
    #[error("value does not fit in {n} bits")]
    Overflow { n: usize },
    #[error("round index {j} out of range 1..={max} for n = {n}")]
    RoundOutOfRange { j: usize, n: usize, max: usize },
    #[error("hash query {j} is not of the form 0^{{j-1}}1{{0,1}}^{{n-j}}: {query}")]
    MalformedQuery { j: usize, query: BitString },
    #[error("expected {expected} queries for n = {n}, got {found}")]
    QueryCount { n: usize, expected: usize, found: usize },
    #[error("expected {expected} answers, got {found}")]
    AnswerCount { expected: usize, found: usize },
}

/// A fixed-length string of bits.
///
/// Stored as little-endian 64-bit limbs of the numeric value; unused high
/// bits of the last limb are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitString {
    n: usize,
    words: Vec<u64>,
}

fn word_count(n: usize) -> usize {
    n.div_ceil(WORD_BITS)
}

impl BitString {
    /// The all-zero string of length `n`.
    ///
    /// Panics if `n == 0`; use [`BitString::try_zeros`] for a fallible variant.
    pub fn zeros(n: usize) -> Self {
        Self::try_zeros(n).expect("bit string length must be positive")
    }

    pub fn try_zeros(n: usize) -> Result<Self, BitsError> {
        if n == 0 {
            return Err(BitsError::EmptyLength);
        }
        Ok(BitString {
            n,
            words: vec![0; word_count(n)],
        })
    }

    /// Uniformly random string of length `n`.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut s = Self::zeros(n);
        for w in s.words.iter_mut() {
            *w = rng.gen();
        }
        s.mask_top();
        s
    }

    /// Interprets `value` as an `n`-bit number.
    pub fn from_u64(value: u64, n: usize) -> Result<Self, BitsError> {
        let mut s = Self::try_zeros(n)?;
        if n < WORD_BITS && value >> n != 0 {
            return Err(BitsError::Overflow { n });
        }
        s.words[0] = value;
        Ok(s)
    }

    pub fn from_biguint(value: &BigUint, n: usize) -> Result<Self, BitsError> {
        let mut s = Self::try_zeros(n)?;
        if value.bits() as usize > n {
            return Err(BitsError::Overflow { n });
        }
        for (dst, src) in s.words.iter_mut().zip(value.iter_u64_digits()) {
            *dst = src;
        }
        Ok(s)
    }

    pub fn from_bits(bits: &[bool]) -> Result<Self, BitsError> {
        let mut s = Self::try_zeros(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            s.set(i + 1, b);
        }
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    /// Always false; kept for clippy's `len_without_is_empty`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Numeric value, if it fits in 64 bits.
    pub fn to_u64(&self) -> Option<u64> {
        if self.words[1..].iter().any(|&w| w != 0) {
            return None;
        }
        Some(self.words[0])
    }

    pub fn to_biguint(&self) -> BigUint {
        let digits: Vec<u32> = self
            .words
            .iter()
            .flat_map(|&w| [w as u32, (w >> 32) as u32])
            .collect();
        BigUint::from_slice(&digits)
    }

    fn locate(&self, pos: usize) -> (usize, u32) {
        assert!(
            (1..=self.n).contains(&pos),
            "bit position {pos} out of range 1..={}",
            self.n
        );
        let idx = self.n - pos;
        (idx / WORD_BITS, (idx % WORD_BITS) as u32)
    }

    /// Bit at 1-based position `pos` (1 = leftmost).
    pub fn get(&self, pos: usize) -> bool {
        let (w, b) = self.locate(pos);
        (self.words[w] >> b) & 1 == 1
    }

    pub fn set(&mut self, pos: usize, bit: bool) {
        let (w, b) = self.locate(pos);
        if bit {
            self.words[w] |= 1 << b;
        } else {
            self.words[w] &= !(1 << b);
        }
    }

    pub fn flip(&mut self, pos: usize) {
        let (w, b) = self.locate(pos);
        self.words[w] ^= 1 << b;
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (1..=self.n).map(move |p| self.get(p))
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Position (1-based, from the left) of the leftmost set bit.
    pub fn leading_one(&self) -> Option<usize> {
        for (i, &w) in self.words.iter().enumerate().rev() {
            if w != 0 {
                let idx = i * WORD_BITS + (WORD_BITS - 1 - w.leading_zeros() as usize);
                return Some(self.n - idx);
            }
        }
        None
    }

    fn check_len(&self, other: &BitString) -> Result<(), BitsError> {
        if self.n != other.n {
            return Err(BitsError::LengthMismatch {
                left: self.n,
                right: other.n,
            });
        }
        Ok(())
    }

    /// Bitwise inner product `⊕_j a_j b_j`.
    pub fn dot(&self, other: &BitString) -> Result<bool, BitsError> {
        self.check_len(other)?;
        let ones: u32 = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones())
            .sum();
        Ok(ones & 1 == 1)
    }

    pub fn xor(&self, other: &BitString) -> Result<BitString, BitsError> {
        self.check_len(other)?;
        let words = self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| a ^ b)
            .collect();
        Ok(BitString { n: self.n, words })
    }

    fn mask_top(&mut self) {
        let rem = self.n % WORD_BITS;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << rem) - 1;
        }
    }
}

/// `a·b`, the GF(2) inner product of two equal-length strings.
pub fn inner_product(a: &BitString, b: &BitString) -> Result<bool, BitsError> {
    a.dot(b)
}

impl Ord for BitString {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n
            .cmp(&other.n)
            .then_with(|| self.words.iter().rev().cmp(other.words.iter().rev()))
    }
}

impl PartialOrd for BitString {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = self.iter().map(|b| if b { '1' } else { '0' }).collect();
        f.write_str(&s)
    }
}

impl fmt::Debug for BitString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitString({self})")
    }
}

impl FromStr for BitString {
    type Err = BitsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .enumerate()
            .map(|(offset, c)| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                found => Err(BitsError::InvalidChar { offset, found }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        BitString::from_bits(&bits)
    }
}

impl Serialize for BitString {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitString {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Samples `h_j` uniformly from `0^{j-1} 1 {0,1}^{n-j}`.
pub fn sample_hash_query<R: Rng + ?Sized>(
    j: usize,
    n: usize,
    rng: &mut R,
) -> Result<BitString, BitsError> {
    if n < 2 || j == 0 || j >= n {
        return Err(BitsError::RoundOutOfRange {
            j,
            n,
            max: n.saturating_sub(1),
        });
    }
    let mut h = BitString::random(n, rng);
    for pos in 1..j {
        h.set(pos, false);
    }
    h.set(j, true);
    Ok(h)
}

fn has_round_prefix(h: &BitString, j: usize) -> bool {
    h.leading_one() == Some(j)
}

/// The `n - 1` queries of one interactive-hashing run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuerySet", into = "RawQuerySet")]
pub struct HashQuerySet {
    n: usize,
    queries: Vec<BitString>,
}

#[derive(Serialize, Deserialize)]
struct RawQuerySet {
    n: usize,
    queries: Vec<BitString>,
}

impl TryFrom<RawQuerySet> for HashQuerySet {
    type Error = BitsError;

    fn try_from(raw: RawQuerySet) -> Result<Self, Self::Error> {
        HashQuerySet::new(raw.n, raw.queries)
    }
}

impl From<HashQuerySet> for RawQuerySet {
    fn from(q: HashQuerySet) -> Self {
        RawQuerySet {
            n: q.n,
            queries: q.queries,
        }
    }
}

impl HashQuerySet {
    /// Validates the prefix structure of every query.
    ///
    /// The prefix structure puts the leading one of `h_j` at position `j`,
    /// which already makes the queries linearly independent; the echelon
    /// check below asserts that directly.
    pub fn new(n: usize, queries: Vec<BitString>) -> Result<Self, BitsError> {
        if n == 0 {
            return Err(BitsError::EmptyLength);
        }
        if queries.len() != n - 1 {
            return Err(BitsError::QueryCount {
                n,
                expected: n - 1,
                found: queries.len(),
            });
        }
        for (i, h) in queries.iter().enumerate() {
            let j = i + 1;
            if h.len() != n {
                return Err(BitsError::LengthMismatch {
                    left: h.len(),
                    right: n,
                });
            }
            if !has_round_prefix(h, j) {
                return Err(BitsError::MalformedQuery {
                    j,
                    query: h.clone(),
                });
            }
        }
        debug_assert!(
            queries
                .windows(2)
                .all(|w| w[0].leading_one() < w[1].leading_one()),
            "queries are not in echelon form"
        );
        Ok(HashQuerySet { n, queries })
    }

    pub fn sample<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self, BitsError> {
        if n == 0 {
            return Err(BitsError::EmptyLength);
        }
        let queries = (1..n)
            .map(|j| sample_hash_query(j, n, rng))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(HashQuerySet { n, queries })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn queries(&self) -> &[BitString] {
        &self.queries
    }

    /// `h_j` for 1-based round index `j`.
    pub fn query(&self, j: usize) -> Option<&BitString> {
        j.checked_sub(1).and_then(|i| self.queries.get(i))
    }
}

/// The two solutions of a hashing transcript, `y0 < y1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolutionPair {
    pub y0: BitString,
    pub y1: BitString,
}

impl SolutionPair {
    pub fn contains(&self, y: &BitString) -> bool {
        &self.y0 == y || &self.y1 == y
    }
}

/// Solves `{h_j · y = c_j}` for its two solutions.
///
/// The system is upper triangular in `y_1..y_{n-1}` once `y_n` is fixed,
/// so each solution is one back-substitution pass.
pub fn solve_two_solutions(
    queries: &HashQuerySet,
    answers: &[bool],
) -> Result<SolutionPair, BitsError> {
    let n = queries.n;
    if answers.len() != n - 1 {
        return Err(BitsError::AnswerCount {
            expected: n - 1,
            found: answers.len(),
        });
    }
    let back_substitute = |free: bool| {
        let mut y = BitString::zeros(n);
        y.set(n, free);
        for j in (1..n).rev() {
            // Positions 1..=j of y are still zero here, so the dot product
            // only sees the already-solved tail.
            let tail = queries.queries[j - 1]
                .dot(&y)
                .expect("query length checked at construction");
            y.set(j, answers[j - 1] ^ tail);
        }
        y
    };
    let a = back_substitute(false);
    let b = back_substitute(true);
    let (y0, y1) = if a < b { (a, b) } else { (b, a) };
    Ok(SolutionPair { y0, y1 })
}
