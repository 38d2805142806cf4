//! Exact simulation of the honest prover's quantum states.
//!
//! Every state the honest prover holds is either a two-term superposition
//! `|x0⟩ ± |x1⟩` or a single qubit with real amplitudes, so both have small
//! exact descriptions. [`EnumeratingProver`] keeps the full uniform
//! superposition over the surviving preimage set instead; it is exponential
//! in `n` and exists to cross-check the shortcut sampling.

use std::f64::consts::FRAC_1_SQRT_2;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{BitString, BitsError, HashQuerySet};
use crate::tdp::{PublicKey, TdpError};

/// Largest `n` the enumerating simulator accepts.
pub const ENUMERATION_BOUND: usize = 20;

const NORM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QsimError {
    #[error(transparent)]
    Bits(#[from] BitsError),
    #[error(transparent)]
    Tdp(#[from] TdpError),
    #[error("a two-term state needs two distinct strings")]
    IdenticalTerms,
    #[error("qubit amplitudes ({0}, {1}) are not normalized")]
    NotNormalized(f64, f64),
    #[error("enumeration over n = {n} exceeds the bound of {bound} bits")]
    TooLarge { n: usize, bound: usize },
    #[error("answer {c} for round {j} has an empty branch")]
    EmptyBranch { j: usize, c: bool },
    #[error("support has {0} elements, expected 2")]
    NotTwoTerms(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn from_parity(odd: bool) -> Self {
        if odd {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }

    pub fn is_minus(self) -> bool {
        self == Sign::Minus
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

impl std::ops::Mul for Sign {
    type Output = Sign;

    fn mul(self, rhs: Sign) -> Sign {
        Sign::from_parity(self.is_minus() ^ rhs.is_minus())
    }
}

/// `(|x0⟩ + phase·|x1⟩)/√2` with `x0 < x1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TwoTermState {
    x0: BitString,
    x1: BitString,
    phase: Sign,
}

impl TwoTermState {
    /// Builds `|a⟩ + phase·|b⟩`, reordering the terms if needed.
    ///
    /// Swapping the terms only changes the global phase, so the relative
    /// phase is preserved.
    pub fn new(a: BitString, b: BitString, phase: Sign) -> Result<Self, QsimError> {
        if a.len() != b.len() {
            return Err(BitsError::LengthMismatch {
                left: a.len(),
                right: b.len(),
            }
            .into());
        }
        if a == b {
            return Err(QsimError::IdenticalTerms);
        }
        let (x0, x1) = if a < b { (a, b) } else { (b, a) };
        Ok(TwoTermState { x0, x1, phase })
    }

    pub fn x0(&self) -> &BitString {
        &self.x0
    }

    pub fn x1(&self) -> &BitString {
        &self.x1
    }

    pub fn phase(&self) -> Sign {
        self.phase
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    pub fn contains(&self, x: &BitString) -> bool {
        &self.x0 == x || &self.x1 == x
    }

    pub fn difference(&self) -> BitString {
        self.x0.xor(&self.x1).expect("terms have equal length")
    }
}

/// Single qubit `amp0·|0⟩ + amp1·|1⟩` with real amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitState {
    amp0: f64,
    amp1: f64,
}

impl QubitState {
    pub const ZERO: QubitState = QubitState {
        amp0: 1.0,
        amp1: 0.0,
    };
    pub const ONE: QubitState = QubitState {
        amp0: 0.0,
        amp1: 1.0,
    };
    pub const PLUS: QubitState = QubitState {
        amp0: FRAC_1_SQRT_2,
        amp1: FRAC_1_SQRT_2,
    };
    pub const MINUS: QubitState = QubitState {
        amp0: FRAC_1_SQRT_2,
        amp1: -FRAC_1_SQRT_2,
    };

    pub fn new(amp0: f64, amp1: f64) -> Result<Self, QsimError> {
        if ((amp0 * amp0 + amp1 * amp1) - 1.0).abs() > NORM_TOLERANCE {
            return Err(QsimError::NotNormalized(amp0, amp1));
        }
        Ok(QubitState { amp0, amp1 })
    }

    pub fn basis(bit: bool) -> Self {
        if bit {
            Self::ONE
        } else {
            Self::ZERO
        }
    }

    pub fn amp0(&self) -> f64 {
        self.amp0
    }

    pub fn amp1(&self) -> f64 {
        self.amp1
    }

    /// Equality up to a global sign.
    pub fn approx_eq(&self, other: &QubitState, tol: f64) -> bool {
        let same = (self.amp0 - other.amp0).abs() <= tol && (self.amp1 - other.amp1).abs() <= tol;
        let flipped = (self.amp0 + other.amp0).abs() <= tol && (self.amp1 + other.amp1).abs() <= tol;
        same || flipped
    }
}

/// Measures `|x0⟩ ± |x1⟩` in the computational basis.
pub fn measure_computational<R: Rng + ?Sized>(state: &TwoTermState, rng: &mut R) -> BitString {
    if rng.gen::<bool>() {
        state.x1.clone()
    } else {
        state.x0.clone()
    }
}

/// Writes `r·x` into an ancilla, measures the `n`-qubit register in the
/// Hadamard basis, and returns the outcome `d` with the ancilla's state.
///
/// After the Hadamard layer the ancilla is proportional to
/// `|r·x0⟩ + phase·(−1)^{d·Δ}|r·x1⟩` with `Δ = x0 ⊕ x1`. When both inner
/// products agree, the outcomes with destructive interference have zero
/// weight, leaving `d` uniform over one coset of `Δ^⊥`. Otherwise every `d`
/// is equally likely.
pub fn hadamard_collapse<R: Rng + ?Sized>(
    state: &TwoTermState,
    r: &BitString,
    rng: &mut R,
) -> Result<(BitString, QubitState), QsimError> {
    let b0 = r.dot(&state.x0)?;
    let b1 = r.dot(&state.x1)?;
    let delta = state.difference();
    let mut d = BitString::random(state.n(), rng);
    if b0 == b1 {
        // Need phase·(−1)^{d·Δ} = +1.
        let want_odd = state.phase.is_minus();
        if d.dot(&delta)? != want_odd {
            let pivot = delta.leading_one().expect("terms are distinct");
            d.flip(pivot);
        }
        return Ok((d, QubitState::basis(b0)));
    }
    // Up to global sign the ancilla is |0⟩ + sigma·|1⟩ whichever of b0, b1 is 0.
    let sigma = state.phase * Sign::from_parity(d.dot(&delta)?);
    let q = match sigma {
        Sign::Plus => QubitState::PLUS,
        Sign::Minus => QubitState::MINUS,
    };
    Ok((d, q))
}

/// `cos²(π/8) = (2 + √2)/4`.
pub fn cos2_pi_8() -> f64 {
    (2.0 + std::f64::consts::SQRT_2) / 4.0
}

/// The outcome-0 vector of the rotated basis selected by `v2`.
pub fn rotated_basis_zero(v2: bool) -> (f64, f64) {
    let (c, s) = ((PI / 8.0).cos(), (PI / 8.0).sin());
    if v2 {
        (c, -s)
    } else {
        (c, s)
    }
}

/// Probability that [`measure_rotated`] returns 0.
pub fn rotated_zero_probability(q: &QubitState, v2: bool) -> f64 {
    let (b0, b1) = rotated_basis_zero(v2);
    let overlap = b0 * q.amp0 + b1 * q.amp1;
    overlap * overlap
}

/// Measures `q` in the `v2 = 0` basis `{cos π/8|0⟩ + sin π/8|1⟩, sin π/8|0⟩ − cos π/8|1⟩}`
/// or the `v2 = 1` basis `{cos π/8|0⟩ − sin π/8|1⟩, sin π/8|0⟩ + cos π/8|1⟩}`.
pub fn measure_rotated<R: Rng + ?Sized>(q: &QubitState, v2: bool, rng: &mut R) -> bool {
    rng.gen::<f64>() >= rotated_zero_probability(q, v2)
}

/// A state held as its explicit support with amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedState {
    pub n: usize,
    pub support: Vec<(BitString, f64)>,
}

impl EnumeratedState {
    pub fn uniform(n: usize, support: impl IntoIterator<Item = BitString>) -> Self {
        let support: Vec<BitString> = support.into_iter().collect();
        let amp = 1.0 / (support.len() as f64).sqrt();
        EnumeratedState {
            n,
            support: support.into_iter().map(|x| (x, amp)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.support.iter().map(|(_, a)| a * a).sum()
    }

    pub fn strings(&self) -> impl Iterator<Item = &BitString> {
        self.support.iter().map(|(x, _)| x)
    }
}

/// Brute-force coherent simulation of the hashing phase: the register holds
/// the uniform superposition over `X_j`, the preimages consistent with every
/// answer so far.
#[derive(Debug, Clone)]
pub struct EnumeratingProver {
    n: usize,
    // (x, f(x)) for every x still in the support
    support: Vec<(BitString, BitString)>,
    rounds: usize,
}

impl EnumeratingProver {
    pub fn new(key: &PublicKey) -> Result<Self, QsimError> {
        let n = key.n();
        if n > ENUMERATION_BOUND {
            return Err(QsimError::TooLarge {
                n,
                bound: ENUMERATION_BOUND,
            });
        }
        let support = (0..1u64 << n)
            .map(|v| {
                let x = BitString::from_u64(v, n)?;
                let y = key.eval(&x)?;
                Ok((x, y))
            })
            .collect::<Result<Vec<_>, QsimError>>()?;
        Ok(EnumeratingProver {
            n,
            support,
            rounds: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn count_ones(&self, h: &BitString) -> Result<usize, QsimError> {
        let mut ones = 0;
        for (_, y) in &self.support {
            ones += h.dot(y)? as usize;
        }
        Ok(ones)
    }

    fn collapse(&mut self, h: &BitString, c: bool) -> Result<(), QsimError> {
        let mut err = None;
        self.support.retain(|(_, y)| match h.dot(y) {
            Ok(b) => b == c,
            Err(e) => {
                err = Some(e);
                false
            }
        });
        if let Some(e) = err {
            return Err(e.into());
        }
        self.rounds += 1;
        if self.support.is_empty() {
            return Err(QsimError::EmptyBranch {
                j: self.rounds,
                c,
            });
        }
        Ok(())
    }

    /// Computes `h·f(x)` into an ancilla and measures it.
    pub fn answer<R: Rng + ?Sized>(&mut self, h: &BitString, rng: &mut R) -> Result<bool, QsimError> {
        let ones = self.count_ones(h)?;
        let c = rng.gen_range(0..self.support.len()) < ones;
        self.collapse(h, c)?;
        Ok(c)
    }

    /// Postselects on outcome `c`.
    pub fn answer_forced(&mut self, h: &BitString, c: bool) -> Result<(), QsimError> {
        self.collapse(h, c)
    }

    pub fn state(&self) -> EnumeratedState {
        EnumeratedState::uniform(self.n, self.support.iter().map(|(x, _)| x.clone()))
    }

    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    pub fn to_two_term(&self) -> Result<TwoTermState, QsimError> {
        match self.support.as_slice() {
            [(a, _), (b, _)] => TwoTermState::new(a.clone(), b.clone(), Sign::Plus),
            other => Err(QsimError::NotTwoTerms(other.len())),
        }
    }
}

/// Runs the whole hashing phase against a fixed query set, returning the
/// answers and the state after each round (index 0 is the initial state).
///
/// With `forced` set, the answers are postselected instead of sampled.
pub fn brute_force_session<R: Rng + ?Sized>(
    key: &PublicKey,
    queries: &HashQuerySet,
    forced: Option<&[bool]>,
    rng: &mut R,
) -> Result<(Vec<bool>, Vec<EnumeratedState>), QsimError> {
    let mut prover = EnumeratingProver::new(key)?;
    if let Some(f) = forced {
        if f.len() != queries.queries().len() {
            return Err(BitsError::AnswerCount {
                expected: queries.queries().len(),
                found: f.len(),
            }
            .into());
        }
    }
    let mut answers = Vec::with_capacity(queries.queries().len());
    let mut trajectory = vec![prover.state()];
    for (i, h) in queries.queries().iter().enumerate() {
        let c = match forced {
            Some(f) => {
                prover.answer_forced(h, f[i])?;
                f[i]
            }
            None => prover.answer(h, rng)?,
        };
        answers.push(c);
        trajectory.push(prover.state());
    }
    Ok((answers, trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdp::{gen, TdpConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    fn plus(a: &str, b: &str) -> TwoTermState {
        TwoTermState::new(bs(a), bs(b), Sign::Plus).unwrap()
    }

    /// Amplitude of |b⟩|d⟩ after H^{⊗n} on the second register of
    /// `Σ_x amp_x |r·x⟩|x⟩`, summed directly over the support.
    fn amplitude(state: &TwoTermState, r: &BitString, d: &BitString, b: bool) -> f64 {
        let n = state.n() as i32;
        let mut amp = 0.0;
        for (x, s) in [(state.x0(), 1.0), (state.x1(), state.phase().value())] {
            if r.dot(x).unwrap() == b {
                let sign = if d.dot(x).unwrap() { -1.0 } else { 1.0 };
                amp += s * sign * FRAC_1_SQRT_2 / 2f64.powi(n).sqrt();
            }
        }
        amp
    }

    fn all_strings(n: usize) -> Vec<BitString> {
        (0..1u64 << n).map(|v| BitString::from_u64(v, n).unwrap()).collect()
    }

    #[test]
    fn two_term_canonical_order() {
        let s = TwoTermState::new(bs("11"), bs("01"), Sign::Minus).unwrap();
        assert_eq!(s.x0(), &bs("01"));
        assert_eq!(s.phase(), Sign::Minus);
        assert!(matches!(
            TwoTermState::new(bs("11"), bs("11"), Sign::Plus),
            Err(QsimError::IdenticalTerms)
        ));
    }

    #[test]
    fn qubit_normalization() {
        assert!(QubitState::new(0.6, 0.8).is_ok());
        assert!(matches!(
            QubitState::new(0.6, 0.6),
            Err(QsimError::NotNormalized(..))
        ));
    }

    #[test]
    fn computational_measurement_support() {
        let s = plus("000", "111");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut zeros = 0;
        for _ in 0..10_000 {
            let x = measure_computational(&s, &mut rng);
            assert!(s.contains(&x));
            zeros += (x == bs("000")) as usize;
        }
        let freq = zeros as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn collapse_equal_branch_matches_brute_force() {
        let s = plus("00", "11");
        let r = bs("11");
        // Brute force: every d with nonzero amplitude has d·Δ = 0 and the
        // ancilla is |0⟩.
        for d in all_strings(2) {
            let a0 = amplitude(&s, &r, &d, false);
            let a1 = amplitude(&s, &r, &d, true);
            assert!(a1.abs() < 1e-12);
            let delta = s.difference();
            assert_eq!(a0.abs() > 1e-12, !d.dot(&delta).unwrap());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (d, q) = hadamard_collapse(&s, &r, &mut rng).unwrap();
            assert!(!d.dot(&s.difference()).unwrap());
            assert_eq!(q, QubitState::ZERO);
        }
    }

    #[test]
    fn collapse_unequal_branch_phases() {
        let s = plus("01", "10");
        let r = bs("01");
        for (d, expect) in [("11", QubitState::PLUS), ("10", QubitState::MINUS)] {
            let d = bs(d);
            let a0 = amplitude(&s, &r, &d, false);
            let a1 = amplitude(&s, &r, &d, true);
            let norm = (a0 * a0 + a1 * a1).sqrt();
            let brute = QubitState::new(a0 / norm, a1 / norm).unwrap();
            assert!(brute.approx_eq(&expect, 1e-12), "{brute:?} vs {expect:?}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (d, q) = hadamard_collapse(&s, &r, &mut rng).unwrap();
            let expect = if d.dot(&s.difference()).unwrap() {
                QubitState::MINUS
            } else {
                QubitState::PLUS
            };
            assert_eq!(q, expect);
        }
    }

    #[test]
    fn collapse_matches_exhaustive_distribution() {
        // For every (x0, x1, phase, r) at n = 3 compare the sampled state
        // against the brute-force amplitudes for the sampled d.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let strings = all_strings(3);
        for a in &strings {
            for b in &strings {
                if a >= b {
                    continue;
                }
                for phase in [Sign::Plus, Sign::Minus] {
                    let s = TwoTermState::new(a.clone(), b.clone(), phase).unwrap();
                    for r in &strings {
                        let total: f64 = strings
                            .iter()
                            .map(|d| {
                                amplitude(&s, r, d, false).powi(2) + amplitude(&s, r, d, true).powi(2)
                            })
                            .sum();
                        assert!((total - 1.0).abs() < 1e-12);
                        for _ in 0..8 {
                            let (d, q) = hadamard_collapse(&s, r, &mut rng).unwrap();
                            let a0 = amplitude(&s, r, &d, false);
                            let a1 = amplitude(&s, r, &d, true);
                            let w = a0 * a0 + a1 * a1;
                            assert!(w > 1e-12, "sampled a zero-weight outcome");
                            let brute = QubitState::new(a0 / w.sqrt(), a1 / w.sqrt()).unwrap();
                            assert!(brute.approx_eq(&q, 1e-12));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn rotated_probabilities() {
        let p = cos2_pi_8();
        assert!((p - 0.853553).abs() < 1e-6);
        assert!((rotated_zero_probability(&QubitState::ZERO, false) - p).abs() < 1e-12);
        assert!((rotated_zero_probability(&QubitState::PLUS, false) - p).abs() < 1e-12);
        let (c, s) = rotated_basis_zero(false);
        let eigen = QubitState::new(c, s).unwrap();
        assert!((rotated_zero_probability(&eigen, false) - 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!((0..1000).all(|_| !measure_rotated(&eigen, false, &mut rng)));
    }

    #[test]
    fn brute_force_forced_example() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let kp = gen(&TdpConfig::MockIdentity { n: 3 }, &mut rng).unwrap();
        let q = HashQuerySet::new(3, vec![bs("110"), bs("011")]).unwrap();
        let (c, traj) = brute_force_session(&kp.public, &q, Some(&[true, false]), &mut rng).unwrap();
        assert_eq!(c, vec![true, false]);
        let last: Vec<_> = traj.last().unwrap().strings().cloned().collect();
        assert_eq!(last, vec![bs("011"), bs("100")]);
        let sizes: Vec<_> = traj.iter().map(EnumeratedState::len).collect();
        assert_eq!(sizes, vec![8, 4, 2]);
        for st in &traj {
            assert!((st.norm_squared() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn enumeration_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kp = gen(&TdpConfig::Modular { modulus_bits: 22 }, &mut rng).unwrap();
        assert!(matches!(
            EnumeratingProver::new(&kp.public),
            Err(QsimError::TooLarge { n: 21, .. })
        ));
    }
}
