//! Extraction attack against classical provers that pass the `v1 = 1`
//! branch too often.
//!
//! Algorithm B rewinds a classical prover after it has committed to `d`
//! and asks both `v2` questions; when both answers pass, their XOR is
//! `r·(x0 ⊕ x1)`. Feeding B to a Goldreich–Levin list decoder recovers
//! `Δ = x0 ⊕ x1`, and one run of the `v1 = 0` branch gives `x'`, so the
//! pair `{x', x' ⊕ Δ}` would break blindness.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::bits::BitString;
use crate::net::{LocalChannel, ProtocolMessage, Responder, SessionError};
use crate::poq::{bench_keypair, ClassicalProverState, ClassicalStrategy};
use crate::rsp::{alice_session, PreimagePair};
use crate::seed::{session_rng, Party, SessionRng};
use crate::tdp::{TdpConfig, TdpError, TdpKeyPair, MIN_MODULUS_BITS};

/// Largest number of seeds the list decoder will enumerate over.
pub const MAX_SEEDS: u32 = 20;

/// Largest `n` for [`TablePredictor`].
pub const TABLE_BOUND: usize = 24;

pub const DEMO_EPSILON: f64 = 0.25;
pub const DEMO_DELTA: f64 = 0.01;

#[derive(Debug, Error)]
pub enum GlError {
    #[error("advantage must satisfy 0 < eps <= 1/2, got {0}")]
    Epsilon(f64),
    #[error("confidence must satisfy 0 < delta < 1, got {0}")]
    Delta(f64),
    #[error("n must be at least 1")]
    EmptyLength,
    #[error("table predictor needs n <= {TABLE_BOUND}, got {0}")]
    TooLarge(usize),
    #[error(transparent)]
    Tdp(#[from] TdpError),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Anything that guesses `r·s` from `r`.
pub trait Predictor {
    fn predict(&mut self, r: &BitString) -> bool;
}

impl<F: FnMut(&BitString) -> bool> Predictor for F {
    fn predict(&mut self, r: &BitString) -> bool {
        self(r)
    }
}

/// One instrumented run of algorithm B.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BRun {
    pub bit: bool,
    pub d: Option<BitString>,
    /// `(η_{1,0}, η_{1,1})`, both computed against the same `d`.
    pub etas: Option<(bool, bool)>,
    /// The prover misbehaved and `bit` is a coin flip.
    pub failed: bool,
}

/// Runs B on a snapshot of the prover taken right after the preparation
/// phase. The snapshot is left untouched.
pub fn algorithm_b<R: Rng + ?Sized>(state: &ClassicalProverState, r: &BitString, rng: &mut R) -> BRun {
    let fail = |d, rng: &mut R| BRun {
        bit: rng.gen(),
        d,
        etas: None,
        failed: true,
    };
    let mut after_d = state.clone();
    let d = match after_d.respond(&ProtocolMessage::Challenge1 { v1: 1, r: r.clone() }) {
        Ok(Some(ProtocolMessage::EquationResponse { d })) if d.len() == r.len() => d,
        _ => return fail(None, rng),
    };
    let continuation = |v2: u8| {
        let mut copy = after_d.clone();
        match copy.respond(&ProtocolMessage::Challenge2 { v2 }) {
            Ok(Some(ProtocolMessage::BasisResponse { eta })) if eta <= 1 => Some(eta == 1),
            _ => None,
        }
    };
    match (continuation(0), continuation(1)) {
        (Some(e0), Some(e1)) => BRun {
            bit: e0 ^ e1,
            d: Some(d),
            etas: Some((e0, e1)),
            failed: false,
        },
        _ => fail(Some(d), rng),
    }
}

/// Algorithm B as a predictor for `r·(x0 ⊕ x1)`.
#[derive(Debug, Clone)]
pub struct BPredictor {
    state: ClassicalProverState,
    rng: SessionRng,
    queries: u64,
}

impl BPredictor {
    pub fn new(state: ClassicalProverState, rng: SessionRng) -> Self {
        BPredictor { state, rng, queries: 0 }
    }

    pub fn queries(&self) -> u64 {
        self.queries
    }
}

impl Predictor for BPredictor {
    fn predict(&mut self, r: &BitString) -> bool {
        self.queries += 1;
        algorithm_b(&self.state, r, &mut self.rng).bit
    }
}

/// Predictor that agrees with `r·s` on exactly `round(agreement · 2^n)`
/// inputs, chosen at random.
#[derive(Debug, Clone)]
pub struct TablePredictor {
    table: Vec<bool>,
}

impl TablePredictor {
    pub fn new<R: Rng + ?Sized>(s: &BitString, agreement: f64, rng: &mut R) -> Result<Self, GlError> {
        let n = s.len();
        if n > TABLE_BOUND {
            return Err(GlError::TooLarge(n));
        }
        let size = 1usize << n;
        let mut table: Vec<bool> = (0..size as u64)
            .map(|v| BitString::from_u64(v, n).expect("fits").dot(s).expect("same length"))
            .collect();
        let wrong = size - ((agreement.clamp(0.0, 1.0) * size as f64).round() as usize);
        for i in index::sample(rng, size, wrong) {
            table[i] = !table[i];
        }
        Ok(TablePredictor { table })
    }

    pub fn agreement(&self, s: &BitString) -> f64 {
        let n = s.len();
        let hits = self
            .table
            .iter()
            .enumerate()
            .filter(|(v, &b)| BitString::from_u64(*v as u64, n).unwrap().dot(s).unwrap() == b)
            .count();
        hits as f64 / self.table.len() as f64
    }
}

impl Predictor for TablePredictor {
    fn predict(&mut self, r: &BitString) -> bool {
        self.table[r.to_u64().expect("n <= 24") as usize]
    }
}

/// Sample sizes for the list decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Independent seeds; `2^seeds - 1` pairwise-independent queries per bit.
    pub seeds: u32,
    /// Fresh samples shared by all candidates in the verification pass.
    pub verify_samples: usize,
}

impl GlParams {
    pub fn new(n: usize, epsilon: f64, delta: f64) -> Result<Self, GlError> {
        if n == 0 {
            return Err(GlError::EmptyLength);
        }
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(GlError::Epsilon(epsilon));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(GlError::Delta(delta));
        }
        // Chebyshev on 2^m - 1 pairwise-independent votes per bit, union
        // bound over the n bits.
        let seeds = (n as f64 / (4.0 * delta * epsilon * epsilon)).log2().ceil();
        let seeds = (seeds.max(1.0) as u32).min(MAX_SEEDS);
        // Hoeffding at distance eps/4 from the threshold, union bound over
        // all 2^m candidates.
        let k = 8.0 * (seeds as f64 * std::f64::consts::LN_2 + (1.0 / delta).ln()) / (epsilon * epsilon);
        Ok(GlParams {
            epsilon,
            delta,
            seeds,
            verify_samples: k.ceil() as usize,
        })
    }

    pub fn threshold(&self) -> f64 {
        0.5 + self.epsilon / 2.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub z: BitString,
    /// Agreement of the predictor with `r·z` on the verification samples.
    pub score: f64,
}

fn walsh_hadamard(a: &mut [i32]) {
    let mut h = 1;
    while h < a.len() {
        for block in a.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                let (u, v) = (*x, *y);
                *x = u + v;
                *y = u - v;
            }
        }
        h *= 2;
    }
}

/// Goldreich–Levin list decoding. Returns every candidate whose score on
/// fresh samples clears `1/2 + eps/2`, best first.
pub fn gl_extract<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &mut P,
    n: usize,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<Vec<Candidate>, GlError> {
    let params = GlParams::new(n, epsilon, delta)?;
    Ok(gl_extract_with(predictor, n, &params, rng))
}

pub fn gl_extract_with<P: Predictor + ?Sized, R: Rng + ?Sized>(
    predictor: &mut P,
    n: usize,
    params: &GlParams,
    rng: &mut R,
) -> Vec<Candidate> {
    let m = params.seeds as usize;
    let size = 1usize << m;
    let seeds: Vec<BitString> = (0..m).map(|_| BitString::random(n, rng)).collect();
    // r_S for every subset S, built from S minus its lowest element.
    let mut subset_sums = Vec::with_capacity(size);
    subset_sums.push(BitString::zeros(n));
    for s in 1..size {
        let low = s.trailing_zeros() as usize;
        let sum = subset_sums[s & (s - 1)].xor(&seeds[low]).expect("same length");
        subset_sums.push(sum);
    }
    // Guess g assigns r_k·z = g_k, hence r_S·z = <S, g>. The vote for bit i
    // under g is sum over S != {} of (-1)^(B(r_S + e_i) + <S, g>), which is
    // one Walsh–Hadamard transform per bit for all guesses at once.
    let mut guesses = vec![BitString::zeros(n); size];
    let mut votes = vec![0i32; size];
    for i in 1..=n {
        votes[0] = 0;
        for s in 1..size {
            let mut q = subset_sums[s].clone();
            q.flip(i);
            votes[s] = if predictor.predict(&q) { -1 } else { 1 };
        }
        walsh_hadamard(&mut votes);
        for (g, &v) in votes.iter().enumerate() {
            if v < 0 {
                guesses[g].set(i, true);
            }
        }
    }
    guesses.sort();
    guesses.dedup();

    let samples: Vec<(BitString, bool)> = (0..params.verify_samples)
        .map(|_| {
            let r = BitString::random(n, rng);
            let b = predictor.predict(&r);
            (r, b)
        })
        .collect();
    let threshold = params.threshold();
    let mut out: Vec<Candidate> = guesses
        .into_iter()
        .filter_map(|z| {
            let hits = samples.iter().filter(|(r, b)| r.dot(&z).expect("same length") == *b).count();
            let score = hits as f64 / samples.len() as f64;
            (score >= threshold).then_some(Candidate { z, score })
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.z.cmp(&b.z)));
    out
}

/// Outcome of the composed attack.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionResult {
    pub n: usize,
    /// Best nonzero candidate, or `0^n` when none survived.
    pub z: BitString,
    pub x_prime: BitString,
    pub recovered: Option<PreimagePair>,
    /// Alice's pair, kept only to score the attack.
    pub truth: PreimagePair,
    pub candidates: usize,
    pub success: bool,
}

/// Algorithm C: prepare with Alice, snapshot the prover, take `x'` from the
/// `v1 = 0` branch, decode `Δ` from B and output `{x', x' ⊕ Δ}`.
pub fn algorithm_c<R: Rng + ?Sized>(
    keypair: &TdpKeyPair,
    prover: ClassicalProverState,
    epsilon: f64,
    delta: f64,
    rng: &mut R,
) -> Result<ExtractionResult, GlError> {
    let n = keypair.public.n();
    let params = GlParams::new(n, epsilon, delta)?;
    let mut channel = LocalChannel::new(prover);
    let (truth, _) = alice_session(keypair, &mut channel, rng)?;
    let snapshot = channel.into_peer();

    let r = BitString::random(n, rng);
    let x_prime = match snapshot.clone().respond(&ProtocolMessage::Challenge1 { v1: 0, r })? {
        Some(ProtocolMessage::PreimageResponse { x }) if x.len() == n => x,
        Some(other) => return Err(SessionError::unexpected("PreimageResponse", &other).into()),
        None => return Err(SessionError::Malformed("no reply to Challenge1".into()).into()),
    };

    let mut predictor = BPredictor::new(snapshot, SessionRng::from_rng(&mut *rng).expect("ChaCha seeding"));
    let candidates = gl_extract_with(&mut predictor, n, &params, rng);
    // x0 != x1, so a zero difference is never the answer.
    let best = candidates.iter().find(|c| !c.z.is_zero()).map(|c| c.z.clone());
    let recovered = best
        .as_ref()
        .map(|z| PreimagePair::new(x_prime.clone(), x_prime.xor(z).expect("same length")));
    let success = recovered.as_ref() == Some(&truth);
    Ok(ExtractionResult {
        n,
        z: best.unwrap_or_else(|| BitString::zeros(n)),
        x_prime,
        recovered,
        truth,
        candidates: candidates.len(),
        success,
    })
}

/// Key configuration used by the demo for a given `n`.
pub fn demo_tdp(n: usize) -> TdpConfig {
    if n + 1 < MIN_MODULUS_BITS {
        TdpConfig::MockRandom { n }
    } else {
        TdpConfig::modular_for_domain(n)
    }
}

/// Runs C against the leaky or the optimal classical prover, fully
/// determined by `seed`.
pub fn gl_demo(n: usize, leaky: bool, seed: u64) -> Result<ExtractionResult, GlError> {
    if n < 2 {
        return Err(GlError::EmptyLength);
    }
    let keypair = bench_keypair(&demo_tdp(n), seed)?;
    let strategy = if leaky {
        ClassicalStrategy::Leaky(std::sync::Arc::new(keypair.trapdoor.clone()))
    } else {
        ClassicalStrategy::Optimal
    };
    let prover = ClassicalProverState::new(strategy, session_rng(seed, 0, Party::Prover));
    algorithm_c(
        &keypair,
        prover,
        DEMO_EPSILON,
        DEMO_DELTA,
        &mut session_rng(seed, 0, Party::Harness),
    )
}
