//! Proof of quantumness on top of remote state preparation.
//!
//! After the preparation phase the verifier holds `{x0, x1}` and the prover
//! (if honest) holds `|x0⟩ + |x1⟩`. The verifier sends `(v1, r)`:
//!
//! * `v1 = 0`: the prover must return one of `x0, x1`.
//! * `v1 = 1`: the prover writes `r·x` into a qubit, measures the rest in
//!   the Hadamard basis and returns `d`. The verifier then sends `v2`, and
//!   the prover measures the qubit in a basis rotated by `±π/8` and
//!   returns `η`.
//!
//! The honest prover is accepted with probability `1/2 + cos²(π/8)/2`;
//! the best classical strategy reaches exactly `7/8`.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bits::{solve_two_solutions, BitString, HashQuerySet};
use crate::net::{wire_bit, Channel, LocalChannel, ProtocolMessage, Responder, SessionError};
use crate::qsim::{hadamard_collapse, measure_computational, measure_rotated, QubitState, ENUMERATION_BOUND};
use crate::rsp::{alice_session, BobMode, HonestBob, PreimagePair, RspTranscript};
use crate::seed::{session_rng, Party, SessionRng};
use crate::stats::{wilson, Estimate, Z_95};
use crate::tdp::{gen, PublicKey, TdpConfig, TdpError, TdpKeyPair, Trapdoor};

/// Exact honest acceptance probability `1/2 + (2 + √2)/8 ≈ 0.9267767`.
pub fn honest_acceptance() -> f64 {
    0.5 + (2.0 + std::f64::consts::SQRT_2) / 8.0
}

/// Acceptance probability of [`ClassicalStrategy::Optimal`].
pub const CLASSICAL_OPTIMAL_ACCEPTANCE: f64 = 0.875;

/// What the prover returned on the branch selected by `v1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "branch")]
pub enum BranchPayload {
    Preimage { x: BitString },
    Equation { d: BitString, v2: bool, eta: bool },
}

/// The verifier's decision rule.
///
/// `v1 = 0` accepts iff `x ∈ {x0, x1}`. `v1 = 1` accepts iff
/// `r·x0 = r·x1 ∧ η = r·x0`, or `r·x0 ≠ r·x1 ∧ η = v2 ⊕ d·(x0 ⊕ x1)`.
/// A payload that does not match `v1`, or strings of the wrong length, are
/// rejected.
pub fn accept_predicate(pair: &PreimagePair, r: &BitString, v1: bool, payload: &BranchPayload) -> bool {
    let n = pair.x0.len();
    if r.len() != n {
        return false;
    }
    match (v1, payload) {
        (false, BranchPayload::Preimage { x }) => pair.contains(x),
        (true, BranchPayload::Equation { d, v2, eta }) => {
            let (Ok(b0), Ok(b1), Ok(phase)) = (r.dot(&pair.x0), r.dot(&pair.x1), d.dot(&pair.difference())) else {
                return false;
            };
            if b0 == b1 {
                *eta == b0
            } else {
                *eta == (*v2 ^ phase)
            }
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoqTranscript {
    pub rsp: RspTranscript,
    pub v1: bool,
    pub r: BitString,
    pub payload: BranchPayload,
    pub verdict: bool,
}

/// Everything the verifier knows at the end of a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifierRecord {
    pub pair: PreimagePair,
    pub transcript: PoqTranscript,
}

impl VerifierRecord {
    pub fn verdict(&self) -> bool {
        self.transcript.verdict
    }

    /// `(v1, v2)` branch; `v2` is `None` on the `v1 = 0` branch.
    pub fn branch(&self) -> (bool, Option<bool>) {
        match &self.transcript.payload {
            BranchPayload::Preimage { .. } => (false, None),
            BranchPayload::Equation { v2, .. } => (true, Some(*v2)),
        }
    }
}

fn expect_len(field: &str, s: &BitString, n: usize) -> Result<(), SessionError> {
    if s.len() != n {
        return Err(SessionError::Malformed(format!(
            "{field} has {} bits, expected {n}",
            s.len()
        )));
    }
    Ok(())
}

/// Runs the verifier: preparation, then `(v1, r)`, then the branch, then a
/// final `Verdict` message to the prover.
pub fn verifier_session<C: Channel, R: Rng + ?Sized>(
    keypair: &TdpKeyPair,
    mut channel: C,
    rng: &mut R,
) -> Result<VerifierRecord, SessionError> {
    let (pair, rsp) = alice_session(keypair, &mut channel, rng)?;
    let n = keypair.public.n();
    let v1: bool = rng.gen();
    // r is sent on both branches, though only the v1 = 1 branch uses it.
    let r = BitString::random(n, rng);
    channel.send(&ProtocolMessage::Challenge1 {
        v1: v1 as u8,
        r: r.clone(),
    })?;
    let payload = if !v1 {
        match channel.recv()? {
            ProtocolMessage::PreimageResponse { x } => {
                expect_len("x", &x, n)?;
                BranchPayload::Preimage { x }
            }
            other => return Err(SessionError::unexpected("PreimageResponse", &other)),
        }
    } else {
        let d = match channel.recv()? {
            ProtocolMessage::EquationResponse { d } => {
                expect_len("d", &d, n)?;
                d
            }
            other => return Err(SessionError::unexpected("EquationResponse", &other)),
        };
        let v2: bool = rng.gen();
        channel.send(&ProtocolMessage::Challenge2 { v2: v2 as u8 })?;
        let eta = match channel.recv()? {
            ProtocolMessage::BasisResponse { eta } => wire_bit("eta", eta)?,
            other => return Err(SessionError::unexpected("BasisResponse", &other)),
        };
        BranchPayload::Equation { d, v2, eta }
    };
    let verdict = accept_predicate(&pair, &r, v1, &payload);
    channel.send(&ProtocolMessage::Verdict { accept: verdict })?;
    Ok(VerifierRecord {
        pair,
        transcript: PoqTranscript {
            rsp,
            v1,
            r,
            payload,
            verdict,
        },
    })
}

#[derive(Debug, Clone)]
enum QuantumStage {
    Preparing,
    AwaitChallenge2(QubitState),
    AwaitVerdict,
    Done(bool),
}

/// The honest prover, simulated exactly.
#[derive(Debug, Clone)]
pub struct QuantumProver<R> {
    bob: HonestBob<R>,
    stage: QuantumStage,
}

impl<R: Rng> QuantumProver<R> {
    pub fn new(mode: BobMode, rng: R) -> Self {
        QuantumProver {
            bob: HonestBob::new(mode, rng),
            stage: QuantumStage::Preparing,
        }
    }

    pub fn verdict(&self) -> Option<bool> {
        match self.stage {
            QuantumStage::Done(v) => Some(v),
            _ => None,
        }
    }
}

impl<R: Rng> Responder for QuantumProver<R> {
    fn respond(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError> {
        match (&self.stage, msg) {
            (QuantumStage::Preparing, ProtocolMessage::Key { .. } | ProtocolMessage::HashQuery { .. }) => {
                self.bob.handle(msg)
            }
            (QuantumStage::Preparing, ProtocolMessage::Challenge1 { v1, r }) => {
                let state = self
                    .bob
                    .state()
                    .cloned()
                    .ok_or_else(|| SessionError::Malformed("challenge before hashing finished".into()))?;
                expect_len("r", r, state.n())?;
                if !wire_bit("v1", *v1)? {
                    let x = measure_computational(&state, self.bob.rng_mut());
                    self.stage = QuantumStage::AwaitVerdict;
                    Ok(Some(ProtocolMessage::PreimageResponse { x }))
                } else {
                    let (d, qubit) = hadamard_collapse(&state, r, self.bob.rng_mut())
                        .map_err(|e| SessionError::Malformed(e.to_string()))?;
                    self.stage = QuantumStage::AwaitChallenge2(qubit);
                    Ok(Some(ProtocolMessage::EquationResponse { d }))
                }
            }
            (QuantumStage::AwaitChallenge2(qubit), ProtocolMessage::Challenge2 { v2 }) => {
                let eta = measure_rotated(qubit, wire_bit("v2", *v2)?, self.bob.rng_mut());
                self.stage = QuantumStage::AwaitVerdict;
                Ok(Some(ProtocolMessage::BasisResponse { eta: eta as u8 }))
            }
            (QuantumStage::AwaitVerdict, ProtocolMessage::Verdict { accept }) => {
                self.stage = QuantumStage::Done(*accept);
                Ok(None)
            }
            (_, other) => Err(SessionError::unexpected("next protocol message", other)),
        }
    }

    fn finished(&self) -> bool {
        matches!(self.stage, QuantumStage::Done(_))
    }
}

/// Classical prover strategies.
#[derive(Debug, Clone)]
pub enum ClassicalStrategy {
    /// Commits to a random preimage `x` by answering `c_j = h_j·f(x)`, so
    /// `v1 = 0` always passes; on `v1 = 1` sends a random `d` and `η = r·x`,
    /// which passes whenever `r·x0 = r·x1` and half the time otherwise.
    Optimal,
    /// Random answers everywhere.
    RandomGuess,
    /// Honest commitment as in `Optimal`, but a random `η`.
    HonestCommitRandomEta,
    /// Test-only prover that cheats with an escrowed trapdoor: it knows both
    /// preimages and answers every continuation correctly.
    Leaky(Arc<Trapdoor>),
}

impl ClassicalStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ClassicalStrategy::Optimal => "classical-optimal",
            ClassicalStrategy::RandomGuess => "classical-random",
            ClassicalStrategy::HonestCommitRandomEta => "classical-honest-c-random-eta",
            ClassicalStrategy::Leaky(_) => "classical-leaky",
        }
    }
}

/// The complete view of a classical prover: strategy, transcript so far and
/// randomness tape. Cloning it snapshots the prover, which is what lets the
/// extractor rewind it.
#[derive(Debug, Clone)]
pub struct ClassicalProverState {
    strategy: ClassicalStrategy,
    rng: SessionRng,
    key: Option<Arc<PublicKey>>,
    committed: Option<(BitString, BitString)>,
    // Shared so that snapshots taken after hashing are cheap to copy.
    queries: Arc<Vec<BitString>>,
    answers: Arc<Vec<bool>>,
    leaked: Option<PreimagePair>,
    challenge: Option<BitString>,
    d: Option<BitString>,
    finished: bool,
}

impl ClassicalProverState {
    pub fn new(strategy: ClassicalStrategy, rng: SessionRng) -> Self {
        ClassicalProverState {
            strategy,
            rng,
            key: None,
            committed: None,
            queries: Arc::default(),
            answers: Arc::default(),
            leaked: None,
            challenge: None,
            d: None,
            finished: false,
        }
    }

    pub fn strategy(&self) -> &ClassicalStrategy {
        &self.strategy
    }

    pub fn transcript_len(&self) -> usize {
        self.answers.len()
    }

    fn n(&self) -> Result<usize, SessionError> {
        self.key
            .as_ref()
            .map(|k| k.n())
            .ok_or_else(|| SessionError::Malformed("no key received".into()))
    }

    /// Preimage pair recovered by the leaky strategy once hashing is over.
    fn leaked_pair(&self) -> Result<PreimagePair, SessionError> {
        let ClassicalStrategy::Leaky(td) = &self.strategy else {
            unreachable!("only the leaky strategy reads the trapdoor")
        };
        let n = self.n()?;
        let q = HashQuerySet::new(n, self.queries.to_vec()).map_err(|e| SessionError::Malformed(e.to_string()))?;
        let sol = solve_two_solutions(&q, &self.answers).map_err(|e| SessionError::Malformed(e.to_string()))?;
        let inv = |y| td.invert(y).map_err(|e| SessionError::Config(e.to_string()));
        Ok(PreimagePair::new(inv(&sol.y0)?, inv(&sol.y1)?))
    }

    fn on_key(&mut self, key: &PublicKey) -> Result<(), SessionError> {
        if self.key.is_some() {
            return Err(SessionError::Malformed("second Key message".into()));
        }
        if let ClassicalStrategy::Leaky(td) = &self.strategy {
            if !td.matches(key) {
                return Err(SessionError::Config("leaky trapdoor does not match key".into()));
            }
        }
        if !matches!(self.strategy, ClassicalStrategy::RandomGuess) {
            let x = BitString::random(key.n(), &mut self.rng);
            let y = key.eval(&x).map_err(|e| SessionError::Malformed(e.to_string()))?;
            self.committed = Some((x, y));
        }
        self.key = Some(Arc::new(key.clone()));
        Ok(())
    }

    fn on_query(&mut self, j: u32, h: &BitString) -> Result<ProtocolMessage, SessionError> {
        let n = self.n()?;
        let expected = self.answers.len() as u32 + 1;
        if j != expected {
            return Err(SessionError::RoundMismatch { expected, found: j });
        }
        expect_len("h", h, n)?;
        let c = match &self.committed {
            Some((_, y)) => h.dot(y).expect("lengths checked"),
            None => self.rng.gen(),
        };
        Arc::make_mut(&mut self.queries).push(h.clone());
        Arc::make_mut(&mut self.answers).push(c);
        if self.answers.len() + 1 == n && matches!(self.strategy, ClassicalStrategy::Leaky(_)) {
            self.leaked = Some(self.leaked_pair()?);
        }
        Ok(ProtocolMessage::HashAnswer { j, c: c as u8 })
    }

    fn on_challenge1(&mut self, v1: bool, r: &BitString) -> Result<ProtocolMessage, SessionError> {
        let n = self.n()?;
        expect_len("r", r, n)?;
        if self.answers.len() + 1 != n {
            return Err(SessionError::Malformed("challenge before hashing finished".into()));
        }
        self.challenge = Some(r.clone());
        if !v1 {
            let x = match &self.committed {
                Some((x, _)) => x.clone(),
                None => BitString::random(n, &mut self.rng),
            };
            return Ok(ProtocolMessage::PreimageResponse { x });
        }
        let d = BitString::random(n, &mut self.rng);
        self.d = Some(d.clone());
        Ok(ProtocolMessage::EquationResponse { d })
    }

    fn on_challenge2(&mut self, v2: bool) -> Result<ProtocolMessage, SessionError> {
        let (Some(r), Some(d)) = (&self.challenge, &self.d) else {
            return Err(SessionError::Malformed("Challenge2 before EquationResponse".into()));
        };
        let eta = match &self.strategy {
            ClassicalStrategy::Optimal => {
                let (x, _) = self.committed.as_ref().expect("optimal prover commits");
                r.dot(x).expect("lengths checked")
            }
            ClassicalStrategy::RandomGuess | ClassicalStrategy::HonestCommitRandomEta => self.rng.gen(),
            ClassicalStrategy::Leaky(_) => {
                let pair = self.leaked.as_ref().expect("cached when hashing finished");
                let b0 = r.dot(&pair.x0).expect("lengths checked");
                let b1 = r.dot(&pair.x1).expect("lengths checked");
                if b0 == b1 {
                    b0
                } else {
                    v2 ^ d.dot(&pair.difference()).expect("lengths checked")
                }
            }
        };
        Ok(ProtocolMessage::BasisResponse { eta: eta as u8 })
    }
}

impl Responder for ClassicalProverState {
    fn respond(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError> {
        match msg {
            ProtocolMessage::Key { k } => self.on_key(k).map(|_| None),
            ProtocolMessage::HashQuery { j, h } => self.on_query(*j, h).map(Some),
            ProtocolMessage::Challenge1 { v1, r } => self.on_challenge1(wire_bit("v1", *v1)?, r).map(Some),
            ProtocolMessage::Challenge2 { v2 } => self.on_challenge2(wire_bit("v2", *v2)?).map(Some),
            ProtocolMessage::Verdict { .. } => {
                self.finished = true;
                Ok(None)
            }
            other => Err(SessionError::unexpected("verifier message", other)),
        }
    }

    fn finished(&self) -> bool {
        self.finished
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QuantumMode {
    Escrow,
    Enumerate,
}

/// Prover strategy selectable from benches and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProverStrategy {
    Quantum(QuantumMode),
    ClassicalOptimal,
    ClassicalRandom,
    ClassicalHonestCommitRandomEta,
}

impl ProverStrategy {
    pub const BASELINES: [ProverStrategy; 2] = [
        ProverStrategy::ClassicalRandom,
        ProverStrategy::ClassicalHonestCommitRandomEta,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProverStrategy::Quantum(QuantumMode::Escrow) => "quantum-escrow",
            ProverStrategy::Quantum(QuantumMode::Enumerate) => "quantum-enumerate",
            ProverStrategy::ClassicalOptimal => "classical-optimal",
            ProverStrategy::ClassicalRandom => "classical-random",
            ProverStrategy::ClassicalHonestCommitRandomEta => "classical-honest-c-random-eta",
        }
    }
}

impl fmt::Display for ProverStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Any prover the harness can run.
#[derive(Debug, Clone)]
pub enum Prover {
    Quantum(Box<QuantumProver<SessionRng>>),
    Classical(Box<ClassicalProverState>),
}

impl Prover {
    /// Builds a prover. `escrow` is the trapdoor handed to the quantum
    /// simulator in escrow mode and must be `None` otherwise.
    pub fn new(strategy: ProverStrategy, escrow: Option<&Trapdoor>, n: Option<usize>, rng: SessionRng) -> Result<Self, SessionError> {
        let classical = |s| Ok(Prover::Classical(Box::new(ClassicalProverState::new(s, rng.clone()))));
        match strategy {
            ProverStrategy::Quantum(QuantumMode::Escrow) => {
                let td = escrow.ok_or_else(|| SessionError::Config("escrow mode needs the trapdoor".into()))?;
                Ok(Prover::Quantum(Box::new(QuantumProver::new(BobMode::Escrow(td.clone()), rng.clone()))))
            }
            ProverStrategy::Quantum(QuantumMode::Enumerate) => {
                if let Some(n) = n.filter(|&n| n > ENUMERATION_BOUND) {
                    return Err(SessionError::Config(format!(
                        "enumeration needs n <= {ENUMERATION_BOUND}, got n = {n}; use escrow mode"
                    )));
                }
                Ok(Prover::Quantum(Box::new(QuantumProver::new(BobMode::Enumerate, rng.clone()))))
            }
            ProverStrategy::ClassicalOptimal => classical(ClassicalStrategy::Optimal),
            ProverStrategy::ClassicalRandom => classical(ClassicalStrategy::RandomGuess),
            ProverStrategy::ClassicalHonestCommitRandomEta => classical(ClassicalStrategy::HonestCommitRandomEta),
        }
    }
}

impl Responder for Prover {
    fn respond(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError> {
        match self {
            Prover::Quantum(p) => p.respond(msg),
            Prover::Classical(p) => p.respond(msg),
        }
    }

    fn finished(&self) -> bool {
        match self {
            Prover::Quantum(p) => p.finished(),
            Prover::Classical(p) => p.finished(),
        }
    }
}

/// One in-process session with per-party streams split from `seed`.
pub fn run_local_session(
    keypair: &TdpKeyPair,
    strategy: ProverStrategy,
    seed: u64,
    session: u64,
) -> Result<VerifierRecord, SessionError> {
    let escrow = matches!(strategy, ProverStrategy::Quantum(QuantumMode::Escrow)).then_some(&keypair.trapdoor);
    let prover = Prover::new(
        strategy,
        escrow,
        Some(keypair.public.n()),
        session_rng(seed, session, Party::Prover),
    )?;
    let mut rng = session_rng(seed, session, Party::Verifier);
    verifier_session(keypair, LocalChannel::new(prover), &mut rng)
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error(transparent)]
    Tdp(#[from] TdpError),
    #[error("configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub strategy: ProverStrategy,
    pub tdp: TdpConfig,
    pub trials: u64,
    pub seed: u64,
}

/// Session index reserved for the key-generation stream.
pub const KEYGEN_STREAM: u64 = u64::MAX / 4;

/// The key a bench with this configuration uses.
pub fn bench_keypair(config: &TdpConfig, seed: u64) -> Result<TdpKeyPair, TdpError> {
    gen(config, &mut session_rng(seed, KEYGEN_STREAM, Party::Harness))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchCount {
    pub trials: u64,
    pub accepts: u64,
}

impl BranchCount {
    fn add(&mut self, other: BranchCount) {
        self.trials += other.trials;
        self.accepts += other.accepts;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tally {
    pub v1_0: BranchCount,
    pub v1_1_v2_0: BranchCount,
    pub v1_1_v2_1: BranchCount,
    pub void: u64,
}

impl Tally {
    pub fn record(&mut self, outcome: &Result<VerifierRecord, SessionError>) {
        let Ok(rec) = outcome else {
            self.void += 1;
            return;
        };
        let slot = match rec.branch() {
            (false, _) => &mut self.v1_0,
            (true, Some(false)) => &mut self.v1_1_v2_0,
            (true, _) => &mut self.v1_1_v2_1,
        };
        slot.trials += 1;
        slot.accepts += rec.verdict() as u64;
    }

    pub fn merge(mut self, other: Tally) -> Tally {
        self.v1_0.add(other.v1_0);
        self.v1_1_v2_0.add(other.v1_1_v2_0);
        self.v1_1_v2_1.add(other.v1_1_v2_1);
        self.void += other.void;
        self
    }
}

pub const STATS_SCHEMA: &str = "poq-bench-stats/1";

/// Per-branch acceptance counts and estimates of `p0`, `p1`, `p1,0`, `p1,1`
/// and the overall acceptance rate, with 95% Wilson intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub schema: String,
    pub strategy: String,
    pub tdp_variant: String,
    pub n: usize,
    pub seed: u64,
    pub trials: u64,
    pub void_sessions: u64,
    pub v1_0: BranchCount,
    pub v1_1_v2_0: BranchCount,
    pub v1_1_v2_1: BranchCount,
    pub p0: Option<Estimate>,
    pub p1: Option<Estimate>,
    pub p1_0: Option<Estimate>,
    pub p1_1: Option<Estimate>,
    pub overall: Option<Estimate>,
}

impl BenchStats {
    pub fn from_tally(tally: &Tally, strategy: &str, key: &PublicKey, seed: u64, trials: u64) -> Self {
        let v1_1 = BranchCount {
            trials: tally.v1_1_v2_0.trials + tally.v1_1_v2_1.trials,
            accepts: tally.v1_1_v2_0.accepts + tally.v1_1_v2_1.accepts,
        };
        let all = BranchCount {
            trials: tally.v1_0.trials + v1_1.trials,
            accepts: tally.v1_0.accepts + v1_1.accepts,
        };
        let est = |c: BranchCount| wilson(c.accepts, c.trials, Z_95);
        BenchStats {
            schema: STATS_SCHEMA.to_string(),
            strategy: strategy.to_string(),
            tdp_variant: key.variant().to_string(),
            n: key.n(),
            seed,
            trials,
            void_sessions: tally.void,
            v1_0: tally.v1_0,
            v1_1_v2_0: tally.v1_1_v2_0,
            v1_1_v2_1: tally.v1_1_v2_1,
            p0: est(tally.v1_0),
            p1: est(v1_1),
            p1_0: est(tally.v1_1_v2_0),
            p1_1: est(tally.v1_1_v2_1),
            overall: est(all),
        }
    }

    pub fn overall_value(&self) -> f64 {
        self.overall.map_or(f64::NAN, |e| e.value)
    }

    /// `p1` recomputed as the trial-weighted mean of `p1,0` and `p1,1`.
    pub fn p1_from_branches(&self) -> Option<f64> {
        let (t0, t1) = (self.v1_1_v2_0.trials as f64, self.v1_1_v2_1.trials as f64);
        let p10 = self.p1_0.map_or(0.0, |e| e.value);
        let p11 = self.p1_1.map_or(0.0, |e| e.value);
        (t0 + t1 > 0.0).then(|| (t0 * p10 + t1 * p11) / (t0 + t1))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats always serialize")
    }

    pub fn table(&self) -> String {
        let mut out = format!(
            "strategy {}  tdp {} (n = {})  seed {}  trials {}  void {}\n",
            self.strategy, self.tdp_variant, self.n, self.seed, self.trials, self.void_sessions
        );
        out.push_str(&format!(
            "{:<10} {:>9} {:>9} {:>9} {:>19}\n",
            "branch", "trials", "accepts", "rate", "95% CI"
        ));
        let v1_1 = BranchCount {
            trials: self.v1_1_v2_0.trials + self.v1_1_v2_1.trials,
            accepts: self.v1_1_v2_0.accepts + self.v1_1_v2_1.accepts,
        };
        let all = BranchCount {
            trials: self.v1_0.trials + v1_1.trials,
            accepts: self.v1_0.accepts + v1_1.accepts,
        };
        let rows = [
            ("p0", self.v1_0, self.p0),
            ("p1", v1_1, self.p1),
            ("p1,0", self.v1_1_v2_0, self.p1_0),
            ("p1,1", self.v1_1_v2_1, self.p1_1),
            ("overall", all, self.overall),
        ];
        for (name, c, e) in rows {
            let (rate, ci) = match e {
                Some(e) => (format!("{:.5}", e.value), format!("[{:.5}, {:.5}]", e.lo, e.hi)),
                None => ("-".into(), "-".into()),
            };
            out.push_str(&format!(
                "{:<10} {:>9} {:>9} {:>9} {:>19}\n",
                name, c.trials, c.accepts, rate, ci
            ));
        }
        out
    }
}

/// Runs `trials` independent sessions in parallel. Results depend only on
/// the configuration, not on scheduling.
pub fn bench(config: &BenchConfig) -> Result<BenchStats, BenchError> {
    if config.trials == 0 {
        return Err(BenchError::NoTrials);
    }
    let keypair = bench_keypair(&config.tdp, config.seed)?;
    bench_with_key(&keypair, config.strategy, config.trials, config.seed)
}

pub fn bench_with_key(
    keypair: &TdpKeyPair,
    strategy: ProverStrategy,
    trials: u64,
    seed: u64,
) -> Result<BenchStats, BenchError> {
    if trials == 0 {
        return Err(BenchError::NoTrials);
    }
    if strategy == ProverStrategy::Quantum(QuantumMode::Enumerate) && keypair.public.n() > ENUMERATION_BOUND {
        return Err(BenchError::Config(format!(
            "enumerate mode needs n <= {ENUMERATION_BOUND}, key has n = {}",
            keypair.public.n()
        )));
    }
    let tally = (0..trials)
        .into_par_iter()
        .fold(Tally::default, |mut t, i| {
            t.record(&run_local_session(keypair, strategy, seed, i));
            t
        })
        .reduce(Tally::default, Tally::merge);
    Ok(BenchStats::from_tally(&tally, strategy.name(), &keypair.public, seed, trials))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bs(s: &str) -> BitString {
        s.parse().unwrap()
    }

    #[test]
    fn predicate_examples() {
        let pair = PreimagePair::new(bs("00"), bs("11"));
        for d in ["00", "01", "10", "11"] {
            for v2 in [false, true] {
                let p = BranchPayload::Equation { d: bs(d), v2, eta: false };
                assert!(accept_predicate(&pair, &bs("11"), true, &p));
            }
        }
        let pair = PreimagePair::new(bs("01"), bs("10"));
        let ok = BranchPayload::Equation { d: bs("11"), v2: true, eta: true };
        assert!(accept_predicate(&pair, &bs("01"), true, &ok));
        let bad = BranchPayload::Equation { d: bs("11"), v2: true, eta: false };
        assert!(!accept_predicate(&pair, &bs("01"), true, &bad));
    }

    #[test]
    fn predicate_preimage_branch() {
        let pair = PreimagePair::new(bs("01"), bs("10"));
        assert!(accept_predicate(&pair, &bs("00"), false, &BranchPayload::Preimage { x: bs("10") }));
        assert!(!accept_predicate(&pair, &bs("00"), false, &BranchPayload::Preimage { x: bs("11") }));
        // payload for the wrong branch
        assert!(!accept_predicate(&pair, &bs("00"), true, &BranchPayload::Preimage { x: bs("10") }));
    }

    #[test]
    fn honest_constant() {
        assert!((honest_acceptance() - 0.9267767).abs() < 1e-7);
    }

    #[test]
    fn bench_rejects_zero_trials() {
        let cfg = BenchConfig {
            strategy: ProverStrategy::ClassicalOptimal,
            tdp: TdpConfig::MockRandom { n: 4 },
            trials: 0,
            seed: 1,
        };
        assert!(matches!(bench(&cfg), Err(BenchError::NoTrials)));
    }

    #[test]
    fn enumerate_rejects_large_n() {
        let cfg = BenchConfig {
            strategy: ProverStrategy::Quantum(QuantumMode::Enumerate),
            tdp: TdpConfig::modular_for_domain(24),
            trials: 10,
            seed: 1,
        };
        assert!(matches!(bench(&cfg), Err(BenchError::Config(_))));
    }

    #[test]
    fn honest_v1_0_always_accepted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let kp = gen(&TdpConfig::MockRandom { n: 6 }, &mut rng).unwrap();
        for i in 0..300 {
            let rec = run_local_session(&kp, ProverStrategy::Quantum(QuantumMode::Enumerate), 9, i).unwrap();
            if rec.branch().0 == false {
                assert!(rec.verdict());
            }
        }
    }

    #[test]
    fn bench_is_deterministic() {
        let cfg = BenchConfig {
            strategy: ProverStrategy::Quantum(QuantumMode::Escrow),
            tdp: TdpConfig::modular_for_domain(16),
            trials: 500,
            seed: 42,
        };
        let a = bench(&cfg).unwrap();
        let b = bench(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.void_sessions, 0);
        assert_eq!(a.v1_0.trials + a.v1_1_v2_0.trials + a.v1_1_v2_1.trials, 500);
    }

    #[test]
    fn stats_json_has_schema() {
        let cfg = BenchConfig {
            strategy: ProverStrategy::ClassicalOptimal,
            tdp: TdpConfig::MockRandom { n: 5 },
            trials: 50,
            seed: 3,
        };
        let s = bench(&cfg).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(v["schema"], STATS_SCHEMA);
        assert!(s.table().contains("overall"));
        let back: BenchStats = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!((back.v1_0, back.v1_1_v2_0, back.v1_1_v2_1), (s.v1_0, s.v1_1_v2_0, s.v1_1_v2_1));
        assert!((back.overall_value() - s.overall_value()).abs() < 1e-12);
    }

    #[test]
    fn void_sessions_not_counted_as_rejects() {
        let mut t = Tally::default();
        t.record(&Err(SessionError::Malformed("x".into())));
        assert_eq!(t.void, 1);
        assert_eq!(t.v1_0.trials + t.v1_1_v2_0.trials + t.v1_1_v2_1.trials, 0);
    }
}
