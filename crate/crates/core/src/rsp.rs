//! Remote state preparation of `|x0⟩ + |x1⟩` over a classical channel.
//!
//! Alice generates a trapdoor permutation `f`, sends the key, then runs
//! `n - 1` rounds of interactive hashing with queries
//! `h_j ∈ 0^{j-1}1{0,1}^{n-j}`. An honest Bob answers each round by
//! measuring `h_j·f(x)` on his superposition; after the last round exactly
//! two preimages survive. Alice recovers them by solving the hashing system
//! for its two solutions and inverting both with the trapdoor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bits::{solve_two_solutions, BitString, HashQuerySet, SolutionPair};
use crate::net::{wire_bit, Channel, ProtocolMessage, Responder, SessionError};
use crate::qsim::{EnumeratingProver, Sign, TwoTermState};
use crate::tdp::{PublicKey, TdpKeyPair, Trapdoor};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RspTranscript {
    pub key: PublicKey,
    pub queries: HashQuerySet,
    pub answers: Vec<bool>,
}

impl RspTranscript {
    pub fn n(&self) -> usize {
        self.queries.n()
    }

    pub fn solutions(&self) -> SolutionPair {
        solve_two_solutions(&self.queries, &self.answers)
            .expect("transcript answers match the query count")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("transcripts always serialize")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Alice's output `{x0, x1}`, stored with `x0 < x1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PreimagePair {
    pub x0: BitString,
    pub x1: BitString,
}

impl PreimagePair {
    pub fn new(a: BitString, b: BitString) -> Self {
        if a <= b {
            PreimagePair { x0: a, x1: b }
        } else {
            PreimagePair { x0: b, x1: a }
        }
    }

    pub fn contains(&self, x: &BitString) -> bool {
        &self.x0 == x || &self.x1 == x
    }

    pub fn difference(&self) -> BitString {
        self.x0.xor(&self.x1).expect("pair members have equal length")
    }

    pub fn matches_state(&self, state: &TwoTermState) -> bool {
        state.x0() == &self.x0 && state.x1() == &self.x1
    }
}

/// Result of one joint session, as seen by a harness with access to both sides.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RspOutcome {
    pub alice_pair: PreimagePair,
    pub bob_state: Option<TwoTermState>,
}

impl RspOutcome {
    /// Checks that the pair maps onto the two hashing solutions and that
    /// Bob's support, if present, is exactly that pair.
    pub fn check(&self, transcript: &RspTranscript) -> bool {
        let sol = transcript.solutions();
        let (Ok(f0), Ok(f1)) = (
            transcript.key.eval(&self.alice_pair.x0),
            transcript.key.eval(&self.alice_pair.x1),
        ) else {
            return false;
        };
        let images_ok = (f0 == sol.y0 && f1 == sol.y1) || (f0 == sol.y1 && f1 == sol.y0);
        let bob_ok = self
            .bob_state
            .as_ref()
            .is_none_or(|s| self.alice_pair.matches_state(s));
        images_ok && bob_ok
    }
}

/// Alice's final computation; a pure function of the trapdoor and transcript.
pub fn alice_output(trapdoor: &Trapdoor, transcript: &RspTranscript) -> PreimagePair {
    let sol = transcript.solutions();
    let x0 = trapdoor.invert(&sol.y0).expect("solutions have domain length");
    let x1 = trapdoor.invert(&sol.y1).expect("solutions have domain length");
    PreimagePair::new(x0, x1)
}

/// Runs Alice's side: sends the key and one query per round, collects the
/// answers, and outputs `{f^{-1}(y0), f^{-1}(y1)}`. Alice never aborts; any
/// transport or format failure voids the session instead.
pub fn alice_session<C: Channel, R: Rng + ?Sized>(
    keypair: &TdpKeyPair,
    mut channel: C,
    rng: &mut R,
) -> Result<(PreimagePair, RspTranscript), SessionError> {
    let n = keypair.public.n();
    // All queries are drawn up front and released one per round.
    let queries = HashQuerySet::sample(n, rng).map_err(|e| SessionError::Config(e.to_string()))?;
    channel.send(&ProtocolMessage::Key {
        k: keypair.public.clone(),
    })?;
    let mut answers = Vec::with_capacity(n - 1);
    for (i, h) in queries.queries().iter().enumerate() {
        let j = (i + 1) as u32;
        channel.send(&ProtocolMessage::HashQuery { j, h: h.clone() })?;
        match channel.recv()? {
            ProtocolMessage::HashAnswer { j: got, c } => {
                if got != j {
                    return Err(SessionError::RoundMismatch {
                        expected: j,
                        found: got,
                    });
                }
                answers.push(wire_bit("c", c)?);
            }
            other => return Err(SessionError::unexpected("HashAnswer", &other)),
        }
    }
    let transcript = RspTranscript {
        key: keypair.public.clone(),
        queries,
        answers,
    };
    let pair = alice_output(&keypair.trapdoor, &transcript);
    Ok((pair, transcript))
}

/// How the honest prover's quantum register is simulated.
#[derive(Debug, Clone)]
pub enum BobMode {
    /// Answers are sampled uniformly and the final state is read off the
    /// transcript with an escrowed copy of the trapdoor. The escrowed data
    /// never influences the answers.
    Escrow(Trapdoor),
    /// Full enumeration of the superposition; needs `n <= 20`.
    Enumerate,
}

impl BobMode {
    pub fn is_escrow(&self) -> bool {
        matches!(self, BobMode::Escrow(_))
    }
}

#[derive(Debug, Clone)]
enum Register {
    Escrow {
        trapdoor: Trapdoor,
        queries: Vec<BitString>,
    },
    Enumerate(Box<EnumeratingProver>),
}

#[derive(Debug, Clone)]
enum BobPhase {
    AwaitKey(BobMode),
    Hashing {
        key: PublicKey,
        register: Register,
        answers: Vec<bool>,
    },
    Done(TwoTermState),
}

/// Honest Bob for the hashing phase.
#[derive(Debug, Clone)]
pub struct HonestBob<R> {
    phase: BobPhase,
    rng: R,
}

impl<R: Rng> HonestBob<R> {
    pub fn new(mode: BobMode, rng: R) -> Self {
        HonestBob {
            phase: BobPhase::AwaitKey(mode),
            rng,
        }
    }

    /// Bob's register once hashing is complete.
    pub fn state(&self) -> Option<&TwoTermState> {
        match &self.phase {
            BobPhase::Done(s) => Some(s),
            _ => None,
        }
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }

    fn finish_if_complete(&mut self) -> Result<(), SessionError> {
        let BobPhase::Hashing {
            key,
            register,
            answers,
        } = &self.phase
        else {
            return Ok(());
        };
        let n = key.n();
        if answers.len() + 1 < n {
            return Ok(());
        }
        let state = match register {
            Register::Escrow { trapdoor, queries } => {
                let queries = HashQuerySet::new(n, queries.clone())
                    .map_err(|e| SessionError::Malformed(e.to_string()))?;
                let sol = solve_two_solutions(&queries, answers)
                    .map_err(|e| SessionError::Malformed(e.to_string()))?;
                let x0 = trapdoor
                    .invert(&sol.y0)
                    .map_err(|e| SessionError::Config(e.to_string()))?;
                let x1 = trapdoor
                    .invert(&sol.y1)
                    .map_err(|e| SessionError::Config(e.to_string()))?;
                TwoTermState::new(x0, x1, Sign::Plus)
            }
            Register::Enumerate(prover) => prover.to_two_term(),
        }
        .map_err(|e| SessionError::Malformed(e.to_string()))?;
        self.phase = BobPhase::Done(state);
        Ok(())
    }

    fn on_key(&mut self, key: &PublicKey) -> Result<(), SessionError> {
        let BobPhase::AwaitKey(mode) = &self.phase else {
            return Err(SessionError::Malformed("second Key message".into()));
        };
        let register = match mode {
            BobMode::Escrow(trapdoor) => {
                if !trapdoor.matches(key) {
                    return Err(SessionError::Config(
                        "escrowed trapdoor does not match the received key".into(),
                    ));
                }
                Register::Escrow {
                    trapdoor: trapdoor.clone(),
                    queries: Vec::new(),
                }
            }
            BobMode::Enumerate => Register::Enumerate(Box::new(
                EnumeratingProver::new(key).map_err(|e| SessionError::Config(e.to_string()))?,
            )),
        };
        self.phase = BobPhase::Hashing {
            key: key.clone(),
            register,
            answers: Vec::new(),
        };
        self.finish_if_complete()
    }

    fn on_query(&mut self, j: u32, h: &BitString) -> Result<ProtocolMessage, SessionError> {
        let BobPhase::Hashing {
            key,
            register,
            answers,
        } = &mut self.phase
        else {
            return Err(SessionError::Malformed("HashQuery outside the hashing phase".into()));
        };
        let expected = answers.len() as u32 + 1;
        if j != expected {
            return Err(SessionError::RoundMismatch { expected, found: j });
        }
        if h.len() != key.n() || h.leading_one() != Some(j as usize) {
            return Err(SessionError::Malformed(format!("query {j} lacks the round prefix")));
        }
        let c = match register {
            Register::Escrow { queries, .. } => {
                queries.push(h.clone());
                self.rng.gen::<bool>()
            }
            Register::Enumerate(prover) => prover
                .answer(h, &mut self.rng)
                .map_err(|e| SessionError::Malformed(e.to_string()))?,
        };
        answers.push(c);
        self.finish_if_complete()?;
        Ok(ProtocolMessage::HashAnswer { j, c: c as u8 })
    }

    /// Handles the hashing-phase messages; returns `Ok(None)` for messages
    /// that need no reply.
    pub fn handle(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError> {
        match msg {
            ProtocolMessage::Key { k } => self.on_key(k).map(|_| None),
            ProtocolMessage::HashQuery { j, h } => self.on_query(*j, h).map(Some),
            other => Err(SessionError::unexpected("Key or HashQuery", other)),
        }
    }
}

impl<R: Rng> Responder for HonestBob<R> {
    fn respond(&mut self, msg: &ProtocolMessage) -> Result<Option<ProtocolMessage>, SessionError> {
        self.handle(msg)
    }

    fn finished(&self) -> bool {
        self.state().is_some()
    }
}

/// Runs honest Bob over `channel` and returns his final register.
pub fn bob_honest_session<C: Channel, R: Rng>(
    channel: C,
    rng: R,
    mode: BobMode,
) -> Result<TwoTermState, SessionError> {
    let mut bob = HonestBob::new(mode, rng);
    crate::net::serve(&mut bob, channel)?;
    Ok(bob.state().cloned().expect("serve returns once finished"))
}

/// An interactive party in the binding game. Answers are raw wire values so
/// that malformed adversaries can be expressed.
pub trait BindingAdversary {
    fn receive_key(&mut self, key: &PublicKey);
    fn answer(&mut self, j: usize, h: &BitString) -> u8;
    fn open(&mut self) -> (BitString, BitString);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GameOutcome {
    Win,
    Lose,
    ProtocolError(String),
}

/// Challenger of the binding game: the adversary wins if it opens both
/// solutions of its own hashing transcript.
pub fn binding_game<A: BindingAdversary + ?Sized, R: Rng + ?Sized>(
    keypair: &TdpKeyPair,
    adversary: &mut A,
    rng: &mut R,
) -> GameOutcome {
    let key = &keypair.public;
    let n = key.n();
    let queries = match HashQuerySet::sample(n, rng) {
        Ok(q) => q,
        Err(e) => return GameOutcome::ProtocolError(e.to_string()),
    };
    adversary.receive_key(key);
    let mut answers = Vec::with_capacity(n - 1);
    for (i, h) in queries.queries().iter().enumerate() {
        match wire_bit("c", adversary.answer(i + 1, h)) {
            Ok(c) => answers.push(c),
            Err(e) => return GameOutcome::ProtocolError(e.to_string()),
        }
    }
    let (alpha, beta) = adversary.open();
    let (fa, fb) = match (key.eval(&alpha), key.eval(&beta)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return GameOutcome::ProtocolError(e.to_string()),
    };
    let sol = solve_two_solutions(&queries, &answers).expect("answer count matches");
    if (fa == sol.y0 && fb == sol.y1) || (fa == sol.y1 && fb == sol.y0) {
        GameOutcome::Win
    } else {
        GameOutcome::Lose
    }
}

/// Holds the trapdoor, answers for a random preimage, then inverts both
/// solutions. Wins every game.
#[derive(Debug)]
pub struct TrapdoorAdversary<R> {
    trapdoor: Trapdoor,
    key: Option<PublicKey>,
    target: Option<BitString>,
    queries: Vec<BitString>,
    answers: Vec<bool>,
    rng: R,
}

impl<R: Rng> TrapdoorAdversary<R> {
    pub fn new(trapdoor: Trapdoor, rng: R) -> Self {
        TrapdoorAdversary {
            trapdoor,
            key: None,
            target: None,
            queries: Vec::new(),
            answers: Vec::new(),
            rng,
        }
    }
}

impl<R: Rng> BindingAdversary for TrapdoorAdversary<R> {
    fn receive_key(&mut self, key: &PublicKey) {
        let x = BitString::random(key.n(), &mut self.rng);
        self.target = Some(key.eval(&x).expect("domain length"));
        self.key = Some(key.clone());
        // Each game starts a fresh transcript.
        self.queries.clear();
        self.answers.clear();
    }

    fn answer(&mut self, _j: usize, h: &BitString) -> u8 {
        let y = self.target.as_ref().expect("key received first");
        let c = h.dot(y).unwrap_or(false);
        self.queries.push(h.clone());
        self.answers.push(c);
        c as u8
    }

    fn open(&mut self) -> (BitString, BitString) {
        let n = self.key.as_ref().map(PublicKey::n).unwrap_or(1);
        let q = HashQuerySet::new(n, self.queries.clone()).expect("challenger queries are well formed");
        let sol = solve_two_solutions(&q, &self.answers).expect("one answer per query");
        (
            self.trapdoor.invert(&sol.y0).expect("domain length"),
            self.trapdoor.invert(&sol.y1).expect("domain length"),
        )
    }
}

/// Answers honestly for a random `x`, opens `α = x` and a uniform guess for `β`.
#[derive(Debug)]
pub struct GuessingAdversary<R> {
    x: Option<BitString>,
    y: Option<BitString>,
    rng: R,
    /// Open `β = α` instead of guessing.
    pub repeat: bool,
}

impl<R: Rng> GuessingAdversary<R> {
    pub fn new(rng: R) -> Self {
        GuessingAdversary {
            x: None,
            y: None,
            rng,
            repeat: false,
        }
    }

    pub fn repeating(rng: R) -> Self {
        GuessingAdversary {
            repeat: true,
            ..Self::new(rng)
        }
    }
}

impl<R: Rng> BindingAdversary for GuessingAdversary<R> {
    fn receive_key(&mut self, key: &PublicKey) {
        let x = BitString::random(key.n(), &mut self.rng);
        self.y = Some(key.eval(&x).expect("domain length"));
        self.x = Some(x);
    }

    fn answer(&mut self, _j: usize, h: &BitString) -> u8 {
        h.dot(self.y.as_ref().expect("key received first")).unwrap_or(false) as u8
    }

    fn open(&mut self) -> (BitString, BitString) {
        let x = self.x.clone().expect("key received first");
        let beta = if self.repeat {
            x.clone()
        } else {
            BitString::random(x.len(), &mut self.rng)
        };
        (x, beta)
    }
}
