// Brute-force oracles and session helpers shared by the integration tests.
#![allow(dead_code)]

use std::thread;
use std::time::Duration;

use poq_core::bits::{BitString, HashQuerySet};
use poq_core::net::{
    in_process, serve, socket_connect, Direction, LocalChannel, ProtocolMessage, Recording, SocketListener,
};
use poq_core::poq::{
    accept_predicate, verifier_session, BranchPayload, ClassicalProverState, ClassicalStrategy, Prover,
    ProverStrategy, QuantumMode,
};
use poq_core::qsim::{rotated_zero_probability, QubitState};
use poq_core::rsp::{alice_session, BobMode, HonestBob, PreimagePair, RspOutcome, RspTranscript};
use poq_core::seed::{session_rng, Party};
use poq_core::tdp::{PublicKey, TdpKeyPair};

pub fn all_strings(n: usize) -> impl Iterator<Item = BitString> {
    (0..1u64 << n).map(move |v| BitString::from_u64(v, n).unwrap())
}

/// Every `y` with `h_j·y = c_j` for all `j`, in increasing order.
pub fn brute_solutions(q: &HashQuerySet, c: &[bool]) -> Vec<BitString> {
    all_strings(q.n())
        .filter(|y| q.queries().iter().zip(c).all(|(h, &b)| h.dot(y).unwrap() == b))
        .collect()
}

/// Full inverse of a public key by enumerating its domain.
pub fn brute_inverse(key: &PublicKey, y: &BitString) -> BitString {
    all_strings(key.n()).find(|x| &key.eval(x).unwrap() == y).unwrap()
}

/// Post-measurement qubit for outcome `d`, computed from the amplitudes
/// `sum_x a_x (-1)^{d·x} |r·x⟩` with no case analysis.
pub fn qubit_after(pair: &PreimagePair, r: &BitString, d: &BitString) -> Option<QubitState> {
    let mut amp = [0.0f64; 2];
    for x in [&pair.x0, &pair.x1] {
        let sign = if d.dot(x).unwrap() { -1.0 } else { 1.0 };
        amp[r.dot(x).unwrap() as usize] += sign;
    }
    let norm = (amp[0] * amp[0] + amp[1] * amp[1]).sqrt();
    (norm > 1e-12).then(|| QubitState::new(amp[0] / norm, amp[1] / norm).unwrap())
}

/// Exact honest acceptance for one pair, averaging over every `(v1, r, d, v2)`.
/// `Pr[d]` is `|amplitude|^2` summed over the qubit.
pub fn exact_honest_acceptance(pair: &PreimagePair) -> f64 {
    let n = pair.x0.len();
    let scale = 1.0 / (2.0 * (1u64 << n) as f64);
    let mut branch1 = 0.0;
    for r in all_strings(n) {
        for d in all_strings(n) {
            let mut amp = [0.0f64; 2];
            for x in [&pair.x0, &pair.x1] {
                let sign = if d.dot(x).unwrap() { -1.0 } else { 1.0 };
                amp[r.dot(x).unwrap() as usize] += sign;
            }
            let pd = (amp[0] * amp[0] + amp[1] * amp[1]) * scale;
            let Some(q) = qubit_after(pair, &r, &d) else { continue };
            for v2 in [false, true] {
                let p_eta0 = rotated_zero_probability(&q, v2);
                for (eta, p) in [(false, p_eta0), (true, 1.0 - p_eta0)] {
                    let payload = BranchPayload::Equation { d: d.clone(), v2, eta };
                    if accept_predicate(pair, &r, true, &payload) {
                        branch1 += pd * 0.5 * p;
                    }
                }
            }
        }
    }
    0.5 + 0.5 * branch1 / (1u64 << n) as f64
}

/// Exact acceptance of the optimal classical prover committed to `x`.
pub fn exact_optimal_acceptance(pair: &PreimagePair, x: &BitString) -> f64 {
    let n = pair.x0.len();
    let mut branch1 = 0.0;
    let mut cases = 0.0;
    for r in all_strings(n) {
        for d in all_strings(n) {
            for v2 in [false, true] {
                let eta = r.dot(x).unwrap();
                let payload = BranchPayload::Equation { d: d.clone(), v2, eta };
                branch1 += accept_predicate(pair, &r, true, &payload) as u64 as f64;
                cases += 1.0;
            }
        }
    }
    0.5 + 0.5 * branch1 / cases
}

/// One joint preparation session with honest Bob over a direct channel.
pub fn joint_rsp(keypair: &TdpKeyPair, mode: BobMode, seed: u64, session: u64) -> (RspOutcome, RspTranscript) {
    let mut ch = LocalChannel::new(HonestBob::new(mode, session_rng(seed, session, Party::Prover)));
    let (pair, transcript) = alice_session(keypair, &mut ch, &mut session_rng(seed, session, Party::Verifier)).unwrap();
    let outcome = RspOutcome {
        alice_pair: pair,
        bob_state: ch.peer().state().cloned(),
    };
    (outcome, transcript)
}

/// Runs the preparation phase against a classical prover and returns
/// Alice's pair with a snapshot of the prover.
pub fn classical_after_rsp(
    keypair: &TdpKeyPair,
    strategy: ClassicalStrategy,
    seed: u64,
    session: u64,
) -> (PreimagePair, ClassicalProverState) {
    let prover = ClassicalProverState::new(strategy, session_rng(seed, session, Party::Prover));
    let mut ch = LocalChannel::new(prover);
    let (pair, _) = alice_session(keypair, &mut ch, &mut session_rng(seed, session, Party::Verifier)).unwrap();
    (pair, ch.into_peer())
}

pub type Log = Vec<(Direction, ProtocolMessage)>;

fn prover_for(keypair: &TdpKeyPair, strategy: ProverStrategy, seed: u64, session: u64) -> Prover {
    let escrow = (strategy == ProverStrategy::Quantum(QuantumMode::Escrow)).then_some(&keypair.trapdoor);
    Prover::new(strategy, escrow, Some(keypair.public.n()), session_rng(seed, session, Party::Prover)).unwrap()
}

/// Verifier-side message log of one session with the prover called directly.
pub fn transcript_direct(keypair: &TdpKeyPair, strategy: ProverStrategy, seed: u64, session: u64) -> Log {
    let mut ch = Recording::new(LocalChannel::new(prover_for(keypair, strategy, seed, session)));
    verifier_session(keypair, &mut ch, &mut session_rng(seed, session, Party::Verifier)).unwrap();
    ch.into_parts().1
}

/// Same session with the prover on another thread behind framed channels.
pub fn transcript_threaded(keypair: &TdpKeyPair, strategy: ProverStrategy, seed: u64, session: u64) -> Log {
    let (v, p) = in_process();
    let mut prover = prover_for(keypair, strategy, seed, session);
    let handle = thread::spawn(move || serve(&mut prover, p));
    let mut ch = Recording::new(v);
    verifier_session(keypair, &mut ch, &mut session_rng(seed, session, Party::Verifier)).unwrap();
    handle.join().unwrap().unwrap();
    ch.into_parts().1
}

/// Same session over a loopback TCP connection.
pub fn transcript_socket(
    listener: &SocketListener,
    keypair: &TdpKeyPair,
    strategy: ProverStrategy,
    seed: u64,
    session: u64,
) -> Log {
    let addr = listener.local_addr().unwrap();
    let mut prover = prover_for(keypair, strategy, seed, session);
    let handle = thread::spawn(move || {
        let ch = socket_connect(addr, Duration::from_secs(30)).unwrap();
        serve(&mut prover, ch)
    });
    let mut ch = Recording::new(listener.accept().unwrap());
    verifier_session(keypair, &mut ch, &mut session_rng(seed, session, Party::Verifier)).unwrap();
    handle.join().unwrap().unwrap();
    ch.into_parts().1
}
