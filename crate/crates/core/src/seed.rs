//! Deterministic per-session random streams.
//!
//! Every session draws from its own ChaCha stream derived from the master
//! seed, the session index and the party, so results do not depend on how
//! sessions are scheduled across threads or processes.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type SessionRng = ChaCha12Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Party {
    Verifier = 0,
    Prover = 1,
    /// Randomness not owned by either protocol party (key generation, harness sampling).
    Harness = 2,
}

pub fn session_rng(master_seed: u64, session: u64, party: Party) -> SessionRng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(session.wrapping_mul(4).wrapping_add(party as u64));
    rng
}
