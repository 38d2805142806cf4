//! Remote state preparation and a proof of quantumness built from any
//! full-domain trapdoor permutation, with an exact classical simulator of
//! the honest quantum prover, the optimal classical prover, and the
//! Goldreich–Levin extraction attack against too-successful classical
//! provers.

pub mod bits;
pub mod glevin;
pub mod net;
pub mod poq;
pub mod qsim;
pub mod rsp;
pub mod seed;
pub mod stats;
pub mod tdp;

pub use bits::{inner_product, solve_two_solutions, BitString, HashQuerySet, SolutionPair};
pub use tdp::{PublicKey, TdpConfig, TdpKeyPair, Trapdoor};
