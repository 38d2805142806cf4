mod common;

use std::time::Duration;

use common::{transcript_direct, transcript_socket, transcript_threaded};
use poq_core::bits::BitString;
use poq_core::net::{decode, encode, socket_listen, ProtocolMessage};
use poq_core::poq::{bench_keypair, ProverStrategy, QuantumMode};
use poq_core::tdp::TdpConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

#[test]
fn transports_carry_identical_transcripts() {
    let kp = bench_keypair(&TdpConfig::modular_for_domain(16), 71).unwrap();
    let listener = socket_listen("127.0.0.1:0", Duration::from_secs(30)).unwrap();
    let strategies = [
        ProverStrategy::Quantum(QuantumMode::Escrow),
        ProverStrategy::ClassicalOptimal,
        ProverStrategy::ClassicalRandom,
    ];
    for i in 0..150u64 {
        let s = strategies[i as usize % strategies.len()];
        let direct = transcript_direct(&kp, s, 71, i);
        assert_eq!(transcript_threaded(&kp, s, 71, i), direct);
        assert_eq!(transcript_socket(&listener, &kp, s, 71, i), direct);
    }
}

fn random_message(rng: &mut ChaCha12Rng, key: &poq_core::tdp::PublicKey) -> ProtocolMessage {
    let n = rng.gen_range(1..80);
    let bits = |rng: &mut ChaCha12Rng| BitString::random(n, rng);
    match rng.gen_range(0..9) {
        0 => ProtocolMessage::Key { k: key.clone() },
        1 => ProtocolMessage::HashQuery { j: rng.gen(), h: bits(rng) },
        2 => ProtocolMessage::HashAnswer { j: rng.gen(), c: rng.gen() },
        3 => ProtocolMessage::Challenge1 { v1: rng.gen(), r: bits(rng) },
        4 => ProtocolMessage::PreimageResponse { x: bits(rng) },
        5 => ProtocolMessage::EquationResponse { d: bits(rng) },
        6 => ProtocolMessage::Challenge2 { v2: rng.gen() },
        7 => ProtocolMessage::BasisResponse { eta: rng.gen() },
        _ => ProtocolMessage::Verdict { accept: rng.gen() },
    }
}

#[test]
fn frame_roundtrip_fuzz() {
    let mut rng = ChaCha12Rng::seed_from_u64(72);
    let keys = [
        bench_keypair(&TdpConfig::MockRandom { n: 5 }, 1).unwrap().public,
        bench_keypair(&TdpConfig::Modular { modulus_bits: 300 }, 1).unwrap().public,
    ];
    for i in 0..10_000 {
        let msg = random_message(&mut rng, &keys[i % 2]);
        let bytes = encode(&msg).unwrap();
        assert_eq!(decode(&bytes).unwrap(), msg);
        assert_eq!(encode(&decode(&bytes).unwrap()).unwrap(), bytes);
        let cut = rng.gen_range(0..bytes.len());
        assert!(decode(&bytes[..cut]).is_err());
    }
}
