mod common;

use std::sync::Arc;

use common::classical_after_rsp;
use poq_core::bits::BitString;
use poq_core::glevin::{algorithm_b, algorithm_c, gl_extract, GlParams, Predictor, TablePredictor};
use poq_core::poq::{accept_predicate, bench_keypair, BranchPayload, ClassicalProverState, ClassicalStrategy};
use poq_core::seed::{session_rng, Party};
use poq_core::tdp::TdpConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

#[test]
fn params_follow_the_formulas() {
    let p = GlParams::new(16, 0.35, 0.01).unwrap();
    assert_eq!(p.seeds, 12);
    assert_eq!(p.threshold(), 0.675);
    let k = 8.0 * (12.0 * std::f64::consts::LN_2 + 100f64.ln()) / (0.35 * 0.35);
    assert_eq!(p.verify_samples, k.ceil() as usize);
    assert!(GlParams::new(1 << 20, 0.01, 1e-6).unwrap().seeds <= poq_core::glevin::MAX_SEEDS);
}

#[test]
fn soundness_of_returned_candidates() {
    let mut rng = ChaCha12Rng::seed_from_u64(61);
    let n = 14;
    let eps = 0.2;
    for agreement in [0.5, 0.6, 0.7, 0.85, 1.0] {
        for _ in 0..5 {
            let s = BitString::random(n, &mut rng);
            let mut p = TablePredictor::new(&s, agreement, &mut rng).unwrap();
            let found = gl_extract(&mut p, n, eps, 0.05, &mut rng).unwrap();
            for c in &found {
                let hits = (0..10_000)
                    .filter(|_| {
                        let r = BitString::random(n, &mut rng);
                        p.predict(&r) == r.dot(&c.z).unwrap()
                    })
                    .count();
                assert!(hits as f64 / 1e4 >= 0.5 + eps / 4.0, "agreement {agreement}: {}", c.z);
            }
        }
    }
}

#[test]
fn completeness_at_stated_advantage() {
    let mut rng = ChaCha12Rng::seed_from_u64(62);
    let n = 16;
    let mut recovered = 0;
    for _ in 0..100 {
        let s = BitString::random(n, &mut rng);
        let mut p = TablePredictor::new(&s, 0.8, &mut rng).unwrap();
        let found = gl_extract(&mut p, n, 0.3, 0.05, &mut rng).unwrap();
        recovered += found.iter().any(|c| c.z == s) as u32;
    }
    assert!(recovered >= 95, "{recovered}");
}

#[test]
fn b_matches_difference_for_leaky_and_zero_for_optimal() {
    let kp = bench_keypair(&TdpConfig::modular_for_domain(12), 63).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(63);
    for i in 0..100 {
        let (pair, leaky) = classical_after_rsp(&kp, ClassicalStrategy::Leaky(Arc::new(kp.trapdoor.clone())), 63, i);
        let (_, optimal) = classical_after_rsp(&kp, ClassicalStrategy::Optimal, 63, i);
        for _ in 0..20 {
            let r = BitString::random(12, &mut rng);
            assert_eq!(algorithm_b(&leaky, &r, &mut rng).bit, r.dot(&pair.difference()).unwrap());
            assert!(!algorithm_b(&optimal, &r, &mut rng).bit);
        }
    }
}

#[test]
fn double_accept_implies_difference_bit() {
    let kp = bench_keypair(&TdpConfig::MockRandom { n: 8 }, 64).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(64);
    let strategies = [
        ClassicalStrategy::Optimal,
        ClassicalStrategy::HonestCommitRandomEta,
        ClassicalStrategy::RandomGuess,
        ClassicalStrategy::Leaky(Arc::new(kp.trapdoor.clone())),
    ];
    let mut both = 0;
    for (k, s) in strategies.iter().enumerate() {
        for i in 0..250 {
            let (pair, st) = classical_after_rsp(&kp, s.clone(), 64, (k * 1000 + i) as u64);
            let r = BitString::random(8, &mut rng);
            let run = algorithm_b(&st, &r, &mut rng);
            let (d, (e0, e1)) = (run.d.clone().unwrap(), run.etas.unwrap());
            let pass = |v2, eta| accept_predicate(&pair, &r, true, &BranchPayload::Equation { d: d.clone(), v2, eta });
            if pass(false, e0) && pass(true, e1) {
                both += 1;
                assert_eq!(run.bit, r.dot(&pair.difference()).unwrap());
            }
        }
    }
    assert!(both > 0);
}

#[test]
fn b_failure_policy_is_a_coin() {
    // A prover that has not finished hashing cannot answer the challenge.
    let st = ClassicalProverState::new(ClassicalStrategy::Optimal, session_rng(65, 0, Party::Prover));
    let mut rng = ChaCha12Rng::seed_from_u64(65);
    let r = BitString::random(8, &mut rng);
    let ones = (0..2_000).filter(|_| {
        let run = algorithm_b(&st, &r, &mut rng);
        assert!(run.failed);
        run.bit
    });
    let ones = ones.count();
    assert!((900..=1100).contains(&ones), "{ones}");
}

#[test]
fn composed_attack_recovers_pair_from_leaky_prover() {
    let kp = bench_keypair(&TdpConfig::modular_for_domain(12), 66).unwrap();
    for i in 0..5 {
        let prover = ClassicalProverState::new(
            ClassicalStrategy::Leaky(Arc::new(kp.trapdoor.clone())),
            session_rng(66, i, Party::Prover),
        );
        let res = algorithm_c(&kp, prover, 0.25, 0.01, &mut session_rng(66, i, Party::Harness)).unwrap();
        assert!(res.success);
        assert_eq!(res.recovered.as_ref(), Some(&res.truth));
        assert_eq!(res.z, res.truth.difference());
    }
}
