use std::process::ExitCode;
use std::time::Instant;

use poq_core::bits::{solve_two_solutions, BitString, HashQuerySet};
use poq_core::glevin::{gl_demo, gl_extract};
use poq_core::poq::{bench, honest_acceptance, BenchConfig, ProverStrategy, QuantumMode, CLASSICAL_OPTIMAL_ACCEPTANCE};
use poq_core::rsp::{alice_session, BobMode, HonestBob, RspOutcome};
use poq_core::net::LocalChannel;
use poq_core::seed::{session_rng, Party};
use poq_core::tdp::{gen, TdpConfig};

const TRIALS: u64 = 20_000;

type Check = (&'static str, fn(u64) -> Result<String, String>);

fn solver(seed: u64) -> Result<String, String> {
    let mut rng = session_rng(seed, 0, Party::Harness);
    for n in 2..=8usize {
        for _ in 0..50 {
            let q = HashQuerySet::sample(n, &mut rng).map_err(|e| e.to_string())?;
            let c: Vec<bool> = BitString::random(n - 1, &mut rng).iter().collect();
            let sol = solve_two_solutions(&q, &c).map_err(|e| e.to_string())?;
            let brute: Vec<BitString> = (0..1u64 << n)
                .map(|v| BitString::from_u64(v, n).unwrap())
                .filter(|y| q.queries().iter().zip(&c).all(|(h, &b)| h.dot(y).unwrap() == b))
                .collect();
            if brute != vec![sol.y0.clone(), sol.y1.clone()] {
                return Err(format!("n = {n}: solver disagrees with enumeration"));
            }
        }
    }
    Ok("n = 2..8, 50 instances each".into())
}

fn tdp_round_trip(seed: u64) -> Result<String, String> {
    let mut rng = session_rng(seed, 1, Party::Harness);
    for cfg in [TdpConfig::MockRandom { n: 8 }, TdpConfig::modular_for_domain(32)] {
        let kp = gen(&cfg, &mut rng).map_err(|e| e.to_string())?;
        for _ in 0..1000 {
            let x = BitString::random(kp.public.n(), &mut rng);
            let y = kp.public.eval(&x).map_err(|e| e.to_string())?;
            if kp.trapdoor.invert(&y).map_err(|e| e.to_string())? != x {
                return Err(format!("{} round trip failed", kp.public.variant()));
            }
        }
    }
    Ok("mock n = 8 and modular n = 32, 1000 points each".into())
}

fn rsp_correct(seed: u64) -> Result<String, String> {
    let kp = gen(&TdpConfig::MockRandom { n: 8 }, &mut session_rng(seed, 2, Party::Harness)).map_err(|e| e.to_string())?;
    for i in 0..500 {
        let mode = if i % 2 == 0 { BobMode::Escrow(kp.trapdoor.clone()) } else { BobMode::Enumerate };
        let mut ch = LocalChannel::new(HonestBob::new(mode, session_rng(seed, i, Party::Prover)));
        let (pair, t) = alice_session(&kp, &mut ch, &mut session_rng(seed, i, Party::Verifier)).map_err(|e| e.to_string())?;
        let outcome = RspOutcome {
            alice_pair: pair,
            bob_state: ch.peer().state().cloned(),
        };
        if !outcome.check(&t) {
            return Err(format!("session {i} broke correctness"));
        }
    }
    Ok("500 sessions, both simulator modes".into())
}

fn rates(seed: u64) -> Result<String, String> {
    let run = |strategy| {
        bench(&BenchConfig {
            strategy,
            tdp: TdpConfig::modular_for_domain(32),
            trials: TRIALS,
            seed,
        })
        .map_err(|e| e.to_string())
    };
    let q = run(ProverStrategy::Quantum(QuantumMode::Escrow))?;
    let c = run(ProverStrategy::ClassicalOptimal)?;
    let (qv, cv) = (q.overall_value(), c.overall_value());
    let p0 = q.p0.map_or(0.0, |e| e.value);
    // 0.012 is about 4.5 standard errors at 2·10^4 trials.
    let ok = (qv - honest_acceptance()).abs() < 0.012
        && (cv - CLASSICAL_OPTIMAL_ACCEPTANCE).abs() < 0.012
        && p0 == 1.0
        && qv - cv >= 0.03;
    let msg = format!("quantum {qv:.4}, classical optimal {cv:.4}, honest p0 {p0}");
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn goldreich_levin(seed: u64) -> Result<String, String> {
    let mut rng = session_rng(seed, 3, Party::Harness);
    let s = BitString::random(16, &mut rng);
    let mut perfect = |r: &BitString| r.dot(&s).unwrap();
    let found = gl_extract(&mut perfect, 16, 0.5, 0.01, &mut rng).map_err(|e| e.to_string())?;
    if !found.iter().any(|c| c.z == s) {
        return Err("perfect predictor: secret missing from list".into());
    }
    if !gl_demo(12, true, seed).map_err(|e| e.to_string())?.success {
        return Err("leaky prover: extraction failed".into());
    }
    if gl_demo(12, false, seed).map_err(|e| e.to_string())?.success {
        return Err("optimal prover: extraction unexpectedly succeeded".into());
    }
    Ok("perfect predictor, leaky and optimal provers".into())
}

pub fn run(seed: u64) -> ExitCode {
    let checks: [Check; 5] = [
        ("solver matches enumeration", solver),
        ("trapdoor round trips", tdp_round_trip),
        ("preparation correctness", rsp_correct),
        ("acceptance rates and gap", rates),
        ("extraction", goldreich_levin),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let (tag, detail) = match check(seed) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {name:<28} {detail} ({:.1}s)", start.elapsed().as_secs_f64());
    }
    if failed == 0 {
        println!("selftest passed");
        ExitCode::SUCCESS
    } else {
        println!("selftest: {failed} check(s) failed");
        ExitCode::FAILURE
    }
}
