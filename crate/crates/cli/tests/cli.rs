use std::path::PathBuf;
use std::process::{Child, Command, Output, Stdio};

use serde_json::Value;

fn poq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_poq")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("poq-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

/// Last JSON document printed on stdout.
fn last_json(o: &Output) -> Value {
    let text = stdout(o);
    let start = text.rfind("\n{").map_or(0, |i| i + 1);
    serde_json::from_str(&text[start..]).unwrap_or_else(|e| panic!("{e}: {text}"))
}

#[test]
fn keygen_mock_writes_full_table() {
    let out = scratch("mock8.json");
    let o = poq(&["keygen", "--variant", "mock", "--n", "8", "--out", out.to_str().unwrap(), "--seed", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("n = 8"));
    let key: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(key["payload"]["table"].as_array().unwrap().len(), 256);
    let secret = std::fs::read_to_string(format!("{}.td", out.display())).unwrap();
    assert!(!stdout(&o).contains(&secret));
}

#[test]
fn keygen_modular_64_bits_has_63_bit_domain() {
    let out = scratch("mod64.json");
    let o = poq(&["keygen", "--variant", "modular", "--bits", "64", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("n = 63"));
}

#[test]
fn keygen_needs_out() {
    let o = poq(&["keygen", "--variant", "mock", "--n", "8"]);
    assert!(!o.status.success());
}

#[test]
fn local_runs_hit_expected_rates() {
    for (strategy, expected) in [("quantum", 0.9268), ("classical-optimal", 0.875)] {
        let o = poq(&["run", "--role", "local", "--strategy", strategy, "--trials", "10000", "--seed", "3", "--quiet"]);
        assert!(o.status.success());
        let rate = last_json(&o)["overall"]["value"].as_f64().unwrap();
        assert!((rate - expected).abs() < 0.015, "{strategy}: {rate}");
    }
}

#[test]
fn runs_are_deterministic_given_seed() {
    let args = ["run", "--role", "local", "--trials", "3000", "--seed", "9", "--quiet"];
    assert_eq!(poq(&args).stdout, poq(&args).stdout);
}

#[test]
fn enumerate_prover_refuses_large_n() {
    let o = Command::new(env!("CARGO_BIN_EXE_poq"))
        .args(["run", "--role", "prover", "--strategy", "quantum", "--mode", "enumerate", "--n", "24"])
        .env("POQ_ADDR", "127.0.0.1:9")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("configuration error"));
}

#[test]
fn escrow_prover_without_key_is_rejected() {
    let o = poq(&["run", "--role", "prover", "--strategy", "quantum", "--connect", "127.0.0.1:9"]);
    assert!(!o.status.success());
}

fn spawn(args: &[&str]) -> Child {
    Command::new(env!("CARGO_BIN_EXE_poq"))
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap()
}

#[test]
fn two_processes_over_tcp() {
    let key = scratch("tcp.json");
    let key = key.to_str().unwrap();
    assert!(poq(&["keygen", "--variant", "modular", "--n", "24", "--out", key, "--seed", "4"]).status.success());
    let td = format!("{key}.td");
    // Port chosen from the pid to keep parallel test runs apart.
    let addr = format!("127.0.0.1:{}", 20_000 + std::process::id() % 20_000);
    let verifier = spawn(&["run", "--role", "verifier", "--key", key, "--listen", &addr, "--trials", "300", "--seed", "4"]);
    let prover = spawn(&[
        "run", "--role", "prover", "--strategy", "quantum", "--escrow-key", &td, "--connect", &addr, "--trials", "300",
        "--seed", "4", "--quiet",
    ]);
    let p = prover.wait_with_output().unwrap();
    let v = verifier.wait_with_output().unwrap();
    assert!(v.status.success() && p.status.success(), "{}", String::from_utf8_lossy(&v.stderr));
    assert!(String::from_utf8_lossy(&p.stderr).contains("ESCROW MODE"));
    let stats = last_json(&v);
    assert_eq!(stats["void_sessions"], 0);
    assert_eq!(stdout(&v).lines().filter(|l| l.starts_with("session ")).count(), 300);
    let secret = std::fs::read_to_string(&td).unwrap();
    assert!(!stdout(&v).contains(&secret) && !stdout(&p).contains(&secret));

    // The same seed run in-process gives the same counts.
    let local = poq(&["run", "--role", "local", "--key", key, "--trials", "300", "--seed", "4", "--quiet"]);
    let local = last_json(&local);
    for branch in ["v1_0", "v1_1_v2_0", "v1_1_v2_1"] {
        assert_eq!(stats[branch], local[branch], "{branch}");
    }
}

#[test]
fn bench_exit_code_reflects_gap() {
    let o = poq(&["bench", "--trials", "20000", "--seed", "5", "--json"]);
    let doc = last_json(&o);
    assert_eq!(doc["schema"], "poq-bench/1");
    let holds = doc["gap_holds"].as_bool().unwrap();
    assert_eq!(o.status.success(), holds);
    assert!(holds);
    let o = poq(&["bench", "--trials", "20", "--seed", "5", "--variant", "mock", "--n", "6", "--json"]);
    assert_eq!(o.status.success(), last_json(&o)["gap_holds"].as_bool().unwrap());
}

#[test]
fn gl_demo_outcomes() {
    let o = poq(&["gl-demo", "--leaky", "--n", "16", "--seed", "1"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("success    true"));
    let o = poq(&["gl-demo", "--optimal", "--n", "16", "--seed", "1"]);
    assert!(stdout(&o).contains("success    false"));
    assert!(!poq(&["gl-demo", "--leaky", "--n", "0"]).status.success());
    assert!(!poq(&["gl-demo", "--n", "8"]).status.success());
}

#[test]
fn selftest_passes() {
    let o = poq(&["selftest"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
}
