use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use poq_core::glevin::{gl_demo, ExtractionResult};
use poq_core::net::{serve, socket_connect, socket_listen, Channel, ChannelError, SessionError};
use poq_core::poq::{
    bench_keypair, bench_with_key, verifier_session, BenchStats, Prover, ProverStrategy, QuantumMode, Tally,
};
use poq_core::qsim::ENUMERATION_BOUND;
use poq_core::rsp::{alice_session, bob_honest_session, BobMode};
use poq_core::seed::{session_rng, Party};
use poq_core::tdp::{PublicKey, TdpConfig, TdpKeyPair, Trapdoor};

mod selftest;

const BENCH_SCHEMA: &str = "poq-bench/1";
const RSP_SCHEMA: &str = "poq-rsp-run/1";
const GAP_THRESHOLD: f64 = 0.04;

#[derive(Parser)]
#[command(name = "poq", version, about = "Remote state preparation and proof-of-quantumness runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair; the public key goes to --out, the trapdoor to <out>.td
    Keygen(KeygenArgs),
    /// Run protocol sessions as verifier, prover, or both in one process
    Run(RunArgs),
    /// Compare the honest prover against the optimal classical prover
    Bench(BenchArgs),
    /// Run the extraction attack against a classical prover
    GlDemo(GlDemoArgs),
    /// Run a reduced version of the property suite
    Selftest(SelftestArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Variant {
    Mock,
    MockIdentity,
    Modular,
}

#[derive(Args, Clone)]
struct KeySpec {
    #[arg(long, value_enum, default_value = "modular")]
    variant: Variant,
    /// Domain size in bits (default 32 for modular, 8 for mock)
    #[arg(long)]
    n: Option<usize>,
    /// Modulus size in bits, modular only; the domain is one bit smaller
    #[arg(long, conflicts_with = "n")]
    bits: Option<usize>,
}

impl KeySpec {
    fn config(&self) -> Result<TdpConfig> {
        if self.n == Some(0) {
            bail!("--n must be at least 1");
        }
        Ok(match self.variant {
            Variant::Modular => match (self.bits, self.n) {
                (Some(bits), _) => TdpConfig::Modular { modulus_bits: bits },
                (None, n) => TdpConfig::modular_for_domain(n.unwrap_or(32)),
            },
            Variant::Mock | Variant::MockIdentity => {
                if self.bits.is_some() {
                    bail!("--bits applies to modular keys only; use --n");
                }
                let n = self.n.unwrap_or(8);
                if self.variant == Variant::Mock {
                    TdpConfig::MockRandom { n }
                } else {
                    TdpConfig::MockIdentity { n }
                }
            }
        })
    }
}

#[derive(Args)]
struct KeygenArgs {
    #[command(flatten)]
    key: KeySpec,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Role {
    Verifier,
    Prover,
    /// Both parties in this process
    Local,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Protocol {
    Rsp,
    Poq,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    Quantum,
    ClassicalOptimal,
    /// Alias for classical-random
    ClassicalBaseline,
    ClassicalRandom,
    ClassicalHonestCRandomEta,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Escrow,
    Enumerate,
}

fn strategy(s: StrategyArg, mode: ModeArg) -> ProverStrategy {
    match s {
        StrategyArg::Quantum => ProverStrategy::Quantum(match mode {
            ModeArg::Escrow => QuantumMode::Escrow,
            ModeArg::Enumerate => QuantumMode::Enumerate,
        }),
        StrategyArg::ClassicalOptimal => ProverStrategy::ClassicalOptimal,
        StrategyArg::ClassicalBaseline | StrategyArg::ClassicalRandom => ProverStrategy::ClassicalRandom,
        StrategyArg::ClassicalHonestCRandomEta => ProverStrategy::ClassicalHonestCommitRandomEta,
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    role: Role,
    #[arg(long, value_enum, default_value = "poq")]
    protocol: Protocol,
    #[arg(long, value_enum, default_value = "quantum")]
    strategy: StrategyArg,
    #[arg(long, value_enum, default_value = "escrow")]
    mode: ModeArg,
    /// Address to listen on (verifier)
    #[arg(long, conflicts_with = "connect")]
    listen: Option<String>,
    /// Address to connect to (prover); falls back to POQ_ADDR
    #[arg(long)]
    connect: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: u64,
    /// Key file written by keygen; the verifier also reads <key>.td
    #[arg(long)]
    key: Option<PathBuf>,
    /// Trapdoor file handed to the simulated quantum prover in escrow mode
    #[arg(long)]
    escrow_key: Option<PathBuf>,
    /// Used when no --key is given
    #[command(flatten)]
    keyspec: KeySpec,
    #[arg(long, env = "POQ_TIMEOUT_MS", default_value_t = 30_000)]
    timeout_ms: u64,
    /// Suppress per-session lines
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    key: KeySpec,
    #[arg(long, value_enum, default_value = "escrow")]
    mode: ModeArg,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also run the baseline classical strategies
    #[arg(long)]
    baselines: bool,
    /// Print only the JSON document
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[group(id = "target", required = true, multiple = false)]
struct GlDemoTarget {
    /// Prover that cheats with the trapdoor; extraction should succeed
    #[arg(long)]
    leaky: bool,
    /// Optimal classical prover; extraction should fail
    #[arg(long)]
    optimal: bool,
}

#[derive(Args)]
struct GlDemoArgs {
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[command(flatten)]
    target: GlDemoTarget,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Keygen(a) => keygen(a),
        Command::Run(a) => run(a),
        Command::Bench(a) => bench(a),
        Command::GlDemo(a) => demo(a),
        Command::Selftest(a) => Ok(selftest::run(a.seed)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn secret_path(public: &Path) -> PathBuf {
    let mut s = public.as_os_str().to_owned();
    s.push(".td");
    PathBuf::from(s)
}

fn write_secret(path: &Path, contents: &str) -> Result<()> {
    let mut opts = fs::OpenOptions::new();
    opts.write(true).create(true).truncate(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts.open(path).with_context(|| format!("writing {}", path.display()))?;
    f.write_all(contents.as_bytes())?;
    Ok(())
}

fn keygen(a: KeygenArgs) -> Result<ExitCode> {
    let config = a.key.config()?;
    let keypair = bench_keypair(&config, a.seed)?;
    fs::write(&a.out, keypair.public.to_canonical_json()).with_context(|| format!("writing {}", a.out.display()))?;
    let td = secret_path(&a.out);
    write_secret(&td, &keypair.trapdoor.to_canonical_json())?;
    println!(
        "n = {}, security parameter {} bits ({})",
        keypair.public.n(),
        keypair.public.security_bits(),
        keypair.public.variant()
    );
    println!("public key: {}", a.out.display());
    println!("trapdoor:   {}", td.display());
    Ok(ExitCode::SUCCESS)
}

fn load_public(path: &Path) -> Result<PublicKey> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PublicKey::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_trapdoor(path: &Path) -> Result<Trapdoor> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Trapdoor::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_keypair(path: &Path) -> Result<TdpKeyPair> {
    let public = load_public(path)?;
    let trapdoor = load_trapdoor(&secret_path(path))?;
    if !trapdoor.matches(&public) {
        bail!("{} does not belong to {}", secret_path(path).display(), path.display());
    }
    Ok(TdpKeyPair { public, trapdoor })
}

fn escrow_notice() {
    eprintln!("*** ESCROW MODE: the quantum prover simulator holds the trapdoor. ***");
    eprintln!("*** This is a simulation shortcut; no real prover would have it.  ***");
}

fn verdict_word(r: &Result<bool, SessionError>) -> String {
    match r {
        Ok(true) => "accept".into(),
        Ok(false) => "reject".into(),
        Err(e) => format!("void ({e})"),
    }
}

fn run(a: RunArgs) -> Result<ExitCode> {
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let strat = strategy(a.strategy, a.mode);
    if a.protocol == Protocol::Rsp && a.strategy != StrategyArg::Quantum {
        bail!("the rsp protocol only has the honest prover; use --strategy quantum");
    }
    let timeout = Duration::from_millis(a.timeout_ms);
    let addr = a.connect.clone().or_else(|| std::env::var("POQ_ADDR").ok());
    match a.role {
        Role::Verifier | Role::Local => {
            if a.escrow_key.is_some() && a.role == Role::Verifier {
                bail!("--escrow-key is a prover option");
            }
            let keypair = match &a.key {
                Some(p) => load_keypair(p)?,
                None => bench_keypair(&a.keyspec.config()?, a.seed)?,
            };
            if a.role == Role::Local {
                if a.listen.is_some() || a.connect.is_some() {
                    bail!("--role local runs in-process; drop --listen/--connect");
                }
                return run_local(&a, strat, &keypair);
            }
            if a.connect.is_some() {
                bail!("the verifier listens; use --listen");
            }
            let listen = a
                .listen
                .clone()
                .or_else(|| std::env::var("POQ_ADDR").ok())
                .ok_or_else(|| anyhow!("verifier needs --listen or POQ_ADDR"))?;
            run_verifier(&a, &keypair, &listen, timeout)
        }
        Role::Prover => {
            if a.listen.is_some() {
                bail!("the prover connects; use --connect");
            }
            let addr = addr.ok_or_else(|| anyhow!("prover needs --connect or POQ_ADDR"))?;
            run_prover(&a, strat, &addr, timeout)
        }
    }
}

fn run_local(a: &RunArgs, strat: ProverStrategy, keypair: &TdpKeyPair) -> Result<ExitCode> {
    if strat == ProverStrategy::Quantum(QuantumMode::Escrow) {
        escrow_notice();
    }
    match a.protocol {
        Protocol::Poq => {
            let stats = bench_with_key(keypair, strat, a.trials, a.seed)?;
            println!("{}", stats.to_json());
        }
        Protocol::Rsp => {
            let mode = quantum_mode(strat, Some(&keypair.trapdoor), keypair.public.n())?;
            let mut ok = 0u64;
            let mut void = 0u64;
            for i in 0..a.trials {
                let (va, vb) = poq_core::net::in_process();
                let bob_rng = session_rng(a.seed, i, Party::Prover);
                let bob_mode = mode.clone();
                let bob = thread::spawn(move || bob_honest_session(vb, bob_rng, bob_mode));
                let alice = alice_session(keypair, va, &mut session_rng(a.seed, i, Party::Verifier));
                let bob = bob.join().map_err(|_| anyhow!("prover thread panicked"))?;
                let line = match (alice, bob) {
                    (Ok((pair, transcript)), Ok(state)) => {
                        let good = poq_core::rsp::RspOutcome {
                            alice_pair: pair,
                            bob_state: Some(state),
                        }
                        .check(&transcript);
                        ok += good as u64;
                        if good { "correct" } else { "INCORRECT" }.to_string()
                    }
                    (Err(e), _) | (_, Err(e)) => {
                        void += 1;
                        format!("void ({e})")
                    }
                };
                if !a.quiet {
                    println!("session {i}: {line}");
                }
            }
            let doc = json!({
                "schema": RSP_SCHEMA,
                "sessions": a.trials,
                "correct": ok,
                "void_sessions": void,
                "n": keypair.public.n(),
                "seed": a.seed,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
            if ok + void != a.trials {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn quantum_mode(strat: ProverStrategy, escrow: Option<&Trapdoor>, n: usize) -> Result<BobMode> {
    match strat {
        ProverStrategy::Quantum(QuantumMode::Escrow) => Ok(BobMode::Escrow(
            escrow.cloned().ok_or_else(|| anyhow!("escrow mode needs --escrow-key"))?,
        )),
        ProverStrategy::Quantum(QuantumMode::Enumerate) => {
            if n > ENUMERATION_BOUND {
                bail!("configuration error: enumerate mode needs n <= {ENUMERATION_BOUND}, got n = {n}; use escrow mode");
            }
            Ok(BobMode::Enumerate)
        }
        _ => bail!("not a quantum strategy"),
    }
}

fn run_verifier(a: &RunArgs, keypair: &TdpKeyPair, listen: &str, timeout: Duration) -> Result<ExitCode> {
    let listener = socket_listen(listen, timeout).with_context(|| format!("listening on {listen}"))?;
    eprintln!("verifier listening on {}", listener.local_addr()?);
    let mut tally = Tally::default();
    let mut rsp_void = 0u64;
    for i in 0..a.trials {
        let channel = listener.accept().context("accepting prover connection")?;
        let mut rng = session_rng(a.seed, i, Party::Verifier);
        match a.protocol {
            Protocol::Poq => {
                let outcome = verifier_session(keypair, channel, &mut rng);
                if !a.quiet {
                    println!("session {i}: {}", verdict_word(&outcome.as_ref().map(|r| r.verdict()).map_err(clone_err)));
                }
                tally.record(&outcome);
            }
            Protocol::Rsp => {
                let outcome = alice_session(keypair, channel, &mut rng);
                if !a.quiet {
                    match &outcome {
                        Ok((pair, _)) => println!("session {i}: pair {{{}, {}}}", pair.x0, pair.x1),
                        Err(e) => println!("session {i}: void ({e})"),
                    }
                }
                rsp_void += outcome.is_err() as u64;
            }
        }
    }
    match a.protocol {
        Protocol::Poq => {
            let stats = BenchStats::from_tally(&tally, "remote-prover", &keypair.public, a.seed, a.trials);
            println!("{}", stats.to_json());
        }
        Protocol::Rsp => {
            let doc = json!({
                "schema": RSP_SCHEMA,
                "sessions": a.trials,
                "void_sessions": rsp_void,
                "n": keypair.public.n(),
                "seed": a.seed,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

// Session errors are not Clone; only the message is needed for display.
fn clone_err(e: &SessionError) -> SessionError {
    SessionError::Malformed(e.to_string())
}

fn connect_retrying(addr: &str, timeout: Duration) -> Result<poq_core::net::SocketChannel> {
    let deadline = Instant::now() + timeout;
    loop {
        match socket_connect(addr, timeout) {
            Ok(c) => return Ok(c),
            // The verifier may not be listening yet.
            Err(ChannelError::Io(_) | ChannelError::Closed | ChannelError::Timeout) if Instant::now() < deadline => {
                thread::sleep(Duration::from_millis(20));
            }
            Err(e) => return Err(e).with_context(|| format!("connecting to {addr}")),
        }
    }
}

fn run_prover(a: &RunArgs, strat: ProverStrategy, addr: &str, timeout: Duration) -> Result<ExitCode> {
    let escrow = a.escrow_key.as_deref().map(load_trapdoor).transpose()?;
    let known_n = match (&a.key, &escrow) {
        (Some(p), _) => Some(load_public(p)?.n()),
        (None, Some(td)) => Some(td.n()),
        (None, None) => a.keyspec.n,
    };
    if matches!(strat, ProverStrategy::Quantum(_)) {
        if strat == ProverStrategy::Quantum(QuantumMode::Escrow) {
            if escrow.is_none() {
                bail!("configuration error: escrow mode needs --escrow-key (or use --mode enumerate with n <= {ENUMERATION_BOUND})");
            }
            escrow_notice();
        }
        if let Some(n) = known_n {
            quantum_mode(strat, escrow.as_ref(), n)?;
        }
    } else if escrow.is_some() {
        bail!("--escrow-key only applies to the quantum strategy");
    }
    let mut void = 0u64;
    for i in 0..a.trials {
        let channel = connect_retrying(addr, timeout)?;
        let rng = session_rng(a.seed, i, Party::Prover);
        let outcome = match a.protocol {
            Protocol::Poq => prover_session(strat, escrow.as_ref(), known_n, rng, channel),
            Protocol::Rsp => {
                let mode = match strat {
                    ProverStrategy::Quantum(QuantumMode::Escrow) => BobMode::Escrow(escrow.clone().expect("checked")),
                    _ => BobMode::Enumerate,
                };
                bob_honest_session(channel, rng, mode).map(|_| None)
            }
        };
        if let Err(e @ SessionError::Config(_)) = &outcome {
            bail!("{e}");
        }
        void += outcome.is_err() as u64;
        if !a.quiet {
            let word = match &outcome {
                Ok(Some(true)) => "accepted".to_string(),
                Ok(Some(false)) => "rejected".to_string(),
                Ok(None) => "done".to_string(),
                Err(e) => format!("void ({e})"),
            };
            println!("session {i}: {word}");
        }
    }
    let doc = json!({"role": "prover", "strategy": strat.name(), "sessions": a.trials, "void_sessions": void});
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(ExitCode::SUCCESS)
}

fn prover_session<C: Channel>(
    strat: ProverStrategy,
    escrow: Option<&Trapdoor>,
    n: Option<usize>,
    rng: poq_core::seed::SessionRng,
    channel: C,
) -> Result<Option<bool>, SessionError> {
    let mut prover = Prover::new(strat, escrow, n, rng)?;
    serve(&mut prover, channel)?;
    Ok(match &prover {
        Prover::Quantum(q) => q.verdict(),
        Prover::Classical(_) => None,
    })
}

fn bench(a: BenchArgs) -> Result<ExitCode> {
    let config = a.key.config()?;
    if a.trials == 0 {
        bail!("--trials must be at least 1");
    }
    let keypair = bench_keypair(&config, a.seed)?;
    let quantum = strategy(StrategyArg::Quantum, a.mode);
    if quantum == ProverStrategy::Quantum(QuantumMode::Escrow) && !a.json {
        escrow_notice();
    }
    let mut runs = vec![
        bench_with_key(&keypair, quantum, a.trials, a.seed)?,
        bench_with_key(&keypair, ProverStrategy::ClassicalOptimal, a.trials, a.seed)?,
    ];
    if a.baselines {
        for s in ProverStrategy::BASELINES {
            runs.push(bench_with_key(&keypair, s, a.trials, a.seed)?);
        }
    }
    let gap = runs[0].overall_value() - runs[1].overall_value();
    let holds = gap >= GAP_THRESHOLD;
    let doc = json!({
        "schema": BENCH_SCHEMA,
        "runs": runs,
        "gap": gap,
        "gap_threshold": GAP_THRESHOLD,
        "gap_holds": holds,
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&doc)?);
    } else {
        for r in &runs {
            println!("{}", r.table());
        }
        println!(
            "gap (quantum - classical optimal) = {gap:.5}  [{}]",
            if holds { "holds" } else { "FAILED" }
        );
        println!("{}", serde_json::to_string_pretty(&doc)?);
    }
    Ok(if holds { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn print_demo(r: &ExtractionResult) {
    let show = |p: Option<(&dyn std::fmt::Display, &dyn std::fmt::Display)>| match p {
        Some((a, b)) => format!("{{{a}, {b}}}"),
        None => "(none)".to_string(),
    };
    println!("n          {}", r.n);
    println!("true pair  {}", show(Some((&r.truth.x0, &r.truth.x1))));
    println!(
        "recovered  {}",
        show(r.recovered.as_ref().map(|p| (&p.x0 as &dyn std::fmt::Display, &p.x1 as &dyn std::fmt::Display)))
    );
    println!("x'         {}", r.x_prime);
    println!("z          {}", r.z);
    println!("candidates {}", r.candidates);
    println!("success    {}", r.success);
}

fn demo(a: GlDemoArgs) -> Result<ExitCode> {
    if a.n < 2 {
        bail!("--n must be at least 2");
    }
    let result = gl_demo(a.n, a.target.leaky, a.seed)?;
    println!("prover     {}", if a.target.leaky { "classical-leaky" } else { "classical-optimal" });
    print_demo(&result);
    Ok(ExitCode::SUCCESS)
}
