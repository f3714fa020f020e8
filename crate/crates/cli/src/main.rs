//! `erasurekey` — one binary for the closed-form calculator, the seeded channel
//! simulator, the experiment grid, and the live socket roles.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Every subcommand is
//! deterministic under an explicit `--seed`; when the seed is omitted, one is drawn
//! from entropy and printed so the run can be replayed.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use erasurekey::adversary::Reconstruction;
use erasurekey::channel::{outcomes_to_records, ChannelParams};
use erasurekey::harness::{run_e2e_grid, run_session, sec_curve_file, GridConfig, SessionResult};
use erasurekey::protocol::{
    alice_derive, alice_generate_burst, bob_process_burst, collect_received, derive_key, BobConfig,
};
use erasurekey::security::{min_packets_for_sec, ChannelRates, Regime, SecurityReport};
use erasurekey::{canonical_json, mix_seed, Nanos};
use erasurekey_transport as transport;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream, UdpSocket};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(
    name = "erasurekey",
    version,
    about = "Encryption-key agreement from packet erasures and retransmission timing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form security level, compromise probability, and burst sizing
    Sec(SecArgs),
    /// One fully seeded end-to-end session over the simulated channel
    Simulate(SimulateArgs),
    /// Multi-cell end-to-end sweep with enumeration cross-checks
    Grid(GridArgs),
    /// Receiver role on real sockets: UDP burst in, index announcement out
    Serve(ServeArgs),
    /// Sender role on real sockets: paced UDP burst out, announcement in
    Send(SendArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sec(args) => cmd_sec(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Grid(args) => cmd_grid(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Send(args) => cmd_send(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

/// Milliseconds (as given on the command line) to the engines' integer nanoseconds.
fn ms_to_ns(ms: f64) -> Nanos {
    (ms * 1e6).round() as Nanos
}

/// Use the given seed, or draw one from entropy. Either way the seed is printed,
/// so any run can be replayed exactly.
fn resolve_seed(seed: Option<u64>) -> u64 {
    let seed = seed.unwrap_or_else(rand::random);
    println!("seed={seed}");
    seed
}

fn write_text(path: PathBuf, body: String) -> Result<()> {
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

// --- sec ---------------------------------------------------------------------

#[derive(Args)]
#[command(group(clap::ArgGroup::new("query").required(true)))]
struct SecArgs {
    /// Burst size to evaluate
    #[arg(long, group = "query")]
    n: Option<u64>,
    /// Target security level in bits; prints the smallest burst size reaching it
    #[arg(long, group = "query")]
    target: Option<f64>,
    /// Bob's per-attempt delivery probability c_b
    #[arg(long)]
    cb: f64,
    /// Eve's per-copy capture probability c_e (defaults to c_b, the worst case
    /// when Eve's channel is no better than Bob's)
    #[arg(long)]
    ce: Option<f64>,
    /// Also write the security curve over c_e in [0, 1] for this burst size (CSV)
    #[arg(long, value_name = "PATH")]
    curve: Option<PathBuf>,
}

fn cmd_sec(args: SecArgs) -> Result<()> {
    let cb = args.cb;
    let ce = args.ce.unwrap_or(cb);
    let rates = ChannelRates::new(cb, ce)?;
    if args.ce.is_none() {
        println!("note=c_e not given; assuming the conservative bound c_e = c_b");
    }

    let n = match (args.n, args.target) {
        (Some(n), None) => n,
        (None, Some(target)) => {
            let n = min_packets_for_sec(target, rates)?;
            println!("target_sec={target}");
            println!("min_packets={n}");
            n
        }
        _ => unreachable!("the argument group admits exactly one of --n/--target"),
    };

    let report = SecurityReport::evaluate(n, rates);
    println!("n={n}");
    println!("c_b={cb}");
    println!("c_e={ce}");
    let regime = match report.regime {
        Regime::Degraded => "degraded",
        Regime::General => "general",
    };
    println!("regime={regime}");
    println!("sec_bits={}", report.sec_bits);
    println!("compromise_probability={:e}", report.p_compromise);

    if let Some(path) = &args.curve {
        sec_curve_file(path, n, cb)?;
        println!("curve={}", path.display());
    }
    Ok(())
}

// --- simulate ------------------------------------------------------------------

/// Channel-model flags shared by simulation commands. Times are milliseconds on
/// the command line and nanoseconds inside.
#[derive(Args)]
struct ChannelFlags {
    /// Bob's first-attempt delivery probability c_b
    #[arg(long, default_value_t = 0.9)]
    cb: f64,
    /// Eve's per-copy capture probability c_e
    #[arg(long, default_value_t = 0.5)]
    ce: f64,
    /// Link-layer retransmission round trip T, milliseconds
    #[arg(long, default_value_t = 8.0)]
    arq_rtt_ms: f64,
    /// Arrival jitter standard deviation, milliseconds
    #[arg(long, default_value_t = 0.8)]
    jitter_ms: f64,
    /// Interval between scheduled sends, milliseconds
    #[arg(long, default_value_t = 10.0)]
    gap_ms: f64,
    /// One-way path latency, milliseconds
    #[arg(long, default_value_t = 25.0)]
    latency_ms: f64,
    /// Receiver clock skew, parts per million
    #[arg(long, default_value_t = 20.0)]
    skew_ppm: f64,
    /// Retransmission budget after the first attempt
    #[arg(long, default_value_t = 3)]
    max_retx: u32,
}

impl ChannelFlags {
    fn to_params(&self) -> Result<ChannelParams> {
        let params = ChannelParams {
            bob_success: self.cb,
            eve_success: self.ce,
            arq_rtt: ms_to_ns(self.arq_rtt_ms),
            max_retransmissions: self.max_retx,
            jitter_sd: ms_to_ns(self.jitter_ms),
            skew_ppm: self.skew_ppm,
            base_latency: ms_to_ns(self.latency_ms),
            send_gap: ms_to_ns(self.gap_ms),
            burst_errors: None,
        };
        params.validate()?;
        if !params.clusters_separable() {
            eprintln!(
                "warning: jitter_sd {} ns leaves retransmission clusters overlapping \
                 (needs 6*jitter_sd < arq_rtt); classification will degrade",
                params.jitter_sd
            );
        }
        Ok(params)
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Burst size
    #[arg(long)]
    n: u32,
    /// RNG seed; omitted = fresh entropy
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for run artifacts (trace.csv, announcement.json, keys.json, summary.json)
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Abort the session unless at least this many packets are selected
    #[arg(long, default_value_t = 2)]
    min_selected: usize,
    #[command(flatten)]
    channel: ChannelFlags,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let params = args.channel.to_params()?;
    let seed = resolve_seed(args.seed);
    let bob_config = BobConfig::with_min_selected(params.arq_rtt, args.min_selected);
    let record = run_session(args.n, &params, &bob_config, seed)?;

    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_text(args.out.join("trace.csv"), outcomes_to_records(&record.outcomes))?;
    let effective = serde_json::json!({
        "n": args.n,
        "seed": seed,
        "min_selected": args.min_selected,
        "params": params,
    });
    write_text(args.out.join("config.json"), canonical_json(&effective) + "\n")?;

    println!("out={}", args.out.display());
    println!("session_id={}", record.session_id);

    match &record.result {
        SessionResult::Completed(done) => {
            write_text(args.out.join("announcement.json"), done.announcement.to_json() + "\n")?;
            let keys = serde_json::json!({
                "alice_key": done.alice_key.key_hex(),
                "bob_key": done.bob_key.key_hex(),
                "fingerprint": done.bob_key.fingerprint(),
                "agreement": done.agreement,
            });
            write_text(args.out.join("keys.json"), canonical_json(&keys) + "\n")?;

            let accuracy =
                1.0 - done.classification.symmetric_difference as f64 / args.n as f64;
            let summary = serde_json::json!({
                "session_id": record.session_id,
                "seed": seed,
                "n": args.n,
                "aborted": false,
                "abort_reason": null,
                "agreement": done.agreement,
                "selected": done.announcement.selected_indices.len(),
                "classification_accuracy": accuracy,
                "classification": {
                    "truth_size": done.classification.truth_size,
                    "selected_size": done.classification.selected_size,
                    "symmetric_difference": done.classification.symmetric_difference,
                },
                "eve_compromised": done.eve.is_compromised(),
                "eve_missing": match &done.eve {
                    Reconstruction::Missing(missing) => missing.len(),
                    Reconstruction::Compromised(_) => 0,
                },
                "params": params,
            });
            write_text(args.out.join("summary.json"), canonical_json(&summary) + "\n")?;

            println!("selected={}", done.announcement.selected_indices.len());
            println!("classification_accuracy={accuracy}");
            println!("agreement={}", done.agreement);
            println!("compromised={}", done.eve.is_compromised());
            println!("fingerprint={}", done.bob_key.fingerprint());
        }
        SessionResult::Aborted { reason } => {
            let summary = serde_json::json!({
                "session_id": record.session_id,
                "seed": seed,
                "n": args.n,
                "aborted": true,
                "abort_reason": reason,
                "params": params,
            });
            write_text(args.out.join("summary.json"), canonical_json(&summary) + "\n")?;
            println!("aborted=true");
            println!("abort_reason={reason}");
        }
    }
    Ok(())
}

// --- grid ----------------------------------------------------------------------

#[derive(Args)]
struct GridArgs {
    /// Grid configuration JSON; omitted = the built-in default sweep
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for report.json, config.json, rates.csv, summary.txt
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Override the configured base seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured sessions per cell
    #[arg(long)]
    sessions: Option<u64>,
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let body = match std::fs::read_to_string(path) {
                Ok(body) => body,
                Err(err) if err.kind() == std::io::ErrorKind::NotFound => {
                    // A named-but-absent input is a usage mistake, not a runtime failure.
                    eprintln!("error: config file {} does not exist", path.display());
                    std::process::exit(2);
                }
                Err(err) => {
                    return Err(err).with_context(|| format!("reading {}", path.display()))
                }
            };
            serde_json::from_str::<GridConfig>(&body)
                .with_context(|| format!("parsing {}", path.display()))?
        }
        None => GridConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(sessions) = args.sessions {
        config.sessions_per_cell = sessions;
    }

    println!(
        "cells={} sessions_per_cell={} seed={}",
        config.cells.len(),
        config.sessions_per_cell,
        config.seed
    );
    let report = run_e2e_grid(&config, Some(&args.out))?;
    println!("out={}", args.out.display());
    println!("completed={}", report.totals.completed);
    println!("aborts={}", report.totals.aborts);
    println!("key_disagreements={}", report.totals.key_disagreements);
    println!("compromises={}", report.totals.compromises);
    println!("oracle_all_pass={}", report.oracle_all_pass);
    Ok(())
}

// --- serve / send ----------------------------------------------------------------

#[derive(Args)]
struct ServeArgs {
    /// UDP address to receive the burst on (port 0 = ephemeral)
    #[arg(long, default_value = "127.0.0.1:0")]
    udp: SocketAddr,
    /// TCP address for the public channel (port 0 = ephemeral)
    #[arg(long, default_value = "127.0.0.1:0")]
    public: SocketAddr,
    /// Abort unless at least this many packets are selected
    #[arg(long, default_value_t = 2)]
    min_selected: usize,
    /// Schedule-deviation tolerance for first-attempt classification, milliseconds.
    /// On a link with ARQ, set this to the retransmission round trip.
    #[arg(long, default_value_t = 8.0)]
    arq_rtt_ms: f64,
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let udp = UdpSocket::bind(args.udp).with_context(|| format!("binding UDP {}", args.udp))?;
    let listener =
        TcpListener::bind(args.public).with_context(|| format!("binding TCP {}", args.public))?;
    println!("listening udp={} public={}", udp.local_addr()?, listener.local_addr()?);
    std::io::stdout().flush()?;

    let (mut stream, peer) = listener.accept()?;
    let header: transport::BurstHeader = transport::recv_message(&mut stream)?;
    println!(
        "burst session_id={} n={} gap_ns={} peer={}",
        header.session_id, header.n, header.send_gap_ns, peer
    );

    // Arm the UDP receive loop, then tell the sender to start.
    transport::send_message(&mut stream, &transport::BurstReady { session_id: header.session_id })?;
    let gap = Duration::from_nanos(header.send_gap_ns.max(0) as u64);
    let receive = transport::ReceiveConfig::new(header.session_id, header.n, gap);
    let mut received = transport::receive_burst_udp(&udp, &receive)?;

    let trailer: transport::BurstTrailer = transport::recv_message(&mut stream)?;
    if trailer.session_id != header.session_id {
        bail!(
            "trailer names session {}, header named {}",
            trailer.session_id,
            header.session_id
        );
    }
    // A send that slipped its schedule slot looks like link-layer delay from here;
    // neither side may key on it.
    received.retain(|r| !trailer.slipped_indices.contains(&r.packet.index));

    let bob_config = BobConfig::with_min_selected(ms_to_ns(args.arq_rtt_ms), args.min_selected);
    let announcement = bob_process_burst(&received, header.session_id, &bob_config)?;
    let (store, _) = collect_received(&received, header.session_id);
    let key = derive_key(&announcement, &store)?;
    transport::send_message(&mut stream, &announcement)?;

    println!("received={}", received.len());
    println!("selected={}", announcement.selected_indices.len());
    println!("fingerprint={}", key.fingerprint());
    Ok(())
}

#[derive(Args)]
struct SendArgs {
    /// Receiver's UDP address for the burst
    #[arg(long, value_name = "ADDR")]
    udp_dest: SocketAddr,
    /// Receiver's TCP public-channel address
    #[arg(long, value_name = "ADDR")]
    public: SocketAddr,
    /// Burst size
    #[arg(long)]
    n: u32,
    /// Interval between datagrams, milliseconds (minimum 1)
    #[arg(long, default_value_t = 1.0)]
    gap_ms: f64,
    /// RNG seed for the payloads; omitted = fresh entropy
    #[arg(long)]
    seed: Option<u64>,
}

fn cmd_send(args: SendArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let session_id = mix_seed(seed, 0xA11C_E000);
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 1));
    let packets = alice_generate_burst(args.n, session_id, &mut rng);

    let mut stream = TcpStream::connect(args.public)
        .with_context(|| format!("connecting to public channel {}", args.public))?;
    let udp = UdpSocket::bind(("0.0.0.0", 0))?;
    let gap_ns = ms_to_ns(args.gap_ms);
    let gap = Duration::from_nanos(gap_ns.max(0) as u64);

    transport::send_message(
        &mut stream,
        &transport::BurstHeader { session_id, n: args.n, send_gap_ns: gap_ns },
    )?;
    let ready: transport::BurstReady = transport::recv_message(&mut stream)?;
    if ready.session_id != session_id {
        bail!("receiver acknowledged session {}, expected {}", ready.session_id, session_id);
    }

    let report = transport::send_burst_udp(&udp, args.udp_dest, &packets, gap)?;
    transport::send_message(
        &mut stream,
        &transport::BurstTrailer {
            session_id,
            slipped_indices: report.slipped_indices.clone(),
        },
    )?;

    let announcement = transport::recv_announcement(&mut stream)?;
    let key = alice_derive(&packets, session_id, &announcement)?;
    println!("session_id={session_id}");
    println!("sent={}", packets.len());
    println!("slipped={}", report.slipped_indices.len());
    println!("selected={}", announcement.selected_indices.len());
    println!("fingerprint={}", key.fingerprint());
    Ok(())
}
