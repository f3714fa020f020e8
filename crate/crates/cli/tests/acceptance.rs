//! The project's acceptance checks. One pass/fail line is printed per criterion
//! (visible with `cargo test --test acceptance -- --nocapture`); the test fails if
//! any criterion fails, but every criterion always runs.
//!
//! Reference constants in here were computed independently with extended-precision
//! arithmetic and are frozen: a drift in any engine shows up as a failure here, not
//! as a silently updated expectation.

use erasurekey::adversary::{empirical_compromise_rate, ClassificationMode};
use erasurekey::channel::{arrival_trace, simulate_burst, ChannelParams};
use erasurekey::harness::{enumerate_exact, run_e2e_grid, GridConfig};
use erasurekey::protocol::{
    alice_derive, alice_generate_burst, bob_process_burst, collect_received, derive_key,
    BobConfig, ReceivedPacket,
};
use erasurekey::regularize::{regularize_and_classify, RegularizerConfig};
use erasurekey::security::{
    compromise_probability, default_eve_grid, degraded_channel_sec, min_packets_for_sec,
    sec_curve, security_level, ChannelRates,
};
use erasurekey::wire::KeyPacket;
use erasurekey::{mix_seed, Nanos};
use erasurekey_transport::{receive_burst_udp, send_burst_udp, ReceiveConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::net::UdpSocket;
use std::time::{Duration, Instant};

#[test]
fn acceptance() {
    let checks: [(&str, fn()); 9] = [
        ("exact enumeration matches closed form", c1_formula_fidelity),
        ("reference constants at even rates", c2_reference_constants),
        ("equal-rate security peaks at one half", c3_equal_rate_peak),
        ("security curve over eavesdropper rates", c4_security_curve),
        ("million-session Monte Carlo vs closed form", c5_monte_carlo),
        ("end-to-end grid has zero key disagreements", c6_grid_agreement),
        ("schedule recovery and first-attempt classification", c7_regularizer),
        ("retransmission copies boost eavesdropper capture", c8_leakage),
        ("socket loopback agreement and replay equivalence", c9_loopback),
    ];

    let previous_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {})); // criterion outcomes are reported below
    let mut failures = Vec::new();
    for (k, (name, run)) in checks.iter().enumerate() {
        let started = Instant::now();
        match std::panic::catch_unwind(run) {
            Ok(()) => println!(
                "ACCEPTANCE {} ({name}): PASS [{:.1}s]",
                k + 1,
                started.elapsed().as_secs_f64()
            ),
            Err(panic) => {
                let message = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "non-string panic".into());
                println!("ACCEPTANCE {} ({name}): FAIL — {message}", k + 1);
                failures.push(format!("criterion {} ({name}): {message}", k + 1));
            }
        }
    }
    std::panic::set_hook(previous_hook);
    assert!(failures.is_empty(), "\n{}", failures.join("\n"));
}

/// 1. The closed-form compromise probability agrees with exhaustive enumeration of
///    every per-packet delivery/capture combination, for every rate pair on a 0.1
///    grid and all enumerable burst sizes.
fn c1_formula_fidelity() {
    let started = Instant::now();
    for n in 1..=12u32 {
        for i in 0..=10u32 {
            for j in 0..=10u32 {
                let (cb, ce) = (f64::from(i) / 10.0, f64::from(j) / 10.0);
                let rates = ChannelRates::new(cb, ce).unwrap();
                let exact = enumerate_exact(n, rates).unwrap();
                let closed = compromise_probability(u64::from(n), rates);
                assert!(
                    (exact - closed).abs() < 1e-12,
                    "n={n} c_b={cb} c_e={ce}: enumeration {exact} vs closed form {closed}"
                );
            }
        }
    }
    assert_under(started, 120);
}

/// 2. A 617-packet burst at c_b = c_e = 0.5 is worth just over 256 bits, and 256
///    bits requires exactly 617 packets.
fn c2_reference_constants() {
    let rates = ChannelRates::new(0.5, 0.5).unwrap();
    let sec = security_level(617, rates);
    assert!((256.0..=256.1).contains(&sec), "sec_bits {sec}");
    assert_eq!(min_packets_for_sec(256.0, rates).unwrap(), 617);
}

/// 3. With the eavesdropper as good as the receiver (c_e = c_b), per-packet
///    security −log2(1 − c_b + c_b²) is maximized at c_b = 0.5 on a 0.01 grid.
fn c3_equal_rate_peak() {
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=100u32 {
        let cb = f64::from(i) / 100.0;
        let sec = degraded_channel_sec(617, cb).unwrap();
        if sec > best.0 {
            best = (sec, cb);
        }
    }
    assert_eq!(best.1, 0.5, "peak at c_b = {}", best.1);
    let reference = degraded_channel_sec(617, 0.25).unwrap();
    assert!((reference - 184.8286939069461).abs() < 1e-9, "at c_b=0.25: {reference}");
}

/// 4. The security curve for a 617-packet burst at c_b = 0.9 matches
///    −617·log2(0.1 + 0.9·c_e) pointwise, with the expected endpoints.
fn c4_security_curve() {
    let curve = sec_curve(617, 0.9, &default_eve_grid()).unwrap();
    assert_eq!(curve.len(), 101);
    for &(ce, sec) in &curve {
        let expected = -617.0 * (0.1 + 0.9 * ce).log2();
        assert!((sec - expected).abs() < 1e-9, "c_e={ce}: {sec} vs {expected}");
    }
    assert!((curve[0].1 - 2049.6296345455025).abs() < 1e-9, "left endpoint {}", curve[0].1);
    assert_eq!(curve[100].1, 0.0, "right endpoint {}", curve[100].1);
}

/// 5. A million oracle-classified sessions at (n=10, c_b=0.5, c_e=0.5) produce a
///    compromise rate whose 95% Wilson interval contains the closed-form value.
fn c5_monte_carlo() {
    let started = Instant::now();
    let params =
        ChannelParams { bob_success: 0.5, eve_success: 0.5, ..ChannelParams::default() };
    let est =
        empirical_compromise_rate(10, &params, 1_000_000, 0xC0FFEE, ClassificationMode::Oracle)
            .unwrap();
    let p = 0.056313514709472656; // 0.75^10
    assert!(
        est.wilson_lo <= p && p <= est.wilson_hi,
        "interval [{}, {}] misses {p} (rate {})",
        est.wilson_lo,
        est.wilson_hi,
        est.rate
    );
    assert_under(started, 300);
}

/// 6. The default experiment grid (1002 sessions, two burst sizes, three jitter
///    levels) completes with zero Alice/Bob key disagreements and all enumeration
///    cross-checks passing.
fn c6_grid_agreement() {
    let started = Instant::now();
    let report = run_e2e_grid(&GridConfig::default(), None).unwrap();
    assert_eq!(report.totals.sessions, 1002);
    assert_eq!(report.totals.completed + report.totals.aborts, 1002);
    assert_eq!(report.totals.key_disagreements, 0, "key disagreements");
    assert!(report.oracle_all_pass, "enumeration cross-checks failed");
    assert_under(started, 120);
}

/// 7. Schedule recovery: exact traces with 30% deletions give back offset and gap
///    to 1e-12 relative error; under 10% retransmissions (delay +T) and jitter of
///    T/10, per-packet first-attempt classification is at least 99.8% accurate
///    over 10^5 packets.
fn c7_regularizer() {
    let started = Instant::now();

    let mut rng = ChaCha12Rng::seed_from_u64(77);
    for _ in 0..100 {
        let offset = rng.gen_range(1_000_000..=50_000_000i64);
        let gap = rng.gen_range(1_000_000..=20_000_000i64);
        let trace: Vec<(u32, Nanos)> = (1..=200u32)
            .filter(|_| !rng.gen_bool(0.3))
            .map(|i| (i, offset + i64::from(i) * gap))
            .collect();
        let fit = regularize_and_classify(&trace, &RegularizerConfig::new(8_000_000)).unwrap();
        let off_err = (fit.offset_ns - offset as f64).abs() / offset as f64;
        let gap_err = (fit.gap_ns - gap as f64).abs() / gap as f64;
        assert!(off_err < 1e-12, "offset error {off_err} (o={offset}, g={gap})");
        assert!(gap_err < 1e-12, "gap error {gap_err} (o={offset}, g={gap})");
        assert_eq!(fit.inlier_indices.len(), trace.len(), "deletions are not outliers");
    }

    let params = ChannelParams::default(); // c_b = 0.9, jitter_sd = arq_rtt/10
    let config = RegularizerConfig::new(params.arq_rtt);
    let mut total = 0u64;
    let mut wrong = 0u64;
    for trial in 0..100u64 {
        let outcomes = simulate_burst(1000, &params, mix_seed(0x5EED, trial)).unwrap();
        let fit = regularize_and_classify(&arrival_trace(&outcomes), &config).unwrap();
        for o in &outcomes {
            total += 1;
            if o.first_attempt() != fit.inlier_indices.contains(&o.packet_index) {
                wrong += 1;
            }
        }
    }
    assert_eq!(total, 100_000);
    let accuracy = 1.0 - wrong as f64 / total as f64;
    assert!(accuracy >= 0.998, "classification accuracy {accuracy}");
    assert_under(started, 60);
}

/// 8. Packets transmitted twice are captured by the eavesdropper at close to
///    1 − (1 − c_e)², strictly above the single-copy rate c_e.
fn c8_leakage() {
    let started = Instant::now();
    let params =
        ChannelParams { bob_success: 0.5, eve_success: 0.5, ..ChannelParams::default() };
    let mut two_copy = 0u64;
    let mut captured = 0u64;
    for trial in 0..40u64 {
        for o in simulate_burst(1000, &params, mix_seed(0xE7E, trial)).unwrap() {
            if o.transmission_count == 2 {
                two_copy += 1;
                captured += u64::from(o.eve_captured);
            }
        }
    }
    assert!(two_copy > 5_000, "only {two_copy} two-copy packets sampled");
    let rate = captured as f64 / two_copy as f64;
    let expected = 1.0 - (1.0 - 0.5f64).powi(2);
    let sigma = (expected * (1.0 - expected) / two_copy as f64).sqrt();
    assert!(
        (rate - expected).abs() <= 3.0 * sigma,
        "capture rate {rate} vs {expected} (3σ = {})",
        3.0 * sigma
    );
    assert!(rate > 0.5, "two copies must leak more than one: {rate}");
    assert_under(started, 60);
}

/// 9. A 1000-packet burst over real loopback sockets reaches key agreement, and
///    re-running the receiver's engine on its own serialized arrival log produces
///    the identical announcement (live mode and replay mode decide alike).
fn c9_loopback() {
    let started = Instant::now();
    let session_id = 0xACCE_5500u64;
    let n = 1000u32;
    let gap = Duration::from_millis(1);

    let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let tx = UdpSocket::bind("127.0.0.1:0").unwrap();
    let dest = rx.local_addr().unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let packets = alice_generate_burst(n, session_id, &mut rng);
    let sender_packets = packets.clone();

    let sender = std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(30));
        send_burst_udp(&tx, dest, &sender_packets, gap).unwrap()
    });
    let mut received = receive_burst_udp(&rx, &ReceiveConfig::new(session_id, n, gap)).unwrap();
    let report = sender.join().unwrap();
    received.retain(|r| !report.slipped_indices.contains(&r.packet.index));
    assert!(received.len() >= 900, "only {} of {n} packets arrived", received.len());

    let config = BobConfig::with_min_selected(8_000_000, 2);
    let announcement = bob_process_burst(&received, session_id, &config).unwrap();

    // Serialize the arrival log the way a capture file would store it, parse it
    // back, and demand the identical decision from the replayed engine.
    let log: String = received
        .iter()
        .map(|r| format!("{},{}\n", r.arrival, hex::encode(r.packet.encode())))
        .collect();
    let replayed: Vec<ReceivedPacket> = log
        .lines()
        .map(|line| {
            let (arrival, frame) = line.split_once(',').unwrap();
            ReceivedPacket {
                packet: KeyPacket::decode(&hex::decode(frame).unwrap()).unwrap(),
                arrival: arrival.parse().unwrap(),
            }
        })
        .collect();
    let replayed_announcement = bob_process_burst(&replayed, session_id, &config).unwrap();
    assert_eq!(replayed_announcement, announcement, "replay diverged from live run");

    let (store, _) = collect_received(&received, session_id);
    let bob_key = derive_key(&announcement, &store).unwrap();
    let alice_key = alice_derive(&packets, session_id, &announcement).unwrap();
    assert_eq!(alice_key.key, bob_key.key, "key disagreement over loopback");
    assert_under(started, 60);
}

fn assert_under(started: Instant, seconds: u64) {
    let elapsed = started.elapsed();
    assert!(
        elapsed < Duration::from_secs(seconds),
        "runtime budget exceeded: {:.1}s > {seconds}s",
        elapsed.as_secs_f64()
    );
}
