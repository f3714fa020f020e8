//! Experiment drivers: the exact enumeration oracle, full-pipeline session runs,
//! grid sweeps with machine-readable reports, and replayable refresh chains.
//!
//! The enumeration oracle is deliberately naive — it walks every joint outcome vector
//! and sums probabilities — because its whole value is being an independent check on
//! the closed-form survival algebra. Everything else here is orchestration: wiring
//! sender, channel, receiver, and eavesdropper together with derived seeds so any
//! run can be reproduced byte-for-byte from its config.

use crate::adversary::{
    eve_attempt_reconstruction, observe_session, sweep_row, Reconstruction, SWEEP_HEADER,
};
use crate::channel::{simulate_burst, ChannelError, ChannelParams, DeliveryOutcome};
use crate::protocol::{
    alice_derive, alice_generate_burst, bob_process_burst, collect_received, derive_key,
    refresh_key, BobConfig, IndexAnnouncement, KeyMaterial, ProtocolError, ReceivedPacket,
};
use crate::security::{compromise_probability, sec_curve, sec_curve_csv, ChannelRates, SecurityError};
use crate::stats::{wilson_interval, Z_95};
use crate::wire::KeyPacket;
use crate::{canonical_json, mix_seed, Nanos};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("enumeration over 4^{n} outcomes is out of budget; n must be <= {MAX_ENUMERATION_N}")]
    TooLarge { n: u32 },
    #[error("alice and bob disagreed at generation {generation}; this is a bug")]
    Disagreement { generation: u32 },
    #[error("replayed generation {generation} does not match the logged fingerprint")]
    ReplayMismatch { generation: u32 },
    #[error("malformed chain log: {0}")]
    BadLog(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Security(#[from] SecurityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Largest burst the exact oracle will enumerate (4^12 ≈ 1.7e7 vectors).
pub const MAX_ENUMERATION_N: u32 = 12;

/// Brute-force the compromise probability by summing over all `4^n` joint
/// per-packet outcome vectors — two bits per packet: did Bob's first attempt
/// succeed, did Eve capture it. A vector belongs to the compromise event iff no
/// packet is Bob-ok but Eve-missed. Shares no code with the closed form.
pub fn enumerate_exact(n: u32, rates: ChannelRates) -> Result<f64, HarnessError> {
    if n > MAX_ENUMERATION_N {
        return Err(HarnessError::TooLarge { n });
    }
    if n == 0 {
        return Ok(1.0);
    }
    let cb = rates.bob_success();
    let ce = rates.eve_success();
    // Pair value for packet i is (v >> 2i) & 3, bit 0 = Bob, bit 1 = Eve.
    let pair_prob = [
        (1.0 - cb) * (1.0 - ce), // 0b00
        cb * (1.0 - ce),         // 0b01: Bob-only — the pair that sinks the event
        (1.0 - cb) * ce,         // 0b10
        cb * ce,                 // 0b11
    ];
    let mut bob_mask: u64 = 0;
    for i in 0..n {
        bob_mask |= 1 << (2 * i);
    }
    // Kahan summation: 3^12 addends of wildly mixed magnitude.
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in 0..(1u64 << (2 * n)) {
        let bob = v & bob_mask;
        let eve = (v >> 1) & bob_mask;
        if bob & !eve != 0 {
            continue;
        }
        let mut p = 1.0;
        for i in 0..n {
            p *= pair_prob[((v >> (2 * i)) & 3) as usize];
        }
        let y = p - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    Ok(sum)
}

/// Zip a sent burst with its simulated outcomes into the receiver's packet log.
pub fn received_from_outcomes(
    packets: &[KeyPacket],
    outcomes: &[DeliveryOutcome],
) -> Vec<ReceivedPacket> {
    packets
        .iter()
        .zip(outcomes)
        .filter_map(|(p, o)| o.bob_arrival.map(|t| ReceivedPacket { packet: *p, arrival: t }))
        .collect()
}

/// How well the announced set matched the sealed first-attempt truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassificationQuality {
    pub truth_size: usize,
    pub selected_size: usize,
    pub symmetric_difference: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedSession {
    pub announcement: IndexAnnouncement,
    pub alice_key: KeyMaterial,
    pub bob_key: KeyMaterial,
    pub agreement: bool,
    pub eve: Reconstruction,
    pub classification: ClassificationQuality,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionResult {
    Completed(Box<CompletedSession>),
    /// Bob refused to announce (starved selection, non-settling fit, degenerate
    /// trace). The session yields no key on either side.
    Aborted { reason: String },
}

/// One fully instrumented end-to-end run.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub session_id: u64,
    pub seed: u64,
    pub n: u32,
    pub outcomes: Vec<DeliveryOutcome>,
    pub result: SessionResult,
}

/// Run the whole pipeline once: generate, transmit over the simulated channel,
/// classify, announce, derive on both sides, and let Eve try. All randomness is
/// derived from `seed`.
pub fn run_session(
    n: u32,
    params: &ChannelParams,
    bob_config: &BobConfig,
    seed: u64,
) -> Result<SessionRecord, HarnessError> {
    let session_id = mix_seed(seed, 0xA11C_E000);
    let mut burst_rng = ChaCha12Rng::seed_from_u64(mix_seed(seed, 1));
    let packets = alice_generate_burst(n, session_id, &mut burst_rng);
    let outcomes = simulate_burst(n, params, mix_seed(seed, 2))?;
    let received = received_from_outcomes(&packets, &outcomes);

    let announcement = match bob_process_burst(&received, session_id, bob_config) {
        Ok(ann) => ann,
        Err(
            err @ (ProtocolError::SessionAbort { .. }
            | ProtocolError::FitNotConverged { .. }
            | ProtocolError::EmptySelection
            | ProtocolError::Timing(_)),
        ) => {
            return Ok(SessionRecord {
                session_id,
                seed,
                n,
                outcomes,
                result: SessionResult::Aborted { reason: err.to_string() },
            });
        }
        Err(other) => return Err(other.into()),
    };

    let (bob_store, _) = collect_received(&received, session_id);
    let bob_key = derive_key(&announcement, &bob_store)?;
    let alice_key = alice_derive(&packets, session_id, &announcement)?;
    let eve = eve_attempt_reconstruction(&observe_session(&packets, &outcomes, &announcement));

    let truth: BTreeSet<u32> =
        outcomes.iter().filter(|o| o.first_attempt()).map(|o| o.packet_index).collect();
    let selected: BTreeSet<u32> = announcement.selected_indices.iter().copied().collect();
    let classification = ClassificationQuality {
        truth_size: truth.len(),
        selected_size: selected.len(),
        symmetric_difference: truth.symmetric_difference(&selected).count(),
    };

    let agreement = alice_key == bob_key;
    Ok(SessionRecord {
        session_id,
        seed,
        n,
        outcomes,
        result: SessionResult::Completed(Box::new(CompletedSession {
            announcement,
            alice_key,
            bob_key,
            agreement,
            eve,
            classification,
        })),
    })
}

/// One grid cell: burst size and the channel rates/noise that vary across the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub n: u32,
    pub bob_success: f64,
    pub eve_success: f64,
    pub jitter_sd: Nanos,
}

/// Sweep configuration. Everything not varied per cell comes from `base`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub cells: Vec<CellConfig>,
    pub sessions_per_cell: u64,
    pub seed: u64,
    /// Bob's abort floor for these runs.
    pub min_selected: usize,
    /// Template for timing parameters (round trip, latency, send gap, skew).
    pub base: ChannelParams,
    /// Cross-check the survival formula against exact enumeration for every
    /// distinct rate pair in the grid, up to this burst size. 0 disables.
    pub oracle_check_max_n: u32,
}

impl Default for GridConfig {
    /// The default sweep: c_b = 0.9, c_e = 0.5, both reference burst sizes, jitter
    /// from comfortable (T/20) to the edge of cluster separability (T/6); 1002
    /// sessions in total.
    fn default() -> Self {
        let arq_rtt = ChannelParams::default().arq_rtt;
        let mut cells = Vec::new();
        for &n in &[100u32, 617] {
            for &jitter_sd in &[arq_rtt / 20, arq_rtt / 10, arq_rtt / 6] {
                cells.push(CellConfig { n, bob_success: 0.9, eve_success: 0.5, jitter_sd });
            }
        }
        Self {
            cells,
            sessions_per_cell: 167,
            seed: 0x4B45_5931,
            min_selected: 2,
            base: ChannelParams::default(),
            oracle_check_max_n: 8,
        }
    }
}

impl GridConfig {
    fn cell_params(&self, cell: &CellConfig) -> ChannelParams {
        ChannelParams {
            bob_success: cell.bob_success,
            eve_success: cell.eve_success,
            jitter_sd: cell.jitter_sd,
            ..self.base.clone()
        }
    }
}

/// Aggregates for one grid cell. Compromise statistics are over completed
/// (announced) sessions; aborted sessions never expose a key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub n: u32,
    pub bob_success: f64,
    pub eve_success: f64,
    pub jitter_sd: Nanos,
    pub sessions: u64,
    pub completed: u64,
    pub aborts: u64,
    pub key_disagreements: u64,
    pub compromises: u64,
    pub compromise_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Survival-model prediction for this cell's rates and burst size.
    pub closed_form_rate: f64,
    /// Mean symmetric difference from the sealed first-attempt truth, as a
    /// fraction of n.
    pub classification_error_rate: f64,
}

/// Enumeration-vs-closed-form check at one small grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub n: u32,
    pub bob_success: f64,
    pub eve_success: f64,
    pub enumeration: f64,
    pub closed_form: f64,
    pub delta: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct GridTotals {
    pub sessions: u64,
    pub completed: u64,
    pub aborts: u64,
    pub key_disagreements: u64,
    pub compromises: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridReport {
    pub config: GridConfig,
    pub cells: Vec<CellReport>,
    pub oracle_checks: Vec<OracleCheck>,
    pub oracle_all_pass: bool,
    pub totals: GridTotals,
}

impl GridReport {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(self)
    }
}

const ORACLE_TOLERANCE: f64 = 1e-12;

/// Run every cell of the grid through the full pipeline and aggregate. When
/// `out_dir` is given, writes `report.json`, `config.json`, `rates.csv`, and a
/// human `summary.txt` into it. The three machine-readable files are byte-stable
/// for a given config; wall-clock timing appears only in the summary.
pub fn run_e2e_grid(config: &GridConfig, out_dir: Option<&Path>) -> Result<GridReport, HarnessError> {
    let started = Instant::now();
    let mut cells = Vec::with_capacity(config.cells.len());
    let mut totals = GridTotals::default();

    for (cell_index, cell) in config.cells.iter().enumerate() {
        let params = config.cell_params(cell);
        let bob_config = BobConfig::with_min_selected(params.arq_rtt, config.min_selected);
        let cell_seed = mix_seed(config.seed, cell_index as u64);
        let mut completed = 0u64;
        let mut aborts = 0u64;
        let mut disagreements = 0u64;
        let mut compromises = 0u64;
        let mut symdiff_total = 0u64;

        for s in 0..config.sessions_per_cell {
            let record = run_session(cell.n, &params, &bob_config, mix_seed(cell_seed, s))?;
            match record.result {
                SessionResult::Completed(done) => {
                    completed += 1;
                    if !done.agreement {
                        disagreements += 1;
                    }
                    if done.eve.is_compromised() {
                        compromises += 1;
                    }
                    symdiff_total += done.classification.symmetric_difference as u64;
                }
                SessionResult::Aborted { .. } => aborts += 1,
            }
        }

        let rates = ChannelRates::new(cell.bob_success, cell.eve_success)?;
        let (wilson_lo, wilson_hi) = wilson_interval(compromises, completed, Z_95);
        cells.push(CellReport {
            n: cell.n,
            bob_success: cell.bob_success,
            eve_success: cell.eve_success,
            jitter_sd: cell.jitter_sd,
            sessions: config.sessions_per_cell,
            completed,
            aborts,
            key_disagreements: disagreements,
            compromises,
            compromise_rate: if completed == 0 { 0.0 } else { compromises as f64 / completed as f64 },
            wilson_lo,
            wilson_hi,
            closed_form_rate: compromise_probability(cell.n as u64, rates),
            classification_error_rate: if completed == 0 {
                0.0
            } else {
                symdiff_total as f64 / (completed * cell.n as u64) as f64
            },
        });
        totals.sessions += config.sessions_per_cell;
        totals.completed += completed;
        totals.aborts += aborts;
        totals.key_disagreements += disagreements;
        totals.compromises += compromises;
    }

    let mut oracle_checks = Vec::new();
    if config.oracle_check_max_n > 0 {
        let mut rate_pairs: Vec<(f64, f64)> =
            config.cells.iter().map(|c| (c.bob_success, c.eve_success)).collect();
        rate_pairs.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
        rate_pairs.dedup();
        for (cb, ce) in rate_pairs {
            let rates = ChannelRates::new(cb, ce)?;
            for n in 1..=config.oracle_check_max_n.min(MAX_ENUMERATION_N) {
                let enumeration = enumerate_exact(n, rates)?;
                let closed_form = compromise_probability(n as u64, rates);
                let delta = (enumeration - closed_form).abs();
                oracle_checks.push(OracleCheck {
                    n,
                    bob_success: cb,
                    eve_success: ce,
                    enumeration,
                    closed_form,
                    delta,
                    pass: delta < ORACLE_TOLERANCE,
                });
            }
        }
    }
    let oracle_all_pass = oracle_checks.iter().all(|c| c.pass);

    let report =
        GridReport { config: config.clone(), cells, oracle_checks, oracle_all_pass, totals };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        let mut json = report.to_canonical_json();
        json.push('\n');
        std::fs::write(dir.join("report.json"), json)?;
        let mut cfg = canonical_json(config);
        cfg.push('\n');
        std::fs::write(dir.join("config.json"), cfg)?;
        std::fs::write(dir.join("rates.csv"), grid_rates_csv(&report))?;
        std::fs::write(dir.join("summary.txt"), grid_summary(&report, started.elapsed()))?;
    }
    Ok(report)
}

/// The per-cell compromise sweep in the standard CSV shape.
pub fn grid_rates_csv(report: &GridReport) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for cell in &report.cells {
        let est = crate::adversary::CompromiseEstimate {
            sessions: cell.completed,
            compromises: cell.compromises,
            aborts: cell.aborts,
            rate: cell.compromise_rate,
            wilson_lo: cell.wilson_lo,
            wilson_hi: cell.wilson_hi,
            missing_sizes: Default::default(),
        };
        out.push_str(&sweep_row(cell.n, cell.bob_success, cell.eve_success, &est));
        out.push('\n');
    }
    out
}

fn grid_summary(report: &GridReport, elapsed: std::time::Duration) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "grid sweep: {} cell(s), {} session(s)", report.cells.len(), report.totals.sessions);
    for c in &report.cells {
        let _ = writeln!(
            s,
            "  n={:<5} c_b={:<4} c_e={:<4} jitter={:>9}ns  completed={:<5} aborts={:<4} \
             disagreements={} compromised={} (closed form {:.3e}) classification error {:.5}",
            c.n,
            c.bob_success,
            c.eve_success,
            c.jitter_sd,
            c.completed,
            c.aborts,
            c.key_disagreements,
            c.compromises,
            c.closed_form_rate,
            c.classification_error_rate,
        );
    }
    let _ = writeln!(
        s,
        "oracle checks: {} point(s), all_pass={}",
        report.oracle_checks.len(),
        report.oracle_all_pass
    );
    let _ = writeln!(
        s,
        "totals: completed={} aborts={} key_disagreements={} compromises={}",
        report.totals.completed,
        report.totals.aborts,
        report.totals.key_disagreements,
        report.totals.compromises
    );
    let _ = writeln!(s, "elapsed: {:.3}s", elapsed.as_secs_f64());
    s
}

/// Write the eavesdropper-sweep security curve for an `n`-packet burst to a CSV file.
pub fn sec_curve_file(path: &Path, n: u64, bob_success: f64) -> Result<(), HarnessError> {
    let curve = sec_curve(n, bob_success, &crate::security::default_eve_grid())?;
    std::fs::write(path, sec_curve_csv(&curve))?;
    Ok(())
}

/// One link of a replayable refresh chain: enough provenance to regenerate the
/// sender's payloads and re-derive the key, plus the fingerprint to verify against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub generation: u32,
    pub session_id: u64,
    pub burst_seed: u64,
    pub channel_seed: u64,
    pub n: u32,
    pub announcement: IndexAnnouncement,
    pub fingerprint: String,
}

/// Run an initial session plus `depth` refreshes, verifying Alice/Bob agreement at
/// every generation. Returns the final key and the replay log.
pub fn run_refresh_chain(
    depth: u32,
    n: u32,
    params: &ChannelParams,
    min_selected: usize,
    base_seed: u64,
) -> Result<(KeyMaterial, Vec<ChainStep>), HarnessError> {
    let bob_config = BobConfig::with_min_selected(params.arq_rtt, min_selected);
    let mut steps = Vec::with_capacity(depth as usize + 1);
    let mut alice_key: Option<KeyMaterial> = None;
    let mut bob_key: Option<KeyMaterial> = None;

    for generation in 0..=depth {
        let session_id = mix_seed(base_seed, 0x5E55_0000 + generation as u64);
        let burst_seed = mix_seed(base_seed, 2 * generation as u64);
        let channel_seed = mix_seed(base_seed, 2 * generation as u64 + 1);

        let mut rng = ChaCha12Rng::seed_from_u64(burst_seed);
        let packets = alice_generate_burst(n, session_id, &mut rng);
        let outcomes = simulate_burst(n, params, channel_seed)?;
        let received = received_from_outcomes(&packets, &outcomes);
        let announcement = bob_process_burst(&received, session_id, &bob_config)?;
        let (bob_store, _) = collect_received(&received, session_id);
        let alice_store = crate::protocol::store_from_packets(&packets);

        let (next_alice, next_bob) = match (&alice_key, &bob_key) {
            (None, None) => (
                derive_key(&announcement, &alice_store)?,
                derive_key(&announcement, &bob_store)?,
            ),
            (Some(a), Some(b)) => (
                refresh_key(a, &announcement, &alice_store)?,
                refresh_key(b, &announcement, &bob_store)?,
            ),
            _ => unreachable!("keys advance in lockstep"),
        };
        if next_alice != next_bob {
            return Err(HarnessError::Disagreement { generation });
        }
        steps.push(ChainStep {
            generation,
            session_id,
            burst_seed,
            channel_seed,
            n,
            announcement,
            fingerprint: next_alice.fingerprint(),
        });
        alice_key = Some(next_alice);
        bob_key = Some(next_bob);
    }
    Ok((alice_key.expect("at least one generation"), steps))
}

/// Rebuild the final key from a chain log alone: regenerate each burst from its
/// seed, apply the logged announcement, and verify every generation's fingerprint.
pub fn replay_refresh_chain(steps: &[ChainStep]) -> Result<KeyMaterial, HarnessError> {
    if steps.is_empty() {
        return Err(HarnessError::BadLog("empty chain".into()));
    }
    let mut key: Option<KeyMaterial> = None;
    for step in steps {
        let mut rng = ChaCha12Rng::seed_from_u64(step.burst_seed);
        let packets = alice_generate_burst(step.n, step.session_id, &mut rng);
        let store = crate::protocol::store_from_packets(&packets);
        let next = match &key {
            None => derive_key(&step.announcement, &store)?,
            Some(k) => refresh_key(k, &step.announcement, &store)?,
        };
        if next.fingerprint() != step.fingerprint {
            return Err(HarnessError::ReplayMismatch { generation: step.generation });
        }
        key = Some(next);
    }
    Ok(key.expect("non-empty chain"))
}

/// Chain log as line-delimited canonical JSON, one generation per line.
pub fn chain_to_jsonl(steps: &[ChainStep]) -> String {
    let mut out = String::new();
    for step in steps {
        out.push_str(&canonical_json(step));
        out.push('\n');
    }
    out
}

pub fn chain_from_jsonl(body: &str) -> Result<Vec<ChainStep>, HarnessError> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| HarnessError::BadLog(e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumeration_on_one_packet_is_auditable_by_hand() {
        let rates = ChannelRates::new(0.5, 0.5).unwrap();
        // Qualifying outcomes: 00, 10, 11 → 0.25 + 0.25 + 0.25 = 0.75.
        assert!((enumerate_exact(1, rates).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn enumeration_matches_the_survival_power() {
        // (1 - 0.9*0.8)^8 = 0.28^8 ≈ 3.7780e-5.
        let rates = ChannelRates::new(0.9, 0.2).unwrap();
        let exact = enumerate_exact(8, rates).unwrap();
        assert!((exact - 0.28f64.powi(8)).abs() < 1e-12);
        assert!((exact - 3.7780e-5).abs() < 1e-9);
        assert!((exact - compromise_probability(8, rates)).abs() < 1e-12);
    }

    #[test]
    fn enumeration_agrees_with_closed_form_on_a_coarse_grid() {
        for n in 1..=6u32 {
            for cb10 in [0, 3, 7, 10] {
                for ce10 in [0, 3, 7, 10] {
                    let rates =
                        ChannelRates::new(cb10 as f64 / 10.0, ce10 as f64 / 10.0).unwrap();
                    let exact = enumerate_exact(n, rates).unwrap();
                    let closed = compromise_probability(n as u64, rates);
                    assert!(
                        (exact - closed).abs() < 1e-12,
                        "n={n} cb={cb10} ce={ce10}: {exact} vs {closed}"
                    );
                }
            }
        }
    }

    #[test]
    fn enumeration_edges() {
        let rates = ChannelRates::new(0.7, 0.4).unwrap();
        assert_eq!(enumerate_exact(0, rates).unwrap(), 1.0);
        assert!(matches!(enumerate_exact(13, rates), Err(HarnessError::TooLarge { n: 13 })));
        // Deaf Eve: only all-Bob-failures qualify → (1-c_b)^n.
        let deaf = ChannelRates::new(0.7, 0.0).unwrap();
        assert!((enumerate_exact(5, deaf).unwrap() - 0.3f64.powi(5)).abs() < 1e-15);
        // Omniscient Eve: everything qualifies → 1.
        let omni = ChannelRates::new(0.7, 1.0).unwrap();
        assert!((enumerate_exact(5, omni).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn session_runs_are_reproducible_and_agree() {
        let params = ChannelParams::default();
        let config = BobConfig::with_min_selected(params.arq_rtt, 2);
        let a = run_session(100, &params, &config, 42).unwrap();
        let b = run_session(100, &params, &config, 42).unwrap();
        assert_eq!(a, b);
        match a.result {
            SessionResult::Completed(done) => {
                assert!(done.agreement);
                assert!(done.classification.symmetric_difference <= 1);
            }
            SessionResult::Aborted { reason } => panic!("unexpected abort: {reason}"),
        }
    }

    #[test]
    fn deaf_eve_session_is_never_compromised() {
        let params = ChannelParams { eve_success: 0.0, ..Default::default() };
        let config = BobConfig::with_min_selected(params.arq_rtt, 2);
        let record = run_session(50, &params, &config, 7).unwrap();
        match record.result {
            SessionResult::Completed(done) => {
                assert!(done.agreement);
                assert!(!done.eve.is_compromised());
            }
            SessionResult::Aborted { reason } => panic!("unexpected abort: {reason}"),
        }
    }

    #[test]
    fn starved_session_reports_abort() {
        let params = ChannelParams { bob_success: 0.0, ..Default::default() };
        let config = BobConfig::with_min_selected(params.arq_rtt, 2);
        let record = run_session(10, &params, &config, 9).unwrap();
        assert!(matches!(record.result, SessionResult::Aborted { .. }));
    }

    #[test]
    fn empty_grid_produces_an_empty_report() {
        let config = GridConfig { cells: vec![], ..Default::default() };
        let report = run_e2e_grid(&config, None).unwrap();
        assert!(report.cells.is_empty());
        assert_eq!(report.totals.sessions, 0);
        assert!(report.oracle_all_pass);
    }

    #[test]
    fn small_grid_report_is_byte_stable_and_disagreement_free() {
        let config = GridConfig {
            cells: vec![
                CellConfig { n: 50, bob_success: 0.9, eve_success: 0.5, jitter_sd: 800_000 },
                CellConfig { n: 50, bob_success: 0.7, eve_success: 0.9, jitter_sd: 400_000 },
            ],
            sessions_per_cell: 30,
            seed: 99,
            oracle_check_max_n: 4,
            ..Default::default()
        };
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let report_a = run_e2e_grid(&config, Some(dir_a.path())).unwrap();
        let report_b = run_e2e_grid(&config, Some(dir_b.path())).unwrap();
        assert_eq!(report_a, report_b);
        assert_eq!(report_a.totals.key_disagreements, 0);
        assert!(report_a.oracle_all_pass);
        assert_eq!(report_a.oracle_checks.len(), 2 * 4);

        for file in ["report.json", "config.json", "rates.csv"] {
            let a = std::fs::read(dir_a.path().join(file)).unwrap();
            let b = std::fs::read(dir_b.path().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
            assert!(!a.is_empty());
        }
        let csv = std::fs::read_to_string(dir_a.path().join("rates.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with(SWEEP_HEADER));
        assert!(dir_a.path().join("summary.txt").exists());
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = GridConfig::default();
        let json = canonical_json(&config);
        let parsed: GridConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, config);
        // Partial configs lean on defaults.
        let partial: GridConfig = serde_json::from_str("{\"sessions_per_cell\":5}").unwrap();
        assert_eq!(partial.sessions_per_cell, 5);
        assert_eq!(partial.cells, GridConfig::default().cells);
    }

    #[test]
    fn curve_file_has_the_fixed_grid_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("curve.csv");
        sec_curve_file(&path, 617, 0.9).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = body.lines().collect();
        assert_eq!(lines.len(), 102);
        assert_eq!(lines[0], "c_e,sec_bits");
        assert!(lines[101].starts_with("1,"));
    }

    #[test]
    fn refresh_chain_replays_bit_exactly() {
        let params = ChannelParams::default();
        let (final_key, steps) = run_refresh_chain(5, 40, &params, 2, 1234).unwrap();
        assert_eq!(steps.len(), 6);
        assert_eq!(final_key.generation, 5);
        for (g, step) in steps.iter().enumerate() {
            assert_eq!(step.generation, g as u32);
        }

        let log = chain_to_jsonl(&steps);
        let parsed = chain_from_jsonl(&log).unwrap();
        assert_eq!(parsed, steps);
        let replayed = replay_refresh_chain(&parsed).unwrap();
        assert_eq!(replayed, final_key);
    }

    #[test]
    fn tampered_chain_logs_fail_replay() {
        let params = ChannelParams::default();
        let (_, mut steps) = run_refresh_chain(2, 40, &params, 2, 555).unwrap();

        let mut wrong_print = steps.clone();
        wrong_print[1].fingerprint = "0000000000000000".into();
        assert!(matches!(
            replay_refresh_chain(&wrong_print),
            Err(HarnessError::ReplayMismatch { generation: 1 })
        ));

        // Dropping an announced index changes the derived key, which the very same
        // generation's fingerprint catches.
        steps[2].announcement.selected_indices.pop();
        assert!(matches!(
            replay_refresh_chain(&steps),
            Err(HarnessError::ReplayMismatch { generation: 2 })
        ));

        assert!(matches!(replay_refresh_chain(&[]), Err(HarnessError::BadLog(_))));
    }
}
