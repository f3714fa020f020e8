//! The passive eavesdropper and the empirical side of the security claim.
//!
//! Eve hears every on-air copy of every packet — retransmissions included — and reads
//! the index announcement off the public channel. What she cannot do is beat her own
//! erasure process: a payload she never captured intact is a 256-bit blank. The key is
//! compromised exactly when she holds every announced payload, and the rate at which
//! that happens over many sessions is what the closed-form survival model predicts.

use crate::channel::{arrival_trace, simulate_burst, ChannelError, ChannelParams, DeliveryOutcome};
use crate::mix_seed;
use crate::protocol::{
    derive_key, select_first_attempt, BobConfig, IndexAnnouncement, KeyMaterial, PayloadStore,
    ProtocolError,
};
use crate::stats::{wilson_interval, Z_95};
use crate::wire::KeyPacket;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Everything Eve has after one session. Built exclusively from her own capture
/// events and public traffic — the type has no field that could hold Bob-side state,
/// which is what keeps the model honest by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EveView {
    /// Payloads captured error-free, by index.
    pub captured_payloads: PayloadStore,
    /// The public index announcement.
    pub announcement: IndexAnnouncement,
    /// On-air copies observed per index (captured or not); diagnostic only.
    pub copies_seen: BTreeMap<u32, u32>,
}

/// Outcome of Eve's reconstruction attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum Reconstruction {
    /// Eve derived the session key bit-exactly.
    Compromised(KeyMaterial),
    /// The announced indices she is missing. Each one is a fresh 256-bit unknown,
    /// so no partial-guessing model is attempted.
    Missing(BTreeSet<u32>),
}

impl Reconstruction {
    pub fn is_compromised(&self) -> bool {
        matches!(self, Reconstruction::Compromised(_))
    }
}

/// Assemble Eve's view of a session from the sender's burst and the simulated
/// per-packet outcomes. Reads only Eve-side fields (`eve_captured`,
/// `transmission_count`) plus public data.
pub fn observe_session(
    packets: &[KeyPacket],
    outcomes: &[DeliveryOutcome],
    announcement: &IndexAnnouncement,
) -> EveView {
    let by_index: BTreeMap<u32, &KeyPacket> = packets.iter().map(|p| (p.index, p)).collect();
    let mut captured_payloads = PayloadStore::new();
    let mut copies_seen = BTreeMap::new();
    for o in outcomes {
        copies_seen.insert(o.packet_index, o.transmission_count);
        if o.eve_captured {
            if let Some(p) = by_index.get(&o.packet_index) {
                captured_payloads.insert(o.packet_index, p.payload);
            }
        }
    }
    EveView { captured_payloads, announcement: announcement.clone(), copies_seen }
}

/// Try to rebuild the key from captured payloads and the announcement alone.
///
/// Deterministic in the view's contents; an empty announcement (which the protocol
/// never emits for a successful session) reports an empty missing set, and scoring
/// such degenerate sessions is the Monte Carlo driver's business.
pub fn eve_attempt_reconstruction(view: &EveView) -> Reconstruction {
    let missing: BTreeSet<u32> = view
        .announcement
        .selected_indices
        .iter()
        .copied()
        .filter(|i| !view.captured_payloads.contains_key(i))
        .collect();
    if !missing.is_empty() {
        return Reconstruction::Missing(missing);
    }
    match derive_key(&view.announcement, &view.captured_payloads) {
        Ok(key) => Reconstruction::Compromised(key),
        Err(_) => Reconstruction::Missing(BTreeSet::new()),
    }
}

/// How the selected set is decided inside the Monte Carlo loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassificationMode {
    /// Read the sealed ground-truth first-attempt flags. This is the estimator the
    /// closed form describes exactly, with no timing noise in the way.
    Oracle,
    /// Run the real pipeline: arrival trace, schedule fit, residual thresholding.
    Timing,
}

/// Result of a compromise-rate measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompromiseEstimate {
    pub sessions: u64,
    pub compromises: u64,
    /// Sessions where timing classification could not produce a selection
    /// (always 0 in oracle mode). Scored as compromised — see below.
    pub aborts: u64,
    pub rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Distribution of how many announced payloads Eve was missing, over
    /// non-compromised sessions. Reported, never scored.
    pub missing_sizes: BTreeMap<usize, u64>,
}

/// Measure the empirical compromise rate over seeded sessions, with a Wilson score
/// interval at confidence `z`.
///
/// Two scoring conventions make the estimator line up with the survival formula:
/// a session whose selected set is empty counts as compromised (a key derived from
/// nothing is no secret — this is the all-packets-lost term of the closed form),
/// and a timing-mode session that aborts is scored the same way, conservatively.
pub fn empirical_compromise_rate_z(
    n: u32,
    params: &ChannelParams,
    sessions: u64,
    seed: u64,
    mode: ClassificationMode,
    z: f64,
) -> Result<CompromiseEstimate, ChannelError> {
    params.validate()?;
    let bob_config = BobConfig::with_min_selected(params.arq_rtt, 0);
    let mut compromises = 0u64;
    let mut aborts = 0u64;
    let mut missing_sizes: BTreeMap<usize, u64> = BTreeMap::new();

    for s in 0..sessions {
        let outcomes = simulate_burst(n, params, mix_seed(seed, s))?;
        let selected: Vec<u32> = match mode {
            ClassificationMode::Oracle => outcomes
                .iter()
                .filter(|o| o.first_attempt())
                .map(|o| o.packet_index)
                .collect(),
            ClassificationMode::Timing => {
                match select_first_attempt(&arrival_trace(&outcomes), &bob_config) {
                    Ok((selected, _)) => selected,
                    Err(
                        ProtocolError::SessionAbort { .. }
                        | ProtocolError::FitNotConverged { .. }
                        | ProtocolError::Timing(_),
                    ) => {
                        aborts += 1;
                        compromises += 1;
                        continue;
                    }
                    Err(other) => unreachable!("classification cannot fail with {other}"),
                }
            }
        };
        let captured: BTreeSet<u32> = outcomes
            .iter()
            .filter(|o| o.eve_captured)
            .map(|o| o.packet_index)
            .collect();
        let missing = selected.iter().filter(|i| !captured.contains(i)).count();
        if missing == 0 {
            compromises += 1;
        } else {
            *missing_sizes.entry(missing).or_insert(0) += 1;
        }
    }

    let (wilson_lo, wilson_hi) = wilson_interval(compromises, sessions, z);
    Ok(CompromiseEstimate {
        sessions,
        compromises,
        aborts,
        rate: if sessions == 0 { 0.0 } else { compromises as f64 / sessions as f64 },
        wilson_lo,
        wilson_hi,
        missing_sizes,
    })
}

/// [`empirical_compromise_rate_z`] at the standard 95% confidence level.
pub fn empirical_compromise_rate(
    n: u32,
    params: &ChannelParams,
    sessions: u64,
    seed: u64,
    mode: ClassificationMode,
) -> Result<CompromiseEstimate, ChannelError> {
    empirical_compromise_rate_z(n, params, sessions, seed, mode, Z_95)
}

pub const SWEEP_HEADER: &str = "n,c_b,c_e,sessions,compromises,rate,lo,hi";

/// One sweep row in the `n,c_b,c_e,sessions,compromises,rate,lo,hi` format.
pub fn sweep_row(n: u32, bob_success: f64, eve_success: f64, est: &CompromiseEstimate) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        n, bob_success, eve_success, est.sessions, est.compromises, est.rate, est.wilson_lo,
        est.wilson_hi
    )
}
