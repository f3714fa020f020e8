//! The two session engines and everything they exchange.
//!
//! Alice floods a burst of random 32-byte payloads over the lossy path. Bob times the
//! arrivals, keeps what the regularizer classifies as first-attempt deliveries, and
//! announces those indices over the public channel. Both sides then hash the selected
//! payloads — in ascending index order under a domain-separated tag — into a shared
//! 256-bit key. Refreshes repeat the dance and fold the previous key into the hash,
//! so the chain is order-sensitive by construction.

use crate::regularize::{regularize_and_classify, RegularizerConfig, TimingError};
use crate::security::{min_packets_for_sec, ChannelRates, SecurityError};
use crate::wire::{KeyPacket, PAYLOAD_SIZE};
use crate::Nanos;
use rand::{CryptoRng, Rng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

/// Domain tag for generation-0 derivation.
const TAG_INITIAL: &[u8] = b"erasurekey/v1/initial";
/// Domain tag for folding a refresh burst into an existing key.
const TAG_REFRESH: &[u8] = b"erasurekey/v1/refresh";

pub type Payload = [u8; PAYLOAD_SIZE];
/// Payloads by packet index. Alice's store holds the whole burst; Bob's holds what
/// arrived intact; Eve's holds what she captured.
pub type PayloadStore = BTreeMap<u32, Payload>;

#[derive(Debug, Error, PartialEq)]
pub enum ProtocolError {
    #[error("only {selected} usable packet(s); policy requires {required}")]
    SessionAbort { selected: usize, required: usize },
    #[error("schedule fit did not settle after {iterations} pass(es)")]
    FitNotConverged { iterations: usize },
    #[error("refusing to derive a key from an empty selection")]
    EmptySelection,
    #[error("announced index {index} has no matching payload")]
    MissingPayload { index: u32 },
    #[error("announcement is for session {theirs:#018x}, not ours {ours:#018x}")]
    SessionMismatch { ours: u64, theirs: u64 },
    #[error("selected indices must be strictly increasing")]
    UnsortedIndices,
    #[error("malformed announcement: {0}")]
    BadAnnouncement(String),
    #[error(transparent)]
    Timing(#[from] TimingError),
    #[error(transparent)]
    Security(#[from] SecurityError),
}

/// What Bob publishes after timing analysis: which indices go into the key, plus the
/// fitted schedule for audit. Everything here is public by design — the protocol's
/// security case is that this reveals nothing about payload *contents*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexAnnouncement {
    pub session_id: u64,
    pub selected_indices: Vec<u32>,
    pub fit: FitSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub offset_ns: f64,
    pub gap_ns: f64,
    /// Points that survived residual thresholding.
    pub inliers: u64,
}

impl IndexAnnouncement {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        if !self.selected_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(ProtocolError::UnsortedIndices);
        }
        Ok(())
    }

    /// Canonical JSON (sorted keys, no whitespace) — the exact bytes that cross the
    /// public channel, so Eve sees precisely this.
    pub fn to_json(&self) -> String {
        crate::canonical_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, ProtocolError> {
        let ann: Self = serde_json::from_str(text)
            .map_err(|e| ProtocolError::BadAnnouncement(e.to_string()))?;
        ann.validate()?;
        Ok(ann)
    }
}

/// A derived key plus its provenance within a refresh chain.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyMaterial {
    pub key: [u8; 32],
    /// 0 for the initial derivation, +1 per refresh.
    pub generation: u32,
    pub source_indices: Vec<u32>,
    /// Fingerprint of the key this one was refreshed from.
    pub parent_fingerprint: Option<String>,
}

impl KeyMaterial {
    /// Short public identifier: first 8 bytes of SHA-256 of the key, hex.
    pub fn fingerprint(&self) -> String {
        hex::encode(&Sha256::digest(self.key)[..8])
    }

    pub fn key_hex(&self) -> String {
        hex::encode(self.key)
    }
}

// Keys should not end up in logs via a stray {:?}.
impl fmt::Debug for KeyMaterial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyMaterial")
            .field("fingerprint", &self.fingerprint())
            .field("generation", &self.generation)
            .field("sources", &self.source_indices.len())
            .field("parent_fingerprint", &self.parent_fingerprint)
            .finish()
    }
}

/// A packet as it reached Bob: decoded frame plus arrival timestamp on his clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReceivedPacket {
    pub packet: KeyPacket,
    pub arrival: Nanos,
}

/// Bob's session policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BobConfig {
    /// Abort threshold on the selected-set size.
    pub min_selected: usize,
    pub regularizer: RegularizerConfig,
    /// Whether a non-settling fit aborts the session (on by default; the
    /// Monte Carlo harness relaxes it to study borderline geometries).
    pub require_convergence: bool,
}

impl BobConfig {
    /// Explicit floor on the selected-set size.
    pub fn with_min_selected(arq_rtt: Nanos, min_selected: usize) -> Self {
        Self { min_selected, regularizer: RegularizerConfig::new(arq_rtt), require_convergence: true }
    }

    /// Floor derived from a security target: enough packets that even an
    /// eavesdropper as well-positioned as Bob himself (the worst non-degenerate
    /// case, e_e = 1 - c_b) leaves `target_sec` bits of work. Callers with a
    /// measured Eve bound can pass their own rates instead.
    pub fn from_security_target(
        arq_rtt: Nanos,
        target_sec: f64,
        bob_success: f64,
    ) -> Result<Self, SecurityError> {
        let rates = ChannelRates::degraded(bob_success)?;
        let min_selected = min_packets_for_sec(target_sec, rates)? as usize;
        Ok(Self::with_min_selected(arq_rtt, min_selected))
    }
}

/// Generate one burst: indices `1..=n`, fresh random payloads. The `CryptoRng`
/// bound keeps weak generators out; tests pass a seeded ChaCha stream.
pub fn alice_generate_burst<R: Rng + CryptoRng>(
    n: u32,
    session_id: u64,
    rng: &mut R,
) -> Vec<KeyPacket> {
    (1..=n)
        .map(|index| {
            let mut payload = [0u8; PAYLOAD_SIZE];
            rng.fill(&mut payload);
            KeyPacket { session_id, index, payload }
        })
        .collect()
}

/// Index the burst by packet index, as Alice's payload store.
pub fn store_from_packets(packets: &[KeyPacket]) -> PayloadStore {
    packets.iter().map(|p| (p.index, p.payload)).collect()
}

/// Collapse received packets into a per-index store and arrival trace. Packets from
/// other sessions are dropped; duplicate indices keep the earliest arrival (replays
/// and stale duplicates lose).
pub fn collect_received(
    received: &[ReceivedPacket],
    session_id: u64,
) -> (PayloadStore, Vec<(u32, Nanos)>) {
    let mut first_arrival: BTreeMap<u32, (Nanos, Payload)> = BTreeMap::new();
    for r in received.iter().filter(|r| r.packet.session_id == session_id) {
        first_arrival
            .entry(r.packet.index)
            .and_modify(|slot| {
                if r.arrival < slot.0 {
                    *slot = (r.arrival, r.packet.payload);
                }
            })
            .or_insert((r.arrival, r.packet.payload));
    }
    let store: PayloadStore =
        first_arrival.iter().map(|(&i, &(_, p))| (i, p)).collect();
    let mut trace: Vec<(u32, Nanos)> =
        first_arrival.into_iter().map(|(i, (t, _))| (i, t)).collect();
    trace.sort_by_key(|&(i, t)| (t, i));
    (store, trace)
}

/// Classification core shared by the session engine and the Monte Carlo driver:
/// fit the schedule over a deduplicated trace and keep what lands on it.
pub fn select_first_attempt(
    trace: &[(u32, Nanos)],
    config: &BobConfig,
) -> Result<(Vec<u32>, FitSummary), ProtocolError> {
    if trace.len() < config.min_selected.max(2) {
        return Err(ProtocolError::SessionAbort {
            selected: trace.len(),
            required: config.min_selected.max(2),
        });
    }
    let fit = regularize_and_classify(trace, &config.regularizer)?;
    if config.require_convergence && !fit.converged {
        return Err(ProtocolError::FitNotConverged { iterations: fit.iterations });
    }
    let selected: Vec<u32> = fit.inlier_indices.iter().copied().collect();
    if selected.len() < config.min_selected {
        return Err(ProtocolError::SessionAbort {
            selected: selected.len(),
            required: config.min_selected,
        });
    }
    let summary = FitSummary {
        offset_ns: fit.offset_ns,
        gap_ns: fit.gap_ns,
        inliers: fit.inlier_indices.len() as u64,
    };
    Ok((selected, summary))
}

/// Bob's half of the exchange: time the arrivals, classify, and announce.
///
/// Integrity filtering happens upstream (corrupt frames never decode), so every
/// packet here is intact; what this decides is which of them were *first-attempt*
/// deliveries, using nothing but the fitted send schedule.
pub fn bob_process_burst(
    received: &[ReceivedPacket],
    session_id: u64,
    config: &BobConfig,
) -> Result<IndexAnnouncement, ProtocolError> {
    let (_, trace) = collect_received(received, session_id);
    let (selected_indices, fit) = select_first_attempt(&trace, config)?;
    Ok(IndexAnnouncement { session_id, selected_indices, fit })
}

/// Hash the announced payloads into a generation-0 key:
/// `H(tag ‖ session_id ‖ payloads in ascending index order)`.
///
/// Pure function of the announcement and the store — the whole security argument
/// rests on Eve being able to run this too, lacking only payload bytes.
pub fn derive_key(
    announcement: &IndexAnnouncement,
    store: &PayloadStore,
) -> Result<KeyMaterial, ProtocolError> {
    announcement.validate()?;
    if announcement.selected_indices.is_empty() {
        return Err(ProtocolError::EmptySelection);
    }
    let mut hasher = Sha256::new();
    hasher.update(TAG_INITIAL);
    hasher.update(announcement.session_id.to_be_bytes());
    feed_payloads(&mut hasher, announcement, store)?;
    Ok(KeyMaterial {
        key: hasher.finalize().into(),
        generation: 0,
        source_indices: announcement.selected_indices.clone(),
        parent_fingerprint: None,
    })
}

/// Fold a refresh burst into an existing key:
/// `H(tag_refresh ‖ key_g ‖ payloads in ascending index order)`.
/// Chaining through the previous key makes refresh order matter.
pub fn refresh_key(
    current: &KeyMaterial,
    announcement: &IndexAnnouncement,
    store: &PayloadStore,
) -> Result<KeyMaterial, ProtocolError> {
    announcement.validate()?;
    if announcement.selected_indices.is_empty() {
        return Err(ProtocolError::EmptySelection);
    }
    let mut hasher = Sha256::new();
    hasher.update(TAG_REFRESH);
    hasher.update(current.key);
    feed_payloads(&mut hasher, announcement, store)?;
    Ok(KeyMaterial {
        key: hasher.finalize().into(),
        generation: current.generation + 1,
        source_indices: announcement.selected_indices.clone(),
        parent_fingerprint: Some(current.fingerprint()),
    })
}

fn feed_payloads(
    hasher: &mut Sha256,
    announcement: &IndexAnnouncement,
    store: &PayloadStore,
) -> Result<(), ProtocolError> {
    for &index in &announcement.selected_indices {
        let payload =
            store.get(&index).ok_or(ProtocolError::MissingPayload { index })?;
        hasher.update(payload);
    }
    Ok(())
}

/// Alice's response to Bob's announcement: sanity-check it and derive.
pub fn alice_derive(
    packets: &[KeyPacket],
    session_id: u64,
    announcement: &IndexAnnouncement,
) -> Result<KeyMaterial, ProtocolError> {
    if announcement.session_id != session_id {
        return Err(ProtocolError::SessionMismatch {
            ours: session_id,
            theirs: announcement.session_id,
        });
    }
    derive_key(announcement, &store_from_packets(packets))
}

/// One planned refresh burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefreshPoint {
    pub step: u64,
    pub quality: f64,
    pub burst_size: u32,
}

/// Decide when to spend airtime on key refreshes: fire whenever the quality signal
/// sits above `threshold` and at least `cooldown` steps have passed since the last
/// burst. High-quality windows make refreshes cheap (fewer retransmissions, more
/// first-attempt packets), so the policy chases them.
pub fn schedule_refreshes(
    qualities: impl IntoIterator<Item = f64>,
    threshold: f64,
    cooldown: u64,
    refresh_size: u32,
) -> Vec<RefreshPoint> {
    let mut plan = Vec::new();
    let mut last: Option<u64> = None;
    for (step, quality) in qualities.into_iter().enumerate() {
        let step = step as u64;
        let off_cooldown = last.is_none_or(|l| step - l >= cooldown.max(1));
        if quality > threshold && off_cooldown {
            plan.push(RefreshPoint { step, quality, burst_size: refresh_size });
            last = Some(step);
        }
    }
    plan
}
