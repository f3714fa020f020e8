//! Deterministic, seedable simulation of the two wireless paths.
//!
//! Alice sends packets at a fixed interval. Bob's link layer retries failed packets
//! transparently: each retransmission adds one ARQ round trip to the arrival time and
//! is invisible to the application except through that delay. Eve runs an independent
//! erasure process and gets a capture attempt at *every* on-air copy, which is exactly
//! why retransmitted packets leak more to her than first-attempt ones.
//!
//! The simulation is a pure function of `(n, params, seed)`.

use crate::Nanos;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid channel parameter: {0}")]
    InvalidParams(String),
    #[error("burst must contain at least one packet")]
    EmptyBurst,
    #[error("malformed trace record {line:?}: {reason}")]
    MalformedRecord { line: String, reason: String },
}

/// Optional two-state burst-error model. Off by default; the analytical model is
/// i.i.d. per packet, so this exists only to probe sensitivity to error correlation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GilbertElliott {
    /// Per-packet probability of moving good -> bad.
    pub enter_bad: f64,
    /// Per-packet probability of moving bad -> good.
    pub exit_bad: f64,
    /// Bob's per-attempt success probability while in the bad state.
    pub bad_success: f64,
}

/// Parameters of one simulated burst.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Bob's first-attempt (and per-retry) success probability.
    pub bob_success: f64,
    /// Eve's per-copy capture probability.
    pub eve_success: f64,
    /// Link-layer ARQ round trip: the extra delay one retransmission adds.
    pub arq_rtt: Nanos,
    /// Retries after the first attempt before the packet is dropped.
    pub max_retransmissions: u32,
    /// Std. dev. of the symmetric arrival jitter, truncated at 3 sigma.
    pub jitter_sd: Nanos,
    /// Bob's clock-rate offset relative to Alice, in parts per million.
    pub skew_ppm: f64,
    /// One-way travel time.
    pub base_latency: Nanos,
    /// Alice's fixed inter-packet send interval.
    pub send_gap: Nanos,
    /// Optional correlated-error state machine (None = i.i.d. errors).
    pub burst_errors: Option<GilbertElliott>,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bob_success: 0.9,
            eve_success: 0.5,
            arq_rtt: 8_000_000,
            max_retransmissions: 3,
            jitter_sd: 800_000,
            skew_ppm: 20.0,
            base_latency: 25_000_000,
            send_gap: 10_000_000,
            burst_errors: None,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), ChannelError> {
        for (name, p) in [("bob_success", self.bob_success), ("eve_success", self.eve_success)] {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ChannelError::InvalidParams(format!("{name} = {p} not in [0, 1]")));
            }
        }
        if self.arq_rtt <= 0 {
            return Err(ChannelError::InvalidParams("arq_rtt must be positive".into()));
        }
        if self.send_gap <= 0 {
            return Err(ChannelError::InvalidParams("send_gap must be positive".into()));
        }
        if self.jitter_sd < 0 {
            return Err(ChannelError::InvalidParams("jitter_sd must be non-negative".into()));
        }
        if self.base_latency < 0 {
            return Err(ChannelError::InvalidParams("base_latency must be non-negative".into()));
        }
        if let Some(ge) = &self.burst_errors {
            for (name, p) in [
                ("enter_bad", ge.enter_bad),
                ("exit_bad", ge.exit_bad),
                ("bad_success", ge.bad_success),
            ] {
                if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                    return Err(ChannelError::InvalidParams(format!("{name} = {p} not in [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Whether the on-time and +-T arrival clusters stay disjoint under the
    /// truncated jitter (3 * jitter_sd on each side of two clusters a T apart).
    pub fn clusters_separable(&self) -> bool {
        self.jitter_sd * 6 < self.arq_rtt
    }
}

/// Simulation-internal detail, present only on outcomes produced by
/// [`simulate_burst`] (never on records parsed from a trace file).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDetail {
    /// The sampled arrival jitter in nanoseconds (before rounding).
    pub jitter_ns: f64,
    /// Whether Eve captured the *first* on-air copy. Independence of the two
    /// receivers' error processes is asserted against this, not against the
    /// combined capture flag, which is confounded by the retransmission count.
    pub eve_first_copy: bool,
}

/// Per-packet result of a simulated burst.
#[derive(Debug, Clone, PartialEq)]
pub struct DeliveryOutcome {
    /// 1-based packet index.
    pub packet_index: u32,
    /// Attempts made; equals the attempt on which delivery happened, or
    /// `max_retransmissions + 1` when every attempt failed.
    pub bob_attempts: u32,
    pub bob_delivered: bool,
    /// Arrival time on Bob's clock, absent if undelivered.
    pub bob_arrival: Option<Nanos>,
    /// Whether Eve holds an error-free copy after all transmissions.
    pub eve_captured: bool,
    /// Copies placed on air: `bob_attempts` when delivered, else the full budget.
    pub transmission_count: u32,
    /// Simulation detail; `None` for records parsed from trace files.
    pub sim: Option<SimDetail>,
}

impl DeliveryOutcome {
    /// First-attempt delivery: the packets the protocol wants in the key.
    pub fn first_attempt(&self) -> bool {
        self.bob_delivered && self.bob_attempts == 1
    }
}

/// Arrival time on Bob's clock for a packet sent as index `i` and delivered on
/// attempt `attempts`, before rounding to integer nanoseconds.
fn arrival_formula(params: &ChannelParams, index: u32, attempts: u32, jitter_ns: f64) -> f64 {
    let send_time = index as f64 * params.send_gap as f64;
    send_time * (1.0 + params.skew_ppm * 1e-6)
        + params.base_latency as f64
        + (attempts - 1) as f64 * params.arq_rtt as f64
        + jitter_ns
}

/// Simulate one burst of `n` packets. Identical `(n, params, seed)` yields a
/// bit-identical outcome list.
pub fn simulate_burst(
    n: u32,
    params: &ChannelParams,
    seed: u64,
) -> Result<Vec<DeliveryOutcome>, ChannelError> {
    if n == 0 {
        return Err(ChannelError::EmptyBurst);
    }
    params.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let jitter_dist = if params.jitter_sd > 0 {
        Some(Normal::new(0.0, params.jitter_sd as f64).expect("finite jitter sd"))
    } else {
        None
    };
    let budget = params.max_retransmissions + 1;
    let mut in_bad_state = false;
    let mut outcomes = Vec::with_capacity(n as usize);

    for index in 1..=n {
        let bob_success = match &params.burst_errors {
            Some(ge) => {
                if in_bad_state {
                    in_bad_state = rng.gen::<f64>() >= ge.exit_bad;
                } else {
                    in_bad_state = rng.gen::<f64>() < ge.enter_bad;
                }
                if in_bad_state {
                    ge.bad_success
                } else {
                    params.bob_success
                }
            }
            None => params.bob_success,
        };

        let mut bob_attempts = budget;
        let mut bob_delivered = false;
        for attempt in 1..=budget {
            if rng.gen::<f64>() < bob_success {
                bob_attempts = attempt;
                bob_delivered = true;
                break;
            }
        }
        let transmission_count = if bob_delivered { bob_attempts } else { budget };

        let eve_first_copy = rng.gen::<f64>() < params.eve_success;
        let mut eve_captured = eve_first_copy;
        for _ in 1..transmission_count {
            eve_captured |= rng.gen::<f64>() < params.eve_success;
        }

        // Truncated Gaussian: resample anything beyond 3 sigma so the on-time and
        // delayed clusters cannot bleed into each other when jitter_sd < T/6.
        let jitter_ns = match &jitter_dist {
            Some(d) => {
                let bound = 3.0 * params.jitter_sd as f64;
                let mut j = d.sample(&mut rng);
                while j.abs() > bound {
                    j = d.sample(&mut rng);
                }
                j
            }
            None => 0.0,
        };

        let bob_arrival = bob_delivered
            .then(|| arrival_formula(params, index, bob_attempts, jitter_ns).round() as Nanos);

        outcomes.push(DeliveryOutcome {
            packet_index: index,
            bob_attempts,
            bob_delivered,
            bob_arrival,
            eve_captured,
            transmission_count,
            sim: Some(SimDetail { jitter_ns, eve_first_copy }),
        });
    }
    Ok(outcomes)
}

/// The timing view the protocol layer is allowed to see: delivered packets only,
/// `(index, arrival)` sorted by arrival time. Attempt counts stay sealed inside the
/// outcome list; nothing downstream of this function may read them.
pub fn arrival_trace(outcomes: &[DeliveryOutcome]) -> Vec<(u32, Nanos)> {
    let mut trace: Vec<(u32, Nanos)> = outcomes
        .iter()
        .filter_map(|o| o.bob_arrival.map(|t| (o.packet_index, t)))
        .collect();
    trace.sort_by_key(|&(idx, t)| (t, idx));
    trace
}

pub const TRACE_HEADER: &str = "index,attempts,delivered,arrival_ns,eve,transmissions";

/// One outcome as a trace record line (`index,attempts,delivered,arrival_ns,eve,transmissions`).
pub fn outcome_to_record(o: &DeliveryOutcome) -> String {
    let arrival = o.bob_arrival.map(|t| t.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{}",
        o.packet_index,
        o.bob_attempts,
        u8::from(o.bob_delivered),
        arrival,
        u8::from(o.eve_captured),
        o.transmission_count
    )
}

/// Parse one trace record line. The parsed outcome has no simulation detail.
pub fn outcome_from_record(line: &str) -> Result<DeliveryOutcome, ChannelError> {
    let err = |reason: &str| ChannelError::MalformedRecord {
        line: line.to_string(),
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = line.trim().split(',').collect();
    if fields.len() != 6 {
        return Err(err("expected 6 comma-separated fields"));
    }
    let packet_index: u32 = fields[0].parse().map_err(|_| err("bad index"))?;
    let bob_attempts: u32 = fields[1].parse().map_err(|_| err("bad attempts"))?;
    let bob_delivered = match fields[2] {
        "0" => false,
        "1" => true,
        _ => return Err(err("delivered must be 0 or 1")),
    };
    let bob_arrival = if fields[3].is_empty() {
        None
    } else {
        Some(fields[3].parse::<Nanos>().map_err(|_| err("bad arrival_ns"))?)
    };
    let eve_captured = match fields[4] {
        "0" => false,
        "1" => true,
        _ => return Err(err("eve must be 0 or 1")),
    };
    let transmission_count: u32 = fields[5].parse().map_err(|_| err("bad transmissions"))?;
    if bob_delivered && bob_arrival.is_none() {
        return Err(err("delivered packet must carry arrival_ns"));
    }
    if bob_delivered && bob_attempts == 0 {
        return Err(err("delivered packet must have at least one attempt"));
    }
    Ok(DeliveryOutcome {
        packet_index,
        bob_attempts,
        bob_delivered,
        bob_arrival,
        eve_captured,
        transmission_count,
        sim: None,
    })
}

/// Serialize a whole outcome list, header line included.
pub fn outcomes_to_records(outcomes: &[DeliveryOutcome]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for o in outcomes {
        out.push_str(&outcome_to_record(o));
        out.push('\n');
    }
    out
}

/// Parse a trace file body. A leading header line is tolerated and skipped.
pub fn outcomes_from_records(body: &str) -> Result<Vec<DeliveryOutcome>, ChannelError> {
    body.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && *l != TRACE_HEADER)
        .map(outcome_from_record)
        .collect()
}

/// Channel-quality signal model for the opportunistic refresh scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QualityModel {
    /// A fixed quality level.
    Constant(f64),
    /// First-order autoregressive around `mean` with per-step innovation `noise_sd`.
    Ar1 { mean: f64, coeff: f64, noise_sd: f64 },
}

/// Deterministic quality stream in `[0, 1]`, one sample per time step.
pub struct QualitySignal {
    model: QualityModel,
    state: f64,
    rng: ChaCha12Rng,
}

impl QualitySignal {
    pub fn new(model: QualityModel, seed: u64) -> Self {
        let state = match model {
            QualityModel::Constant(q) => q.clamp(0.0, 1.0),
            QualityModel::Ar1 { mean, .. } => mean.clamp(0.0, 1.0),
        };
        Self { model, state, rng: ChaCha12Rng::seed_from_u64(seed) }
    }
}

impl Iterator for QualitySignal {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        let current = self.state;
        if let QualityModel::Ar1 { mean, coeff, noise_sd } = self.model {
            let noise: f64 = Normal::new(0.0, noise_sd)
                .expect("finite noise sd")
                .sample(&mut self.rng);
            self.state = (mean + coeff * (current - mean) + noise).clamp(0.0, 1.0);
        }
        Some(current)
    }
}

/// Quality at a single time step; `O(step)`, intended for spot checks. Streaming
/// consumers should iterate [`QualitySignal`] directly.
pub fn channel_quality_signal(model: QualityModel, step: u64, seed: u64) -> f64 {
    QualitySignal::new(model, seed)
        .nth(step as usize)
        .expect("signal is infinite")
}

/// Monotone map from quality to an effective first-attempt success rate:
/// `0.5 + 0.49 * quality`, so quality 0 maps to 0.5 and quality 1 to the
/// ceiling of 0.99.
pub fn effective_bob_success(quality: f64) -> f64 {
    0.5 + 0.49 * quality.clamp(0.0, 1.0)
}
