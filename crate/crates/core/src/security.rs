//! Closed-form security evaluation for erasure-based key agreement.
//!
//! With `c_b` the probability that Bob receives a packet error-free on the first
//! transmission attempt and `c_e` the probability that Eve captures a copy, the key is
//! compromised only if Eve holds every packet Bob selected. Over `n` independent
//! packets that happens with probability
//!
//! ```text
//! P = (1 - c_b * (1 - c_e))^n
//! ```
//!
//! and the security level in bits is `SEC = -log2(P) = -n * log2(1 - c_b * (1 - c_e))`.
//! This module evaluates those forms, their degraded-channel specialization
//! (`c_e = c_b`), the curve over a grid of Eve rates, and the inversion that yields the
//! minimum burst size for a target security level.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SecurityError {
    #[error("{name} = {value} is not a probability in [0, 1]")]
    InvalidProbability { name: &'static str, value: f64 },
    #[error("target security level is unreachable: every packet Bob selects is captured by Eve (c_b * (1 - c_e) = 0)")]
    Unreachable,
    #[error("target security level must be positive, got {0}")]
    NonPositiveTarget(f64),
}

/// First-attempt success probabilities of the two receivers.
///
/// Stores only `c_b` (Bob) and `c_e` (Eve); the error rates `e_b = 1 - c_b` and
/// `e_e = 1 - c_e` are always derived so the complements stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelRates {
    bob_success: f64,
    eve_success: f64,
}

impl ChannelRates {
    pub fn new(bob_success: f64, eve_success: f64) -> Result<Self, SecurityError> {
        check_probability("bob_success", bob_success)?;
        check_probability("eve_success", eve_success)?;
        Ok(Self { bob_success, eve_success })
    }

    /// Degraded-channel rates: Eve no better than Bob, at the bottleneck `c_e = c_b`.
    pub fn degraded(bob_success: f64) -> Result<Self, SecurityError> {
        Self::new(bob_success, bob_success)
    }

    pub fn bob_success(&self) -> f64 {
        self.bob_success
    }

    pub fn eve_success(&self) -> f64 {
        self.eve_success
    }

    pub fn bob_error(&self) -> f64 {
        1.0 - self.bob_success
    }

    pub fn eve_error(&self) -> f64 {
        1.0 - self.eve_success
    }

    /// Per-packet probability that a Bob-selected packet is *not* an Eve miss,
    /// i.e. the base of the compromise probability: `1 - c_b * e_e`.
    fn per_packet_survival(&self) -> f64 {
        1.0 - self.bob_success * self.eve_error()
    }
}

fn check_probability(name: &'static str, value: f64) -> Result<(), SecurityError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(SecurityError::InvalidProbability { name, value })
    }
}

/// Channel regime a report was evaluated under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Eve's channel is no better than Bob's (`c_e <= c_b`).
    Degraded,
    General,
}

/// Evaluated security figures for one `(n, rates)` point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SecurityReport {
    pub n_packets: u64,
    pub p_compromise: f64,
    pub sec_bits: f64,
    pub regime: Regime,
}

impl SecurityReport {
    pub fn evaluate(n: u64, rates: ChannelRates) -> Self {
        let regime = if rates.eve_success <= rates.bob_success {
            Regime::Degraded
        } else {
            Regime::General
        };
        Self {
            n_packets: n,
            p_compromise: compromise_probability(n, rates),
            sec_bits: security_level(n, rates),
            regime,
        }
    }
}

/// Direct-vs-log-domain crossover. Repeated multiplication is exact enough below
/// this; above it the probability can underflow partial products, so the log form
/// is used instead.
const LOG_DOMAIN_THRESHOLD: u64 = 64;

/// Probability that Eve holds every packet Bob selected out of a burst of `n`:
/// `(1 - c_b * (1 - c_e))^n`. Exactly 1 for `n = 0`.
pub fn compromise_probability(n: u64, rates: ChannelRates) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let base = rates.per_packet_survival();
    if n <= LOG_DOMAIN_THRESHOLD {
        base.powi(n as i32)
    } else {
        // exp(n * ln(1 - x)) with ln_1p keeping precision for small x.
        let x = rates.bob_success * rates.eve_error();
        (n as f64 * (-x).ln_1p()).exp()
    }
}

/// Security level in bits: `-n * log2(1 - c_b * (1 - c_e))`.
///
/// Returns 0 when `c_b * (1 - c_e) = 0` (Eve captures everything she needs, or Bob
/// receives nothing) and `inf` when `c_b = 1, c_e = 0` (Eve never captures a
/// selected packet).
pub fn security_level(n: u64, rates: ChannelRates) -> f64 {
    let x = rates.bob_success * rates.eve_error();
    let sec = -(n as f64) * (-x).ln_1p() / std::f64::consts::LN_2;
    // ln_1p(0) = +0 makes the product -0.0; normalize so callers and CSV see plain 0.
    if sec == 0.0 {
        0.0
    } else {
        sec
    }
}

/// Security level at the degraded-channel bottleneck `c_e = c_b`:
/// `-n * log2(1 - c_b + c_b^2)`. Maximized at `c_b = 1/2`, where it is
/// `n * log2(4/3)`.
pub fn degraded_channel_sec(n: u64, bob_success: f64) -> Result<f64, SecurityError> {
    Ok(security_level(n, ChannelRates::degraded(bob_success)?))
}

/// Smallest burst size `n` with `security_level(n, rates) >= target_sec`.
///
/// The closed form is `ceil(target / -log2(1 - c_b * e_e))`; a one-step walk around
/// the ceiling guards against the ratio landing a hair on the wrong side of an
/// integer. For the reference target of 256 bits at `c_b = c_e = 0.5` this yields
/// 617 packets — a ceiling, not an exact hit: SEC(617) = 256.078.
pub fn min_packets_for_sec(target_sec: f64, rates: ChannelRates) -> Result<u64, SecurityError> {
    if target_sec.is_nan() || target_sec <= 0.0 {
        return Err(SecurityError::NonPositiveTarget(target_sec));
    }
    let per_packet = security_level(1, rates);
    if per_packet == 0.0 {
        return Err(SecurityError::Unreachable);
    }
    if per_packet.is_infinite() {
        // Eve can never capture a selected packet; one packet already gives P = 0.
        return Ok(1);
    }
    let mut n = (target_sec / per_packet).ceil().max(1.0) as u64;
    while n > 1 && security_level(n - 1, rates) >= target_sec {
        n -= 1;
    }
    while security_level(n, rates) < target_sec {
        n += 1;
    }
    Ok(n)
}

/// Pointwise security level over a grid of Eve success rates, in grid order.
pub fn sec_curve(
    n: u64,
    bob_success: f64,
    eve_grid: &[f64],
) -> Result<Vec<(f64, f64)>, SecurityError> {
    eve_grid
        .iter()
        .map(|&ce| {
            let rates = ChannelRates::new(bob_success, ce)?;
            Ok((ce, security_level(n, rates)))
        })
        .collect()
}

/// Default grid for curve emission: 101 points, 0.00 to 1.00 in steps of 0.01.
pub fn default_eve_grid() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

/// Render a curve as CSV with header `c_e,sec_bits`.
pub fn sec_curve_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("c_e,sec_bits\n");
    for (ce, sec) in points {
        out.push_str(&format!("{ce},{sec}\n"));
    }
    out
}
