//! Recovering the send schedule from arrival times alone.
//!
//! Bob never sees link-layer attempt counts; all he has is `(index, arrival)` pairs.
//! First-attempt packets land on a nearly perfect line `t = offset + index * gap`
//! (jitter aside), while each hidden retransmission pushes a packet a full ARQ round
//! trip off that line. Fitting the line and thresholding residuals therefore
//! separates first-attempt deliveries from retransmitted ones without any
//! cooperation from the modem.

use crate::Nanos;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TimingError {
    #[error("cannot fit a schedule through {points} point(s); need at least 2")]
    DegenerateTrace { points: usize },
    #[error("inlier set collapsed after {iterations} refinement pass(es)")]
    NoConvergence { iterations: usize },
}

/// Tuning for the iterative fit. The residual threshold is expressed as a fraction
/// of the ARQ round trip, since that round trip is the displacement being detected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizerConfig {
    /// The link's ARQ round trip; one retransmission shifts arrival by this much.
    pub arq_rtt: Nanos,
    /// Residuals beyond `threshold_fraction * arq_rtt` mark a packet as delayed.
    pub threshold_fraction: f64,
    /// Refinement passes before giving up on a fixed point.
    pub max_iterations: usize,
}

impl RegularizerConfig {
    pub fn new(arq_rtt: Nanos) -> Self {
        Self { arq_rtt, threshold_fraction: 0.5, max_iterations: 10 }
    }

    fn residual_threshold(&self) -> f64 {
        self.threshold_fraction * self.arq_rtt as f64
    }
}

/// A fitted send schedule plus the classification it induces.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizationFit {
    /// Estimated arrival time of a hypothetical index-0 packet, in ns.
    pub offset_ns: f64,
    /// Estimated inter-packet interval as seen on the receiver clock, in ns.
    pub gap_ns: f64,
    /// Residual against the final fit for every input point, in input order.
    pub residuals: Vec<(u32, f64)>,
    /// Indices classified as first-attempt deliveries.
    pub inlier_indices: BTreeSet<u32>,
    /// Least-squares passes performed.
    pub iterations: usize,
    /// Whether the inlier set reached a fixed point within the iteration budget.
    pub converged: bool,
}

impl RegularizationFit {
    /// Scheduled arrival for `index` under the fitted line.
    pub fn predicted(&self, index: u32) -> f64 {
        self.offset_ns + self.gap_ns * index as f64
    }
}

/// Plain least-squares line through `(index, arrival)`: minimizes
/// `sum_i (t_i - offset - index_i * gap)^2`. Returns `(offset_ns, gap_ns)`.
pub fn fit_schedule(points: &[(u32, Nanos)]) -> Result<(f64, f64), TimingError> {
    if points.len() < 2 {
        return Err(TimingError::DegenerateTrace { points: points.len() });
    }
    let n = points.len() as f64;
    let x_mean = points.iter().map(|&(i, _)| i as f64).sum::<f64>() / n;
    let y_mean = points.iter().map(|&(_, t)| t as f64).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(i, t) in points {
        let dx = i as f64 - x_mean;
        sxx += dx * dx;
        sxy += dx * (t as f64 - y_mean);
    }
    if sxx == 0.0 {
        // All points share one index; no slope is identifiable.
        return Err(TimingError::DegenerateTrace { points: points.len() });
    }
    let gap = sxy / sxx;
    let offset = y_mean - gap * x_mean;
    Ok((offset, gap))
}

/// Iteratively fit the schedule and split the trace into on-schedule (first-attempt)
/// and delayed (retransmitted) packets.
///
/// Each pass fits the current inlier set, then reclassifies *every* point by its
/// residual. Delayed packets perturb the very first fit, which is why a single pass
/// is not enough near the threshold; the loop stops at a fixed point. A fit whose
/// inlier set collapses below two points is unusable and reported as an error; a
/// fit that merely fails to settle within the budget is returned with
/// `converged = false` so the caller can decide whether to proceed.
pub fn regularize_and_classify(
    trace: &[(u32, Nanos)],
    config: &RegularizerConfig,
) -> Result<RegularizationFit, TimingError> {
    if trace.len() < 2 {
        return Err(TimingError::DegenerateTrace { points: trace.len() });
    }
    let threshold = config.residual_threshold();
    let mut inliers: BTreeSet<u32> = trace.iter().map(|&(i, _)| i).collect();
    let mut iterations = 0;
    let mut converged = false;
    let mut fit = (0.0, 0.0);

    while iterations < config.max_iterations {
        let subset: Vec<(u32, Nanos)> =
            trace.iter().copied().filter(|(i, _)| inliers.contains(i)).collect();
        fit = fit_schedule(&subset)?;
        iterations += 1;

        let next: BTreeSet<u32> = trace
            .iter()
            .filter(|&&(i, t)| (t as f64 - (fit.0 + fit.1 * i as f64)).abs() <= threshold)
            .map(|&(i, _)| i)
            .collect();
        if next == inliers {
            converged = true;
            break;
        }
        if next.len() < 2 {
            return Err(TimingError::NoConvergence { iterations });
        }
        inliers = next;
    }

    let (offset_ns, gap_ns) = fit;
    let residuals = trace
        .iter()
        .map(|&(i, t)| (i, t as f64 - (offset_ns + gap_ns * i as f64)))
        .collect();
    Ok(RegularizationFit { offset_ns, gap_ns, residuals, inlier_indices: inliers, iterations, converged })
}

/// Histogram of successive arrival gaps, centered on their mean and binned at
/// `bin_width`. On a healthy trace the mass sits in the 0 bin; each isolated
/// retransmission contributes one bin near `+arq_rtt` and one near `-arq_rtt`.
/// Purely diagnostic — classification goes through [`regularize_and_classify`].
pub fn gap_histogram(trace: &[(u32, Nanos)], bin_width: Nanos) -> BTreeMap<i64, usize> {
    let mut hist = BTreeMap::new();
    if trace.len() < 2 || bin_width <= 0 {
        return hist;
    }
    let gaps: Vec<f64> =
        trace.windows(2).map(|w| (w[1].1 - w[0].1) as f64).collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    for d in gaps {
        let bin = ((d - mean) / bin_width as f64).round() as i64;
        *hist.entry(bin).or_insert(0) += 1;
    }
    hist
}

/// Estimate the ARQ round trip from the gap histogram: the magnitude of the
/// strongest mode away from the central cluster. `None` when every gap sits in
/// or next to the central bin (nothing was retransmitted, or bins are too wide).
pub fn estimate_arq_rtt(trace: &[(u32, Nanos)], bin_width: Nanos) -> Option<Nanos> {
    gap_histogram(trace, bin_width)
        .into_iter()
        .filter(|&(bin, _)| bin.abs() >= 2)
        .max_by_key(|&(bin, count)| (count, std::cmp::Reverse(bin.abs())))
        .map(|(bin, _)| bin.abs() * bin_width)
}
