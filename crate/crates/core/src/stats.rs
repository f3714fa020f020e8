//! Small statistical helpers shared by the simulator tests and the Monte Carlo drivers.

/// z for a two-sided 95% interval.
pub const Z_95: f64 = 1.959963984540054;

/// z for a two-sided 99.9% interval.
pub const Z_999: f64 = 3.2905267314918945;

/// Wilson score interval for a binomial proportion.
///
/// Behaves sensibly near 0 and 1, where the normal approximation collapses.
/// Returns `(lo, hi)`; for `trials == 0` the interval is `(0, 1)`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Pearson correlation of two equal-length samples. `None` if either side is constant.
pub fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        let dy = y - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Lag-1 sample autocorrelation.
pub fn autocorr_lag1(xs: &[f64]) -> Option<f64> {
    if xs.len() < 3 {
        return None;
    }
    correlation(&xs[..xs.len() - 1], &xs[1..])
}
