//! Pareto smoothing of importance weights.

use crate::error::{Error, Result};

/// Number of tail weights replaced for `s` weights:
/// `min(ceil(0.2 s), ceil(3 sqrt(s)))`.
pub fn tail_length(s: usize) -> usize {
    let a = (0.2 * s as f64).ceil() as usize;
    let b = (3.0 * (s as f64).sqrt()).ceil() as usize;
    a.min(b)
}

/// `mean(log(1 + b x))`, the shape estimate for a fixed `b = shape / scale`.
fn shape_given(b: f64, x: &[f64]) -> f64 {
    x.iter().map(|v| (b * v).ln_1p()).sum::<f64>() / x.len() as f64
}

/// Profile log likelihood of the generalized Pareto distribution in
/// `b = shape / scale`, with the shape maximized out.
fn profile(b: f64, x: &[f64]) -> f64 {
    let n = x.len() as f64;
    if b.abs() < 1e-300 {
        // exponential limit
        let mean = x.iter().sum::<f64>() / n;
        return -n * (mean.ln() + 1.0);
    }
    if x.iter().any(|v| 1.0 + b * v <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let k = shape_given(b, x);
    let ratio = b / k;
    if !(ratio > 0.0) {
        return f64::NEG_INFINITY;
    }
    n * (ratio.ln() - 1.0 - k)
}

/// Fitted generalized Pareto `(shape, scale)` for positive exceedances,
/// by profile likelihood: a fixed grid over `shape / scale` followed by a
/// golden-section refinement to 1e-8.
pub fn fit_gpd(x: &[f64]) -> (f64, f64) {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let x_max = sorted[n - 1];
    let q_index = (((n as f64) / 4.0 + 0.5).floor() as usize).max(1) - 1;
    let quartile = sorted[q_index].max(f64::MIN_POSITIVE);
    let m = 30 + (n as f64).sqrt().floor() as usize;
    let grid: Vec<f64> = (1..=m)
        .map(|j| {
            let theta = 1.0 / x_max + (1.0 - (m as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * quartile);
            -theta
        })
        .collect();
    let values: Vec<f64> = grid.iter().map(|b| profile(*b, &sorted)).collect();
    let best = (0..m)
        .max_by(|&a, &b| values[a].total_cmp(&values[b]).then(b.cmp(&a)))
        .expect("grid is non-empty");
    let lo = if best > 0 { grid[best - 1] } else { grid[best] };
    let hi = if best + 1 < m { grid[best + 1] } else { grid[best] };
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| profile(t, &sorted);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > 1e-8 * (1.0 + a.abs().max(b.abs())) {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    let mid = 0.5 * (a + b);
    let b_hat = if f(mid) >= values[best] { mid } else { grid[best] };
    if b_hat.abs() < 1e-300 {
        return (0.0, sorted.iter().sum::<f64>() / n as f64);
    }
    let shape = shape_given(b_hat, &sorted);
    (shape, shape / b_hat)
}

/// Quantile function of the generalized Pareto distribution.
pub fn gpd_quantile(p: f64, shape: f64, scale: f64) -> f64 {
    if shape.abs() < 1e-12 {
        -scale * (-p).ln_1p()
    } else {
        scale / shape * ((1.0 - p).powf(-shape) - 1.0)
    }
}

/// Pareto-smoothed log weights and the fitted tail shape `k`.
///
/// The largest `tail_length(S)` weights are replaced by expected order
/// statistics of a generalized Pareto distribution fitted to their
/// exceedances over the largest remaining weight, and every weight is
/// capped at the raw maximum. When all weights are equal they are
/// returned unchanged with `k = -inf`.
pub fn psis_smooth(log_weights: &[f64]) -> Result<(Vec<f64>, f64)> {
    let s = log_weights.len();
    if s < 5 {
        return Err(Error::TooFewWeights(s));
    }
    if log_weights.iter().any(|w| w.is_nan()) {
        return Err(Error::InvalidConfig("log weights contain NaN".into()));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = log_weights.iter().copied().fold(f64::INFINITY, f64::min);
    if max == min {
        return Ok((log_weights.to_vec(), f64::NEG_INFINITY));
    }
    let l = tail_length(s);
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| log_weights[a].total_cmp(&log_weights[b]).then(a.cmp(&b)));
    let tail = &order[s - l..];
    let cutoff = log_weights[order[s - l - 1]] - max;
    let exceed: Vec<f64> = tail
        .iter()
        .map(|&i| (log_weights[i] - max).exp() - cutoff.exp())
        .collect();
    if exceed.iter().all(|x| *x <= 0.0) {
        return Ok((log_weights.to_vec(), f64::NEG_INFINITY));
    }
    let positive: Vec<f64> = exceed.iter().map(|x| x.max(f64::MIN_POSITIVE)).collect();
    let (shape, scale) = fit_gpd(&positive);
    let mut out = log_weights.to_vec();
    for (rank, &i) in tail.iter().enumerate() {
        let p = (rank as f64 + 0.5) / l as f64;
        let v = (gpd_quantile(p, shape, scale) + cutoff.exp()).ln().min(0.0);
        out[i] = v + max;
    }
    Ok((out, shape))
}
