//! Scalar helpers shared by the density code.

use std::f64::consts::PI;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Numerically stable `log(sum(exp(xs)))`. Returns `-inf` for an empty slice
/// or when every entry is `-inf`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + sum.ln()
}

/// Logistic function, evaluated without overflow for large |x|.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(inv_logit(x))`.
pub fn log_inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log(1 - inv_logit(x))`.
pub fn log1m_inv_logit(x: f64) -> f64 {
    log_inv_logit(-x)
}

pub fn ln_gamma(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// `ln(n!)`.
pub fn ln_factorial(n: usize) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

/// Log density of `N(0, scale^2)` at `x`.
pub fn normal_logpdf(x: f64, scale: f64) -> f64 {
    let z = x / scale;
    -0.5 * LN_2PI - scale.ln() - 0.5 * z * z
}

/// Log density of the half-Cauchy (Student-t with one degree of freedom,
/// truncated to the positive line) with the given scale.
pub fn half_cauchy_logpdf(x: f64, scale: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let z = x / scale;
    (2.0 / (PI * scale)).ln() - (z * z).ln_1p()
}

/// LKJ log density of a 2x2 correlation matrix with off-diagonal `rho`,
/// normalized over `rho in (-1, 1)`.
pub fn lkj2_logpdf(rho: f64, shape: f64) -> f64 {
    if rho.abs() >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * (1.0 - rho * rho).ln()
        - (2.0 * shape - 1.0) * std::f64::consts::LN_2
        - ln_beta(shape, shape)
}

/// Dirichlet log density with symmetric concentration `alpha0`.
///
/// Zero entries are admitted when `alpha0 == 1` (the term vanishes) and give
/// `-inf` / `+inf` for `alpha0 > 1` / `alpha0 < 1`.
pub fn dirichlet_logpdf(p: &[f64], alpha0: f64) -> f64 {
    let k = p.len() as f64;
    let mut lp = ln_gamma(k * alpha0) - k * ln_gamma(alpha0);
    if alpha0 != 1.0 {
        lp += (alpha0 - 1.0) * p.iter().map(|v| v.ln()).sum::<f64>();
    }
    lp
}
