//! Penalized EM fitting of the latent style allocation model.
//!
//! The objective is the marginal log likelihood plus the log prior. Each
//! iteration computes responsibilities over the joint (style, pattern)
//! states, updates the style simplexes in closed form, the stick values by
//! an inner BFGS solve, and the Gaussian parameters by block coordinate
//! ascent. When an EM step fails to improve the objective, a gradient
//! ascent step on the same objective is tried instead.

pub(crate) mod engine;
pub(crate) mod init;
mod mstep;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::unconstrained::{from_unconstrained, log_posterior_with_gradient, to_unconstrained};
use crate::model::{
    chain_to_unconstrained, log_prior, log_theta, log_theta_weighted_grad, EmissionModel, LsaParams, PriorSettings,
    ReturnObservation, StickBreakingBetas, StyleSimplex,
};
use crate::optim::maximize;

use engine::{EmModel, LogWeights};
pub use engine::MONOTONE_SLACK;
pub use mstep::{m_step_gaussians, GaussianStepOptions};

/// Posterior probabilities of the joint latent states, one row per
/// observation; entry `(n, k * patterns + m)` is the probability that
/// observation `n` came from style `k` and pattern `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub(crate) styles: usize,
    pub(crate) patterns: usize,
    pub(crate) values: Vec<f64>,
}

impl Responsibilities {
    /// Build from explicit rows. Each row must have `styles * patterns`
    /// non-negative entries summing to one within 1e-10.
    pub fn from_rows(styles: usize, patterns: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let l = styles * patterns;
        let mut values = Vec::with_capacity(rows.len() * l);
        for (n, row) in rows.iter().enumerate() {
            if row.len() != l {
                return Err(Error::DimensionMismatch(format!("row {n} has {} entries, expected {l}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-10 {
                return Err(Error::InvalidSimplex { row: n });
            }
            values.extend_from_slice(row);
        }
        Ok(Self { styles, patterns, values })
    }

    pub fn len(&self) -> usize {
        self.values.len() / (self.styles * self.patterns)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn styles(&self) -> usize {
        self.styles
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn get(&self, n: usize, k: usize, m: usize) -> f64 {
        self.values[(n * self.styles + k) * self.patterns + m]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let l = self.styles * self.patterns;
        &self.values[n * l..(n + 1) * l]
    }

    /// Per-observation pattern probabilities (summed over styles), flat
    /// `N x M` row-major.
    pub fn pattern_matrix(&self) -> Vec<f64> {
        let (k_n, m_n) = (self.styles, self.patterns);
        let mut out = vec![0.0; self.len() * m_n];
        for n in 0..self.len() {
            let row = self.row(n);
            for k in 0..k_n {
                for m in 0..m_n {
                    out[n * m_n + m] += row[k * m_n + m];
                }
            }
        }
        out
    }

    /// Total responsibility of every pattern.
    pub fn pattern_totals(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.patterns];
        for chunk in self.pattern_matrix().chunks(self.patterns) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out
    }

    /// Expected `(style, pattern)` counts, `K x M`.
    pub fn joint_counts(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.styles, self.patterns);
        for n in 0..self.len() {
            for k in 0..self.styles {
                for m in 0..self.patterns {
                    out[(k, m)] += self.get(n, k, m);
                }
            }
        }
        out
    }
}

/// How each restart chooses its starting parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InitScheme {
    /// k-means++ on the locations with `K * M` centers, merged into `M`
    /// patterns by Ward linkage.
    #[default]
    KMeansPatternMeans,
    /// Sticks, style simplexes and pattern effects drawn from the prior;
    /// covariances set to the pooled location covariance.
    PriorDraw,
    /// Every restart starts from these parameters.
    UserSupplied(Box<LsaParams>),
}

/// Inner optimizer settings for the stick and covariance updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerOptConfig {
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for InnerOptConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            grad_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Stop when the relative change of the penalized objective falls below
    /// this.
    pub rel_tol: f64,
    pub n_restarts: usize,
    pub init: InitScheme,
    pub inner: InnerOptConfig,
    pub seed: u64,
    pub priors: PriorSettings,
    /// Hold receiver and server offsets at zero (or at the supplied start).
    pub fix_offsets: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            rel_tol: 1e-7,
            n_restarts: 5,
            init: InitScheme::default(),
            inner: InnerOptConfig::default(),
            seed: 0,
            priors: PriorSettings::default(),
            fix_offsets: false,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || self.n_restarts == 0 || self.inner.max_iters == 0 {
            return Err(Error::InvalidConfig("iteration and restart counts must be positive".into()));
        }
        if !(self.rel_tol > 0.0 && self.inner.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("tolerances must be positive".into()));
        }
        self.priors.validate()
    }
}

/// Result of a fit: the best restart's parameters and diagnostics.
#[derive(Debug, Clone)]
pub struct FitReport<P = LsaParams> {
    pub params: P,
    /// Penalized objective after every accepted iteration, starting with the
    /// initial value.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub n_iters: usize,
    pub responsibilities: Responsibilities,
    pub per_point_loglik: Vec<f64>,
    /// Final objective of every restart in restart order; `NaN` marks a
    /// restart that failed numerically.
    pub restart_objectives: Vec<f64>,
    /// Objective trace of every restart; empty for a failed restart.
    pub restart_traces: Vec<Vec<f64>>,
    /// Iterations of the best restart that used the gradient fallback.
    pub fallback_steps: usize,
}

impl<P> FitReport<P> {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }

    pub fn loglik(&self) -> f64 {
        self.per_point_loglik.iter().sum()
    }

    pub fn map_assignments(&self) -> Vec<(usize, usize)> {
        map_pattern_assignments(&self.responsibilities)
    }
}

/// Responsibilities of every joint state under `params`.
pub fn e_step(params: &LsaParams, data: &[ReturnObservation]) -> Result<Responsibilities> {
    engine::expectation(params, data).map(|(r, _)| r)
}

/// MAP update of the style simplexes:
/// `pi[i][k] ∝ max(counts[i][k] + alpha0 - 1, 0)`.
pub fn m_step_pi(
    resp: &Responsibilities,
    data: &[ReturnObservation],
    receivers: usize,
    alpha0: f64,
) -> Result<StyleSimplex> {
    if resp.len() != data.len() {
        return Err(Error::DimensionMismatch("responsibilities and data differ in length".into()));
    }
    let k_n = resp.styles;
    let mut counts = DMatrix::<f64>::zeros(receivers, k_n);
    let mut seen = vec![false; receivers];
    for (n, obs) in data.iter().enumerate() {
        if obs.receiver >= receivers {
            return Err(Error::DimensionMismatch(format!("receiver {} out of range", obs.receiver)));
        }
        seen[obs.receiver] = true;
        for k in 0..k_n {
            counts[(obs.receiver, k)] += (0..resp.patterns).map(|m| resp.get(n, k, m)).sum::<f64>();
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::AllZeroRow { receiver: i });
    }
    let mut pi = DMatrix::zeros(receivers, k_n);
    for i in 0..receivers {
        let raw: Vec<f64> = (0..k_n).map(|k| (counts[(i, k)] + alpha0 - 1.0).max(0.0)).collect();
        let total: f64 = raw.iter().sum();
        for k in 0..k_n {
            pi[(i, k)] = if total > 0.0 {
                raw[k] / total
            } else {
                counts[(i, k)] / counts.row(i).sum()
            };
        }
    }
    StyleSimplex::new(pi)
}

/// Maximize `sum counts[k][m] log theta[k][m] + log prior(beta)` over
/// ordered sticks, starting from `betas`.
pub fn m_step_theta(
    resp: &Responsibilities,
    betas: &StickBreakingBetas,
    inner: &InnerOptConfig,
) -> Result<StickBreakingBetas> {
    if resp.styles != betas.styles() || resp.patterns != betas.patterns() {
        return Err(Error::DimensionMismatch("responsibilities do not match the sticks".into()));
    }
    if betas.n_free() == 0 {
        return Ok(betas.clone());
    }
    let counts = resp.joint_counts();
    let (k_n, m_n) = (betas.styles(), betas.patterns());
    let f = |u: &[f64]| {
        let b = StickBreakingBetas::from_unconstrained(k_n, m_n, u).ok()?;
        let lt = log_theta(&b);
        let value = counts.component_mul(&lt).sum() - 0.5 * b.values().norm_squared();
        if !value.is_finite() {
            return None;
        }
        let mut g = log_theta_weighted_grad(&b, &counts);
        g -= b.values();
        Some((value, chain_to_unconstrained(&b, &g)))
    };
    let u0 = betas.to_unconstrained();
    let best = maximize(f, &u0, inner.max_iters, inner.grad_tol)
        .ok_or_else(|| Error::InnerOptFailure("stick objective undefined at the current values".into()))?;
    StickBreakingBetas::from_unconstrained(k_n, m_n, &best.x)
}

/// Most probable `(style, pattern)` of every observation; ties go to the
/// lexicographically smallest pair.
pub fn map_pattern_assignments(resp: &Responsibilities) -> Vec<(usize, usize)> {
    (0..resp.len())
        .map(|n| {
            let row = resp.row(n);
            let mut best = 0;
            for (l, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = l;
                }
            }
            (best / resp.patterns, best % resp.patterns)
        })
        .collect()
}

/// Receiver and server counts implied by the largest indices in `data`.
pub fn roster_sizes(data: &[ReturnObservation]) -> (usize, usize) {
    let r = data.iter().map(|o| o.receiver + 1).max().unwrap_or(0);
    let s = data.iter().map(|o| o.server + 1).max().unwrap_or(0);
    (r, s)
}

/// Fit with `styles` styles and `patterns` patterns, sizing the rosters
/// from the data.
pub fn fit(data: &[ReturnObservation], styles: usize, patterns: usize, cfg: &FitConfig) -> Result<FitReport> {
    let (r, s) = roster_sizes(data);
    fit_sized(data, styles, patterns, r, s, cfg)
}

/// Fit with explicit roster sizes. Every receiver in `0..receivers` must
/// have at least one observation.
pub fn fit_sized(
    data: &[ReturnObservation],
    styles: usize,
    patterns: usize,
    receivers: usize,
    servers: usize,
    cfg: &FitConfig,
) -> Result<FitReport> {
    if styles == 0 || patterns == 0 {
        return Err(Error::InvalidConfig("styles and patterns must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (r_max, s_max) = roster_sizes(data);
    if r_max > receivers || s_max > servers {
        return Err(Error::DimensionMismatch("observation index exceeds roster size".into()));
    }
    let p = data[0].covariates.len();
    if let InitScheme::UserSupplied(start) = &cfg.init {
        if start.styles() != styles
            || start.patterns() != patterns
            || start.receivers() != receivers
            || start.servers() != servers
            || start.covariates() != p
        {
            return Err(Error::DimensionMismatch("supplied start does not match the requested shape".into()));
        }
    }
    let shape = init::Shape {
        styles,
        patterns,
        receivers,
        servers,
        covariates: p,
    };
    engine::fit_with_restarts(data, cfg, |restart| match &cfg.init {
        InitScheme::KMeansPatternMeans => init::kmeans_start(data, &shape, &cfg.priors, cfg.seed, restart, cfg),
        InitScheme::PriorDraw => init::prior_start(data, &shape, &cfg.priors, cfg.seed, restart),
        InitScheme::UserSupplied(start) => {
            let mut p = (**start).clone();
            p.priors = cfg.priors;
            Ok(p)
        }
    })
}

impl EmModel for LsaParams {
    fn styles(&self) -> usize {
        LsaParams::styles(self)
    }

    fn patterns(&self) -> usize {
        LsaParams::patterns(self)
    }

    fn emission(&self) -> &EmissionModel {
        &self.emission
    }

    fn emission_mut(&mut self) -> &mut EmissionModel {
        &mut self.emission
    }

    fn priors(&self) -> &PriorSettings {
        &self.priors
    }

    fn log_weights(&self) -> LogWeights {
        let lt = log_theta(&self.betas);
        let (k_n, m_n) = (LsaParams::styles(self), LsaParams::patterns(self));
        let pi = self.pi.pi();
        let table = DMatrix::from_fn(self.receivers(), k_n * m_n, |i, l| pi[(i, l / m_n)].ln() + lt[(l / m_n, l % m_n)]);
        LogWeights { table, patterns: m_n }
    }

    fn log_prior(&self) -> Result<f64> {
        log_prior(self)
    }

    fn update_weights(&mut self, resp: &Responsibilities, data: &[ReturnObservation], cfg: &FitConfig) -> Result<()> {
        self.pi = m_step_pi(resp, data, self.receivers(), self.priors.alpha0)?;
        match m_step_theta(resp, &self.betas, &cfg.inner) {
            Ok(b) => self.betas = b,
            Err(Error::InnerOptFailure(_)) => {}
            Err(e) => return Err(e),
        }
        Ok(())
    }

    fn fallback_step(&self, data: &[ReturnObservation], objective: f64) -> Option<(Self, f64)> {
        let u0 = to_unconstrained(self);
        if u0.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let (_, g) = log_posterior_with_gradient(self, data).ok()?;
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(gn > 0.0 && gn.is_finite()) {
            return None;
        }
        let mut step = 1.0 / gn;
        for _ in 0..40 {
            let u: Vec<f64> = u0.iter().zip(&g).map(|(a, b)| a + step * b).collect();
            if let Ok(cand) = from_unconstrained(self, &u) {
                if let Ok((v, _)) = log_posterior_with_gradient(&cand, data) {
                    if v.is_finite() && v > objective {
                        return Some((cand, v));
                    }
                }
            }
            step *= 0.5;
        }
        None
    }
}

#[cfg(test)]
mod tests;
