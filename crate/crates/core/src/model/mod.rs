//! Parameters and densities of the latent style allocation model.
//!
//! Each receiver `i` draws a style `k ~ pi_i`, the style draws a pattern
//! `m ~ theta_k`, and the pattern emits a location from a bivariate normal
//! whose mean is `(alpha_m + eta_r - delta_s) x`. Styles and patterns are
//! summed out exactly, so every density here is a finite log-sum-exp.

mod density;
mod emission;
mod stick;
pub mod unconstrained;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use density::{
    log_posterior_unnorm, log_prior, marginal_loglik, marginal_loglik_point, pointwise_loglik,
    LsaEvaluator,
};
pub use emission::{
    component_mean, mvn_logpdf, EffectMatrix, EmissionModel, GaussianComponent, Point,
    CHOLESKY_JITTER, DIM,
};
pub use stick::{stick_break, PatternSimplex, StickBreakingBetas};

pub(crate) use stick::{chain_to_unconstrained, log_theta, log_theta_weighted_grad};

/// One return impact.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnObservation {
    pub receiver: usize,
    pub server: usize,
    /// (lateral, depth) in meters.
    pub location: Point,
    pub covariates: DVector<f64>,
}

impl ReturnObservation {
    pub fn new(
        receiver: usize,
        server: usize,
        lateral: f64,
        depth: f64,
        covariates: Vec<f64>,
    ) -> Result<Self> {
        if !lateral.is_finite() || !depth.is_finite() {
            return Err(Error::InvalidObservation("non-finite location".into()));
        }
        if covariates.is_empty() || covariates.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation(
                "covariates must be non-empty and finite".into(),
            ));
        }
        Ok(Self {
            receiver,
            server,
            location: Point::new(lateral, depth),
            covariates: DVector::from_vec(covariates),
        })
    }

    pub fn lateral(&self) -> f64 {
        self.location[0]
    }

    pub fn depth(&self) -> f64 {
        self.location[1]
    }
}

/// Prior hyperparameters. Mean effects and offsets get independent
/// zero-mean normals, observation scales a half-Cauchy, correlations an LKJ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSettings {
    /// Symmetric Dirichlet concentration on every weight simplex.
    pub alpha0: f64,
    pub alpha_scale: f64,
    pub eta_scale: f64,
    pub delta_scale: f64,
    pub lkj_eta: f64,
    /// Scale of the half-Cauchy on covariance scales.
    pub scale_tau: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        Self {
            alpha0: 1.0,
            alpha_scale: 2.5,
            eta_scale: 2.5,
            delta_scale: 2.5,
            lkj_eta: 1.0,
            scale_tau: 2.0,
        }
    }
}

impl PriorSettings {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.alpha0,
            self.alpha_scale,
            self.eta_scale,
            self.delta_scale,
            self.lkj_eta,
            self.scale_tau,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("prior settings must be positive: {self:?}")))
        }
    }
}

/// Tolerance on row sums of a stored simplex.
pub const SIMPLEX_TOL: f64 = 1e-12;

pub(crate) fn check_simplex_rows(m: &DMatrix<f64>) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        let ok = row.iter().all(|v| (0.0..=1.0).contains(v))
            && (row.sum() - 1.0).abs() <= SIMPLEX_TOL * row.len().max(1) as f64;
        if !ok {
            return Err(Error::InvalidSimplex { row: i });
        }
    }
    Ok(())
}

/// R x K matrix; row `i` is receiver `i`'s distribution over styles.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSimplex {
    pi: DMatrix<f64>,
}

impl StyleSimplex {
    pub fn new(pi: DMatrix<f64>) -> Result<Self> {
        if pi.nrows() == 0 || pi.ncols() == 0 {
            return Err(Error::DimensionMismatch("empty style simplex".into()));
        }
        check_simplex_rows(&pi)?;
        Ok(Self { pi })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("ragged style rows".into()));
        }
        Self::new(DMatrix::from_fn(rows.len(), k, |i, j| rows[i][j]))
    }

    pub fn uniform(receivers: usize, styles: usize) -> Self {
        Self {
            pi: DMatrix::from_element(receivers, styles, 1.0 / styles as f64),
        }
    }

    pub fn pi(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.pi.row(i).iter().copied().collect()
    }

    pub fn receivers(&self) -> usize {
        self.pi.nrows()
    }

    pub fn styles(&self) -> usize {
        self.pi.ncols()
    }
}

/// Full parameter set of the latent style allocation model.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaParams {
    pub betas: StickBreakingBetas,
    pub pi: StyleSimplex,
    pub emission: EmissionModel,
    pub priors: PriorSettings,
}

impl LsaParams {
    pub fn new(
        betas: StickBreakingBetas,
        pi: StyleSimplex,
        emission: EmissionModel,
        priors: PriorSettings,
    ) -> Result<Self> {
        priors.validate()?;
        if betas.styles() != pi.styles() {
            return Err(Error::DimensionMismatch(format!(
                "{} styles in betas, {} in pi",
                betas.styles(),
                pi.styles()
            )));
        }
        if betas.patterns() != emission.n_patterns() {
            return Err(Error::DimensionMismatch(format!(
                "{} patterns in betas, {} components",
                betas.patterns(),
                emission.n_patterns()
            )));
        }
        if pi.receivers() != emission.n_receivers() {
            return Err(Error::DimensionMismatch(format!(
                "{} receivers in pi, {} receiver offsets",
                pi.receivers(),
                emission.n_receivers()
            )));
        }
        Ok(Self {
            betas,
            pi,
            emission,
            priors,
        })
    }

    /// Number of styles, K.
    pub fn styles(&self) -> usize {
        self.betas.styles()
    }

    /// Number of patterns, M.
    pub fn patterns(&self) -> usize {
        self.betas.patterns()
    }

    pub fn receivers(&self) -> usize {
        self.pi.receivers()
    }

    pub fn servers(&self) -> usize {
        self.emission.n_servers()
    }

    pub fn covariates(&self) -> usize {
        self.emission.n_covariates()
    }

    pub fn theta(&self) -> PatternSimplex {
        stick_break(&self.betas).expect("betas are validated at construction")
    }

    /// Receiver `i`'s marginal distribution over patterns,
    /// `sum_k pi[i][k] theta[k][.]`.
    pub fn pattern_weights(&self, receiver: usize) -> Vec<f64> {
        let theta = self.theta();
        let m = self.patterns();
        (0..m)
            .map(|p| {
                (0..self.styles())
                    .map(|k| self.pi.pi()[(receiver, k)] * theta.get(k, p))
                    .sum()
            })
            .collect()
    }

    /// Pattern weights averaged over receivers.
    pub fn tour_pattern_weights(&self) -> Vec<f64> {
        let r = self.receivers() as f64;
        let mut acc = vec![0.0; self.patterns()];
        for i in 0..self.receivers() {
            for (a, w) in acc.iter_mut().zip(self.pattern_weights(i)) {
                *a += w / r;
            }
        }
        acc
    }
}
