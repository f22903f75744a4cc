use nalgebra::DMatrix;
use rayon::prelude::*;

use super::{check_simplex_rows, log_theta, LsaParams, ReturnObservation, StickBreakingBetas};
use crate::error::{Error, Result};
use crate::math::{dirichlet_logpdf, ln_factorial, log_sum_exp, normal_logpdf};

/// Precomputed log weights for repeated density evaluation against one
/// parameter set.
pub struct LsaEvaluator<'a> {
    params: &'a LsaParams,
    log_pi: DMatrix<f64>,
    log_theta: DMatrix<f64>,
}

impl<'a> LsaEvaluator<'a> {
    pub fn new(params: &'a LsaParams) -> Self {
        Self {
            params,
            log_pi: params.pi.pi().map(f64::ln),
            log_theta: log_theta(&params.betas),
        }
    }

    pub fn params(&self) -> &LsaParams {
        self.params
    }

    /// Number of joint latent states, K * M.
    pub fn n_latent(&self) -> usize {
        self.params.styles() * self.params.patterns()
    }

    /// `log(pi[i][k] theta[k][m] N(y; mu_m, Sigma_m))` at flat index
    /// `k * M + m`. `scratch` must hold M values.
    pub fn log_joint(&self, obs: &ReturnObservation, scratch: &mut [f64], out: &mut [f64]) {
        let (k_n, m_n) = (self.params.styles(), self.params.patterns());
        self.params.emission.component_logpdfs(obs, scratch);
        for k in 0..k_n {
            let lp = self.log_pi[(obs.receiver, k)];
            for m in 0..m_n {
                out[k * m_n + m] = lp + self.log_theta[(k, m)] + scratch[m];
            }
        }
    }

    pub fn loglik_point(&self, obs: &ReturnObservation) -> Result<f64> {
        self.params.emission.check_observation(obs)?;
        let mut scratch = vec![0.0; self.params.patterns()];
        let mut joint = vec![0.0; self.n_latent()];
        self.log_joint(obs, &mut scratch, &mut joint);
        Ok(log_sum_exp(&joint))
    }
}

/// Log marginal likelihood of one observation, styles and patterns summed
/// out over the K x M grid.
pub fn marginal_loglik_point(params: &LsaParams, obs: &ReturnObservation) -> Result<f64> {
    LsaEvaluator::new(params).loglik_point(obs)
}

/// Per-observation log marginal likelihoods, in data order.
pub fn pointwise_loglik(params: &LsaParams, data: &[ReturnObservation]) -> Result<Vec<f64>> {
    let eval = LsaEvaluator::new(params);
    data.par_iter().map(|o| eval.loglik_point(o)).collect()
}

/// Sum of [`marginal_loglik_point`] over the data. The sum is taken
/// sequentially in data order whatever the thread count.
pub fn marginal_loglik(params: &LsaParams, data: &[ReturnObservation]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    Ok(pointwise_loglik(params, data)?.iter().sum())
}

/// Standard normal on every stick value, normalized over the ordered
/// region (a factor K! per column).
pub(crate) fn betas_log_prior(betas: &StickBreakingBetas) -> f64 {
    let cols = betas.patterns() - 1;
    betas.values().iter().map(|b| normal_logpdf(*b, 1.0)).sum::<f64>()
        + cols as f64 * ln_factorial(betas.styles())
}

pub(crate) fn simplex_rows_log_prior(rows: &DMatrix<f64>, alpha0: f64) -> Result<f64> {
    check_simplex_rows(rows)?;
    Ok(rows
        .row_iter()
        .map(|r| dirichlet_logpdf(&r.iter().copied().collect::<Vec<_>>(), alpha0))
        .sum())
}

/// Log prior density of every parameter, normalizing constants included.
pub fn log_prior(params: &LsaParams) -> Result<f64> {
    Ok(betas_log_prior(&params.betas)
        + simplex_rows_log_prior(params.pi.pi(), params.priors.alpha0)?
        + params.emission.log_prior(&params.priors))
}

/// `marginal_loglik + log_prior`, the objective maximized by the fitter.
pub fn log_posterior_unnorm(params: &LsaParams, data: &[ReturnObservation]) -> Result<f64> {
    Ok(marginal_loglik(params, data)? + log_prior(params)?)
}
