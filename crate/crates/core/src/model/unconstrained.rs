//! Flat unconstrained coordinates for [`LsaParams`] and the analytic
//! gradient of the log posterior in those coordinates.
//!
//! Layout, in order:
//! - stick values, column by column: first value then log increments;
//! - style simplexes, per receiver: K-1 log ratios against the last style;
//! - `alpha_m`, `eta_r`, `delta_s`, each flattened row-major (2 x P);
//! - per component: `log s_1`, `log s_2`, `atanh(rho)`.
//!
//! The objective is the density of the natural parameters; no Jacobian
//! term is added for the change of variables.

use nalgebra::DMatrix;

use super::density::{log_prior, LsaEvaluator};
use super::{
    chain_to_unconstrained, log_theta_weighted_grad, EffectMatrix, EmissionModel,
    GaussianComponent, LsaParams, ReturnObservation, StickBreakingBetas, StyleSimplex,
};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::par::blocked_reduce;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub styles: usize,
    pub patterns: usize,
    pub receivers: usize,
    pub servers: usize,
    pub covariates: usize,
}

impl Layout {
    pub fn of(params: &LsaParams) -> Self {
        Self {
            styles: params.styles(),
            patterns: params.patterns(),
            receivers: params.receivers(),
            servers: params.servers(),
            covariates: params.covariates(),
        }
    }

    fn effect_len(&self) -> usize {
        2 * self.covariates
    }

    pub fn beta_offset(&self) -> usize {
        0
    }

    pub fn pi_offset(&self) -> usize {
        self.styles * (self.patterns - 1)
    }

    pub fn alpha_offset(&self) -> usize {
        self.pi_offset() + self.receivers * (self.styles - 1)
    }

    pub fn eta_offset(&self) -> usize {
        self.alpha_offset() + self.patterns * self.effect_len()
    }

    pub fn delta_offset(&self) -> usize {
        self.eta_offset() + self.receivers * self.effect_len()
    }

    pub fn cov_offset(&self) -> usize {
        self.delta_offset() + self.servers * self.effect_len()
    }

    pub fn len(&self) -> usize {
        self.cov_offset() + 3 * self.patterns
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Human-readable name of coordinate `i`.
    pub fn label(&self, i: usize) -> String {
        let e = self.effect_len();
        if i < self.pi_offset() {
            let (m, k) = (i / self.styles, i % self.styles);
            format!("beta[col {m}, u{k}]")
        } else if i < self.alpha_offset() {
            let j = i - self.pi_offset();
            let k1 = self.styles - 1;
            format!("pi[{}, z{}]", j / k1, j % k1)
        } else if i < self.eta_offset() {
            let j = i - self.alpha_offset();
            format!("alpha[{}][{}]", j / e, j % e)
        } else if i < self.delta_offset() {
            let j = i - self.eta_offset();
            format!("eta[{}][{}]", j / e, j % e)
        } else if i < self.cov_offset() {
            let j = i - self.delta_offset();
            format!("delta[{}][{}]", j / e, j % e)
        } else {
            let j = i - self.cov_offset();
            let name = ["log_s1", "log_s2", "atanh_rho"][j % 3];
            format!("sigma[{}].{name}", j / 3)
        }
    }
}

fn push_effect(out: &mut Vec<f64>, m: &EffectMatrix) {
    for d in 0..2 {
        for p in 0..m.ncols() {
            out.push(m[(d, p)]);
        }
    }
}

fn read_effect(u: &[f64], p: usize) -> EffectMatrix {
    EffectMatrix::from_row_slice(&u[..2 * p])
}

pub fn to_unconstrained(params: &LsaParams) -> Vec<f64> {
    let layout = Layout::of(params);
    let mut out = Vec::with_capacity(layout.len());
    out.extend(params.betas.to_unconstrained());
    let k = layout.styles;
    for row in params.pi.pi().row_iter() {
        let last = row[k - 1].ln();
        for j in 0..k - 1 {
            out.push(row[j].ln() - last);
        }
    }
    for c in params.emission.components() {
        push_effect(&mut out, c.alpha());
    }
    for e in params.emission.eta() {
        push_effect(&mut out, e);
    }
    for d in params.emission.delta() {
        push_effect(&mut out, d);
    }
    for c in params.emission.components() {
        let s = c.scales();
        out.push(s[0].ln());
        out.push(s[1].ln());
        out.push(c.corr().atanh());
    }
    out
}

/// Rebuild parameters from coordinates; shapes and priors come from
/// `template`.
pub fn from_unconstrained(template: &LsaParams, u: &[f64]) -> Result<LsaParams> {
    let l = Layout::of(template);
    if u.len() != l.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} coordinates, got {}",
            l.len(),
            u.len()
        )));
    }
    let betas = StickBreakingBetas::from_unconstrained(l.styles, l.patterns, &u[..l.pi_offset()])?;
    let k = l.styles;
    let mut pi = DMatrix::zeros(l.receivers, k);
    for i in 0..l.receivers {
        let z = &u[l.pi_offset() + i * (k - 1)..l.pi_offset() + (i + 1) * (k - 1)];
        let mut logits: Vec<f64> = z.to_vec();
        logits.push(0.0);
        let lse = log_sum_exp(&logits);
        for j in 0..k {
            pi[(i, j)] = (logits[j] - lse).exp();
        }
    }
    let pi = StyleSimplex::new(pi)?;
    let e = l.effect_len();
    let p = l.covariates;
    let mut components = Vec::with_capacity(l.patterns);
    for m in 0..l.patterns {
        let alpha = read_effect(&u[l.alpha_offset() + m * e..], p);
        let c = &u[l.cov_offset() + 3 * m..l.cov_offset() + 3 * m + 3];
        components.push(GaussianComponent::new(alpha, [c[0].exp(), c[1].exp()], c[2].tanh())?);
    }
    let eta = (0..l.receivers)
        .map(|r| read_effect(&u[l.eta_offset() + r * e..], p))
        .collect();
    let delta = (0..l.servers)
        .map(|s| read_effect(&u[l.delta_offset() + s * e..], p))
        .collect();
    LsaParams::new(betas, pi, EmissionModel::new(components, eta, delta)?, template.priors)
}

/// Likelihood-side sufficient quantities for the gradient, accumulated
/// block by block.
struct GradAcc {
    loglik: f64,
    /// K x M expected joint counts.
    counts: DMatrix<f64>,
    /// R x K: sum over the receiver's points of (style resp - pi).
    pi_grad: DMatrix<f64>,
    alpha: Vec<f64>,
    eta: Vec<f64>,
    delta: Vec<f64>,
    /// per component d/dL entries (L00, L10, L11)
    chol: Vec<[f64; 3]>,
}

impl GradAcc {
    fn zeros(l: &Layout) -> Self {
        let e = l.effect_len();
        Self {
            loglik: 0.0,
            counts: DMatrix::zeros(l.styles, l.patterns),
            pi_grad: DMatrix::zeros(l.receivers, l.styles),
            alpha: vec![0.0; l.patterns * e],
            eta: vec![0.0; l.receivers * e],
            delta: vec![0.0; l.servers * e],
            chol: vec![[0.0; 3]; l.patterns],
        }
    }

    fn merge(mut self, o: Self) -> Self {
        self.loglik += o.loglik;
        self.counts += o.counts;
        self.pi_grad += o.pi_grad;
        for (a, b) in self.alpha.iter_mut().zip(o.alpha) {
            *a += b;
        }
        for (a, b) in self.eta.iter_mut().zip(o.eta) {
            *a += b;
        }
        for (a, b) in self.delta.iter_mut().zip(o.delta) {
            *a += b;
        }
        for (a, b) in self.chol.iter_mut().zip(o.chol) {
            for i in 0..3 {
                a[i] += b[i];
            }
        }
        self
    }
}

/// Log posterior and its gradient with respect to the unconstrained
/// coordinates.
pub fn log_posterior_with_gradient(
    params: &LsaParams,
    data: &[ReturnObservation],
) -> Result<(f64, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for obs in data {
        params.emission.check_observation(obs)?;
    }
    let l = Layout::of(params);
    let eval = LsaEvaluator::new(params);
    let (k_n, m_n, p) = (l.styles, l.patterns, l.covariates);
    let e = l.effect_len();
    let pi = params.pi.pi();
    let emission = &params.emission;

    let acc = blocked_reduce(
        data.len(),
        |range| {
            let mut acc = GradAcc::zeros(&l);
            let mut scratch = vec![0.0; m_n];
            let mut joint = vec![0.0; k_n * m_n];
            for obs in &data[range] {
                eval.log_joint(obs, &mut scratch, &mut joint);
                let lse = log_sum_exp(&joint);
                acc.loglik += lse;
                let mut w = vec![0.0; m_n];
                for k in 0..k_n {
                    let mut style = 0.0;
                    for m in 0..m_n {
                        let r = (joint[k * m_n + m] - lse).exp();
                        acc.counts[(k, m)] += r;
                        w[m] += r;
                        style += r;
                    }
                    acc.pi_grad[(obs.receiver, k)] += style - pi[(obs.receiver, k)];
                }
                let offset = emission.offset_mean(obs);
                for (m, comp) in emission.components().iter().enumerate() {
                    if w[m] == 0.0 {
                        continue;
                    }
                    let lc = comp.sigma_chol();
                    let mu = comp.alpha() * &obs.covariates + offset;
                    let d = obs.location - mu;
                    let v0 = d[0] / lc[(0, 0)];
                    let v1 = (d[1] - lc[(1, 0)] * v0) / lc[(1, 1)];
                    let u1 = v1 / lc[(1, 1)];
                    let u0 = (v0 - lc[(1, 0)] * u1) / lc[(0, 0)];
                    let g = &mut acc.chol[m];
                    g[0] += w[m] * (u0 * v0 - 1.0 / lc[(0, 0)]);
                    g[1] += w[m] * (u1 * v0);
                    g[2] += w[m] * (u1 * v1 - 1.0 / lc[(1, 1)]);
                    let uu = [u0, u1];
                    for dd in 0..2 {
                        for pp in 0..p {
                            let gv = w[m] * uu[dd] * obs.covariates[pp];
                            acc.alpha[m * e + dd * p + pp] += gv;
                            acc.eta[obs.receiver * e + dd * p + pp] += gv;
                            acc.delta[obs.server * e + dd * p + pp] -= gv;
                        }
                    }
                }
            }
            acc
        },
        GradAcc::merge,
    )
    .expect("data is non-empty");

    let value = acc.loglik + log_prior(params)?;
    let priors = &params.priors;
    let mut grad = vec![0.0; l.len()];

    // sticks
    let mut g_beta = log_theta_weighted_grad(&params.betas, &acc.counts);
    g_beta -= params.betas.values();
    let g_u = chain_to_unconstrained(&params.betas, &g_beta);
    grad[..l.pi_offset()].copy_from_slice(&g_u);

    // style simplexes
    for i in 0..l.receivers {
        for j in 0..k_n - 1 {
            let mut g = acc.pi_grad[(i, j)];
            if priors.alpha0 != 1.0 {
                g += (priors.alpha0 - 1.0) * (1.0 - k_n as f64 * pi[(i, j)]);
            }
            grad[l.pi_offset() + i * (k_n - 1) + j] = g;
        }
    }

    // mean effects
    let effect_grad = |out: &mut [f64], lik: &[f64], mats: &[EffectMatrix], scale: f64| {
        let inv = 1.0 / (scale * scale);
        for (idx, mat) in mats.iter().enumerate() {
            for dd in 0..2 {
                for pp in 0..p {
                    let j = idx * e + dd * p + pp;
                    out[j] = lik[j] - mat[(dd, pp)] * inv;
                }
            }
        }
    };
    let alphas: Vec<EffectMatrix> = emission.components().iter().map(|c| c.alpha().clone()).collect();
    effect_grad(&mut grad[l.alpha_offset()..l.eta_offset()], &acc.alpha, &alphas, priors.alpha_scale);
    effect_grad(&mut grad[l.eta_offset()..l.delta_offset()], &acc.eta, emission.eta(), priors.eta_scale);
    effect_grad(&mut grad[l.delta_offset()..l.cov_offset()], &acc.delta, emission.delta(), priors.delta_scale);

    // covariances
    for (m, comp) in emission.components().iter().enumerate() {
        let [s1, s2] = comp.scales();
        let rho = comp.corr();
        let c = (1.0 - rho * rho).sqrt();
        let g = acc.chol[m];
        let hc = |s: f64| {
            let z2 = (s / priors.scale_tau).powi(2);
            -2.0 * z2 / (1.0 + z2)
        };
        let base = l.cov_offset() + 3 * m;
        grad[base] = g[0] * s1 + hc(s1);
        grad[base + 1] = g[1] * s2 * rho + g[2] * s2 * c + hc(s2);
        grad[base + 2] = g[1] * s2 * (1.0 - rho * rho) - g[2] * s2 * rho * c
            - 2.0 * rho * (priors.lkj_eta - 1.0);
    }

    Ok((value, grad))
}
