//! Gaussian M-step: block coordinate ascent over pattern effects, receiver
//! offsets, server offsets and pattern covariances.
//!
//! Each block is solved exactly given the others (ridge-penalized
//! generalized least squares for the effects, a three-parameter BFGS for
//! each covariance), so the penalized expected complete-data objective
//! never decreases.

use nalgebra::{DMatrix, DVector, Matrix2};

use super::Responsibilities;
use crate::error::{Error, Result};
use crate::math::{half_cauchy_logpdf, lkj2_logpdf};
use crate::model::{EffectMatrix, EmissionModel, GaussianComponent, Point, PriorSettings, ReturnObservation, CHOLESKY_JITTER};
use crate::optim::maximize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianStepOptions {
    /// Keep receiver and server offsets at their current values.
    pub fix_offsets: bool,
    pub inner_max_iters: usize,
    pub inner_grad_tol: f64,
}

impl Default for GaussianStepOptions {
    fn default() -> Self {
        Self {
            fix_offsets: false,
            inner_max_iters: 100,
            inner_grad_tol: 1e-8,
        }
    }
}

/// Weighted normal-equation blocks `sum w x x^T` and `sum w z x^T`.
#[derive(Clone)]
struct Moments {
    gram: DMatrix<f64>,
    cross: EffectMatrix,
}

impl Moments {
    fn zeros(p: usize) -> Self {
        Self {
            gram: DMatrix::zeros(p, p),
            cross: EffectMatrix::zeros(p),
        }
    }

    #[inline]
    fn add(&mut self, w: f64, x: &DVector<f64>, z: &Point) {
        let p = x.len();
        for a in 0..p {
            let wa = w * x[a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..p {
                self.gram[(a, b)] += wa * x[b];
            }
            self.cross[(0, a)] += wa * z[0];
            self.cross[(1, a)] += wa * z[1];
        }
    }
}

/// Solve `sum_j prec_j B G_j + B / scale^2 = sum_j prec_j Z_j` for the
/// 2 x P matrix B.
fn solve_effect(blocks: &[(Matrix2<f64>, &Moments)], p: usize, scale: f64) -> Result<EffectMatrix> {
    let n = 2 * p;
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (prec, mo) in blocks {
        let pz = prec * &mo.cross;
        for d in 0..2 {
            for i in 0..p {
                rhs[d * p + i] += pz[(d, i)];
                for d2 in 0..2 {
                    let pd = prec[(d, d2)];
                    if pd == 0.0 {
                        continue;
                    }
                    for j in 0..p {
                        a[(d * p + i, d2 * p + j)] += pd * mo.gram[(i, j)];
                    }
                }
            }
        }
    }
    let ridge = 1.0 / (scale * scale);
    for i in 0..n {
        a[(i, i)] += ridge;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::InnerOptFailure("normal equations are not positive definite".into()))?;
    let sol = chol.solve(&rhs);
    Ok(EffectMatrix::from_row_slice(sol.as_slice()))
}

fn precisions(emission: &EmissionModel) -> Result<Vec<Matrix2<f64>>> {
    emission
        .components()
        .iter()
        .map(|c| c.covariance().try_inverse().ok_or(Error::NonPdCovariance))
        .collect()
}

/// Value and gradient of the penalized covariance objective in
/// `(log s1, log s2, atanh rho)` given total weight and residual scatter.
fn covariance_objective(c: &[f64], weight: f64, scatter: &Matrix2<f64>, priors: &PriorSettings) -> Option<(f64, Vec<f64>)> {
    let (s1, s2, rho) = (c[0].exp(), c[1].exp(), c[2].tanh());
    if !(s1 > 0.0 && s2 > 0.0 && s1.is_finite() && s2.is_finite() && rho.abs() < 1.0) {
        return None;
    }
    let cr = (1.0 - rho * rho).sqrt();
    let l = Matrix2::new(s1 + CHOLESKY_JITTER, 0.0, s2 * rho, s2 * cr + CHOLESKY_JITTER);
    let li = Matrix2::new(
        1.0 / l[(0, 0)],
        0.0,
        -l[(1, 0)] / (l[(0, 0)] * l[(1, 1)]),
        1.0 / l[(1, 1)],
    );
    let inner = li * scatter * li.transpose();
    let value = -weight * (l[(0, 0)].ln() + l[(1, 1)].ln()) - 0.5 * (inner[(0, 0)] + inner[(1, 1)])
        + lkj2_logpdf(rho, priors.lkj_eta)
        + half_cauchy_logpdf(s1, priors.scale_tau)
        + half_cauchy_logpdf(s2, priors.scale_tau);
    if !value.is_finite() {
        return None;
    }
    let g = li.transpose() * li * scatter * li.transpose();
    let g00 = g[(0, 0)] - weight / l[(0, 0)];
    let g10 = g[(1, 0)];
    let g11 = g[(1, 1)] - weight / l[(1, 1)];
    let hc = |s: f64| {
        let z2 = (s / priors.scale_tau).powi(2);
        -2.0 * z2 / (1.0 + z2)
    };
    let grad = vec![
        g00 * s1 + hc(s1),
        g10 * s2 * rho + g11 * s2 * cr + hc(s2),
        g10 * s2 * (1.0 - rho * rho) - g11 * s2 * rho * cr - 2.0 * rho * (priors.lkj_eta - 1.0),
    ];
    Some((value, grad))
}

fn covariance_coords(scales: [f64; 2], corr: f64) -> [f64; 3] {
    [scales[0].ln(), scales[1].ln(), corr.atanh()]
}

/// Penalized covariance update for one pattern. Starts from the better of
/// the current covariance and the weighted residual covariance.
fn update_covariance(
    comp: &GaussianComponent,
    weight: f64,
    scatter: &Matrix2<f64>,
    priors: &PriorSettings,
    opts: &GaussianStepOptions,
) -> Result<GaussianComponent> {
    if weight < 1e-8 {
        return Ok(comp.clone());
    }
    let current = covariance_coords(comp.scales(), comp.corr());
    let f = |c: &[f64]| covariance_objective(c, weight, scatter, priors);
    let mut start = current.to_vec();
    let mut start_value = f(&current).map_or(f64::NEG_INFINITY, |v| v.0);
    let cov = scatter / weight;
    if cov[(0, 0)] > 0.0 && cov[(1, 1)] > 0.0 {
        let (a, b) = (cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt());
        let rho = (cov[(0, 1)] / (a * b)).clamp(-0.999, 0.999);
        let cand = covariance_coords([a, b], rho);
        if let Some((v, _)) = f(&cand) {
            if v > start_value {
                start = cand.to_vec();
                start_value = v;
            }
        }
    }
    if !start_value.is_finite() {
        return Err(Error::NonPdCovariance);
    }
    let best = maximize(f, &start, opts.inner_max_iters, opts.inner_grad_tol).ok_or(Error::NonPdCovariance)?;
    comp.with_covariance_params([best.x[0].exp(), best.x[1].exp()], best.x[2].tanh())
}

/// One block-coordinate sweep over the Gaussian parameters given the
/// pattern responsibilities.
pub fn m_step_gaussians(
    resp: &Responsibilities,
    data: &[ReturnObservation],
    emission: &EmissionModel,
    priors: &PriorSettings,
    opts: &GaussianStepOptions,
) -> Result<EmissionModel> {
    if data.len() != resp.len() {
        return Err(Error::DimensionMismatch("responsibilities and data differ in length".into()));
    }
    let m_n = emission.n_patterns();
    let p = emission.n_covariates();
    let (r_n, s_n) = (emission.n_receivers(), emission.n_servers());
    let w = resp.pattern_matrix();
    let prec = precisions(emission)?;
    let mut out = emission.clone();

    // pattern effects
    let mut comps = Vec::with_capacity(m_n);
    {
        let mut moments = vec![Moments::zeros(p); m_n];
        for (n, obs) in data.iter().enumerate() {
            let z = obs.location - out.offset_mean(obs);
            for m in 0..m_n {
                let wn = w[n * m_n + m];
                if wn > 0.0 {
                    moments[m].add(wn, &obs.covariates, &z);
                }
            }
        }
        for m in 0..m_n {
            let alpha = solve_effect(&[(prec[m], &moments[m])], p, priors.alpha_scale)?;
            comps.push(out.component(m).with_alpha(alpha)?);
        }
        out.set_components(comps);
    }

    if !opts.fix_offsets {
        // receiver offsets
        let mut moments = vec![vec![Moments::zeros(p); m_n]; r_n];
        for (n, obs) in data.iter().enumerate() {
            let dx = &out.delta()[obs.server] * &obs.covariates;
            for m in 0..m_n {
                let wn = w[n * m_n + m];
                if wn > 0.0 {
                    let z = obs.location - out.component(m).alpha() * &obs.covariates + dx;
                    moments[obs.receiver][m].add(wn, &obs.covariates, &z);
                }
            }
        }
        let eta = (0..r_n)
            .map(|r| {
                let blocks: Vec<_> = (0..m_n).map(|m| (prec[m], &moments[r][m])).collect();
                solve_effect(&blocks, p, priors.eta_scale)
            })
            .collect::<Result<Vec<_>>>()?;
        out.set_eta(eta);

        // server offsets enter with a minus sign: solve for -delta
        let mut moments = vec![vec![Moments::zeros(p); m_n]; s_n];
        for (n, obs) in data.iter().enumerate() {
            let ex = &out.eta()[obs.receiver] * &obs.covariates;
            for m in 0..m_n {
                let wn = w[n * m_n + m];
                if wn > 0.0 {
                    let z = obs.location - out.component(m).alpha() * &obs.covariates - ex;
                    moments[obs.server][m].add(wn, &obs.covariates, &z);
                }
            }
        }
        let delta = (0..s_n)
            .map(|s| {
                let blocks: Vec<_> = (0..m_n).map(|m| (prec[m], &moments[s][m])).collect();
                solve_effect(&blocks, p, priors.delta_scale).map(|d| -d)
            })
            .collect::<Result<Vec<_>>>()?;
        out.set_delta(delta);
    }

    // covariances
    let mut weight = vec![0.0; m_n];
    let mut scatter = vec![Matrix2::zeros(); m_n];
    for (n, obs) in data.iter().enumerate() {
        for m in 0..m_n {
            let wn = w[n * m_n + m];
            if wn > 0.0 {
                let e = obs.location - out.mean(m, obs);
                weight[m] += wn;
                scatter[m] += wn * e * e.transpose();
            }
        }
    }
    let comps = (0..m_n)
        .map(|m| update_covariance(out.component(m), weight[m], &scatter[m], priors, opts))
        .collect::<Result<Vec<_>>>()?;
    out.set_components(comps);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn covariance_gradient_matches_differences() {
        let scatter = Matrix2::new(3.0, 0.4, 0.4, 1.5);
        let priors = PriorSettings {
            lkj_eta: 2.0,
            ..PriorSettings::default()
        };
        let c = [0.1, -0.3, 0.4];
        let (_, g) = covariance_objective(&c, 7.0, &scatter, &priors).unwrap();
        for i in 0..3 {
            let h = 1e-6;
            let mut up = c;
            up[i] += h;
            let mut dn = c;
            dn[i] -= h;
            let fd = (covariance_objective(&up, 7.0, &scatter, &priors).unwrap().0
                - covariance_objective(&dn, 7.0, &scatter, &priors).unwrap().0)
                / (2.0 * h);
            assert_abs_diff_eq!(fd, g[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn ridge_solve_matches_scalar_case() {
        // P = 1, identity precision: (sum w + 1/s^2) b = sum w z
        let mut mo = Moments::zeros(1);
        let x = DVector::from_vec(vec![1.0]);
        mo.add(2.0, &x, &Point::new(1.0, -1.0));
        mo.add(1.0, &x, &Point::new(4.0, 2.0));
        let b = solve_effect(&[(Matrix2::identity(), &mo)], 1, 1.0).unwrap();
        assert_abs_diff_eq!(b[(0, 0)], 6.0 / 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b[(1, 0)], 0.0, epsilon = 1e-14);
    }
}
