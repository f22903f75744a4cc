//! The EM loop shared by the latent style model and the baselines.

use nalgebra::DMatrix;

use super::mstep::{m_step_gaussians, GaussianStepOptions};
use super::{FitConfig, FitReport, Responsibilities};
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::model::{EmissionModel, Point, PriorSettings, ReturnObservation};
use crate::par::blocked_reduce;

/// Log joint weights of every latent state, before the Gaussian term.
///
/// Row `i` of `table` holds receiver `i`'s log weights over the
/// `styles * patterns` joint states (flat index `k * patterns + m`); a
/// single-row table is shared by every receiver.
pub(crate) struct LogWeights {
    pub table: DMatrix<f64>,
    pub patterns: usize,
}

impl LogWeights {
    #[inline]
    fn row(&self, receiver: usize) -> usize {
        if self.table.nrows() == 1 {
            0
        } else {
            receiver
        }
    }
}

/// A mixture model that can be fitted by [`run_em`].
pub(crate) trait EmModel: Clone + Send + Sync {
    fn styles(&self) -> usize;
    fn patterns(&self) -> usize;
    fn emission(&self) -> &EmissionModel;
    fn emission_mut(&mut self) -> &mut EmissionModel;
    fn priors(&self) -> &PriorSettings;
    fn log_weights(&self) -> LogWeights;
    fn log_prior(&self) -> Result<f64>;
    /// M-step for everything except the Gaussians.
    fn update_weights(&mut self, resp: &Responsibilities, data: &[ReturnObservation], cfg: &FitConfig) -> Result<()>;
    /// Ascent step on the full objective, used when an EM step fails to
    /// improve it.
    fn fallback_step(&self, _data: &[ReturnObservation], _objective: f64) -> Option<(Self, f64)> {
        None
    }
}

/// Responsibilities and per-point log likelihoods at `model`.
pub(crate) fn expectation<P: EmModel>(model: &P, data: &[ReturnObservation]) -> Result<(Responsibilities, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    for obs in data {
        model.emission().check_observation(obs)?;
    }
    let lw = model.log_weights();
    let (k_n, m_n) = (model.styles(), model.patterns());
    let l_n = k_n * m_n;
    let emission = model.emission();
    let (values, loglik) = blocked_reduce(
        data.len(),
        |range| {
            let mut vals = Vec::with_capacity(range.len() * l_n);
            let mut ll = Vec::with_capacity(range.len());
            let mut scratch = vec![0.0; m_n];
            let mut joint = vec![0.0; l_n];
            for obs in &data[range] {
                emission.component_logpdfs(obs, &mut scratch);
                let row = lw.row(obs.receiver);
                for l in 0..l_n {
                    joint[l] = lw.table[(row, l)] + scratch[l % lw.patterns];
                }
                let lse = log_sum_exp(&joint);
                ll.push(lse);
                vals.extend(joint.iter().map(|j| (j - lse).exp()));
            }
            (vals, ll)
        },
        |mut a, b| {
            a.0.extend(b.0);
            a.1.extend(b.1);
            a
        },
    )
    .expect("data is non-empty");
    Ok((
        Responsibilities {
            styles: k_n,
            patterns: m_n,
            values,
        },
        loglik,
    ))
}

pub(crate) struct EmRun<P> {
    pub model: P,
    pub trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub responsibilities: Responsibilities,
    pub per_point_loglik: Vec<f64>,
    pub fallback_steps: usize,
}

/// Relative slack below which a drop in the objective counts as rounding.
pub const MONOTONE_SLACK: f64 = 1e-8;

pub(crate) fn slack(objective: f64) -> f64 {
    MONOTONE_SLACK * objective.abs().max(1.0)
}

fn gaussian_options(cfg: &FitConfig) -> GaussianStepOptions {
    GaussianStepOptions {
        fix_offsets: cfg.fix_offsets,
        inner_max_iters: cfg.inner.max_iters,
        inner_grad_tol: cfg.inner.grad_tol,
    }
}

/// Re-seed patterns whose total responsibility is negligible at the
/// worst-fitted observation.
fn rescue_empty<P: EmModel>(model: &P, resp: &Responsibilities, data: &[ReturnObservation], loglik: &[f64]) -> Option<P> {
    let n = data.len() as f64;
    let weights = resp.pattern_totals();
    let empty: Vec<usize> = (0..weights.len()).filter(|&m| weights[m] < 1e-6 * n).collect();
    if empty.is_empty() {
        return None;
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| loglik[a].total_cmp(&loglik[b]).then(a.cmp(&b)));
    let mut out = model.clone();
    let mut comps = out.emission().components().to_vec();
    for (slot, &m) in empty.iter().enumerate() {
        let obs = &data[order[slot.min(order.len() - 1)]];
        let offset: Point = model.emission().offset_mean(obs);
        let mut alpha = comps[m].alpha().clone();
        let rest: Point = &alpha * &obs.covariates - alpha.column(0) * obs.covariates[0];
        let target = (obs.location - offset - rest) / obs.covariates[0];
        alpha.set_column(0, &target);
        comps[m] = comps[m].with_alpha(alpha).ok()?;
    }
    out.emission_mut().set_components(comps);
    Some(out)
}

fn objective<P: EmModel>(model: &P, loglik: &[f64]) -> Result<f64> {
    Ok(loglik.iter().sum::<f64>() + model.log_prior()?)
}

/// One EM run from `init`. Each iteration is an E-step followed by the
/// weight and Gaussian M-steps; the objective is the log posterior.
pub(crate) fn run_em<P: EmModel>(init: P, data: &[ReturnObservation], cfg: &FitConfig) -> Result<EmRun<P>> {
    let opts = gaussian_options(cfg);
    let mut model = init;
    let (mut resp, mut loglik) = expectation(&model, data)?;
    let mut obj = objective(&model, &loglik)?;
    if !obj.is_finite() {
        return Err(Error::InnerOptFailure("initial objective is not finite".into()));
    }
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;
    let mut fallback_steps = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut next = model.clone();
        let step = next
            .update_weights(&resp, data, cfg)
            .and_then(|_| m_step_gaussians(&resp, data, next.emission(), next.priors(), &opts))
            .map(|em| *next.emission_mut() = em);
        let mut candidate = match step {
            Ok(()) => {
                let (r, ll) = expectation(&next, data)?;
                let o = objective(&next, &ll)?;
                Some((next, r, ll, o))
            }
            Err(e) if e.is_numerical() => None,
            Err(e) => return Err(e),
        };
        if let Some((m, r, ll, o)) = &candidate {
            if let Some(rescued) = rescue_empty(m, r, data, ll) {
                let (r2, ll2) = expectation(&rescued, data)?;
                let o2 = objective(&rescued, &ll2)?;
                if o2 >= *o {
                    candidate = Some((rescued, r2, ll2, o2));
                }
            }
        }
        let accepted = match candidate {
            Some((m, r, ll, o)) if o.is_finite() && o >= obj - slack(obj) => Some((m, r, ll, o)),
            _ => match model.fallback_step(data, obj) {
                Some((m, o)) if o > obj => {
                    fallback_steps += 1;
                    let (r, ll) = expectation(&m, data)?;
                    Some((m, r, ll, o))
                }
                _ => None,
            },
        };
        let Some((m, r, ll, o)) = accepted else {
            // stalled: neither the EM step nor the fallback improved
            break;
        };
        let rel = (o - obj).abs() / obj.abs().max(1.0);
        model = m;
        resp = r;
        loglik = ll;
        obj = o;
        trace.push(obj);
        if rel < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    Ok(EmRun {
        model,
        trace,
        converged,
        iterations,
        responsibilities: resp,
        per_point_loglik: loglik,
        fallback_steps,
    })
}

/// Run every restart and keep the best final objective. Restarts whose
/// initial state is unusable are skipped.
pub(crate) fn fit_with_restarts<P, I>(data: &[ReturnObservation], cfg: &FitConfig, init: I) -> Result<FitReport<P>>
where
    P: EmModel,
    I: Fn(usize) -> Result<P> + Sync,
{
    use rayon::prelude::*;
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let runs: Vec<Result<EmRun<P>>> = (0..cfg.n_restarts)
        .into_par_iter()
        .map(|r| init(r).and_then(|m| run_em(m, data, cfg)))
        .collect();
    let mut restart_objectives = Vec::with_capacity(runs.len());
    let mut restart_traces = Vec::with_capacity(runs.len());
    let mut best: Option<EmRun<P>> = None;
    for run in runs {
        match run {
            Ok(run) => {
                let last = *run.trace.last().expect("trace has the initial value");
                restart_objectives.push(last);
                restart_traces.push(run.trace.clone());
                let better = best
                    .as_ref()
                    .is_none_or(|b| last > *b.trace.last().expect("non-empty"));
                if better {
                    best = Some(run);
                }
            }
            Err(e) if e.is_numerical() => {
                restart_objectives.push(f64::NAN);
                restart_traces.push(Vec::new());
            }
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or(Error::NoValidRestart)?;
    Ok(FitReport {
        params: best.model,
        objective_trace: best.trace,
        converged: best.converged,
        n_iters: best.iterations,
        responsibilities: best.responsibilities,
        per_point_loglik: best.per_point_loglik,
        restart_objectives,
        restart_traces,
        fallback_steps: best.fallback_steps,
    })
}
