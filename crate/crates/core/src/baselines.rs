//! Comparison models sharing the latent style model's Gaussian patterns,
//! covariate effects, offsets and priors.
//!
//! * [`BaselineKind::Mvn`]: one Gaussian.
//! * [`BaselineKind::FiniteMixture`]: `M` Gaussians with one weight simplex
//!   shared by every receiver.
//! * [`BaselineKind::MixedMembership`]: `M` Gaussians with an independent
//!   Dirichlet-distributed simplex per receiver.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::inference::engine::{self, EmModel, LogWeights};
use crate::inference::{roster_sizes, FitConfig, FitReport, InitScheme, Responsibilities};
use crate::math::{dirichlet_logpdf, log_sum_exp};
use crate::model::{EmissionModel, LsaParams, PriorSettings, ReturnObservation, SIMPLEX_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    Mvn,
    FiniteMixture(usize),
    MixedMembership(usize),
}

impl BaselineKind {
    /// Number of Gaussian components.
    pub fn components(self) -> usize {
        match self {
            BaselineKind::Mvn => 1,
            BaselineKind::FiniteMixture(m) | BaselineKind::MixedMembership(m) => m,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            BaselineKind::Mvn => "mvn",
            BaselineKind::FiniteMixture(_) => "finite-mixture",
            BaselineKind::MixedMembership(_) => "mixed-membership",
        }
    }

    /// Build from a tag and a component count (ignored for the MVN).
    pub fn from_tag(tag: &str, components: usize) -> Result<Self> {
        let kind = match tag {
            "mvn" => BaselineKind::Mvn,
            "finite-mixture" | "fm" => BaselineKind::FiniteMixture(components),
            "mixed-membership" | "mm" => BaselineKind::MixedMembership(components),
            other => return Err(Error::InvalidConfig(format!("unknown baseline {other:?}"))),
        };
        if kind.components() == 0 {
            return Err(Error::InvalidConfig("mixture baselines need at least one component".into()));
        }
        Ok(kind)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BaselineKind::Mvn => f.write_str("mvn"),
            BaselineKind::FiniteMixture(m) | BaselineKind::MixedMembership(m) => write!(f, "{}:{m}", self.tag()),
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    /// `mvn`, `finite-mixture:M` or `mixed-membership:M`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None => Self::from_tag(s, 1).and_then(|k| match k {
                BaselineKind::Mvn => Ok(k),
                _ => Err(Error::InvalidConfig(format!("{s:?} needs a component count, e.g. {s}:3"))),
            }),
            Some((tag, m)) => {
                let m = m
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad component count in {s:?}")))?;
                Self::from_tag(tag, m)
            }
        }
    }
}

/// Parameters of a baseline model. `weights` has one row for the MVN and
/// the finite mixture and one row per receiver for mixed membership.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineParams {
    kind: BaselineKind,
    weights: DMatrix<f64>,
    pub emission: EmissionModel,
    pub priors: PriorSettings,
}

impl BaselineParams {
    pub fn new(kind: BaselineKind, weights: DMatrix<f64>, emission: EmissionModel, priors: PriorSettings) -> Result<Self> {
        priors.validate()?;
        let m = kind.components();
        if emission.n_patterns() != m || weights.ncols() != m {
            return Err(Error::DimensionMismatch(format!(
                "{kind} needs {m} components and weight columns, got {} and {}",
                emission.n_patterns(),
                weights.ncols()
            )));
        }
        let rows = match kind {
            BaselineKind::MixedMembership(_) => emission.n_receivers(),
            _ => 1,
        };
        if weights.nrows() != rows {
            return Err(Error::DimensionMismatch(format!("{kind} needs {rows} weight rows, got {}", weights.nrows())));
        }
        for (i, row) in weights.row_iter().enumerate() {
            if row.iter().any(|v| !(*v >= 0.0)) || (row.sum() - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidSimplex { row: i });
            }
        }
        Ok(Self {
            kind,
            weights,
            emission,
            priors,
        })
    }

    pub fn kind(&self) -> BaselineKind {
        self.kind
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// Weight simplex used for `receiver`.
    pub fn receiver_weights(&self, receiver: usize) -> Vec<f64> {
        let row = if self.weights.nrows() == 1 { 0 } else { receiver };
        self.weights.row(row).iter().copied().collect()
    }

    pub fn log_prior(&self) -> f64 {
        let simplexes: f64 = match self.kind {
            BaselineKind::Mvn => 0.0,
            _ => self
                .weights
                .row_iter()
                .map(|r| dirichlet_logpdf(&r.iter().copied().collect::<Vec<_>>(), self.priors.alpha0))
                .sum(),
        };
        simplexes + self.emission.log_prior(&self.priors)
    }
}

/// Log predictive density of one observation.
pub fn baseline_loglik_point(params: &BaselineParams, obs: &ReturnObservation) -> Result<f64> {
    params.emission.check_observation(obs)?;
    let mut lp = vec![0.0; params.kind.components()];
    params.emission.component_logpdfs(obs, &mut lp);
    let w = params.receiver_weights(obs.receiver);
    let terms: Vec<f64> = lp.iter().zip(&w).map(|(l, w)| w.ln() + l).collect();
    Ok(log_sum_exp(&terms))
}

/// Pointwise log predictive densities, in data order.
pub fn baseline_pointwise_loglik(params: &BaselineParams, data: &[ReturnObservation]) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    data.par_iter().map(|o| baseline_loglik_point(params, o)).collect()
}

fn dirichlet_map(counts: &[f64], alpha0: f64) -> Vec<f64> {
    let raw: Vec<f64> = counts.iter().map(|c| (c + alpha0 - 1.0).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total > 0.0 {
        raw.iter().map(|r| r / total).collect()
    } else {
        let t: f64 = counts.iter().sum();
        counts.iter().map(|c| c / t).collect()
    }
}

impl EmModel for BaselineParams {
    fn styles(&self) -> usize {
        1
    }

    fn patterns(&self) -> usize {
        self.kind.components()
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
        LogWeights {
            table: self.weights.map(f64::ln),
            patterns: self.kind.components(),
        }
    }

    fn log_prior(&self) -> Result<f64> {
        Ok(BaselineParams::log_prior(self))
    }

    fn update_weights(&mut self, resp: &Responsibilities, data: &[ReturnObservation], _cfg: &FitConfig) -> Result<()> {
        let m_n = self.kind.components();
        let w = resp.pattern_matrix();
        match self.kind {
            BaselineKind::Mvn => {}
            BaselineKind::FiniteMixture(_) => {
                let totals = resp.pattern_totals();
                let row = dirichlet_map(&totals, self.priors.alpha0);
                self.weights = DMatrix::from_row_slice(1, m_n, &row);
            }
            BaselineKind::MixedMembership(_) => {
                let r_n = self.weights.nrows();
                let mut counts = DMatrix::<f64>::zeros(r_n, m_n);
                let mut seen = vec![false; r_n];
                for (n, obs) in data.iter().enumerate() {
                    seen[obs.receiver] = true;
                    for m in 0..m_n {
                        counts[(obs.receiver, m)] += w[n * m_n + m];
                    }
                }
                if let Some(i) = seen.iter().position(|s| !s) {
                    return Err(Error::AllZeroRow { receiver: i });
                }
                for i in 0..r_n {
                    let c: Vec<f64> = counts.row(i).iter().copied().collect();
                    let row = dirichlet_map(&c, self.priors.alpha0);
                    for m in 0..m_n {
                        self.weights[(i, m)] = row[m];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Uniform weights of the right shape for `kind`.
fn uniform_weights(kind: BaselineKind, receivers: usize) -> DMatrix<f64> {
    let m = kind.components();
    let rows = match kind {
        BaselineKind::MixedMembership(_) => receivers,
        _ => 1,
    };
    DMatrix::from_element(rows, m, 1.0 / m as f64)
}

/// Baseline with the same Gaussians and offsets as an LSA start and
/// uniform weights.
pub(crate) fn from_lsa_start(kind: BaselineKind, start: &LsaParams) -> Result<BaselineParams> {
    BaselineParams::new(kind, uniform_weights(kind, start.receivers()), start.emission.clone(), start.priors)
}

/// Fit a baseline by penalized EM, sizing the rosters from the data.
pub fn baseline_fit(data: &[ReturnObservation], kind: BaselineKind, cfg: &FitConfig) -> Result<FitReport<BaselineParams>> {
    let (r, s) = roster_sizes(data);
    baseline_fit_sized(data, kind, r, s, cfg)
}

/// Fit a baseline with explicit roster sizes.
pub fn baseline_fit_sized(
    data: &[ReturnObservation],
    kind: BaselineKind,
    receivers: usize,
    servers: usize,
    cfg: &FitConfig,
) -> Result<FitReport<BaselineParams>> {
    if kind.components() == 0 {
        return Err(Error::InvalidConfig("mixture baselines need at least one component".into()));
    }
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let (r_max, s_max) = roster_sizes(data);
    if r_max > receivers || s_max > servers {
        return Err(Error::DimensionMismatch("observation index exceeds roster size".into()));
    }
    let shape = crate::inference::init::Shape {
        styles: 1,
        patterns: kind.components(),
        receivers,
        servers,
        covariates: data[0].covariates.len(),
    };
    engine::fit_with_restarts(data, cfg, |restart| {
        let start = match &cfg.init {
            InitScheme::PriorDraw => crate::inference::init::prior_start(data, &shape, &cfg.priors, cfg.seed, restart)?,
            InitScheme::KMeansPatternMeans | InitScheme::UserSupplied(_) => {
                crate::inference::init::kmeans_pattern_start(data, &shape, &cfg.priors, cfg.seed, restart)?
            }
        };
        from_lsa_start(kind, &start)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::adjusted_rand_index;
    use crate::inference::map_pattern_assignments;
    use crate::model::{marginal_loglik_point, EffectMatrix, GaussianComponent, Point, StickBreakingBetas, StyleSimplex};
    use crate::rng::substream;
    use crate::sampler::{draw_params, sample_dataset, SimConfig};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn instance(m: usize, r: usize, seed: u64) -> (LsaParams, Vec<ReturnObservation>) {
        let cfg = SimConfig::new(2, m, r, 10, seed);
        let p = draw_params(&cfg).unwrap();
        let (d, _) = sample_dataset(&p, &cfg).unwrap();
        (p, d)
    }

    fn random_simplex(rng: &mut crate::rng::StreamRng, m: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..m).map(|_| rng.random::<f64>() + 0.05).collect();
        let t: f64 = raw.iter().sum();
        raw.iter().map(|v| v / t).collect()
    }

    #[test]
    fn nesting_chain_collapses_exactly() {
        for seed in 0..20 {
            let mut rng = substream(seed, "nest", 0);
            let (lsa, data) = instance(1, 3, seed);
            let em1 = lsa.emission.clone();
            let mvn = BaselineParams::new(BaselineKind::Mvn, DMatrix::from_element(1, 1, 1.0), em1.clone(), lsa.priors)
                .unwrap();
            let fm1 = BaselineParams::new(BaselineKind::FiniteMixture(1), DMatrix::from_element(1, 1, 1.0), em1, lsa.priors)
                .unwrap();
            for o in &data {
                let a = baseline_loglik_point(&mvn, o).unwrap();
                assert_eq!(a, baseline_loglik_point(&fm1, o).unwrap());
                assert!((a - marginal_loglik_point(&lsa, o).unwrap()).abs() < 1e-12);
            }

            let (lsa, data) = instance(3, 3, seed);
            let w = random_simplex(&mut rng, 3);
            let fm = BaselineParams::new(
                BaselineKind::FiniteMixture(3),
                DMatrix::from_row_slice(1, 3, &w),
                lsa.emission.clone(),
                lsa.priors,
            )
            .unwrap();
            let mm = BaselineParams::new(
                BaselineKind::MixedMembership(3),
                DMatrix::from_fn(3, 3, |_, j| w[j]),
                lsa.emission.clone(),
                lsa.priors,
            )
            .unwrap();
            for o in &data {
                assert_eq!(baseline_loglik_point(&fm, o).unwrap(), baseline_loglik_point(&mm, o).unwrap());
            }

            // LSA with one style against mixed membership sharing theta
            let betas = StickBreakingBetas::from_rows(&[vec![rng.random::<f64>() - 0.5, rng.random::<f64>()]], 3).unwrap();
            let lsa1 = LsaParams::new(betas, StyleSimplex::uniform(3, 1), lsa.emission.clone(), lsa.priors).unwrap();
            let theta = lsa1.theta().row(0);
            let mm1 = BaselineParams::new(
                BaselineKind::MixedMembership(3),
                DMatrix::from_fn(3, 3, |_, j| theta[j]),
                lsa.emission.clone(),
                lsa.priors,
            )
            .unwrap();
            for o in &data {
                let a = marginal_loglik_point(&lsa1, o).unwrap();
                let b = baseline_loglik_point(&mm1, o).unwrap();
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kind_text_roundtrip() {
        for k in [BaselineKind::Mvn, BaselineKind::FiniteMixture(4), BaselineKind::MixedMembership(2)] {
            assert_eq!(k.to_string().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("finite-mixture".parse::<BaselineKind>().is_err());
        assert!("mm:0".parse::<BaselineKind>().is_err());
    }

    fn blob_data(centers: &[(usize, Point)], per: usize, seed: u64) -> (Vec<ReturnObservation>, Vec<usize>) {
        let mut rng = substream(seed, "blobs", 0);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (label, (receiver, c)) in centers.iter().enumerate() {
            for _ in 0..per {
                let z: Point = Point::new(rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
                let y = c + 0.5 * z;
                data.push(ReturnObservation::new(*receiver, 0, y[0], y[1], vec![1.0]).unwrap());
                labels.push(label);
            }
        }
        (data, labels)
    }

    #[test]
    fn mvn_fit_is_one_step_closed_form() {
        let (data, _) = blob_data(&[(0, Point::new(1.0, 2.0))], 300, 2);
        let cfg = FitConfig {
            n_restarts: 1,
            fix_offsets: true,
            ..FitConfig::default()
        };
        let report = baseline_fit(&data, BaselineKind::Mvn, &cfg).unwrap();
        // one update reaches the optimum, the next confirms convergence
        assert!(report.converged && report.n_iters <= 2, "{} iterations", report.n_iters);
        let n = data.len() as f64;
        let scale = cfg.priors.alpha_scale;
        let mean = data.iter().fold(Point::zeros(), |a, o| a + o.location) / n;
        let c = report.params.emission.component(0);
        let prec = c.covariance().try_inverse().unwrap();
        // ridge closed form: (n prec + I / s^2) a = n prec mean
        let a = (n * prec + nalgebra::Matrix2::identity() / (scale * scale))
            .try_inverse()
            .unwrap()
            * (n * prec * mean);
        assert_abs_diff_eq!(c.alpha()[(0, 0)], a[0], epsilon = 1e-6);
        assert_abs_diff_eq!(c.alpha()[(1, 0)], a[1], epsilon = 1e-6);
    }

    #[test]
    fn finite_mixture_separates_two_clusters() {
        // means 6 sd apart, both used by both receivers
        let (a, b) = (Point::new(0.0, 0.0), Point::new(3.0, 0.0));
        let (data, entry) = blob_data(&[(0, a), (0, b), (1, a), (1, b)], 125, 3);
        let labels: Vec<usize> = entry.iter().map(|e| e % 2).collect();
        let cfg = FitConfig {
            n_restarts: 2,
            ..FitConfig::default()
        };
        let report = baseline_fit(&data, BaselineKind::FiniteMixture(2), &cfg).unwrap();
        let est: Vec<usize> = map_pattern_assignments(&report.responsibilities).iter().map(|x| x.1).collect();
        assert!(adjusted_rand_index(&labels, &est) > 0.95);
    }

    #[test]
    fn mixed_membership_weights_concentrate_by_group() {
        // receivers 0-1 use the left components, receivers 2-3 the right ones
        let left = [Point::new(-3.0, 0.0), Point::new(-3.0, 3.0)];
        let right = [Point::new(3.0, 0.0), Point::new(3.0, 3.0)];
        let mut centers = Vec::new();
        for r in 0..4 {
            for c in if r < 2 { &left } else { &right } {
                centers.push((r, *c));
            }
        }
        let (data, _) = blob_data(&centers, 150, 4);
        let cfg = FitConfig {
            n_restarts: 2,
            ..FitConfig::default()
        };
        let report = baseline_fit(&data, BaselineKind::MixedMembership(4), &cfg).unwrap();
        let p = &report.params;
        let side = |m: usize| p.emission.component(m).alpha()[(0, 0)] < 0.0;
        for r in 0..4 {
            let w = p.receiver_weights(r);
            let own: f64 = (0..4).filter(|&m| side(m) == (r < 2)).map(|m| w[m]).sum();
            assert!(own > 0.9, "receiver {r}: {w:?}");
        }
    }

    #[test]
    fn baseline_em_is_monotone() {
        for seed in 0..5 {
            let (_, data) = instance(3, 4, 40 + seed);
            for kind in [BaselineKind::Mvn, BaselineKind::FiniteMixture(3), BaselineKind::MixedMembership(3)] {
                let cfg = FitConfig {
                    n_restarts: 1,
                    max_iters: 50,
                    seed,
                    ..FitConfig::default()
                };
                let report = baseline_fit(&data, kind, &cfg).unwrap();
                for w in report.objective_trace.windows(2) {
                    assert!(w[1] >= w[0] - engine::slack(w[0]), "{kind}: {} -> {}", w[0], w[1]);
                }
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let comp = GaussianComponent::new(EffectMatrix::zeros(1), [1.0, 1.0], 0.0).unwrap();
        let em = EmissionModel::without_offsets(vec![comp; 2], 3, 1).unwrap();
        let pr = PriorSettings::default();
        assert!(BaselineParams::new(BaselineKind::FiniteMixture(2), DMatrix::from_element(3, 2, 0.5), em.clone(), pr).is_err());
        assert!(BaselineParams::new(BaselineKind::MixedMembership(2), DMatrix::from_element(3, 2, 0.4), em.clone(), pr).is_err());
        assert!(BaselineParams::new(BaselineKind::MixedMembership(2), DMatrix::from_element(3, 2, 0.5), em, pr).is_ok());
    }
}
