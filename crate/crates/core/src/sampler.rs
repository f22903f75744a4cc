//! Ancestral sampling from the generative process and posterior-predictive
//! density grids.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Beta, Cauchy, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

pub use crate::io::encode::CovariateScheme;
use crate::error::{Error, Result};
use crate::io::encode::{CourtSide, ServeContext, ServeDirection, Surface};
use crate::math::log_sum_exp;
use crate::model::{
    EffectMatrix, EmissionModel, GaussianComponent, LsaParams, Point, PriorSettings,
    ReturnObservation, StickBreakingBetas, StyleSimplex,
};
use crate::rng::{substream, StreamRng};

/// Settings for a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub styles: usize,
    pub patterns: usize,
    pub receivers: usize,
    pub servers: usize,
    /// One entry per receiver.
    pub points_per_receiver: Vec<usize>,
    pub covariate_scheme: CovariateScheme,
    pub priors: PriorSettings,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(styles: usize, patterns: usize, receivers: usize, points: usize, seed: u64) -> Self {
        Self {
            styles,
            patterns,
            receivers,
            servers: receivers,
            points_per_receiver: vec![points; receivers],
            covariate_scheme: CovariateScheme::InterceptOnly,
            priors: PriorSettings::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [self.styles, self.patterns, self.receivers, self.servers];
        if counts.contains(&0) {
            return Err(Error::InvalidConfig("styles, patterns, receivers and servers must be >= 1".into()));
        }
        if self.points_per_receiver.len() != self.receivers {
            return Err(Error::InvalidConfig(format!(
                "{} point counts for {} receivers",
                self.points_per_receiver.len(),
                self.receivers
            )));
        }
        if self.points_per_receiver.contains(&0) {
            return Err(Error::InvalidConfig("every receiver needs at least one point".into()));
        }
        self.priors.validate()
    }

    pub fn covariates(&self) -> usize {
        self.covariate_scheme.n_covariates()
    }
}

/// Ground-truth latent state of one sampled point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LatentLabel {
    pub style: usize,
    pub pattern: usize,
}

/// Observations with their serve contexts and true latent labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledDataset {
    pub observations: Vec<ReturnObservation>,
    pub contexts: Vec<ServeContext>,
    pub latent: Vec<LatentLabel>,
}

pub(crate) fn normal_effect(rng: &mut StreamRng, p: usize, scale: f64) -> EffectMatrix {
    EffectMatrix::from_fn(p, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn dirichlet_row(rng: &mut StreamRng, k: usize, alpha0: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha0, 1.0).expect("alpha0 validated positive");
    loop {
        let g: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 {
            return g.iter().map(|v| v / total).collect();
        }
    }
}

pub(crate) fn ordered_betas(rng: &mut StreamRng, k: usize, m: usize) -> Result<StickBreakingBetas> {
    let mut values = DMatrix::zeros(k, m - 1);
    for col in 0..m - 1 {
        loop {
            let mut draws: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
            draws.sort_by(f64::total_cmp);
            if draws.windows(2).all(|w| w[0] < w[1]) {
                for (i, v) in draws.into_iter().enumerate() {
                    values[(i, col)] = v;
                }
                break;
            }
        }
    }
    StickBreakingBetas::new(values, m)
}

/// Draw a full parameter set from the prior.
pub fn draw_params(cfg: &SimConfig) -> Result<LsaParams> {
    cfg.validate()?;
    let mut rng = substream(cfg.seed, "prior", 0);
    let pr = &cfg.priors;
    let (k, m, p) = (cfg.styles, cfg.patterns, cfg.covariates());
    let betas = ordered_betas(&mut rng, k, m)?;
    let rows: Vec<Vec<f64>> = (0..cfg.receivers).map(|_| dirichlet_row(&mut rng, k, pr.alpha0)).collect();
    let pi = StyleSimplex::from_rows(&rows)?;
    let lkj = Beta::new(pr.lkj_eta, pr.lkj_eta).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let cauchy = Cauchy::new(0.0, pr.scale_tau).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut components = Vec::with_capacity(m);
    for _ in 0..m {
        let alpha = normal_effect(&mut rng, p, pr.alpha_scale);
        let corr = (2.0 * lkj.sample(&mut rng) - 1.0).clamp(-0.999_999, 0.999_999);
        let mut scale = || loop {
            let s: f64 = cauchy.sample(&mut rng).abs();
            if s > 0.0 && s.is_finite() {
                return s;
            }
        };
        let scales = [scale(), scale()];
        components.push(GaussianComponent::new(alpha, scales, corr)?);
    }
    let eta = (0..cfg.receivers).map(|_| normal_effect(&mut rng, p, pr.eta_scale)).collect();
    let delta = (0..cfg.servers).map(|_| normal_effect(&mut rng, p, pr.delta_scale)).collect();
    LsaParams::new(betas, pi, EmissionModel::new(components, eta, delta)?, *pr)
}

/// A well-separated, court-like truth for recovery experiments.
///
/// Pattern means sit on an ellipse around (0, -1) m with scales near
/// 0.5 m; stick values are evenly spaced so style simplexes differ
/// clearly; receiver `i` puts `dominance` of its weight on style
/// `i mod K` and spreads the rest evenly. Offsets and non-intercept effects
/// are drawn small (sd 0.2 m) from the seed.
pub fn separated_truth(cfg: &SimConfig, dominance: f64) -> Result<LsaParams> {
    cfg.validate()?;
    if !(0.0..=1.0).contains(&dominance) {
        return Err(Error::InvalidConfig("dominance must be in [0, 1]".into()));
    }
    let mut rng = substream(cfg.seed, "separated-truth", 0);
    let (k, m, p) = (cfg.styles, cfg.patterns, cfg.covariates());
    let spread = |i: usize, n: usize| {
        if n == 1 {
            0.0
        } else {
            -2.5 + 5.0 * i as f64 / (n - 1) as f64
        }
    };
    let betas = StickBreakingBetas::new(DMatrix::from_fn(k, m - 1, |i, _| spread(i, k)), m)?;
    let rows: Vec<Vec<f64>> = (0..cfg.receivers)
        .map(|i| {
            if k == 1 {
                return vec![1.0];
            }
            let rest = (1.0 - dominance) / (k - 1) as f64;
            let mut row = vec![rest; k];
            row[i % k] = dominance;
            let total: f64 = row.iter().sum();
            row.iter().map(|v| v / total).collect()
        })
        .collect();
    let pi = StyleSimplex::from_rows(&rows)?;
    let mut components = Vec::with_capacity(m);
    for j in 0..m {
        let angle = std::f64::consts::TAU * j as f64 / m as f64;
        let mut alpha = normal_effect(&mut rng, p, 0.2);
        alpha[(0, 0)] = 3.0 * angle.cos();
        alpha[(1, 0)] = -1.0 + 2.0 * angle.sin();
        let scales = [0.45 + 0.1 * (j % 3) as f64, 0.5 + 0.05 * (j % 2) as f64];
        let corr = 0.3 * ((j as f64) * 1.7).sin();
        components.push(GaussianComponent::new(alpha, scales, corr)?);
    }
    let eta = (0..cfg.receivers).map(|_| normal_effect(&mut rng, p, 0.2)).collect();
    let delta = (0..cfg.servers).map(|_| normal_effect(&mut rng, p, 0.2)).collect();
    LsaParams::new(betas, pi, EmissionModel::new(components, eta, delta)?, cfg.priors)
}

/// Like [`separated_truth`], but every style concentrates on its own
/// pattern: style `i` favours pattern `M - 1 - i`. Requires `K <= M`.
pub fn vertex_truth(cfg: &SimConfig, dominance: f64) -> Result<LsaParams> {
    let (k, m) = (cfg.styles, cfg.patterns);
    if k > m {
        return Err(Error::InvalidConfig("vertex truth needs at most as many styles as patterns".into()));
    }
    let mut params = separated_truth(cfg, dominance)?;
    let values = DMatrix::from_fn(k, m - 1, |i, c| if c + 1 + i >= m { 2.2 } else { -3.0 } + 0.4 * i as f64);
    params.betas = StickBreakingBetas::new(values, m)?;
    Ok(params)
}

fn categorical(rng: &mut StreamRng, probs: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        if p > 0.0 {
            last = i;
        }
        if u < acc {
            return i;
        }
    }
    last
}

fn random_context(rng: &mut StreamRng) -> ServeContext {
    ServeContext {
        court_side: *CourtSide::ALL.choose(rng).expect("non-empty"),
        direction: Some(*ServeDirection::ALL.choose(rng).expect("non-empty")),
        surface: *Surface::ALL.choose(rng).expect("non-empty"),
    }
}

/// Sample every receiver's points. Receiver `i` uses its own stream, so the
/// result does not depend on thread scheduling.
pub fn sample_with_context(params: &LsaParams, cfg: &SimConfig) -> Result<SampledDataset> {
    cfg.validate()?;
    if params.receivers() != cfg.receivers || params.servers() != cfg.servers {
        return Err(Error::DimensionMismatch("parameter rosters differ from the config".into()));
    }
    if params.covariates() != cfg.covariates() {
        return Err(Error::DimensionMismatch(format!(
            "parameters have {} covariates, scheme {} has {}",
            params.covariates(),
            cfg.covariate_scheme,
            cfg.covariates()
        )));
    }
    let theta = params.theta();
    let per_receiver: Vec<Result<Vec<(ReturnObservation, ServeContext, LatentLabel)>>> = (0..cfg.receivers)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(cfg.seed, "receiver", i as u64);
            let mut out = Vec::with_capacity(cfg.points_per_receiver[i]);
            for _ in 0..cfg.points_per_receiver[i] {
                let style = categorical(&mut rng, params.pi.pi().row(i).iter().copied());
                let pattern = categorical(&mut rng, theta.theta().row(style).iter().copied());
                let server = rng.random_range(0..cfg.servers);
                let ctx = random_context(&mut rng);
                let x = cfg.covariate_scheme.encode(&ctx);
                let placeholder = ReturnObservation::new(i, server, 0.0, 0.0, x)?;
                let mu = params.emission.mean(pattern, &placeholder);
                let l = params.emission.component(pattern).sigma_chol();
                let z = Point::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
                let y = mu + l * z;
                let obs = ReturnObservation {
                    location: y,
                    ..placeholder
                };
                out.push((obs, ctx, LatentLabel { style, pattern }));
            }
            Ok(out)
        })
        .collect();
    let mut ds = SampledDataset {
        observations: Vec::new(),
        contexts: Vec::new(),
        latent: Vec::new(),
    };
    for chunk in per_receiver {
        for (o, c, l) in chunk? {
            ds.observations.push(o);
            ds.contexts.push(c);
            ds.latent.push(l);
        }
    }
    Ok(ds)
}

pub fn sample_dataset(params: &LsaParams, cfg: &SimConfig) -> Result<(Vec<ReturnObservation>, Vec<LatentLabel>)> {
    let ds = sample_with_context(params, cfg)?;
    Ok((ds.observations, ds.latent))
}

/// Rectangular evaluation grid; values are taken at cell centres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lateral: (f64, f64),
    pub depth: (f64, f64),
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.nx >= 2
            && self.ny >= 2
            && self.lateral.1 > self.lateral.0
            && self.depth.1 > self.depth.0
            && [self.lateral.0, self.lateral.1, self.depth.0, self.depth.1].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::DegenerateGrid)
        }
    }

    pub fn dx(&self) -> f64 {
        (self.lateral.1 - self.lateral.0) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.depth.1 - self.depth.0) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Centre of cell (ix, iy).
    pub fn center(&self, ix: usize, iy: usize) -> Point {
        Point::new(
            self.lateral.0 + (ix as f64 + 0.5) * self.dx(),
            self.depth.0 + (iy as f64 + 0.5) * self.dy(),
        )
    }

    /// Box covering `half_width` standard deviations around every pattern
    /// mean in `means`.
    pub fn covering(means: &[(Point, [f64; 2])], half_width: f64, nx: usize, ny: usize) -> Self {
        let mut lo = Point::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for (mu, s) in means {
            for d in 0..2 {
                lo[d] = lo[d].min(mu[d] - half_width * s[d]);
                hi[d] = hi[d].max(mu[d] + half_width * s[d]);
            }
        }
        Self {
            lateral: (lo[0], hi[0]),
            depth: (lo[1], hi[1]),
            nx,
            ny,
        }
    }
}

/// Row-major (depth rows, lateral columns) density values.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.spec.nx + ix]
    }

    /// Midpoint-rule integral over the box.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_area()
    }
}

/// Who the prediction is for: a specific receiver or server, or the
/// average over the roster.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveContext {
    pub receiver: Option<usize>,
    pub server: Option<usize>,
    pub covariates: DVector<f64>,
}

/// Pattern weights and per-pattern means/Choleskys for a context.
fn context_mixture(params: &LsaParams, ctx: &PredictiveContext) -> Result<(Vec<f64>, Vec<Point>)> {
    let em = &params.emission;
    if ctx.covariates.len() != params.covariates() {
        return Err(Error::DimensionMismatch("covariate length".into()));
    }
    if ctx.receiver.is_some_and(|r| r >= params.receivers()) || ctx.server.is_some_and(|s| s >= params.servers()) {
        return Err(Error::InvalidObservation("receiver or server outside roster".into()));
    }
    let p = params.covariates();
    let mean_of = |ms: &[EffectMatrix]| {
        let mut acc = EffectMatrix::zeros(p);
        for e in ms {
            acc += e / ms.len() as f64;
        }
        acc
    };
    let eta = ctx.receiver.map_or_else(|| mean_of(em.eta()), |r| em.eta()[r].clone());
    let delta = ctx.server.map_or_else(|| mean_of(em.delta()), |s| em.delta()[s].clone());
    let weights = match ctx.receiver {
        Some(r) => params.pattern_weights(r),
        None => params.tour_pattern_weights(),
    };
    let means = em
        .components()
        .iter()
        .map(|c| (c.alpha() + &eta - &delta) * &ctx.covariates)
        .collect();
    Ok((weights, means))
}

/// Predictive density of the return location on a grid, styles and
/// patterns summed out.
pub fn posterior_predictive_grid(params: &LsaParams, ctx: &PredictiveContext, grid: &GridSpec) -> Result<DensityGrid> {
    grid.validate()?;
    let (weights, means) = context_mixture(params, ctx)?;
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let comps = params.emission.components();
    let values = (0..grid.ny)
        .into_par_iter()
        .flat_map_iter(|iy| {
            let log_w = &log_w;
            let means = &means;
            (0..grid.nx).map(move |ix| {
                let y = grid.center(ix, iy);
                let terms: Vec<f64> = comps
                    .iter()
                    .enumerate()
                    .map(|(m, c)| log_w[m] + c.logpdf_at(&y, &means[m]))
                    .collect();
                log_sum_exp(&terms).exp()
            })
        })
        .collect();
    Ok(DensityGrid { spec: *grid, values })
}

/// One unweighted density grid per pattern, plus the pattern weights that
/// recombine them into the full predictive grid.
pub fn component_grids(
    params: &LsaParams,
    ctx: &PredictiveContext,
    grid: &GridSpec,
) -> Result<(Vec<DensityGrid>, Vec<f64>)> {
    grid.validate()?;
    let (weights, means) = context_mixture(params, ctx)?;
    let grids = params
        .emission
        .components()
        .iter()
        .zip(&means)
        .map(|(c, mu)| {
            let values = (0..grid.ny)
                .flat_map(|iy| (0..grid.nx).map(move |ix| (ix, iy)))
                .map(|(ix, iy)| c.logpdf_at(&grid.center(ix, iy), mu).exp())
                .collect();
            DensityGrid { spec: *grid, values }
        })
        .collect();
    Ok((grids, weights))
}

/// Default grid for a context: +-8 standard deviations around every
/// pattern mean.
pub fn default_grid(params: &LsaParams, ctx: &PredictiveContext, nx: usize, ny: usize) -> Result<GridSpec> {
    let (_, means) = context_mixture(params, ctx)?;
    let spans: Vec<(Point, [f64; 2])> = means
        .iter()
        .zip(params.emission.components())
        .map(|(mu, c)| (*mu, c.scales()))
        .collect();
    Ok(GridSpec::covering(&spans, 8.0, nx, ny))
}
