//! Pattern-level Gaussians and the covariate mean structure.

use nalgebra::{DVector, Matrix2, Matrix2xX, Vector2};

use crate::error::{Error, Result};
use crate::math::{half_cauchy_logpdf, lkj2_logpdf, normal_logpdf, LN_2PI};
use crate::model::{PriorSettings, ReturnObservation};

/// Number of spatial dimensions (lateral, depth).
pub const DIM: usize = 2;

/// Added to the diagonal of every covariance Cholesky factor rebuilt from
/// scales and correlation.
pub const CHOLESKY_JITTER: f64 = 1e-8;

pub type Point = Vector2<f64>;

/// `D x P` matrix of effects; `mean = effect * x`.
pub type EffectMatrix = Matrix2xX<f64>;

/// One pattern: its population mean effects and observation covariance.
///
/// The covariance is stored as scales and a correlation so that the prior
/// (half-Cauchy on scales, LKJ on the correlation) applies directly; the
/// Cholesky factor is derived.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    alpha: EffectMatrix,
    scales: Vector2<f64>,
    corr: f64,
    sigma_chol: Matrix2<f64>,
    log_det_chol: f64,
}

impl GaussianComponent {
    pub fn new(alpha: EffectMatrix, scales: [f64; 2], corr: f64) -> Result<Self> {
        if !(scales[0] > 0.0 && scales[1] > 0.0) || !scales.iter().all(|s| s.is_finite()) {
            return Err(Error::NonPdCovariance);
        }
        if !(corr.abs() < 1.0) {
            return Err(Error::NonPdCovariance);
        }
        if alpha.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite mean effect".into()));
        }
        let c = (1.0 - corr * corr).sqrt();
        let sigma_chol = Matrix2::new(
            scales[0] + CHOLESKY_JITTER,
            0.0,
            scales[1] * corr,
            scales[1] * c + CHOLESKY_JITTER,
        );
        if !(sigma_chol[(1, 1)] > 0.0) {
            return Err(Error::NonPdCovariance);
        }
        let log_det_chol = sigma_chol[(0, 0)].ln() + sigma_chol[(1, 1)].ln();
        Ok(Self {
            alpha,
            scales: Vector2::new(scales[0], scales[1]),
            corr,
            sigma_chol,
            log_det_chol,
        })
    }

    /// Build from a symmetric positive-definite covariance.
    pub fn from_covariance(alpha: EffectMatrix, cov: &Matrix2<f64>) -> Result<Self> {
        let (v1, v2) = (cov[(0, 0)], cov[(1, 1)]);
        if !(v1 > 0.0 && v2 > 0.0) {
            return Err(Error::NonPdCovariance);
        }
        let (s1, s2) = (v1.sqrt(), v2.sqrt());
        let corr = (cov[(0, 1)] / (s1 * s2)).clamp(-0.999_999, 0.999_999);
        Self::new(alpha, [s1, s2], corr)
    }

    pub fn alpha(&self) -> &EffectMatrix {
        &self.alpha
    }

    pub fn scales(&self) -> [f64; 2] {
        [self.scales[0], self.scales[1]]
    }

    /// Off-diagonal of the correlation matrix.
    pub fn corr(&self) -> f64 {
        self.corr
    }

    pub fn sigma_chol(&self) -> &Matrix2<f64> {
        &self.sigma_chol
    }

    pub fn covariance(&self) -> Matrix2<f64> {
        self.sigma_chol * self.sigma_chol.transpose()
    }

    pub fn with_alpha(&self, alpha: EffectMatrix) -> Result<Self> {
        Self::new(alpha, self.scales(), self.corr)
    }

    pub fn with_covariance_params(&self, scales: [f64; 2], corr: f64) -> Result<Self> {
        Self::new(self.alpha.clone(), scales, corr)
    }

    /// `N(y; mu, Sigma)` in log space using the cached factor.
    #[inline]
    pub(crate) fn logpdf_at(&self, y: &Point, mu: &Point) -> f64 {
        let l = &self.sigma_chol;
        let e0 = y[0] - mu[0];
        let e1 = y[1] - mu[1];
        let v0 = e0 / l[(0, 0)];
        let v1 = (e1 - l[(1, 0)] * v0) / l[(1, 1)];
        -LN_2PI - self.log_det_chol - 0.5 * (v0 * v0 + v1 * v1)
    }

    /// Log prior on the covariance: LKJ on the correlation, half-Cauchy on
    /// both scales.
    pub(crate) fn covariance_log_prior(&self, priors: &PriorSettings) -> f64 {
        lkj2_logpdf(self.corr, priors.lkj_eta)
            + half_cauchy_logpdf(self.scales[0], priors.scale_tau)
            + half_cauchy_logpdf(self.scales[1], priors.scale_tau)
    }
}

/// `(alpha + eta_r - delta_s) * x`.
pub fn component_mean(
    comp: &GaussianComponent,
    eta_r: &EffectMatrix,
    delta_s: &EffectMatrix,
    x: &DVector<f64>,
) -> Result<Point> {
    let p = comp.alpha.ncols();
    if eta_r.ncols() != p || delta_s.ncols() != p || x.len() != p {
        return Err(Error::DimensionMismatch(format!(
            "effects are 2x{p}, eta 2x{}, delta 2x{}, covariates {}",
            eta_r.ncols(),
            delta_s.ncols(),
            x.len()
        )));
    }
    Ok((&comp.alpha + eta_r - delta_s) * x)
}

/// Bivariate normal log density with covariance `L L^T`.
pub fn mvn_logpdf(y: &Point, mu: &Point, sigma_chol: &Matrix2<f64>) -> Result<f64> {
    let (l00, l10, l11) = (sigma_chol[(0, 0)], sigma_chol[(1, 0)], sigma_chol[(1, 1)]);
    if !(l00 > 0.0 && l11 > 0.0) {
        return Err(Error::NonPdCovariance);
    }
    let e = y - mu;
    let v0 = e[0] / l00;
    let v1 = (e[1] - l10 * v0) / l11;
    Ok(-LN_2PI - l00.ln() - l11.ln() - 0.5 * (v0 * v0 + v1 * v1))
}

/// The observation model shared by every mixture family: M pattern
/// Gaussians plus receiver and server offsets on the mean effects.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionModel {
    components: Vec<GaussianComponent>,
    eta: Vec<EffectMatrix>,
    delta: Vec<EffectMatrix>,
}

impl EmissionModel {
    pub fn new(
        components: Vec<GaussianComponent>,
        eta: Vec<EffectMatrix>,
        delta: Vec<EffectMatrix>,
    ) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::DimensionMismatch("no pattern components".into()));
        };
        let p = first.alpha.ncols();
        if p == 0 {
            return Err(Error::DimensionMismatch("need at least one covariate".into()));
        }
        if eta.is_empty() || delta.is_empty() {
            return Err(Error::DimensionMismatch("empty receiver or server roster".into()));
        }
        let all = components
            .iter()
            .map(|c| &c.alpha)
            .chain(eta.iter())
            .chain(delta.iter());
        for m in all {
            if m.ncols() != p {
                return Err(Error::DimensionMismatch(format!(
                    "effect matrix is 2x{}, expected 2x{p}",
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig("non-finite offset".into()));
            }
        }
        Ok(Self {
            components,
            eta,
            delta,
        })
    }

    /// Components with all offsets zero.
    pub fn without_offsets(
        components: Vec<GaussianComponent>,
        n_receivers: usize,
        n_servers: usize,
    ) -> Result<Self> {
        let p = components.first().map_or(0, |c| c.alpha.ncols());
        Self::new(
            components,
            vec![EffectMatrix::zeros(p); n_receivers],
            vec![EffectMatrix::zeros(p); n_servers],
        )
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn component(&self, m: usize) -> &GaussianComponent {
        &self.components[m]
    }

    pub fn eta(&self) -> &[EffectMatrix] {
        &self.eta
    }

    pub fn delta(&self) -> &[EffectMatrix] {
        &self.delta
    }

    pub fn n_patterns(&self) -> usize {
        self.components.len()
    }

    pub fn n_receivers(&self) -> usize {
        self.eta.len()
    }

    pub fn n_servers(&self) -> usize {
        self.delta.len()
    }

    pub fn n_covariates(&self) -> usize {
        self.components[0].alpha.ncols()
    }

    pub(crate) fn set_components(&mut self, components: Vec<GaussianComponent>) {
        self.components = components;
    }

    pub(crate) fn set_eta(&mut self, eta: Vec<EffectMatrix>) {
        self.eta = eta;
    }

    pub(crate) fn set_delta(&mut self, delta: Vec<EffectMatrix>) {
        self.delta = delta;
    }

    pub fn check_observation(&self, obs: &ReturnObservation) -> Result<()> {
        if obs.receiver >= self.n_receivers() || obs.server >= self.n_servers() {
            return Err(Error::InvalidObservation(format!(
                "receiver {} / server {} outside rosters of {} / {}",
                obs.receiver,
                obs.server,
                self.n_receivers(),
                self.n_servers()
            )));
        }
        if obs.covariates.len() != self.n_covariates() {
            return Err(Error::DimensionMismatch(format!(
                "observation has {} covariates, model expects {}",
                obs.covariates.len(),
                self.n_covariates()
            )));
        }
        Ok(())
    }

    /// `(eta_r - delta_s) * x` for an observation.
    #[inline]
    pub(crate) fn offset_mean(&self, obs: &ReturnObservation) -> Point {
        &self.eta[obs.receiver] * &obs.covariates - &self.delta[obs.server] * &obs.covariates
    }

    /// Mean of pattern `m` for this observation.
    pub fn mean(&self, m: usize, obs: &ReturnObservation) -> Point {
        &self.components[m].alpha * &obs.covariates + self.offset_mean(obs)
    }

    /// Per-pattern Gaussian log densities for one observation.
    pub(crate) fn component_logpdfs(&self, obs: &ReturnObservation, out: &mut [f64]) {
        let offset = self.offset_mean(obs);
        for (slot, comp) in out.iter_mut().zip(&self.components) {
            let mu = &comp.alpha * &obs.covariates + offset;
            *slot = comp.logpdf_at(&obs.location, &mu);
        }
    }

    /// Log prior of every mean effect, offset and covariance.
    pub fn log_prior(&self, priors: &PriorSettings) -> f64 {
        let effects = |ms: &[EffectMatrix], scale: f64| -> f64 {
            ms.iter()
                .flat_map(|m| m.iter())
                .map(|v| normal_logpdf(*v, scale))
                .sum()
        };
        let alphas: f64 = self
            .components
            .iter()
            .flat_map(|c| c.alpha.iter())
            .map(|v| normal_logpdf(*v, priors.alpha_scale))
            .sum();
        let covs: f64 = self
            .components
            .iter()
            .map(|c| c.covariance_log_prior(priors))
            .sum();
        alphas + effects(&self.eta, priors.eta_scale) + effects(&self.delta, priors.delta_scale) + covs
    }

    /// Average receiver offset minus average server offset, the offset of
    /// an "average receiver against an average server".
    pub fn mean_offset(&self) -> EffectMatrix {
        let p = self.n_covariates();
        let mut acc = EffectMatrix::zeros(p);
        for e in &self.eta {
            acc += e / self.eta.len() as f64;
        }
        for d in &self.delta {
            acc -= d / self.delta.len() as f64;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn em(rows: &[[f64; 2]; 2]) -> EffectMatrix {
        EffectMatrix::from_row_slice(&[rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    #[test]
    fn worked_mean_example_selects_first_column() {
        let comp = GaussianComponent::new(em(&[[1.5, -0.4], [2.5, 0.7]]), [1.0, 1.0], 0.0).unwrap();
        let zero = EffectMatrix::zeros(2);
        let mu = component_mean(&comp, &zero, &zero, &DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(mu, Point::new(1.5, 2.5));
    }

    #[test]
    fn equal_offsets_cancel() {
        let comp = GaussianComponent::new(em(&[[1.0, 2.0], [3.0, 4.0]]), [1.0, 1.0], 0.0).unwrap();
        let off = em(&[[0.3, -7.0], [1.1, 2.0]]);
        let x = DVector::from_vec(vec![0.4, -1.3]);
        let mu = component_mean(&comp, &off, &off, &x).unwrap();
        let direct = comp.alpha() * &x;
        assert_abs_diff_eq!(mu[0], direct[0], epsilon = 1e-14);
        assert_abs_diff_eq!(mu[1], direct[1], epsilon = 1e-14);
    }

    #[test]
    fn hand_arithmetic_mean() {
        let comp = GaussianComponent::new(em(&[[1.0, 2.0], [3.0, 4.0]]), [1.0, 1.0], 0.0).unwrap();
        let eta = em(&[[0.5, 0.0], [0.0, 0.0]]);
        let delta = em(&[[0.0, 0.0], [0.0, 1.0]]);
        let mu = component_mean(&comp, &eta, &delta, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!(mu, Point::new(3.5, 6.0));
    }

    #[test]
    fn mean_dimension_mismatch() {
        let comp = GaussianComponent::new(EffectMatrix::zeros(2), [1.0, 1.0], 0.0).unwrap();
        let zero = EffectMatrix::zeros(2);
        let err = component_mean(&comp, &zero, &zero, &DVector::from_vec(vec![1.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch(_)));
    }

    #[test]
    fn standard_normal_at_mode() {
        let v = mvn_logpdf(&Point::zeros(), &Point::zeros(), &Matrix2::identity()).unwrap();
        assert_abs_diff_eq!(v, -1.837_877_066_4, epsilon = 1e-10);
    }

    #[test]
    fn zero_quadratic_form_depends_on_det_only() {
        let l = Matrix2::new(2.0, 0.0, 0.7, 0.5);
        let y = Point::new(3.0, -1.0);
        let v = mvn_logpdf(&y, &y, &l).unwrap();
        assert_abs_diff_eq!(v, -(2.0 * std::f64::consts::PI).ln() - (2.0f64 * 0.5).ln(), epsilon = 1e-14);
    }

    #[test]
    fn diagonal_covariance_scalar_oracle() {
        let l = Matrix2::new(2.0, 0.0, 0.0, 3.0);
        let v = mvn_logpdf(&Point::new(1.0, 2.0), &Point::zeros(), &l).unwrap();
        // product of two independent univariate normals
        let uni = |x: f64, s: f64| -0.5 * (2.0 * std::f64::consts::PI).ln() - s.ln() - 0.5 * (x / s).powi(2);
        assert_abs_diff_eq!(v, uni(1.0, 2.0) + uni(2.0, 3.0), epsilon = 1e-14);
        let expected = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 36f64.ln() - 0.5 * (0.25 + 4.0 / 9.0);
        assert_abs_diff_eq!(v, expected, epsilon = 1e-14);
    }

    #[test]
    fn non_positive_diagonal_rejected() {
        let l = Matrix2::new(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            mvn_logpdf(&Point::zeros(), &Point::zeros(), &l),
            Err(Error::NonPdCovariance)
        ));
        assert!(GaussianComponent::new(EffectMatrix::zeros(1), [1.0, -1.0], 0.0).is_err());
        assert!(GaussianComponent::new(EffectMatrix::zeros(1), [1.0, 1.0], 1.0).is_err());
    }

    /// Tensor-product Gauss-Legendre over +-10 sigma.
    #[test]
    fn density_integrates_to_one() {
        let comp = GaussianComponent::new(EffectMatrix::zeros(1), [0.8, 2.0], 0.6).unwrap();
        let mu = Point::new(1.0, -2.0);
        let (nodes, weights) = gauss_legendre(64);
        let panels = 8;
        let s = comp.scales();
        let mut total = 0.0;
        for px in 0..panels {
            for py in 0..panels {
                let (ax, bx) = panel(mu[0], s[0], px, panels);
                let (ay, by) = panel(mu[1], s[1], py, panels);
                for (xi, wx) in nodes.iter().zip(&weights) {
                    for (yi, wy) in nodes.iter().zip(&weights) {
                        let x = 0.5 * (bx - ax) * xi + 0.5 * (bx + ax);
                        let y = 0.5 * (by - ay) * yi + 0.5 * (by + ay);
                        let d = mvn_logpdf(&Point::new(x, y), &mu, comp.sigma_chol()).unwrap().exp();
                        total += d * wx * wy * 0.25 * (bx - ax) * (by - ay);
                    }
                }
            }
        }
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    fn panel(c: f64, s: f64, i: usize, n: usize) -> (f64, f64) {
        let w = 20.0 * s / n as f64;
        let a = c - 10.0 * s + i as f64 * w;
        (a, a + w)
    }

    /// Golub-Welsch-free Newton iteration on Legendre polynomials.
    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                let dz = p1 / dp;
                z -= dz;
                if dz.abs() < 1e-15 {
                    x[i] = z;
                    w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                    break;
                }
            }
        }
        (x, w)
    }
}
