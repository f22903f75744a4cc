//! Ordered stick-breaking: K x (M-1) ordered reals to K pattern simplexes.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::math::{inv_logit, log1m_inv_logit, log_inv_logit};

/// Latent values defining every style's pattern simplex.
///
/// Row `k` is style `k`, column `m` is the stick fraction for pattern `m`.
/// Each column is strictly ascending down the rows, which is what orders the
/// styles: later styles put more weight on the first pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct StickBreakingBetas {
    values: DMatrix<f64>,
    patterns: usize,
}

impl StickBreakingBetas {
    /// `values` must be `K x (patterns - 1)`.
    pub fn new(values: DMatrix<f64>, patterns: usize) -> Result<Self> {
        if patterns == 0 || values.nrows() == 0 {
            return Err(Error::DimensionMismatch(
                "need at least one style and one pattern".into(),
            ));
        }
        if values.ncols() + 1 != patterns {
            return Err(Error::DimensionMismatch(format!(
                "betas have {} columns, expected {} for {} patterns",
                values.ncols(),
                patterns - 1,
                patterns
            )));
        }
        check_ordering(&values)?;
        Ok(Self { values, patterns })
    }

    pub fn from_rows(rows: &[Vec<f64>], patterns: usize) -> Result<Self> {
        let k = rows.len();
        let cols = patterns.saturating_sub(1);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch("ragged beta rows".into()));
        }
        let values = DMatrix::from_fn(k, cols, |i, j| rows[i][j]);
        Self::new(values, patterns)
    }

    pub fn styles(&self) -> usize {
        self.values.nrows()
    }

    pub fn patterns(&self) -> usize {
        self.patterns
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.values[(k, m)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    /// Number of free values, `K * (M - 1)`.
    pub fn n_free(&self) -> usize {
        self.values.len()
    }

    /// Column by column: the first value, then log increments.
    pub fn to_unconstrained(&self) -> Vec<f64> {
        let k = self.styles();
        let mut out = Vec::with_capacity(self.n_free());
        for col in self.values.column_iter() {
            out.push(col[0]);
            for i in 1..k {
                out.push((col[i] - col[i - 1]).ln());
            }
        }
        out
    }

    pub fn from_unconstrained(styles: usize, patterns: usize, u: &[f64]) -> Result<Self> {
        let cols = patterns.saturating_sub(1);
        if u.len() != styles * cols {
            return Err(Error::DimensionMismatch(format!(
                "expected {} unconstrained stick values, got {}",
                styles * cols,
                u.len()
            )));
        }
        let mut values = DMatrix::zeros(styles, cols);
        for m in 0..cols {
            let block = &u[m * styles..(m + 1) * styles];
            let mut acc = block[0];
            values[(0, m)] = acc;
            for k in 1..styles {
                acc += block[k].exp();
                values[(k, m)] = acc;
            }
        }
        Self::new(values, patterns)
    }
}

fn check_ordering(values: &DMatrix<f64>) -> Result<()> {
    for (m, col) in values.column_iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::OrderingViolation { column: m });
        }
        if col.as_slice().windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::OrderingViolation { column: m });
        }
    }
    Ok(())
}

/// K x M matrix of pattern probabilities, one simplex per style.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSimplex {
    theta: DMatrix<f64>,
}

impl PatternSimplex {
    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn get(&self, k: usize, m: usize) -> f64 {
        self.theta[(k, m)]
    }

    pub fn row(&self, k: usize) -> Vec<f64> {
        self.theta.row(k).iter().copied().collect()
    }
}

/// Turns ordered stick values into per-style pattern simplexes:
/// `theta[k][m] = nu[k][m] * prod_{l<m} (1 - nu[k][l])` with
/// `nu = inv_logit(beta)`, the last pattern taking the remainder.
pub fn stick_break(betas: &StickBreakingBetas) -> Result<PatternSimplex> {
    check_ordering(&betas.values)?;
    let (k, m) = (betas.styles(), betas.patterns());
    let mut theta = DMatrix::zeros(k, m);
    for s in 0..k {
        let mut remaining = 1.0;
        for p in 0..m - 1 {
            let nu = inv_logit(betas.values[(s, p)]);
            theta[(s, p)] = nu * remaining;
            remaining *= 1.0 - nu;
        }
        theta[(s, m - 1)] = remaining;
    }
    Ok(PatternSimplex { theta })
}

/// `log theta`, computed without forming the products in linear space.
pub(crate) fn log_theta(betas: &StickBreakingBetas) -> DMatrix<f64> {
    let (k, m) = (betas.styles(), betas.patterns());
    let mut out = DMatrix::zeros(k, m);
    for s in 0..k {
        let mut log_remaining = 0.0;
        for p in 0..m - 1 {
            let b = betas.values[(s, p)];
            out[(s, p)] = log_inv_logit(b) + log_remaining;
            log_remaining += log1m_inv_logit(b);
        }
        out[(s, m - 1)] = log_remaining;
    }
    out
}

/// Gradient of `sum_{k,m} counts[k][m] * log theta[k][m]` with respect to
/// the betas (same shape as the betas).
pub(crate) fn log_theta_weighted_grad(betas: &StickBreakingBetas, counts: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, m) = (betas.styles(), betas.patterns());
    let mut grad = DMatrix::zeros(k, m - 1);
    for s in 0..k {
        let mut tail: f64 = counts.row(s).iter().sum();
        for l in 0..m - 1 {
            let nu = inv_logit(betas.values[(s, l)]);
            let c = counts[(s, l)];
            tail -= c;
            // tail = sum of counts on patterns after l
            grad[(s, l)] = c * (1.0 - nu) - nu * tail;
        }
    }
    grad
}

/// Chain rule from d/d(beta) to d/d(unconstrained), same layout as
/// [`StickBreakingBetas::to_unconstrained`].
pub(crate) fn chain_to_unconstrained(betas: &StickBreakingBetas, grad_beta: &DMatrix<f64>) -> Vec<f64> {
    let k = betas.styles();
    let u = betas.to_unconstrained();
    let mut out = vec![0.0; u.len()];
    for m in 0..betas.patterns() - 1 {
        let base = m * k;
        // suffix sums: beta_k depends on u_j for every j <= k
        let mut suffix = 0.0;
        for j in (0..k).rev() {
            suffix += grad_beta[(j, m)];
            out[base + j] = if j == 0 { suffix } else { suffix * u[base + j].exp() };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn oracle_logistic(x: f64) -> f64 {
        // independent route: tanh identity
        0.5 * (1.0 + (0.5 * x).tanh())
    }

    #[test]
    fn single_style_two_patterns_is_half_half() {
        let b = StickBreakingBetas::from_rows(&[vec![0.0]], 2).unwrap();
        let t = stick_break(&b).unwrap();
        assert_eq!(t.row(0), vec![0.5, 0.5]);
    }

    #[test]
    fn repeated_halving() {
        let b = StickBreakingBetas::from_rows(&[vec![0.0, 0.0]], 3).unwrap();
        let t = stick_break(&b).unwrap();
        assert_eq!(t.row(0), vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn three_styles_first_column_follows_logistic() {
        let b = StickBreakingBetas::from_rows(&[vec![-2.0], vec![0.0], vec![2.0]], 2).unwrap();
        let t = stick_break(&b).unwrap();
        for (k, beta) in [-2.0, 0.0, 2.0].iter().enumerate() {
            assert_abs_diff_eq!(t.get(k, 0), oracle_logistic(*beta), epsilon = 1e-12);
        }
        assert!(t.get(0, 0) < t.get(1, 0) && t.get(1, 0) < t.get(2, 0));
        assert_abs_diff_eq!(t.get(0, 0), 0.119_202_922_022_117_6, epsilon = 1e-12);
    }

    #[test]
    fn one_pattern_is_degenerate_simplex() {
        let b = StickBreakingBetas::new(DMatrix::zeros(3, 0), 1).unwrap();
        let t = stick_break(&b).unwrap();
        assert_eq!(t.theta().as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn unordered_column_rejected() {
        let err = StickBreakingBetas::from_rows(&[vec![0.0, 1.0], vec![0.5, 1.0]], 3).unwrap_err();
        assert!(matches!(err, Error::OrderingViolation { column: 1 }));
    }

    #[test]
    fn log_theta_matches_linear() {
        let b = StickBreakingBetas::from_rows(&[vec![-1.0, 0.3, 2.0], vec![0.5, 0.4, 2.5]], 4).unwrap();
        let t = stick_break(&b).unwrap();
        let lt = log_theta(&b);
        for (a, l) in t.theta().iter().zip(lt.iter()) {
            assert_abs_diff_eq!(a.ln(), *l, epsilon = 1e-13);
        }
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let b = StickBreakingBetas::from_rows(&[vec![-1.0, 0.3], vec![0.5, 0.9]], 3).unwrap();
        let counts = DMatrix::from_row_slice(2, 3, &[3.0, 1.0, 2.5, 0.5, 4.0, 1.0]);
        let f = |b: &StickBreakingBetas| log_theta(b).component_mul(&counts).sum();
        let g = log_theta_weighted_grad(&b, &counts);
        let h = 1e-6;
        for k in 0..2 {
            for m in 0..2 {
                let mut up = b.values().clone();
                up[(k, m)] += h;
                let mut dn = b.values().clone();
                dn[(k, m)] -= h;
                let fd = (f(&StickBreakingBetas::new(up, 3).unwrap())
                    - f(&StickBreakingBetas::new(dn, 3).unwrap()))
                    / (2.0 * h);
                assert_abs_diff_eq!(fd, g[(k, m)], epsilon = 1e-7);
            }
        }
    }

    proptest! {
        #[test]
        fn unconstrained_roundtrip(first in -5.0f64..5.0, incs in proptest::collection::vec(0.01f64..3.0, 3)) {
            let mut col = vec![first];
            for d in &incs {
                let last = *col.last().unwrap();
                col.push(last + d);
            }
            let rows: Vec<Vec<f64>> = col.iter().map(|v| vec![*v]).collect();
            let b = StickBreakingBetas::from_rows(&rows, 2).unwrap();
            let back = StickBreakingBetas::from_unconstrained(4, 2, &b.to_unconstrained()).unwrap();
            for (x, y) in b.values().iter().zip(back.values().iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
