//! Small dense BFGS maximizer for the inner M-step problems.

/// Outcome of [`maximize`]: the final point, whose value is never below
/// the starting value.
#[derive(Debug, Clone)]
pub(crate) struct Maximum {
    pub x: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximize `f` from `x0` with BFGS and Armijo backtracking. `f` returns
/// `None` outside its domain. Returns `None` only when `f(x0)` is undefined.
pub(crate) fn maximize<F>(mut f: F, x0: &[f64], max_iters: usize, grad_tol: f64) -> Option<Maximum>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let n = x0.len();
    let (mut fx, mut g) = f(x0)?;
    if !fx.is_finite() {
        return None;
    }
    let mut x = x0.to_vec();
    // inverse Hessian of -f
    let mut h = identity(n);
    let mut first = true;
    for _ in 0..max_iters {
        if norm(&g) <= grad_tol {
            break;
        }
        let mut dir = matvec(&h, &g);
        if dot(&dir, &g) <= 0.0 {
            h = identity(n);
            dir = g.clone();
        }
        if first {
            // scale the first step so it moves at most one unit
            let s = 1.0 / norm(&dir).max(1.0);
            dir.iter_mut().for_each(|d| *d *= s);
            first = false;
        }
        let slope = dot(&dir, &g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
            if let Some((fnew, gnew)) = f(&xn) {
                if fnew.is_finite() && fnew >= fx + 1e-4 * step * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // gradient of -f changes by -(gnew - g)
        let y: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        let improvement = fnew - fx;
        x = xn;
        fx = fnew;
        g = gnew;
        if sy > 1e-12 * norm(&s) * norm(&y) {
            bfgs_update(&mut h, &s, &y, sy);
        }
        if improvement.abs() <= 1e-15 * fx.abs().max(1.0) && norm(&g) <= grad_tol.max(1e-6) {
            break;
        }
    }
    Some(Maximum { x })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matvec(h: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    h.iter().map(|row| dot(row, v)).collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += (1.0 + rho * yhy) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
