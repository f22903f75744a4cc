//! Starting values for EM restarts.

use nalgebra::{DMatrix, Matrix2};
use rand::Rng;

use crate::baselines::{from_lsa_start, BaselineKind};
use crate::error::Result;
use crate::inference::engine::run_em;
use crate::inference::FitConfig;
use crate::model::{
    EffectMatrix, EmissionModel, GaussianComponent, LsaParams, Point, PriorSettings, ReturnObservation, StickBreakingBetas,
    StyleSimplex,
};
use crate::rng::{substream, StreamRng};
use crate::sampler::{dirichlet_row, normal_effect, ordered_betas};

pub(crate) struct Shape {
    pub styles: usize,
    pub patterns: usize,
    pub receivers: usize,
    pub servers: usize,
    pub covariates: usize,
}

const LLOYD_ITERS: usize = 25;

fn dist2(a: &Point, b: &Point) -> f64 {
    (a - b).norm_squared()
}

fn pooled_covariance(points: &[Point]) -> Matrix2<f64> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Point::zeros(), |a, p| a + p) / n;
    let mut cov = points.iter().fold(Matrix2::zeros(), |a, p| {
        let d = p - mean;
        a + d * d.transpose()
    }) / n;
    let floor = 1e-6 * cov.trace().max(1e-6);
    cov[(0, 0)] += floor;
    cov[(1, 1)] += floor;
    cov
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = 0;
    let mut bd = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(center, p);
        if d < bd {
            bd = d;
            best = c;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. Returns the final
/// assignment of every point.
fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut StreamRng) -> Vec<usize> {
    let k = k.min(points.len()).max(1);
    let dim = points[0].len();
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    let mut assign: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
    for _ in 0..LLOYD_ITERS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(&centers, p)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    assign
}

/// Merge clusters by Ward linkage until `target` remain. Returns the group
/// of every input cluster.
fn ward_merge(means: &[Point], counts: &[usize], target: usize) -> Vec<usize> {
    let mut groups: Vec<(Point, f64, Vec<usize>)> = means
        .iter()
        .zip(counts)
        .enumerate()
        .filter(|(_, (_, &c))| c > 0)
        .map(|(i, (m, &c))| (*m, c as f64, vec![i]))
        .collect();
    while groups.len() > target {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let (ma, na, _) = &groups[a];
                let (mb, nb, _) = &groups[b];
                let cost = na * nb / (na + nb) * dist2(ma, mb);
                if cost < best.2 {
                    best = (a, b, cost);
                }
            }
        }
        let (a, b, _) = best;
        let (mb, nb, members) = groups.remove(b);
        let (ma, na, ref mut ma_members) = groups[a];
        ma_members.extend(members);
        let n = na + nb;
        groups[a].0 = (ma * na + mb * nb) / n;
        groups[a].1 = n;
    }
    let mut out = vec![usize::MAX; means.len()];
    for (g, (_, _, members)) in groups.iter().enumerate() {
        for &i in members {
            out[i] = g;
        }
    }
    out
}

fn intercept_effect(p: usize, mean: Point) -> EffectMatrix {
    let mut a = EffectMatrix::zeros(p);
    a.set_column(0, &mean);
    a
}

/// Pattern components from clustering the raw locations: `centers`
/// k-means clusters grouped into `patterns` groups.
pub(crate) fn clustered_components(
    data: &[ReturnObservation],
    patterns: usize,
    centers: usize,
    covariates: usize,
    rng: &mut StreamRng,
) -> Result<Vec<GaussianComponent>> {
    let points: Vec<Point> = data.iter().map(|o| o.location).collect();
    let pooled = pooled_covariance(&points);
    let k = centers.max(patterns);
    let rows: Vec<Vec<f64>> = points.iter().map(|p| vec![p[0], p[1]]).collect();
    let assign = kmeans(&rows, k, rng);
    let k = assign.iter().max().map_or(1, |m| m + 1);
    let mut sums = vec![Point::zeros(); k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(&assign) {
        sums[a] += p;
        counts[a] += 1;
    }
    let means: Vec<Point> = sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
    let group_of = ward_merge(&means, &counts, patterns);
    let n_groups = group_of.iter().filter(|g| **g != usize::MAX).max().map_or(0, |g| g + 1);

    let mut members: Vec<Vec<Point>> = vec![Vec::new(); n_groups];
    for (p, &a) in points.iter().zip(&assign) {
        members[group_of[a]].push(*p);
    }
    let mut comps = Vec::with_capacity(patterns);
    for pts in &members {
        let mean = pts.iter().fold(Point::zeros(), |a, p| a + p) / pts.len() as f64;
        let cov = if pts.len() >= 3 { pooled_covariance(pts) } else { pooled };
        let comp = GaussianComponent::from_covariance(intercept_effect(covariates, mean), &cov)
            .or_else(|_| GaussianComponent::from_covariance(intercept_effect(covariates, mean), &pooled))?;
        comps.push(comp);
    }
    while comps.len() < patterns {
        let mean = points[rng.random_range(0..points.len())];
        comps.push(GaussianComponent::from_covariance(intercept_effect(covariates, mean), &pooled)?);
    }
    // deterministic pattern order: by mean depth, then lateral
    comps.sort_by(|a, b| {
        let (ma, mb) = (a.alpha().column(0), b.alpha().column(0));
        ma[1].total_cmp(&mb[1]).then(ma[0].total_cmp(&mb[0]))
    });
    Ok(comps)
}

/// k-means pattern means, uniform style simplexes and sorted normal sticks.
pub(crate) fn kmeans_pattern_start(
    data: &[ReturnObservation],
    shape: &Shape,
    priors: &PriorSettings,
    seed: u64,
    restart: usize,
) -> Result<LsaParams> {
    let mut rng = substream(seed, "init-kmeans", restart as u64);
    let centers = (shape.styles * shape.patterns).max(2 * shape.patterns);
    let comps = clustered_components(data, shape.patterns, centers, shape.covariates, &mut rng)?;
    let betas = ordered_betas(&mut rng, shape.styles, shape.patterns)?;
    let emission = EmissionModel::without_offsets(comps, shape.receivers, shape.servers)?;
    LsaParams::new(
        betas,
        StyleSimplex::uniform(shape.receivers, shape.styles),
        emission,
        *priors,
    )
}

const WARMUP_ITERS: usize = 30;

/// Next permutation in lexicographic order; `false` after the last one.
fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).expect("pivot has a successor");
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

/// Candidate pattern orders: every permutation for small `m`, otherwise
/// the identity plus a fixed number of random permutations.
fn candidate_orders(m: usize, rng: &mut StreamRng) -> Vec<Vec<usize>> {
    const EXHAUSTIVE_MAX: usize = 8;
    const SAMPLED: usize = 40_000;
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..m).collect();
    if m <= EXHAUSTIVE_MAX {
        loop {
            out.push(p.clone());
            if !next_permutation(&mut p) {
                break;
            }
        }
    } else {
        out.push(p.clone());
        for _ in 0..SAMPLED {
            for i in (1..m).rev() {
                p.swap(i, rng.random_range(0..=i));
            }
            out.push(p.clone());
        }
    }
    out
}

/// Stick values reproducing the pattern simplex `q` (clipped away from 0).
fn sticks_of(q: &[f64]) -> Vec<f64> {
    const FLOOR: f64 = 1e-3;
    let total: f64 = q.iter().map(|v| v.max(FLOOR)).sum();
    let mut remaining = 1.0;
    let mut out = Vec::with_capacity(q.len() - 1);
    for v in &q[..q.len() - 1] {
        let v = v.max(FLOOR) / total;
        let nu = (v / remaining).clamp(1e-6, 1.0 - 1e-6);
        out.push((nu / (1.0 - nu)).ln());
        remaining -= v;
    }
    out
}

/// Style order and sticks for one pattern order, with the total squared
/// ordering violation across stick columns.
/// Score, pattern order, style ranking and per-style stick values.
type OrderChoice = (f64, Vec<usize>, Vec<usize>, Vec<Vec<f64>>);

fn order_score(profiles: &[Vec<f64>], order: &[usize]) -> (f64, Vec<usize>, Vec<Vec<f64>>) {
    let sticks: Vec<Vec<f64>> = profiles
        .iter()
        .map(|q| sticks_of(&order.iter().map(|&m| q[m]).collect::<Vec<_>>()))
        .collect();
    let mut styles: Vec<usize> = (0..profiles.len()).collect();
    styles.sort_by(|&a, &b| sticks[a][0].total_cmp(&sticks[b][0]).then(a.cmp(&b)));
    let mut violation = 0.0;
    for col in 1..order.len().saturating_sub(1) {
        for w in styles.windows(2) {
            violation += (sticks[w[0]][col] - sticks[w[1]][col]).max(0.0).powi(2);
        }
    }
    (violation, styles, sticks)
}

/// Start built from a short mixed-membership warm-up: receivers' pattern
/// weights are clustered into `K` style profiles, and patterns are ordered
/// so that the profiles fit the ordered stick-breaking family as closely as
/// possible.
pub(crate) fn kmeans_start(
    data: &[ReturnObservation],
    shape: &Shape,
    priors: &PriorSettings,
    seed: u64,
    restart: usize,
    cfg: &FitConfig,
) -> Result<LsaParams> {
    let base = kmeans_pattern_start(data, shape, priors, seed, restart)?;
    if shape.styles == 1 && shape.patterns == 1 {
        return Ok(base);
    }
    let m_n = shape.patterns;
    let k_n = shape.styles;
    let warm_cfg = FitConfig {
        max_iters: WARMUP_ITERS,
        rel_tol: 1e-6,
        ..cfg.clone()
    };
    let mm = from_lsa_start(BaselineKind::MixedMembership(m_n), &base)?;
    let warm = match run_em(mm, data, &warm_cfg) {
        Ok(run) => run.model,
        Err(e) if e.is_numerical() => return Ok(base),
        Err(e) => return Err(e),
    };

    let mut rng = substream(seed, "init-styles", restart as u64);
    let rows: Vec<Vec<f64>> = (0..shape.receivers).map(|i| warm.receiver_weights(i)).collect();
    let mut n_points = vec![0.0; shape.receivers];
    for o in data {
        n_points[o.receiver] += 1.0;
    }
    let assign = kmeans(&rows, k_n, &mut rng);
    let mut profiles = vec![vec![0.0; m_n]; k_n];
    let mut mass = vec![0.0; k_n];
    for (i, &c) in assign.iter().enumerate() {
        for m in 0..m_n {
            profiles[c][m] += n_points[i] * rows[i][m];
        }
        mass[c] += n_points[i];
    }
    for c in 0..k_n {
        if mass[c] > 0.0 {
            profiles[c].iter_mut().for_each(|v| *v /= mass[c]);
        } else {
            profiles[c] = dirichlet_row(&mut rng, m_n, 1.0);
        }
    }

    let mut best: Option<OrderChoice> = None;
    for order in candidate_orders(m_n, &mut rng) {
        let (score, styles, sticks) = order_score(&profiles, &order);
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, order, styles, sticks));
        }
    }
    let (_, order, styles, sticks) = best.expect("at least one order");

    let mut values = DMatrix::zeros(k_n, m_n - 1);
    for col in 0..m_n - 1 {
        let mut prev = f64::NEG_INFINITY;
        for (rank, &c) in styles.iter().enumerate() {
            let v = sticks[c][col].clamp(-6.0, 6.0).max(prev + 1e-3);
            values[(rank, col)] = v;
            prev = v;
        }
    }
    let betas = StickBreakingBetas::new(values, m_n)?;

    let mut rank_of = vec![0; k_n];
    for (rank, &c) in styles.iter().enumerate() {
        rank_of[c] = rank;
    }
    let pi = if k_n == 1 {
        StyleSimplex::uniform(shape.receivers, 1)
    } else {
        let rest = (1.0 - STYLE_INIT_WEIGHT) / (k_n - 1) as f64;
        StyleSimplex::new(DMatrix::from_fn(shape.receivers, k_n, |i, k| {
            if rank_of[assign[i]] == k {
                STYLE_INIT_WEIGHT
            } else {
                rest
            }
        }))?
    };

    let mut emission = warm.emission.clone();
    emission.set_components(order.iter().map(|&m| warm.emission.component(m).clone()).collect());
    LsaParams::new(betas, pi, emission, *priors)
}

const STYLE_INIT_WEIGHT: f64 = 0.7;

/// Sticks, style simplexes and pattern effects drawn from the prior, with
/// pattern intercepts shifted by the location mean and every covariance
/// set to the pooled location covariance.
pub(crate) fn prior_start(
    data: &[ReturnObservation],
    shape: &Shape,
    priors: &PriorSettings,
    seed: u64,
    restart: usize,
) -> Result<LsaParams> {
    let mut rng = substream(seed, "init-prior", restart as u64);
    let points: Vec<Point> = data.iter().map(|o| o.location).collect();
    let pooled = pooled_covariance(&points);
    let center = points.iter().fold(Point::zeros(), |a, p| a + p) / points.len() as f64;
    let betas = ordered_betas(&mut rng, shape.styles, shape.patterns)?;
    let rows: Vec<f64> = (0..shape.receivers)
        .flat_map(|_| dirichlet_row(&mut rng, shape.styles, priors.alpha0))
        .collect();
    let pi = StyleSimplex::new(DMatrix::from_row_slice(shape.receivers, shape.styles, &rows))?;
    let comps = (0..shape.patterns)
        .map(|_| {
            let mut alpha = normal_effect(&mut rng, shape.covariates, priors.alpha_scale);
            let c0 = alpha.column(0) + center;
            alpha.set_column(0, &c0);
            GaussianComponent::from_covariance(alpha, &pooled)
        })
        .collect::<Result<Vec<_>>>()?;
    let emission = EmissionModel::without_offsets(comps, shape.receivers, shape.servers)?;
    LsaParams::new(betas, pi, emission, *priors)
}
