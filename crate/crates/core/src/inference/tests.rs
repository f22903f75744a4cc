use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, Matrix2};
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::model::unconstrained::log_posterior_with_gradient;
use crate::model::{marginal_loglik, mvn_logpdf, stick_break, EffectMatrix, GaussianComponent, Point};
use crate::rng::substream;
use crate::sampler::{draw_params, sample_dataset, separated_truth, SimConfig};

fn obs(receiver: usize, server: usize, y: (f64, f64)) -> ReturnObservation {
    ReturnObservation::new(receiver, server, y.0, y.1, vec![1.0]).unwrap()
}

fn random_instance(k: usize, m: usize, r: usize, n: usize, seed: u64) -> (LsaParams, Vec<ReturnObservation>) {
    let cfg = SimConfig::new(k, m, r, n, seed);
    let params = draw_params(&cfg).unwrap();
    let (data, _) = sample_dataset(&params, &cfg).unwrap();
    (params, data)
}

fn quick_config(seed: u64) -> FitConfig {
    FitConfig {
        max_iters: 200,
        n_restarts: 2,
        seed,
        ..FitConfig::default()
    }
}

#[test]
fn e_step_single_state_is_certain() {
    let (params, data) = random_instance(1, 1, 2, 10, 3);
    let r = e_step(&params, &data).unwrap();
    assert!(r.values.iter().all(|v| *v == 1.0));
}

#[test]
fn e_step_symmetric_model_is_uniform() {
    let comp = GaussianComponent::new(EffectMatrix::zeros(1), [1.0, 1.0], 0.0).unwrap();
    let emission = EmissionModel::without_offsets(vec![comp; 3], 1, 1).unwrap();
    // beta = logit(1/3), logit(1/2) gives theta = (1/3, 1/3, 1/3) for both styles
    let b1 = (1.0f64 / 2.0).ln();
    let betas = StickBreakingBetas::from_rows(&[vec![b1 - 1e-9, 0.0 - 1e-9], vec![b1, 0.0]], 3).unwrap();
    let params = LsaParams::new(betas, StyleSimplex::uniform(1, 2), emission, PriorSettings::default()).unwrap();
    let data = vec![obs(0, 0, (0.3, -1.0)), obs(0, 0, (2.0, 0.5))];
    let r = e_step(&params, &data).unwrap();
    for v in &r.values {
        assert_abs_diff_eq!(*v, 1.0 / 6.0, epsilon = 1e-8);
    }
}

#[test]
fn e_step_matches_linear_space_normalization() {
    let (params, data) = random_instance(2, 2, 3, 20, 17);
    let r = e_step(&params, &data).unwrap();
    let theta = params.theta();
    for (n, o) in data.iter().enumerate() {
        let mut raw = [0.0; 4];
        for k in 0..2 {
            for m in 0..2 {
                let c = params.emission.component(m);
                let mu = params.emission.mean(m, o);
                raw[k * 2 + m] = params.pi.pi()[(o.receiver, k)]
                    * theta.get(k, m)
                    * mvn_logpdf(&o.location, &mu, c.sigma_chol()).unwrap().exp();
            }
        }
        let total: f64 = raw.iter().sum();
        for l in 0..4 {
            assert_abs_diff_eq!(r.row(n)[l], raw[l] / total, epsilon = 1e-10);
        }
    }
}

fn style_resp(rows: &[[f64; 2]]) -> Responsibilities {
    // K = 2, M = 1
    Responsibilities::from_rows(2, 1, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn m_step_pi_flat_prior_is_empirical() {
    let data = vec![obs(0, 0, (0.0, 0.0)), obs(0, 0, (0.0, 0.0)), obs(1, 0, (0.0, 0.0))];
    let resp = style_resp(&[[0.2, 0.8], [0.6, 0.4], [1.0, 0.0]]);
    let pi = m_step_pi(&resp, &data, 2, 1.0).unwrap();
    assert_abs_diff_eq!(pi.pi()[(0, 0)], 0.4, epsilon = 1e-15);
    assert_abs_diff_eq!(pi.pi()[(0, 1)], 0.6, epsilon = 1e-15);
    assert_eq!(pi.row(1), vec![1.0, 0.0]);
}

#[test]
fn m_step_pi_one_hot_style() {
    let data = vec![obs(0, 0, (0.0, 0.0)); 4];
    let rows = vec![vec![0.0, 1.0, 0.0]; 4];
    let resp = Responsibilities::from_rows(3, 1, &rows).unwrap();
    assert_eq!(m_step_pi(&resp, &data, 1, 1.0).unwrap().row(0), vec![0.0, 1.0, 0.0]);
}

#[test]
fn m_step_pi_dirichlet_map_arithmetic() {
    let data = vec![obs(0, 0, (0.0, 0.0)); 4];
    let resp = style_resp(&[[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
    let pi = m_step_pi(&resp, &data, 1, 2.0).unwrap();
    assert_abs_diff_eq!(pi.pi()[(0, 0)], 4.0 / 6.0, epsilon = 1e-15);
    assert_abs_diff_eq!(pi.pi()[(0, 1)], 2.0 / 6.0, epsilon = 1e-15);
}

#[test]
fn m_step_pi_rejects_unobserved_receiver() {
    let data = vec![obs(0, 0, (0.0, 0.0))];
    let resp = style_resp(&[[0.5, 0.5]]);
    assert!(matches!(m_step_pi(&resp, &data, 2, 1.0), Err(Error::AllZeroRow { receiver: 1 })));
}

#[test]
fn m_step_theta_symmetric_split() {
    let rows = vec![vec![0.5, 0.5]; 1000];
    let resp = Responsibilities::from_rows(1, 2, &rows).unwrap();
    let start = StickBreakingBetas::from_rows(&[vec![1.3]], 2).unwrap();
    let b = m_step_theta(&resp, &start, &InnerOptConfig::default()).unwrap();
    assert_abs_diff_eq!(b.get(0, 0), 0.0, epsilon = 1e-6);
    let theta = stick_break(&b).unwrap();
    assert_abs_diff_eq!(theta.get(0, 0), 0.5, epsilon = 1e-6);
}

#[test]
fn m_step_theta_keeps_ordering_under_opposing_pull() {
    // style 0 wants pattern 1 (last), style 1 wants pattern 0
    let mut rows = vec![vec![0.0, 1.0, 0.0, 0.0]; 50];
    rows.extend(vec![vec![0.0, 0.0, 1.0, 0.0]; 50]);
    let resp = Responsibilities::from_rows(2, 2, &rows).unwrap();
    let start = StickBreakingBetas::from_rows(&[vec![-0.5], vec![0.5]], 2).unwrap();
    let b = m_step_theta(&resp, &start, &InnerOptConfig::default()).unwrap();
    assert!(b.get(0, 0) < b.get(1, 0));
    let theta = stick_break(&b).unwrap();
    assert!(theta.get(1, 0) > theta.get(0, 0));
}

#[test]
fn m_step_theta_matches_grid_search() {
    let rows: Vec<Vec<f64>> = (0..40)
        .map(|n| {
            let a = 0.1 + 0.8 * ((n * 7 % 11) as f64 / 10.0);
            let b = 0.3 + 0.4 * ((n % 3) as f64 / 2.0);
            vec![a * b, a * (1.0 - b), (1.0 - a) * 0.6, (1.0 - a) * 0.4]
        })
        .collect();
    let resp = Responsibilities::from_rows(2, 2, &rows).unwrap();
    let counts = resp.joint_counts();
    let objective = |b1: f64, b2: f64| {
        let betas = StickBreakingBetas::from_rows(&[vec![b1], vec![b2]], 2).unwrap();
        let lt = log_theta(&betas);
        counts.component_mul(&lt).sum() - 0.5 * (b1 * b1 + b2 * b2)
    };
    let start = StickBreakingBetas::from_rows(&[vec![-1.0], vec![1.0]], 2).unwrap();
    let b = m_step_theta(&resp, &start, &InnerOptConfig::default()).unwrap();
    let fitted = objective(b.get(0, 0), b.get(1, 0));
    let mut grid_best = f64::NEG_INFINITY;
    for i in 0..=400 {
        let b1 = -4.0 + 8.0 * i as f64 / 400.0;
        for j in 1..=400 {
            let d = 4.0 * j as f64 / 400.0;
            grid_best = grid_best.max(objective(b1, b1 + d));
        }
    }
    assert!(fitted >= grid_best - 1e-3, "fitted {fitted} grid {grid_best}");
    assert!(fitted - grid_best < 1e-3 + 0.05);
}

fn weak_priors() -> PriorSettings {
    PriorSettings {
        alpha_scale: 1e6,
        eta_scale: 1e6,
        delta_scale: 1e6,
        scale_tau: 1e6,
        ..PriorSettings::default()
    }
}

#[test]
fn gaussian_step_reduces_to_mvn_mle() {
    let mut rng = substream(5, "t", 0);
    let data: Vec<ReturnObservation> = (0..200)
        .map(|_| {
            let a: f64 = rng.random::<f64>() * 2.0;
            obs(0, 0, (a + 0.5 * rng.random::<f64>(), -a + rng.random::<f64>()))
        })
        .collect();
    let comp = GaussianComponent::new(EffectMatrix::zeros(1), [1.0, 1.0], 0.0).unwrap();
    let emission = EmissionModel::without_offsets(vec![comp], 1, 1).unwrap();
    let resp = Responsibilities::from_rows(1, 1, &vec![vec![1.0]; data.len()]).unwrap();
    let opts = GaussianStepOptions {
        fix_offsets: true,
        ..GaussianStepOptions::default()
    };
    let out = m_step_gaussians(&resp, &data, &emission, &weak_priors(), &opts).unwrap();
    let n = data.len() as f64;
    let mean = data.iter().fold(Point::zeros(), |a, o| a + o.location) / n;
    let cov = data.iter().fold(Matrix2::zeros(), |a, o| {
        let d = o.location - mean;
        a + d * d.transpose()
    }) / n;
    let c = out.component(0);
    assert_abs_diff_eq!(c.alpha()[(0, 0)], mean[0], epsilon = 1e-8);
    assert_abs_diff_eq!(c.alpha()[(1, 0)], mean[1], epsilon = 1e-8);
    let fitted = c.covariance();
    for i in 0..2 {
        for j in 0..2 {
            assert_abs_diff_eq!(fitted[(i, j)], cov[(i, j)], epsilon = 1e-5);
        }
    }
}

/// Per-pattern, per-coordinate weighted least squares.
fn wls(data: &[ReturnObservation], weights: &[f64]) -> EffectMatrix {
    let p = data[0].covariates.len();
    let mut g = DMatrix::<f64>::zeros(p, p);
    let mut z = DMatrix::<f64>::zeros(p, 2);
    for (o, w) in data.iter().zip(weights) {
        g += *w * &o.covariates * o.covariates.transpose();
        for d in 0..2 {
            for i in 0..p {
                z[(i, d)] += w * o.covariates[i] * o.location[d];
            }
        }
    }
    let sol = g.lu().solve(&z).unwrap();
    EffectMatrix::from_fn(p, |d, i| sol[(i, d)])
}

#[test]
fn gaussian_step_one_hot_matches_wls() {
    let mut cfg = SimConfig::new(1, 2, 1, 400, 9);
    cfg.covariate_scheme = crate::io::encode::CovariateScheme::InterceptSurface;
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, latent) = sample_dataset(&truth, &cfg).unwrap();
    let rows: Vec<Vec<f64>> = latent
        .iter()
        .map(|l| if l.pattern == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        .collect();
    let resp = Responsibilities::from_rows(1, 2, &rows).unwrap();
    let zero = EmissionModel::without_offsets(truth.emission.components().to_vec(), 1, 1).unwrap();
    let opts = GaussianStepOptions {
        fix_offsets: true,
        ..GaussianStepOptions::default()
    };
    let out = m_step_gaussians(&resp, &data, &zero, &weak_priors(), &opts).unwrap();
    for m in 0..2 {
        let w: Vec<f64> = rows.iter().map(|r| r[m]).collect();
        let oracle = wls(&data, &w);
        for (a, b) in out.component(m).alpha().iter().zip(oracle.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }
}

#[test]
fn wider_prior_moves_effects_toward_wls() {
    let mut cfg = SimConfig::new(1, 1, 1, 30, 21);
    cfg.covariate_scheme = crate::io::encode::CovariateScheme::InterceptSurface;
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let resp = Responsibilities::from_rows(1, 1, &vec![vec![1.0]; data.len()]).unwrap();
    let zero = EmissionModel::without_offsets(truth.emission.components().to_vec(), 1, 1).unwrap();
    let opts = GaussianStepOptions {
        fix_offsets: true,
        inner_max_iters: 1,
        ..GaussianStepOptions::default()
    };
    let oracle = wls(&data, &vec![1.0; data.len()]);
    let mut prev_gap: Option<f64> = None;
    for scale in [0.05, 0.1, 0.2, 0.4] {
        let priors = PriorSettings {
            alpha_scale: scale,
            ..PriorSettings::default()
        };
        let out = m_step_gaussians(&resp, &data, &zero, &priors, &opts).unwrap();
        let gap = (out.component(0).alpha() - &oracle).norm();
        if let Some(p) = prev_gap {
            assert!(gap < p, "gap {gap} not below {p}");
        }
        prev_gap = Some(gap);
    }
}

#[test]
fn single_gaussian_fit_matches_mle() {
    let cfg = SimConfig::new(1, 1, 1, 400, 4);
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let fc = FitConfig {
        fix_offsets: true,
        priors: weak_priors(),
        ..quick_config(1)
    };
    let report = fit(&data, 1, 1, &fc).unwrap();
    assert!(report.converged);
    let c = report.params.emission.component(0);
    let true_mean = truth.emission.mean(0, &data[0]);
    let n = data.len() as f64;
    for d in 0..2 {
        let se = truth.emission.component(0).covariance()[(d, d)].sqrt() / n.sqrt();
        assert!((c.alpha()[(d, 0)] - true_mean[d]).abs() < 3.0 * se);
    }
    // the objective is the closed-form MVN likelihood at the sample moments
    // plus the prior terms
    let mean = data.iter().fold(Point::zeros(), |a, o| a + o.location) / n;
    let cov = data.iter().fold(Matrix2::zeros(), |a, o| {
        let d = o.location - mean;
        a + d * d.transpose()
    }) / n;
    let mle_ll = -n * (std::f64::consts::TAU.ln() + 0.5 * cov.determinant().ln() + 1.0);
    let ll = marginal_loglik(&report.params, &data).unwrap();
    assert_abs_diff_eq!(ll, mle_ll, epsilon = 1e-4);
    let prior = log_prior(&report.params).unwrap();
    assert_abs_diff_eq!(report.final_objective(), ll + prior, epsilon = 1e-9 * ll.abs());
}

#[test]
fn fit_is_deterministic() {
    let (_, data) = random_instance(2, 2, 4, 40, 8);
    let a = fit(&data, 2, 2, &quick_config(3)).unwrap();
    let b = fit(&data, 2, 2, &quick_config(3)).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.objective_trace, b.objective_trace);
    assert_eq!(a.per_point_loglik, b.per_point_loglik);
}

#[test]
fn fit_report_invariants() {
    let cfg = SimConfig::new(2, 3, 6, 80, 12);
    let truth = separated_truth(&cfg, 0.8).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let report = fit(&data, 2, 3, &quick_config(2)).unwrap();
    for w in report.objective_trace.windows(2) {
        assert!(w[1] >= w[0] - engine::slack(w[0]));
    }
    let ll = marginal_loglik(&report.params, &data).unwrap();
    assert_abs_diff_eq!(report.loglik(), ll, epsilon = 1e-8 * ll.abs());
    assert_abs_diff_eq!(report.final_objective(), ll + log_prior(&report.params).unwrap(), epsilon = 1e-8 * ll.abs());
    for n in 0..report.responsibilities.len() {
        assert_abs_diff_eq!(report.responsibilities.row(n).iter().sum::<f64>(), 1.0, epsilon = 1e-10);
    }
    assert_eq!(report.restart_objectives.len(), 2);
}

#[test]
fn converged_fit_is_stationary() {
    let cfg = SimConfig::new(2, 2, 4, 100, 31);
    let truth = separated_truth(&cfg, 0.8).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let fc = FitConfig {
        rel_tol: 1e-12,
        max_iters: 3000,
        n_restarts: 1,
        ..FitConfig::default()
    };
    let report = fit(&data, 2, 2, &fc).unwrap();
    let (value, grad) = log_posterior_with_gradient(&report.params, &data).unwrap();
    let gn = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!(gn < 1e-3 * value.abs(), "gradient norm {gn}, objective {value}");
}

#[test]
fn em_objective_is_monotone_on_random_instances() {
    for seed in 0..20 {
        let (_, data) = random_instance(2, 2, 3, 40, 100 + seed);
        let fc = FitConfig {
            max_iters: 60,
            n_restarts: 1,
            seed,
            ..FitConfig::default()
        };
        let report = fit(&data, 2, 2, &fc).unwrap();
        for w in report.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - engine::slack(w[0]), "seed {seed}: {} -> {}", w[0], w[1]);
        }
        let theta = report.params.theta();
        for k in 0..2 {
            assert_abs_diff_eq!(theta.row(k).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
        assert!(theta.get(0, 0) < theta.get(1, 0));
    }
}

#[test]
fn map_assignment_examples() {
    let resp = Responsibilities::from_rows(
        2,
        2,
        &[vec![0.0, 0.0, 1.0, 0.0], vec![0.0, 0.5, 0.5, 0.0], vec![0.25; 4]],
    )
    .unwrap();
    assert_eq!(map_pattern_assignments(&resp), vec![(1, 0), (0, 1), (0, 0)]);
}

proptest! {
    #[test]
    fn map_assignment_is_argmax(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 6), 1..20)) {
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let t: f64 = r.iter().sum();
                r.iter().map(|v| v / t).collect()
            })
            .collect();
        let resp = Responsibilities::from_rows(2, 3, &rows).unwrap();
        for (row, (k, m)) in rows.iter().zip(map_pattern_assignments(&resp)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let first = row.iter().position(|v| *v == max).unwrap();
            prop_assert_eq!((k, m), (first / 3, first % 3));
        }
    }

    #[test]
    fn e_step_rows_are_simplexes(seed in 0u64..500) {
        let (params, data) = random_instance(3, 2, 2, 15, seed);
        let r = e_step(&params, &data).unwrap();
        for n in 0..r.len() {
            let s: f64 = r.row(n).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-10);
            prop_assert!(r.row(n).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
