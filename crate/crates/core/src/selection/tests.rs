use super::*;
use crate::sampler::{sample_dataset, separated_truth, SimConfig};

fn quick() -> FitConfig {
    FitConfig {
        n_restarts: 1,
        max_iters: 100,
        rel_tol: 1e-6,
        ..FitConfig::default()
    }
}

fn lsa_data(k: usize, m: usize, r: usize, n: usize, seed: u64) -> (LsaParams, Vec<ReturnObservation>) {
    let cfg = SimConfig::new(k, m, r, n, seed);
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    (truth, data)
}

#[test]
fn folds_partition_and_stratify() {
    let (_, data) = lsa_data(2, 2, 4, 23, 1);
    let a = fold_assignments(&data, 5, 9).unwrap();
    assert_eq!(a, fold_assignments(&data, 5, 9).unwrap());
    assert_eq!(a.len(), data.len());
    for r in 0..4 {
        for f in 0..5 {
            let count = data.iter().zip(&a).filter(|(o, &g)| o.receiver == r && g == f).count();
            assert!((4..=5).contains(&count), "receiver {r} fold {f}: {count}");
        }
    }
}

#[test]
fn folds_reject_sparse_receivers() {
    let cfg = SimConfig {
        points_per_receiver: vec![10, 3],
        ..SimConfig::new(1, 1, 2, 1, 1)
    };
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let err = fold_assignments(&data, 5, 0);
    assert!(matches!(err, Err(Error::InsufficientDataPerFold { receiver: 1, count: 3, folds: 5 })));
}

#[test]
fn oracle_elpd_matches_expected_log_density() {
    let (truth, data) = lsa_data(2, 3, 10, 100, 4);
    let model = FittedModel::Lsa(truth.clone());
    let report = oracle_elpd(&model, "truth", &data).unwrap();
    // Monte Carlo expectation from a much larger independent sample
    let cfg = SimConfig {
        seed: 99,
        points_per_receiver: vec![4000; 10],
        ..SimConfig::new(2, 3, 10, 1, 99)
    };
    let (big, _) = sample_dataset(&truth, &cfg).unwrap();
    let mc = pointwise_loglik(&truth, &big).unwrap();
    let expected = data.len() as f64 * mc.iter().sum::<f64>() / mc.len() as f64;
    assert!((report.elpd_estimate - expected).abs() < 2.0 * report.se, "{} vs {expected}", report.elpd_estimate);
    assert!((report.elpd_estimate - report.pointwise.iter().sum::<f64>()).abs() < 1e-9);
}

#[test]
fn identical_specs_identical_reports() {
    let (_, data) = lsa_data(2, 2, 4, 30, 2);
    let spec = ModelSpec::Lsa { styles: 2, patterns: 2 };
    let a = kfold_elpd(&data, &spec, 3, &quick()).unwrap();
    let b = kfold_elpd(&data, &spec, 3, &quick()).unwrap();
    assert_eq!(a, b);
    assert!((a.elpd_estimate - a.pointwise.iter().sum::<f64>()).abs() < 1e-9);
}

#[test]
fn mixture_beats_mvn_on_bimodal_data() {
    let cfg = SimConfig::new(1, 2, 4, 100, 5);
    let truth = separated_truth(&cfg, 1.0).unwrap();
    let (data, _) = sample_dataset(&truth, &cfg).unwrap();
    let mvn = kfold_elpd(&data, &ModelSpec::Baseline(BaselineKind::Mvn), 5, &quick()).unwrap();
    let fm = kfold_elpd(&data, &ModelSpec::Baseline(BaselineKind::FiniteMixture(2)), 5, &quick()).unwrap();
    let (diff, se) = fm.difference(&mvn).unwrap();
    assert!(diff > 4.0 * se, "diff {diff}, se {se}");
    assert!(fm.elpd_estimate - mvn.elpd_estimate > 4.0 * fm.se.max(mvn.se));
}

#[test]
fn single_cell_grid() {
    let (_, data) = lsa_data(2, 2, 4, 30, 3);
    let g = grid_search(&data, 2..=2, 3..=3, 3, &quick()).unwrap();
    assert_eq!(g.best, (2, 3));
    assert_eq!(g.entries.len(), 1);
}

#[test]
fn spec_text_roundtrip() {
    for s in ["lsa:3x4", "mvn", "finite-mixture:2", "mixed-membership:5"] {
        assert_eq!(s.parse::<ModelSpec>().unwrap().to_string(), s);
    }
    assert!("lsa:3".parse::<ModelSpec>().is_err());
    assert!("lsa:0x2".parse::<ModelSpec>().is_err());
}
