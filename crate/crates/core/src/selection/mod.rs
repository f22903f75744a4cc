//! Out-of-sample model comparison by k-fold expected log pointwise
//! predictive density (ELPD), grid search over `(K, M)`, and Pareto
//! smoothing of importance weights.

mod psis;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_fit_sized, baseline_pointwise_loglik, BaselineKind, BaselineParams};
use crate::error::{Error, Result};
use crate::inference::{fit_sized, roster_sizes, FitConfig};
use crate::model::{pointwise_loglik, LsaParams, ReturnObservation};
use crate::rng::{derive_seed, substream};

pub use psis::{fit_gpd, gpd_quantile, psis_smooth, tail_length};

/// A model family and size to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelSpec {
    Lsa { styles: usize, patterns: usize },
    Baseline(BaselineKind),
}

impl ModelSpec {
    pub fn label(&self) -> String {
        self.to_string()
    }

    /// Fit on `data` with the given roster sizes.
    pub fn fit(&self, data: &[ReturnObservation], receivers: usize, servers: usize, cfg: &FitConfig) -> Result<FittedModel> {
        match *self {
            ModelSpec::Lsa { styles, patterns } => {
                fit_sized(data, styles, patterns, receivers, servers, cfg).map(|r| FittedModel::Lsa(r.params))
            }
            ModelSpec::Baseline(kind) => {
                baseline_fit_sized(data, kind, receivers, servers, cfg).map(|r| FittedModel::Baseline(r.params))
            }
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Lsa { styles, patterns } => write!(f, "lsa:{styles}x{patterns}"),
            ModelSpec::Baseline(kind) => kind.fmt(f),
        }
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    /// `lsa:KxM`, `mvn`, `finite-mixture:M` or `mixed-membership:M`.
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("lsa:") {
            let (k, m) = rest
                .split_once('x')
                .ok_or_else(|| Error::InvalidConfig(format!("expected lsa:KxM, got {s:?}")))?;
            let parse = |v: &str| {
                v.parse::<usize>()
                    .ok()
                    .filter(|n| *n >= 1)
                    .ok_or_else(|| Error::InvalidConfig(format!("bad size in {s:?}")))
            };
            return Ok(ModelSpec::Lsa {
                styles: parse(k)?,
                patterns: parse(m)?,
            });
        }
        s.parse().map(ModelSpec::Baseline)
    }
}

/// Fitted parameters of any family.
#[derive(Debug, Clone, PartialEq)]
pub enum FittedModel {
    Lsa(LsaParams),
    Baseline(BaselineParams),
}

impl FittedModel {
    pub fn pointwise_loglik(&self, data: &[ReturnObservation]) -> Result<Vec<f64>> {
        match self {
            FittedModel::Lsa(p) => pointwise_loglik(p, data),
            FittedModel::Baseline(p) => baseline_pointwise_loglik(p, data),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElpdMethod {
    /// Held-out log predictive density under k-fold cross-validation.
    KFold,
    /// Log density of every point under fixed parameters, no fitting.
    Oracle,
}

impl fmt::Display for ElpdMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElpdMethod::KFold => "kfold",
            ElpdMethod::Oracle => "oracle",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElpdReport {
    pub model_label: String,
    /// Sum of the pointwise values.
    pub elpd_estimate: f64,
    /// `sqrt(N)` times the sample standard deviation of the pointwise values.
    pub se: f64,
    pub pointwise: Vec<f64>,
    pub method: ElpdMethod,
    /// Fold of every observation (all zero for oracle reports).
    pub fold_assignments: Vec<usize>,
}

impl ElpdReport {
    pub fn from_pointwise(model_label: String, pointwise: Vec<f64>, method: ElpdMethod, fold_assignments: Vec<usize>) -> Self {
        let n = pointwise.len() as f64;
        let elpd_estimate: f64 = pointwise.iter().sum();
        let mean = elpd_estimate / n;
        let var = if pointwise.len() > 1 {
            pointwise.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            model_label,
            elpd_estimate,
            se: n.sqrt() * var.sqrt(),
            pointwise,
            method,
            fold_assignments,
        }
    }

    /// ELPD difference `self - other` and its standard error from the
    /// pointwise differences.
    pub fn difference(&self, other: &ElpdReport) -> Result<(f64, f64)> {
        if self.pointwise.len() != other.pointwise.len() {
            return Err(Error::DimensionMismatch("reports cover different data".into()));
        }
        let diffs: Vec<f64> = self.pointwise.iter().zip(&other.pointwise).map(|(a, b)| a - b).collect();
        let r = ElpdReport::from_pointwise(String::new(), diffs, self.method, Vec::new());
        Ok((r.elpd_estimate, r.se))
    }
}

/// Fold of every observation, stratified by receiver: each receiver's
/// points are shuffled with a receiver-specific stream and dealt round
/// robin, so every receiver appears in every training set.
pub fn fold_assignments(data: &[ReturnObservation], folds: usize, seed: u64) -> Result<Vec<usize>> {
    use rand::seq::SliceRandom;
    if folds < 2 {
        return Err(Error::InvalidConfig("need at least 2 folds".into()));
    }
    let mut by_receiver: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (n, o) in data.iter().enumerate() {
        by_receiver.entry(o.receiver).or_default().push(n);
    }
    let mut out = vec![0; data.len()];
    for (&receiver, idx) in &mut by_receiver {
        if idx.len() < folds {
            return Err(Error::InsufficientDataPerFold {
                receiver,
                count: idx.len(),
                folds,
            });
        }
        idx.shuffle(&mut substream(seed, "folds", receiver as u64));
        for (j, &n) in idx.iter().enumerate() {
            out[n] = j % folds;
        }
    }
    Ok(out)
}

/// k-fold ELPD of `spec`. Every fold is fitted with the full data's roster
/// sizes and a fold-specific seed; folds run in parallel.
pub fn kfold_elpd(data: &[ReturnObservation], spec: &ModelSpec, folds: usize, cfg: &FitConfig) -> Result<ElpdReport> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let assign = fold_assignments(data, folds, cfg.seed)?;
    let (r, s) = roster_sizes(data);
    let per_fold: Vec<Result<(Vec<usize>, Vec<f64>)>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let (mut train, mut test, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
            for (n, o) in data.iter().enumerate() {
                if assign[n] == f {
                    test.push(o.clone());
                    test_idx.push(n);
                } else {
                    train.push(o.clone());
                }
            }
            let fold_cfg = FitConfig {
                seed: derive_seed(cfg.seed, "fold", f as u64),
                ..cfg.clone()
            };
            let model = spec.fit(&train, r, s, &fold_cfg)?;
            Ok((test_idx, model.pointwise_loglik(&test)?))
        })
        .collect();
    let mut pointwise = vec![0.0; data.len()];
    for res in per_fold {
        let (idx, ll) = res?;
        for (n, v) in idx.into_iter().zip(ll) {
            pointwise[n] = v;
        }
    }
    Ok(ElpdReport::from_pointwise(spec.label(), pointwise, ElpdMethod::KFold, assign))
}

/// ELPD of fixed parameters on `data`, without fitting.
pub fn oracle_elpd(model: &FittedModel, label: &str, data: &[ReturnObservation]) -> Result<ElpdReport> {
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    let pointwise = model.pointwise_loglik(data)?;
    Ok(ElpdReport::from_pointwise(label.to_string(), pointwise, ElpdMethod::Oracle, vec![0; data.len()]))
}

/// k-fold ELPD of several specs on the same folds.
pub fn compare(data: &[ReturnObservation], specs: &[ModelSpec], folds: usize, cfg: &FitConfig) -> Result<Vec<ElpdReport>> {
    specs.iter().map(|s| kfold_elpd(data, s, folds, cfg)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub entries: BTreeMap<(usize, usize), ElpdReport>,
    /// Cell with the highest ELPD; ties go to the smallest `(K, M)`.
    pub best: (usize, usize),
}

/// k-fold ELPD of the latent style model for every `(K, M)` in the ranges.
pub fn grid_search(
    data: &[ReturnObservation],
    styles: std::ops::RangeInclusive<usize>,
    patterns: std::ops::RangeInclusive<usize>,
    folds: usize,
    cfg: &FitConfig,
) -> Result<GridResult> {
    let cells: Vec<(usize, usize)> = styles
        .flat_map(|k| patterns.clone().map(move |m| (k, m)))
        .collect();
    if cells.is_empty() || cells.iter().any(|&(k, m)| k == 0 || m == 0) {
        return Err(Error::InvalidConfig("grid ranges must be non-empty and start at 1 or more".into()));
    }
    let reports: Vec<Result<ElpdReport>> = cells
        .par_iter()
        .map(|&(k, m)| {
            kfold_elpd(
                data,
                &ModelSpec::Lsa {
                    styles: k,
                    patterns: m,
                },
                folds,
                cfg,
            )
        })
        .collect();
    let mut entries = BTreeMap::new();
    for (cell, r) in cells.into_iter().zip(reports) {
        entries.insert(cell, r?);
    }
    let mut best = *entries.keys().next().expect("grid is non-empty");
    for (cell, r) in &entries {
        if r.elpd_estimate > entries[&best].elpd_estimate {
            best = *cell;
        }
    }
    Ok(GridResult { entries, best })
}

#[cfg(test)]
mod tests;
