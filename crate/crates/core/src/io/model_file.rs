//! Versioned JSON model files for fitted or true parameters of any
//! family. Numbers are written in shortest round-trip form, so reading a
//! file back reproduces every parameter bit for bit.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::encode::CovariateScheme;
use super::write_atomic;
use crate::baselines::{BaselineKind, BaselineParams};
use crate::error::{Error, Result};
use crate::model::{EffectMatrix, EmissionModel, GaussianComponent, LsaParams, PriorSettings, StickBreakingBetas, StyleSimplex};
use crate::selection::FittedModel;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Parameters together with the rosters and encoding they refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub model: FittedModel,
    pub receivers: Vec<String>,
    pub servers: Vec<String>,
    pub covariate_scheme: CovariateScheme,
}

#[derive(Serialize, Deserialize)]
struct ComponentDoc {
    /// Two rows (lateral, depth) of `P` coefficients.
    alpha: Vec<Vec<f64>>,
    scales: [f64; 2],
    corr: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format_version: u32,
    family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    styles: Option<usize>,
    patterns: usize,
    covariate_scheme: CovariateScheme,
    receivers: Vec<String>,
    servers: Vec<String>,
    priors: PriorSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    betas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pi: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<Vec<f64>>>,
    components: Vec<ComponentDoc>,
    eta: Vec<Vec<Vec<f64>>>,
    delta: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

fn effect_rows(m: &EffectMatrix) -> Vec<Vec<f64>> {
    (0..2).map(|d| m.row(d).iter().copied().collect()).collect()
}

fn effect_from(rows: &[Vec<f64>]) -> Result<EffectMatrix> {
    if rows.len() != 2 || rows[0].len() != rows[1].len() || rows[0].is_empty() {
        return Err(Error::DimensionMismatch("effect matrix must have two equal, non-empty rows".into()));
    }
    Ok(EffectMatrix::from_fn(rows[0].len(), |d, p| rows[d][p]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

type EffectRows = Vec<Vec<Vec<f64>>>;

fn emission_docs(em: &EmissionModel) -> (Vec<ComponentDoc>, EffectRows, EffectRows) {
    let components = em
        .components()
        .iter()
        .map(|c| ComponentDoc {
            alpha: effect_rows(c.alpha()),
            scales: c.scales(),
            corr: c.corr(),
        })
        .collect();
    (
        components,
        em.eta().iter().map(effect_rows).collect(),
        em.delta().iter().map(effect_rows).collect(),
    )
}

fn emission_from(doc: &ModelDoc) -> Result<EmissionModel> {
    let components = doc
        .components
        .iter()
        .map(|c| GaussianComponent::new(effect_from(&c.alpha)?, c.scales, c.corr))
        .collect::<Result<Vec<_>>>()?;
    let eta = doc.eta.iter().map(|e| effect_from(e)).collect::<Result<Vec<_>>>()?;
    let delta = doc.delta.iter().map(|e| effect_from(e)).collect::<Result<Vec<_>>>()?;
    EmissionModel::new(components, eta, delta)
}

fn to_doc(saved: &SavedModel) -> ModelDoc {
    let (family, styles, betas, pi, weights, em, priors) = match &saved.model {
        FittedModel::Lsa(p) => (
            "lsa".to_string(),
            Some(p.styles()),
            Some(p.betas.rows()),
            Some(matrix_rows(p.pi.pi())),
            None,
            &p.emission,
            p.priors,
        ),
        FittedModel::Baseline(b) => (
            b.kind().tag().to_string(),
            None,
            None,
            None,
            Some(matrix_rows(b.weights())),
            &b.emission,
            b.priors,
        ),
    };
    let (components, eta, delta) = emission_docs(em);
    ModelDoc {
        format_version: MODEL_FORMAT_VERSION,
        family,
        styles,
        patterns: em.n_patterns(),
        covariate_scheme: saved.covariate_scheme,
        receivers: saved.receivers.clone(),
        servers: saved.servers.clone(),
        priors,
        betas,
        pi,
        weights,
        components,
        eta,
        delta,
    }
}

fn missing(field: &str) -> Error {
    Error::InvalidConfig(format!("model file lacks {field:?}"))
}

fn from_doc(doc: ModelDoc) -> Result<SavedModel> {
    let emission = emission_from(&doc)?;
    let model = if doc.family == "lsa" {
        let betas = doc.betas.as_ref().ok_or_else(|| missing("betas"))?;
        let pi = doc.pi.as_ref().ok_or_else(|| missing("pi"))?;
        let betas = StickBreakingBetas::from_rows(betas, doc.patterns)?;
        if doc.styles.is_some_and(|k| k != betas.styles()) {
            return Err(Error::DimensionMismatch("style count differs from the betas".into()));
        }
        FittedModel::Lsa(LsaParams::new(betas, StyleSimplex::from_rows(pi)?, emission, doc.priors)?)
    } else {
        let kind = BaselineKind::from_tag(&doc.family, doc.patterns)?;
        let weights = doc.weights.as_ref().ok_or_else(|| missing("weights"))?;
        FittedModel::Baseline(BaselineParams::new(kind, matrix_from(weights)?, emission, doc.priors)?)
    };
    let (r, s) = match &model {
        FittedModel::Lsa(p) => (p.receivers(), p.servers()),
        FittedModel::Baseline(b) => (b.emission.n_receivers(), b.emission.n_servers()),
    };
    if doc.receivers.len() != r || doc.servers.len() != s {
        return Err(Error::DimensionMismatch("roster lengths differ from the parameters".into()));
    }
    Ok(SavedModel {
        model,
        receivers: doc.receivers,
        servers: doc.servers,
        covariate_scheme: doc.covariate_scheme,
    })
}

pub fn model_to_string(saved: &SavedModel) -> String {
    let mut s = serde_json::to_string_pretty(&to_doc(saved)).expect("model documents always serialize");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str) -> Result<SavedModel> {
    let bad = |e: serde_json::Error| Error::Parse {
        row: e.line(),
        column: e.column().to_string(),
        reason: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(bad)?;
    if probe.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: MODEL_FORMAT_VERSION,
            found: probe.format_version,
        });
    }
    from_doc(serde_json::from_str(text).map_err(bad)?)
}

pub fn write_model(path: &Path, saved: &SavedModel) -> Result<()> {
    write_atomic(path, model_to_string(saved).as_bytes())
}

pub fn read_model(path: &Path) -> Result<SavedModel> {
    model_from_str(&std::fs::read_to_string(path)?)
}
