//! Save a fitted model with its rosters and reload it bit for bit.

use latent_style::inference::{fit, FitConfig};
use latent_style::io::model_file::{model_to_string, read_model, write_model, SavedModel};
use latent_style::io::CovariateScheme;
use latent_style::sampler::{sample_dataset, separated_truth, SimConfig};
use latent_style::selection::FittedModel;

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(2, 2, 8, 80, 4);
    let truth = separated_truth(&cfg, 1.0)?;
    let (data, _) = sample_dataset(&truth, &cfg)?;
    let report = fit(&data, 2, 2, &FitConfig { n_restarts: 1, seed: 4, ..FitConfig::default() })?;

    let saved = SavedModel {
        model: FittedModel::Lsa(report.params),
        receivers: (1..=cfg.receivers).map(|i| format!("R{i}")).collect(),
        servers: (1..=cfg.servers).map(|i| format!("S{i}")).collect(),
        covariate_scheme: CovariateScheme::InterceptOnly,
    };
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.json");
    write_model(&path, &saved)?;
    let loaded = read_model(&path)?;
    println!("{} bytes written, reload identical: {}", model_to_string(&saved).len(), loaded == saved);
    Ok(())
}
