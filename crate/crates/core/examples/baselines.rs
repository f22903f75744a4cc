//! Fit the three reference families on one dataset and compare their
//! penalized objectives with the latent style model.

use latent_style::baselines::{baseline_fit, BaselineKind};
use latent_style::inference::{fit, FitConfig};
use latent_style::sampler::{sample_dataset, separated_truth, SimConfig};

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(2, 3, 15, 150, 11);
    let truth = separated_truth(&cfg, 0.9)?;
    let (data, _) = sample_dataset(&truth, &cfg)?;
    let fit_cfg = FitConfig {
        n_restarts: 2,
        seed: 11,
        ..FitConfig::default()
    };

    for kind in [BaselineKind::Mvn, BaselineKind::FiniteMixture(3), BaselineKind::MixedMembership(3)] {
        let report = baseline_fit(&data, kind, &fit_cfg)?;
        println!("{:<20} loglik {:>10.2} iterations {}", kind.to_string(), report.loglik(), report.n_iters);
    }
    let lsa = fit(&data, 2, 3, &fit_cfg)?;
    println!("{:<20} loglik {:>10.2} iterations {}", "lsa:2x3", lsa.loglik(), lsa.n_iters);
    Ok(())
}
