//! Held-out model comparison by stratified k-fold ELPD, first across
//! families and then over a small grid of style and pattern counts.

use latent_style::baselines::BaselineKind;
use latent_style::inference::FitConfig;
use latent_style::io::report::{comparison_csv, grid_csv};
use latent_style::sampler::{sample_dataset, separated_truth, SimConfig};
use latent_style::selection::{compare, grid_search, ModelSpec};

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(2, 3, 12, 100, 5);
    let truth = separated_truth(&cfg, 0.9)?;
    let (data, _) = sample_dataset(&truth, &cfg)?;
    let fit_cfg = FitConfig {
        n_restarts: 1,
        seed: 5,
        ..FitConfig::default()
    };

    let specs = [
        ModelSpec::Baseline(BaselineKind::Mvn),
        ModelSpec::Baseline(BaselineKind::FiniteMixture(3)),
        ModelSpec::Baseline(BaselineKind::MixedMembership(3)),
        ModelSpec::Lsa { styles: 2, patterns: 3 },
    ];
    let reports = compare(&data, &specs, 5, &fit_cfg)?;
    print!("{}", String::from_utf8_lossy(&comparison_csv(&reports)?));

    let grid = grid_search(&data, 1..=2, 2..=3, 5, &fit_cfg)?;
    print!("{}", String::from_utf8_lossy(&grid_csv(&grid)?));
    println!("best (K, M) = {:?}", grid.best);
    Ok(())
}
