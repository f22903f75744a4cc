//! Per-player style weights and how many players each style dominates.

use latent_style::inference::{fit, FitConfig};
use latent_style::io::report::{max_style_counts, max_style_csv, style_weights_csv};
use latent_style::sampler::{sample_dataset, separated_truth, SimConfig};

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(3, 3, 12, 150, 21);
    let truth = separated_truth(&cfg, 0.9)?;
    let (data, _) = sample_dataset(&truth, &cfg)?;
    let report = fit(&data, 3, 3, &FitConfig { n_restarts: 2, seed: 21, ..FitConfig::default() })?;

    let pi = report.params.pi.pi();
    let names: Vec<String> = (1..=cfg.receivers).map(|i| format!("R{i:02}")).collect();
    print!("{}", String::from_utf8_lossy(&style_weights_csv(&names, pi)?));
    println!("players per dominant style: {:?}", max_style_counts(pi));
    print!("{}", String::from_utf8_lossy(&max_style_csv("first serve", pi)?));
    Ok(())
}
