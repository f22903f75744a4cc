//! Fit the latent style model to data drawn from a known truth and measure
//! how well the pattern means and the latent assignments are recovered.

use latent_style::eval::{adjusted_rand_index, align_means, reference_means};
use latent_style::inference::{fit, FitConfig};
use latent_style::sampler::{sample_dataset, separated_truth, SimConfig};

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(2, 3, 20, 200, 3);
    let truth = separated_truth(&cfg, 1.0)?;
    let (data, latent) = sample_dataset(&truth, &cfg)?;

    let fit_cfg = FitConfig {
        n_restarts: 2,
        seed: 3,
        ..FitConfig::default()
    };
    let report = fit(&data, 2, 3, &fit_cfg)?;
    println!(
        "converged={} after {} iterations, objective {:.3}",
        report.converged,
        report.n_iters,
        report.final_objective()
    );
    println!("restart objectives: {:?}", report.restart_objectives);

    let alignment = align_means(&reference_means(&truth.emission), &reference_means(&report.params.emission));
    let truth_labels: Vec<(usize, usize)> = latent.iter().map(|l| (l.style, l.pattern)).collect();
    println!("largest aligned mean distance: {:.3} m", alignment.max_distance());
    println!("ARI of (style, pattern) labels: {:.3}", adjusted_rand_index(&truth_labels, &report.map_assignments()));
    println!("fitted stick values: {:?}", report.params.betas.rows());
    Ok(())
}
