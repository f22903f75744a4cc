//! Pareto-smoothed importance weights for a heavy-tailed weight sample.

use latent_style::rng::substream;
use latent_style::selection::{fit_gpd, psis_smooth, tail_length};
use rand_distr::{Distribution, Normal};

fn main() -> latent_style::error::Result<()> {
    let mut rng = substream(42, "psis-example", 0);
    let t = Normal::new(0.0, 1.5).expect("valid scale");
    let log_weights: Vec<f64> = (0..2000).map(|_| t.sample(&mut rng)).collect();

    let (smoothed, k_hat) = psis_smooth(&log_weights)?;
    println!("tail length for 2000 draws: {}", tail_length(log_weights.len()));
    println!("estimated Pareto shape k = {k_hat:.3}");
    let max_raw = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let max_smooth = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    println!("largest log weight: raw {max_raw:.3}, smoothed {max_smooth:.3}");

    let exceedances: Vec<f64> = (1..=500).map(|i| (i as f64 / 501.0).powf(-0.5) - 1.0).collect();
    let (shape, scale) = fit_gpd(&exceedances);
    println!("GPD fit to a shape-0.5 quantile sample: shape {shape:.3}, scale {scale:.3}");
    Ok(())
}
