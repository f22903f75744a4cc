//! Tour-level and per-pattern predictive densities on a regular grid,
//! written to and read back from grid files.

use latent_style::io::grid_file::{read_grid, write_grid, GridFile};
use latent_style::sampler::{component_grids, default_grid, posterior_predictive_grid, separated_truth, PredictiveContext, SimConfig};
use nalgebra::DVector;

fn main() -> latent_style::error::Result<()> {
    let cfg = SimConfig::new(2, 3, 6, 100, 9);
    let params = separated_truth(&cfg, 1.0)?;
    let tour = PredictiveContext {
        receiver: None,
        server: None,
        covariates: DVector::from_element(params.covariates(), 1.0),
    };

    let spec = default_grid(&params, &tour, 120, 120)?;
    let grid = posterior_predictive_grid(&params, &tour, &spec)?;
    println!("tour density over {}x{} cells, mass inside the box {:.4}", spec.nx, spec.ny, grid.mass());

    let (components, weights) = component_grids(&params, &tour, &spec)?;
    for (m, (g, w)) in components.iter().zip(&weights).enumerate() {
        println!("pattern {}: weight {w:.3}, mass {:.4}", m + 1, g.mass());
    }

    let first = PredictiveContext {
        receiver: Some(0),
        ..tour.clone()
    };
    let player = posterior_predictive_grid(&params, &first, &spec)?;
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("receiver_1.grid");
    let file = GridFile {
        layer: "receiver:R1".into(),
        receiver: Some("R1".into()),
        server: None,
        covariates: first.covariates.iter().copied().collect(),
        weight: None,
        grid: player,
    };
    write_grid(&path, &file)?;
    println!("grid file round trip exact: {}", read_grid(&path)? == file);
    Ok(())
}
