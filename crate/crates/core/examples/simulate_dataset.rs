//! Draw a synthetic return dataset, write it as CSV and load it back
//! through the same filters and covariate encoding the CLI uses.

use latent_style::io::dataset::records_from_sample;
use latent_style::io::{apply_filters, encode_covariates, load_csv, write_csv, CovariateScheme};
use latent_style::sampler::{draw_params, sample_with_context, SimConfig};

fn main() -> latent_style::error::Result<()> {
    let mut cfg = SimConfig::new(3, 3, 12, 200, 7);
    cfg.covariate_scheme = CovariateScheme::Full;
    let truth = draw_params(&cfg)?;
    let sample = sample_with_context(&truth, &cfg)?;
    println!("sampled {} points for {} receivers", sample.observations.len(), cfg.receivers);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("returns.csv");
    write_csv(&path, &records_from_sample(&sample, cfg.receivers, cfg.servers, 1))?;

    let (kept, report) = apply_filters(load_csv(&path, 1)?);
    println!("filters: {report:?}");
    let data = encode_covariates(&kept, CovariateScheme::Full, 1)?;
    println!(
        "encoded {} observations, {} receivers, {} servers, covariates {:?}",
        data.observations.len(),
        data.receiver_roster.len(),
        data.server_roster.len(),
        CovariateScheme::Full.column_names()
    );
    Ok(())
}
