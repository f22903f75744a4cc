//! CSV report tables: family comparison, `(K, M)` grid, maximum-style
//! counts and per-player style weights.

use std::path::Path;

use nalgebra::DMatrix;

use super::dataset::csv_io;
use super::write_atomic;
use crate::baselines::BaselineKind;
use crate::error::{Error, Result};
use crate::selection::{ElpdReport, GridResult, ModelSpec};

fn to_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_io)?;
    for r in rows {
        w.write_record(r).map_err(csv_io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Human-readable family name for a model label such as `lsa:3x3`.
pub fn display_name(label: &str) -> String {
    match label.parse::<ModelSpec>() {
        Ok(ModelSpec::Lsa { styles, patterns }) => format!("Latent Style Allocation (M={patterns},K={styles})"),
        Ok(ModelSpec::Baseline(BaselineKind::Mvn)) => "Multivariate Normal".into(),
        Ok(ModelSpec::Baseline(BaselineKind::FiniteMixture(m))) => format!("Finite Mixture (M={m})"),
        Ok(ModelSpec::Baseline(BaselineKind::MixedMembership(m))) => format!("Mixed Membership (M={m})"),
        Err(_) => label.to_string(),
    }
}

/// One row per model: ELPD, its standard error, and the difference to the
/// best model with the standard error of that difference.
pub fn comparison_csv(reports: &[ElpdReport]) -> Result<Vec<u8>> {
    let best = reports
        .iter()
        .reduce(|a, b| if b.elpd_estimate > a.elpd_estimate { b } else { a })
        .ok_or(Error::EmptyData)?;
    let header = ["model", "spec", "elpd", "se", "elpd_diff", "se_diff"].map(String::from);
    let rows = reports
        .iter()
        .map(|r| {
            let (diff, se) = r.difference(best)?;
            Ok(vec![
                display_name(&r.model_label),
                r.model_label.clone(),
                r.elpd_estimate.to_string(),
                r.se.to_string(),
                diff.to_string(),
                se.to_string(),
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    to_bytes(&header, &rows)
}

pub fn grid_csv(grid: &GridResult) -> Result<Vec<u8>> {
    let header = ["styles", "patterns", "elpd", "se", "best"].map(String::from);
    let rows: Vec<Vec<String>> = grid
        .entries
        .iter()
        .map(|(&(k, m), r)| {
            vec![
                k.to_string(),
                m.to_string(),
                r.elpd_estimate.to_string(),
                r.se.to_string(),
                u8::from((k, m) == grid.best).to_string(),
            ]
        })
        .collect();
    to_bytes(&header, &rows)
}

/// Index of the first largest entry of every row of `pi`.
pub fn max_styles(pi: &DMatrix<f64>) -> Vec<usize> {
    (0..pi.nrows())
        .map(|i| {
            let row = pi.row(i);
            (0..row.len()).fold(0, |best, k| if row[k] > row[best] { k } else { best })
        })
        .collect()
}

/// Number of players whose largest style weight is each style.
pub fn max_style_counts(pi: &DMatrix<f64>) -> Vec<usize> {
    let mut counts = vec![0; pi.ncols()];
    for k in max_styles(pi) {
        counts[k] += 1;
    }
    counts
}

/// One row labelled `label` with, for every style, the player count and
/// the percentage of players.
pub fn max_style_csv(label: &str, pi: &DMatrix<f64>) -> Result<Vec<u8>> {
    let counts = max_style_counts(pi);
    let total = pi.nrows() as f64;
    let mut header = vec!["return".to_string()];
    let mut row = vec![label.to_string()];
    for (k, c) in counts.iter().enumerate() {
        header.push(format!("style_{}", k + 1));
        header.push(format!("style_{}_pct", k + 1));
        row.push(c.to_string());
        row.push((100.0 * *c as f64 / total).to_string());
    }
    to_bytes(&header, &[row])
}

/// Every player's style weights and the style with the largest weight.
pub fn style_weights_csv(receivers: &[String], pi: &DMatrix<f64>) -> Result<Vec<u8>> {
    if receivers.len() != pi.nrows() {
        return Err(Error::DimensionMismatch("roster and weight rows differ".into()));
    }
    let mut header = vec!["receiver".to_string()];
    header.extend((1..=pi.ncols()).map(|k| format!("style_{k}")));
    header.push("max_style".into());
    let max = max_styles(pi);
    let rows: Vec<Vec<String>> = receivers
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut row = vec![name.clone()];
            row.extend(pi.row(i).iter().map(|v| v.to_string()));
            row.push((max[i] + 1).to_string());
            row
        })
        .collect();
    to_bytes(&header, &rows)
}

pub fn write_report(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selection::ElpdMethod;

    fn report(label: &str, pointwise: Vec<f64>) -> ElpdReport {
        ElpdReport::from_pointwise(label.into(), pointwise, ElpdMethod::KFold, vec![0; 3])
    }

    #[test]
    fn comparison_rows_and_differences() {
        let reps = vec![
            report("mvn", vec![-3.0, -3.0, -3.0]),
            report("finite-mixture:3", vec![-2.0, -2.5, -2.0]),
            report("mixed-membership:3", vec![-1.5, -2.0, -2.0]),
            report("lsa:2x3", vec![-1.0, -2.0, -2.0]),
        ];
        let text = String::from_utf8(comparison_csv(&reps).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        let mvn: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(mvn[..5], ["Multivariate Normal", "mvn", "-9", "0", "-4"]);
        assert!((mvn[5].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
        assert!(lines[4].starts_with("\"Latent Style Allocation (M=3,K=2)\",lsa:2x3,-5,"));
        assert!(lines[4].ends_with(",0,0"));
    }

    #[test]
    fn max_style_percentages_sum_to_100() {
        let pi = DMatrix::from_row_slice(7, 3, &[
            0.5, 0.3, 0.2, 0.1, 0.8, 0.1, 0.3, 0.3, 0.4, 0.6, 0.2, 0.2, 0.4, 0.4, 0.2, 0.2, 0.2, 0.6, 0.1, 0.1, 0.8,
        ]);
        assert_eq!(max_style_counts(&pi), vec![3, 1, 3]);
        let text = String::from_utf8(max_style_csv("first", &pi).unwrap()).unwrap();
        let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').skip(1).map(|v| v.parse().unwrap()).collect();
        let pct: f64 = row.iter().skip(1).step_by(2).sum();
        assert!((pct - 100.0).abs() < 0.1);
    }

    #[test]
    fn weights_table_marks_max_style() {
        let pi = DMatrix::from_row_slice(2, 2, &[0.25, 0.75, 0.5, 0.5]);
        let text = String::from_utf8(style_weights_csv(&["a".into(), "b".into()], &pi).unwrap()).unwrap();
        assert_eq!(text, "receiver,style_1,style_2,max_style\na,0.25,0.75,2\nb,0.5,0.5,1\n");
    }
}
