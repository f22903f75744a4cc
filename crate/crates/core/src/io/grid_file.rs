//! Density grid files.
//!
//! ```text
//! #format_version=1
//! layer=tour
//! receiver=all
//! server=all
//! covariates=1,0,0
//! lateral=-4.1,4.3
//! depth=-6,2.5
//! nx=3
//! ny=2
//! values
//! 1e-3 2e-3 1e-3
//! 2e-3 4e-3 2e-3
//! ```
//!
//! `values` rows run along depth from the lower edge of the box; each row
//! lists `nx` lateral cells. Component layers also carry `weight=`, the
//! pattern weight that recombines them into the full predictive density.

use std::fmt::Write as _;
use std::path::Path;

use super::{read_version_line, write_atomic};
use crate::error::{Error, Result};
use crate::sampler::{DensityGrid, GridSpec};

pub const GRID_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    /// `tour`, `component:<m>` or `receiver:<name>`.
    pub layer: String,
    /// Receiver name, `None` for the roster average.
    pub receiver: Option<String>,
    /// Server name, `None` for the roster average.
    pub server: Option<String>,
    pub covariates: Vec<f64>,
    pub weight: Option<f64>,
    pub grid: DensityGrid,
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

pub fn grid_to_string(file: &GridFile) -> String {
    let g = &file.grid;
    let mut s = String::new();
    let _ = writeln!(s, "#format_version={GRID_FORMAT_VERSION}");
    let _ = writeln!(s, "layer={}", file.layer);
    let _ = writeln!(s, "receiver={}", file.receiver.as_deref().unwrap_or("all"));
    let _ = writeln!(s, "server={}", file.server.as_deref().unwrap_or("all"));
    let _ = writeln!(s, "covariates={}", join(&file.covariates));
    if let Some(w) = file.weight {
        let _ = writeln!(s, "weight={w:e}");
    }
    let _ = writeln!(s, "lateral={}", join(&[g.spec.lateral.0, g.spec.lateral.1]));
    let _ = writeln!(s, "depth={}", join(&[g.spec.depth.0, g.spec.depth.1]));
    let _ = writeln!(s, "nx={}", g.spec.nx);
    let _ = writeln!(s, "ny={}", g.spec.ny);
    s.push_str("values\n");
    for row in g.values.chunks(g.spec.nx) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

fn malformed(reason: impl Into<String>) -> Error {
    Error::Format {
        path: "<grid>".into(),
        reason: reason.into(),
    }
}

fn number(text: &str) -> Result<f64> {
    text.trim().parse().map_err(|_| malformed(format!("bad number {text:?}")))
}

fn pair(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text.split_once(',').ok_or_else(|| malformed(format!("expected two numbers, got {text:?}")))?;
    Ok((number(a)?, number(b)?))
}

pub fn grid_from_str(text: &str) -> Result<GridFile> {
    let body = match read_version_line(text)? {
        Some((GRID_FORMAT_VERSION, body)) => body,
        Some((found, _)) => {
            return Err(Error::VersionMismatch {
                expected: GRID_FORMAT_VERSION,
                found,
            })
        }
        None => return Err(malformed("missing format version line")),
    };
    let mut lines = body.lines();
    let mut fields = std::collections::BTreeMap::new();
    for line in lines.by_ref() {
        if line == "values" {
            break;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| malformed(format!("bad header line {line:?}")))?;
        fields.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| malformed(format!("missing {k}")));
    let name = |k: &str| -> Result<Option<String>> {
        let v = get(k)?;
        Ok((v != "all").then(|| v.clone()))
    };
    let count = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| malformed(format!("bad {k}"))) };
    let spec = GridSpec {
        lateral: pair(get("lateral")?)?,
        depth: pair(get("depth")?)?,
        nx: count("nx")?,
        ny: count("ny")?,
    };
    let covariates = get("covariates")?.split(',').map(number).collect::<Result<Vec<_>>>()?;
    let weight = fields.get("weight").map(|w| number(w)).transpose()?;
    let mut values = Vec::with_capacity(spec.nx * spec.ny);
    for line in lines {
        let row = line.split_whitespace().map(number).collect::<Result<Vec<_>>>()?;
        if row.len() != spec.nx {
            return Err(malformed(format!("row has {} values, expected {}", row.len(), spec.nx)));
        }
        values.extend(row);
    }
    if values.len() != spec.nx * spec.ny {
        return Err(malformed(format!("{} values, expected {}", values.len(), spec.nx * spec.ny)));
    }
    Ok(GridFile {
        layer: get("layer")?.clone(),
        receiver: name("receiver")?,
        server: name("server")?,
        covariates,
        weight,
        grid: DensityGrid { spec, values },
    })
}

pub fn write_grid(path: &Path, file: &GridFile) -> Result<()> {
    write_atomic(path, grid_to_string(file).as_bytes())
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    grid_from_str(&std::fs::read_to_string(path)?).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> GridFile {
        let spec = GridSpec {
            lateral: (-1.5, 2.0),
            depth: (-3.0, 0.1),
            nx: 3,
            ny: 2,
        };
        GridFile {
            layer: "component:1".into(),
            receiver: Some("Ann".into()),
            server: None,
            covariates: vec![1.0, 0.0, 1.0],
            weight: Some(0.1 + 0.2),
            grid: DensityGrid {
                spec,
                values: vec![0.1, 1e-300, 0.3, 4.0, 5.5, 1.0 / 3.0],
            },
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let g = sample();
        let text = grid_to_string(&g);
        assert_eq!(grid_from_str(&text).unwrap(), g);
    }

    #[test]
    fn cell_count_matches_resolution() {
        let text = grid_to_string(&sample());
        let values: usize = text
            .split("values\n")
            .nth(1)
            .unwrap()
            .lines()
            .map(|l| l.split_whitespace().count())
            .sum();
        assert_eq!(values, 3 * 2);
    }

    #[test]
    fn truncated_values_are_rejected() {
        let mut text = grid_to_string(&sample());
        text.truncate(text.trim_end().rfind('\n').unwrap() + 1);
        assert!(matches!(grid_from_str(&text), Err(Error::Format { .. })));
    }

    #[test]
    fn other_version_is_rejected() {
        let text = grid_to_string(&sample()).replacen("=1\n", "=4\n", 1);
        assert!(matches!(grid_from_str(&text), Err(Error::VersionMismatch { found: 4, .. })));
    }
}
