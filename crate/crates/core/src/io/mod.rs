//! File formats: return-point CSV, model files, density grids and report
//! tables. Every writer is deterministic and replaces its target
//! atomically.

pub mod dataset;
pub mod encode;
pub mod grid_file;
pub mod model_file;
pub mod report;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use dataset::{apply_filters, encode_covariates, load_csv, write_csv, Dataset, FilterReport, RawReturnRecord};
pub use encode::{CourtSide, CovariateScheme, ServeContext, ServeDirection, Surface};

const VERSION_PREFIX: &str = "#format_version=";

/// Write `bytes` to a temporary file next to `path`, then rename it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Split off a leading `#format_version=N` line, if any.
pub(crate) fn read_version_line(text: &str) -> Result<Option<(u32, &str)>> {
    let Some(rest) = text.strip_prefix(VERSION_PREFIX) else {
        return Ok(None);
    };
    let (line, body) = rest.split_once('\n').unwrap_or((rest, ""));
    let version = line.trim().parse().map_err(|_| Error::Parse {
        row: 0,
        column: "format_version".into(),
        reason: format!("bad version {:?}", line.trim()),
    })?;
    Ok(Some((version, body)))
}
