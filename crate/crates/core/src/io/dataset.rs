//! Return-point CSV files, inclusion filters and covariate encoding.
//!
//! The CSV schema is `match_id,receiver,server,serve_number,court_side,
//! serve_direction,surface,lateral,depth,date` with a required header. A
//! first line of the form `#format_version=1` is optional; when present it
//! must name a supported version.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufReader, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use super::encode::{CourtSide, CovariateScheme, ServeContext, ServeDirection, Surface};
use super::{read_version_line, write_atomic};
use crate::error::{Error, Result};
use crate::model::ReturnObservation;
use crate::sampler::SampledDataset;

pub const CSV_FORMAT_VERSION: u32 = 1;

pub const CSV_COLUMNS: [&str; 10] = [
    "match_id",
    "receiver",
    "server",
    "serve_number",
    "court_side",
    "serve_direction",
    "surface",
    "lateral",
    "depth",
    "date",
];

/// Matches with fewer return points than this are dropped.
pub const MIN_MATCH_POINTS: usize = 30;
/// Receivers with fewer qualifying matches than this are dropped.
pub const MIN_RECEIVER_MATCHES: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct RawReturnRecord {
    pub match_id: String,
    pub receiver: String,
    pub server: String,
    pub serve_number: u8,
    pub court_side: CourtSide,
    pub serve_direction: Option<ServeDirection>,
    pub surface: Surface,
    pub lateral: f64,
    pub depth: f64,
    pub date: NaiveDate,
}

impl RawReturnRecord {
    pub fn context(&self) -> ServeContext {
        ServeContext {
            court_side: self.court_side,
            direction: self.serve_direction,
            surface: self.surface,
        }
    }
}

/// Parse a CSV file. `schema_version` is the version the caller expects.
pub fn load_csv(path: &Path, schema_version: u32) -> Result<Vec<RawReturnRecord>> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema_version)
}

/// Parse CSV text from any reader. Row numbers in errors count data rows
/// from 1.
pub fn read_csv<R: Read>(reader: R, schema_version: u32) -> Result<Vec<RawReturnRecord>> {
    if schema_version != CSV_FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CSV_FORMAT_VERSION,
            found: schema_version,
        });
    }
    let mut buf = BufReader::new(reader);
    let mut text = String::new();
    buf.read_to_string(&mut text)?;
    let body = match read_version_line(&text)? {
        Some((version, rest)) => {
            if version != schema_version {
                return Err(Error::VersionMismatch {
                    expected: schema_version,
                    found: version,
                });
            }
            rest
        }
        None => text.as_str(),
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(body.as_bytes());
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].is_empty()) => h.clone(),
        Ok(_) => return Err(missing_header()),
        Err(e) => return Err(csv_error(0, e)),
    };
    let mut index = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        index.insert(name.to_string(), i);
    }
    for col in CSV_COLUMNS {
        if !index.contains_key(col) {
            return Err(Error::Parse {
                row: 0,
                column: col.to_string(),
                reason: "missing header column".into(),
            });
        }
    }
    let mut out = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let row = n + 1;
        let rec = rec.map_err(|e| csv_error(row, e))?;
        let field = |name: &str| rec.get(index[name]).unwrap_or("");
        out.push(parse_row(row, &field)?);
    }
    Ok(out)
}

fn missing_header() -> Error {
    Error::Parse {
        row: 0,
        column: String::new(),
        reason: "missing header".into(),
    }
}

fn csv_error(row: usize, e: csv::Error) -> Error {
    Error::Parse {
        row,
        column: String::new(),
        reason: e.to_string(),
    }
}

fn parse_row<'a>(row: usize, field: &dyn Fn(&str) -> &'a str) -> Result<RawReturnRecord> {
    let text = |name: &str| -> Result<String> {
        let v = field(name);
        if v.is_empty() {
            return Err(Error::Parse {
                row,
                column: name.into(),
                reason: "empty value".into(),
            });
        }
        Ok(v.to_string())
    };
    let unknown = |name: &str| Error::UnknownEnumValue {
        row,
        column: name.into(),
        value: field(name).to_string(),
    };
    let number = |name: &str| -> Result<f64> {
        let v: f64 = field(name).parse().map_err(|_| Error::Parse {
            row,
            column: name.into(),
            reason: format!("not a number: {:?}", field(name)),
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                row,
                column: name.into(),
                reason: "coordinate is not finite".into(),
            });
        }
        Ok(v)
    };
    let serve_number = match field("serve_number") {
        "1" => 1,
        "2" => 2,
        _ => return Err(unknown("serve_number")),
    };
    let serve_direction = match field("serve_direction") {
        "" => None,
        v => Some(v.parse().map_err(|_| unknown("serve_direction"))?),
    };
    let date = NaiveDate::parse_from_str(field("date"), "%Y-%m-%d").map_err(|e| Error::Parse {
        row,
        column: "date".into(),
        reason: e.to_string(),
    })?;
    Ok(RawReturnRecord {
        match_id: text("match_id")?,
        receiver: text("receiver")?,
        server: text("server")?,
        serve_number,
        court_side: field("court_side").parse().map_err(|_| unknown("court_side"))?,
        serve_direction,
        surface: field("surface").parse().map_err(|_| unknown("surface"))?,
        lateral: number("lateral")?,
        depth: number("depth")?,
        date,
    })
}

/// CSV bytes for `records`, with the version line and header.
pub fn csv_bytes(records: &[RawReturnRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "#format_version={CSV_FORMAT_VERSION}")?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(CSV_COLUMNS).map_err(csv_io)?;
        for r in records {
            w.write_record([
                r.match_id.clone(),
                r.receiver.clone(),
                r.server.clone(),
                r.serve_number.to_string(),
                r.court_side.to_string(),
                r.serve_direction.map(|d| d.to_string()).unwrap_or_default(),
                r.surface.to_string(),
                r.lateral.to_string(),
                r.depth.to_string(),
                r.date.format("%Y-%m-%d").to_string(),
            ])
            .map_err(csv_io)?;
        }
        w.flush()?;
    }
    Ok(out)
}

pub fn write_csv(path: &Path, records: &[RawReturnRecord]) -> Result<()> {
    write_atomic(path, &csv_bytes(records)?)
}

pub(crate) fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Counts removed by each inclusion rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub matches_dropped: usize,
    pub points_dropped_by_match_rule: usize,
    pub receivers_dropped: usize,
    pub points_dropped_by_receiver_rule: usize,
}

/// Drop matches with fewer than [`MIN_MATCH_POINTS`] points, then
/// receivers left with fewer than [`MIN_RECEIVER_MATCHES`] matches.
pub fn apply_filters(records: Vec<RawReturnRecord>) -> (Vec<RawReturnRecord>, FilterReport) {
    let mut report = FilterReport::default();
    let mut match_points: BTreeMap<&str, usize> = BTreeMap::new();
    for r in &records {
        *match_points.entry(r.match_id.as_str()).or_default() += 1;
    }
    let short: BTreeSet<String> = match_points
        .iter()
        .filter(|(_, &n)| n < MIN_MATCH_POINTS)
        .map(|(id, _)| id.to_string())
        .collect();
    report.matches_dropped = short.len();
    let (kept, dropped): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| !short.contains(&r.match_id));
    report.points_dropped_by_match_rule = dropped.len();

    let mut matches_of: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for r in &kept {
        matches_of.entry(r.receiver.as_str()).or_default().insert(r.match_id.as_str());
    }
    let few: BTreeSet<String> = matches_of
        .iter()
        .filter(|(_, m)| m.len() < MIN_RECEIVER_MATCHES)
        .map(|(r, _)| r.to_string())
        .collect();
    report.receivers_dropped = few.len();
    let (kept, dropped): (Vec<_>, Vec<_>) = kept.into_iter().partition(|r| !few.contains(&r.receiver));
    report.points_dropped_by_receiver_rule = dropped.len();
    (kept, report)
}

/// Observations of one serve number with their rosters.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<ReturnObservation>,
    /// Receiver names in index order (sorted).
    pub receiver_roster: Vec<String>,
    /// Server names in index order (sorted).
    pub server_roster: Vec<String>,
    pub covariate_scheme: CovariateScheme,
    pub serve_number: u8,
    /// Records without a serve direction, encoded with the reference
    /// direction.
    pub missing_direction: usize,
}

/// Keep the records of one serve number and encode them. Rosters are the
/// sorted distinct names among the kept records.
pub fn encode_covariates(records: &[RawReturnRecord], scheme: CovariateScheme, serve_number: u8) -> Result<Dataset> {
    if !(1..=2).contains(&serve_number) {
        return Err(Error::InvalidConfig(format!("serve number must be 1 or 2, got {serve_number}")));
    }
    let chosen: Vec<&RawReturnRecord> = records.iter().filter(|r| r.serve_number == serve_number).collect();
    let receivers: BTreeSet<&str> = chosen.iter().map(|r| r.receiver.as_str()).collect();
    let servers: BTreeSet<&str> = chosen.iter().map(|r| r.server.as_str()).collect();
    let receiver_roster: Vec<String> = receivers.into_iter().map(String::from).collect();
    let server_roster: Vec<String> = servers.into_iter().map(String::from).collect();
    let mut missing_direction = 0;
    let mut observations = Vec::with_capacity(chosen.len());
    for r in chosen {
        if r.serve_direction.is_none() {
            missing_direction += 1;
        }
        let i = receiver_roster.binary_search(&r.receiver).expect("roster built from records");
        let s = server_roster.binary_search(&r.server).expect("roster built from records");
        observations.push(ReturnObservation::new(i, s, r.lateral, r.depth, scheme.encode(&r.context()))?);
    }
    Ok(Dataset {
        observations,
        receiver_roster,
        server_roster,
        covariate_scheme: scheme,
        serve_number,
        missing_direction,
    })
}

/// Points per synthetic match in [`records_from_sample`].
pub const SIM_POINTS_PER_MATCH: usize = 50;

fn padded(prefix: &str, i: usize, n: usize) -> String {
    let width = n.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{i:0width$}")
}

/// CSV records for a sampled dataset. Receiver `i` becomes `R<i>` and
/// server `s` becomes `S<s>`, zero padded so that sorted rosters keep the
/// index order. Every receiver's points are dealt round robin into
/// `max(1, n / 50)` matches on consecutive days from 2020-01-01.
pub fn records_from_sample(sample: &SampledDataset, receivers: usize, servers: usize, serve_number: u8) -> Vec<RawReturnRecord> {
    let mut per_receiver = vec![0usize; receivers];
    for o in &sample.observations {
        per_receiver[o.receiver] += 1;
    }
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date");
    let mut seen = vec![0usize; receivers];
    sample
        .observations
        .iter()
        .zip(&sample.contexts)
        .map(|(o, ctx)| {
            let matches = (per_receiver[o.receiver] / SIM_POINTS_PER_MATCH).max(1);
            let m = seen[o.receiver] % matches;
            seen[o.receiver] += 1;
            RawReturnRecord {
                match_id: format!("{}-m{m}", padded("R", o.receiver, receivers)),
                receiver: padded("R", o.receiver, receivers),
                server: padded("S", o.server, servers),
                serve_number,
                court_side: ctx.court_side,
                serve_direction: ctx.direction,
                surface: ctx.surface,
                lateral: o.lateral(),
                depth: o.depth(),
                date: start + chrono::Days::new(m as u64),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "match_id,receiver,server,serve_number,court_side,serve_direction,surface,lateral,depth,date\n";

    fn record(match_id: &str, receiver: &str) -> RawReturnRecord {
        RawReturnRecord {
            match_id: match_id.into(),
            receiver: receiver.into(),
            server: "S".into(),
            serve_number: 1,
            court_side: CourtSide::Deuce,
            serve_direction: Some(ServeDirection::Wide),
            surface: Surface::Hard,
            lateral: 0.5,
            depth: -1.0,
            date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }

    fn points(match_id: &str, receiver: &str, n: usize) -> Vec<RawReturnRecord> {
        vec![record(match_id, receiver); n]
    }

    #[test]
    fn one_valid_row() {
        let text = format!("{HEADER}m1,A,B,1,deuce,wide,hard,0.25,-1.5,2020-03-01\n");
        let recs = read_csv(text.as_bytes(), 1).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].lateral, 0.25);
        assert_eq!(recs[0].serve_direction, Some(ServeDirection::Wide));
    }

    #[test]
    fn serve_number_three_is_unknown() {
        let text = format!("{HEADER}m1,A,B,1,deuce,wide,hard,0.25,-1.5,2020-03-01\nm1,A,B,3,ad,t,clay,0,0,2020-03-01\n");
        match read_csv(text.as_bytes(), 1) {
            Err(Error::UnknownEnumValue { row, column, value }) => {
                assert_eq!((row, column.as_str(), value.as_str()), (2, "serve_number", "3"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_no_header() {
        assert!(matches!(read_csv("".as_bytes(), 1), Err(Error::Parse { row: 0, .. })));
    }

    #[test]
    fn missing_direction_is_optional() {
        let text = format!("{HEADER}m1,A,B,2,ad,,grass,1,2,2020-03-01\n");
        let recs = read_csv(text.as_bytes(), 1).unwrap();
        assert_eq!(recs[0].serve_direction, None);
        let ds = encode_covariates(&recs, CovariateScheme::Full, 2).unwrap();
        assert_eq!(ds.missing_direction, 1);
    }

    #[test]
    fn bad_number_reports_column() {
        let text = format!("{HEADER}m1,A,B,1,deuce,wide,hard,abc,-1.5,2020-03-01\n");
        assert!(matches!(read_csv(text.as_bytes(), 1), Err(Error::Parse { row: 1, ref column, .. }) if column == "lateral"));
    }

    #[test]
    fn version_line_is_checked() {
        let ok = format!("#format_version=1\n{HEADER}m1,A,B,1,deuce,wide,hard,0.25,-1.5,2020-03-01\n");
        assert_eq!(read_csv(ok.as_bytes(), 1).unwrap().len(), 1);
        let bad = format!("#format_version=9\n{HEADER}");
        assert!(matches!(read_csv(bad.as_bytes(), 1), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let mut recs = points("m1", "A", 2);
        recs[1].serve_direction = None;
        recs[1].lateral = 0.1 + 0.2;
        let bytes = csv_bytes(&recs).unwrap();
        assert_eq!(read_csv(bytes.as_slice(), 1).unwrap(), recs);
    }

    #[test]
    fn short_match_costs_the_receiver_a_match() {
        let mut recs = points("m1", "A", 30);
        recs.extend(points("m2", "A", 30));
        recs.extend(points("m3", "A", 29));
        let (kept, report) = apply_filters(recs);
        assert!(kept.is_empty());
        assert_eq!(report.matches_dropped, 1);
        assert_eq!(report.points_dropped_by_match_rule, 29);
        assert_eq!(report.receivers_dropped, 1);
        assert_eq!(report.points_dropped_by_receiver_rule, 60);
    }

    #[test]
    fn exactly_three_matches_kept() {
        let mut recs = Vec::new();
        for m in ["m1", "m2", "m3"] {
            recs.extend(points(m, "A", 30));
        }
        let (kept, report) = apply_filters(recs.clone());
        assert_eq!(kept, recs);
        assert_eq!(report, FilterReport::default());
    }

    #[test]
    fn filters_are_idempotent() {
        let mut recs = Vec::new();
        for (m, r, n) in [("m1", "A", 40), ("m2", "A", 35), ("m3", "A", 31), ("m4", "B", 50), ("m5", "B", 10), ("m6", "B", 30), ("m7", "B", 30)] {
            recs.extend(points(m, r, n));
        }
        let (once, _) = apply_filters(recs);
        let (twice, report) = apply_filters(once.clone());
        assert_eq!(once, twice);
        assert_eq!(report, FilterReport::default());
    }

    #[test]
    fn encoding_builds_sorted_rosters_and_splits_serves() {
        let mut recs = vec![record("m1", "Zed"), record("m1", "Amy")];
        recs[0].server = "Q".into();
        let mut second = record("m1", "Bob");
        second.serve_number = 2;
        recs.push(second);
        let ds = encode_covariates(&recs, CovariateScheme::Full, 1).unwrap();
        assert_eq!(ds.receiver_roster, vec!["Amy", "Zed"]);
        assert_eq!(ds.server_roster, vec!["Q", "S"]);
        assert_eq!(ds.observations[0].receiver, 1);
        assert_eq!(ds.observations[0].server, 0);
        assert_eq!(ds.observations.len(), 2);
    }

    #[test]
    fn simulated_records_survive_filters_and_keep_indices() {
        use crate::sampler::{sample_with_context, separated_truth, SimConfig};
        let mut cfg = SimConfig::new(2, 2, 12, 160, 3);
        cfg.covariate_scheme = CovariateScheme::Full;
        let truth = separated_truth(&cfg, 1.0).unwrap();
        let sample = sample_with_context(&truth, &cfg).unwrap();
        let recs = records_from_sample(&sample, 12, 12, 1);
        let (kept, report) = apply_filters(recs.clone());
        assert_eq!(report, FilterReport::default());
        let ds = encode_covariates(&kept, CovariateScheme::Full, 1).unwrap();
        assert_eq!(ds.observations, sample.observations);
        assert_eq!(ds.receiver_roster[11], "R11");
    }
}
