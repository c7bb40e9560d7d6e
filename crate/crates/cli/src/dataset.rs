//! Observation files: one value per line, or `value,count` frequency rows.
//! Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

const GALAXIES: &str = include_str!("../data/galaxies.csv");
const DEFAULTS: &str = include_str!("../data/defaults.csv");

/// Value of the open-ended top bin in the bundled defaults table.
pub const DEFAULTS_CENSORED_VALUE: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    Values,
    Frequency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub observations: Vec<f64>,
    pub provenance: String,
    /// SHA-256 of the source text.
    pub digest: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

fn digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_number(field: &str, line: u64) -> Result<f64> {
    let v: f64 = field
        .parse()
        .with_context(|| format!("line {line}: cannot parse {field:?} as a number"))?;
    if !v.is_finite() {
        bail!("line {line}: value {field:?} is not finite");
    }
    Ok(v)
}

/// A leading row whose first field is not numeric is taken as column names.
fn is_header(record: &csv::StringRecord) -> bool {
    record.get(0).is_some_and(|f| f.parse::<f64>().is_err())
}

pub fn parse_values(text: &str, provenance: &str) -> Result<Dataset> {
    let mut observations = Vec::new();
    for (i, record) in reader(text).records().enumerate() {
        let record = record.context("malformed CSV")?;
        if i == 0 && is_header(&record) {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 1 {
            bail!("line {line}: expected one value, found {} fields", record.len());
        }
        observations.push(parse_number(&record[0], line)?);
    }
    if observations.is_empty() {
        bail!("{provenance}: no observations");
    }
    Ok(Dataset {
        observations,
        provenance: provenance.to_string(),
        digest: digest(text),
    })
}

/// Frequency rows are sorted by value and expanded in that order.
pub fn parse_frequency(text: &str, provenance: &str) -> Result<Dataset> {
    let mut rows: Vec<(f64, u64)> = Vec::new();
    for (i, record) in reader(text).records().enumerate() {
        let record = record.context("malformed CSV")?;
        if i == 0 && is_header(&record) {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            bail!("line {line}: expected value,count, found {} fields", record.len());
        }
        let value = parse_number(&record[0], line)?;
        let count: u64 = record[1]
            .parse()
            .with_context(|| format!("line {line}: cannot parse count {:?}", &record[1]))?;
        if count == 0 {
            bail!("line {line}: counts must be at least 1");
        }
        rows.push((value, count));
    }
    if rows.is_empty() {
        bail!("{provenance}: no observations");
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let observations = rows
        .iter()
        .flat_map(|&(v, c)| std::iter::repeat_n(v, c as usize))
        .collect();
    Ok(Dataset {
        observations,
        provenance: provenance.to_string(),
        digest: digest(text),
    })
}

pub fn parse(text: &str, format: DataFormat, provenance: &str) -> Result<Dataset> {
    match format {
        DataFormat::Values => parse_values(text, provenance),
        DataFormat::Frequency => parse_frequency(text, provenance),
    }
}

pub fn ingest(path: &Path, format: DataFormat) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse(&text, format, &path.display().to_string()).with_context(|| format!("in {}", path.display()))
}

/// Names accepted after `builtin:` in a data source.
pub const BUILTINS: [&str; 2] = ["galaxies", "defaults"];

pub fn builtin_format(name: &str) -> Option<DataFormat> {
    match name {
        "galaxies" => Some(DataFormat::Values),
        "defaults" => Some(DataFormat::Frequency),
        _ => None,
    }
}

/// A bundled dataset; `drop_censored_bin` removes the `>=16` row of the
/// defaults table instead of recording it at 16.
pub fn builtin(name: &str, drop_censored_bin: bool) -> Result<Dataset> {
    match name {
        "galaxies" => parse_values(GALAXIES, "builtin:galaxies"),
        "defaults" => {
            let mut d = parse_frequency(DEFAULTS, "builtin:defaults")?;
            if drop_censored_bin {
                d.observations.retain(|&y| y != DEFAULTS_CENSORED_VALUE);
                d.provenance.push_str(" (censored bin dropped)");
            }
            Ok(d)
        }
        other => bail!("unknown builtin dataset {other:?}; available: {}", BUILTINS.join(", ")),
    }
}

pub fn write_values(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut out = String::new();
    for line in header.lines() {
        let _ = writeln!(out, "# {line}");
    }
    for v in values {
        let _ = writeln!(out, "{v}");
    }
    std::fs::write(path, out).with_context(|| format!("cannot write {}", path.display()))
}
