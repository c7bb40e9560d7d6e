use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use prmix_core::{MixingVector, SupportSet};

use crate::config::RunConfig;
use crate::error::{ExitKind, Tag};

pub const LOCK_FILE: &str = ".prmix.lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";
pub const ESTIMATE_FILE: &str = "estimate.csv";

/// An output directory held under an exclusive lock for the life of the value.
#[derive(Debug)]
pub struct OutputDir {
    path: PathBuf,
    _lock: File,
    written: Vec<String>,
}

impl OutputDir {
    pub fn acquire(path: &Path) -> Result<OutputDir> {
        std::fs::create_dir_all(path).with_context(|| format!("cannot create {}", path.display()))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path.join(LOCK_FILE))
            .with_context(|| format!("cannot open lockfile in {}", path.display()))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(std::fs::TryLockError::WouldBlock) => {
                return Err(anyhow!(
                    "output directory {} is in use by another prmix process",
                    path.display()
                ))
                .tag(ExitKind::Config)
            }
            Err(std::fs::TryLockError::Error(e)) => {
                return Err(e).with_context(|| format!("cannot lock {}", path.display()))
            }
        }
        Ok(OutputDir {
            path: path.to_path_buf(),
            _lock: lock,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        self.path.join(name)
    }

    pub fn written(&self) -> &[String] {
        &self.written
    }

    pub fn csv(&mut self, name: &str) -> Result<csv::Writer<File>> {
        let p = self.file(name);
        csv::Writer::from_path(&p).with_context(|| format!("cannot create {}", p.display()))
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        let p = self.file(name);
        std::fs::write(&p, text).with_context(|| format!("cannot write {}", p.display()))
    }
}

/// `f64` in shortest round-trip form.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn join_points(points: &[f64]) -> String {
    points.iter().map(|p| num(*p)).collect::<Vec<_>>().join(";")
}

pub fn write_estimate(w: &mut csv::Writer<File>, support: &SupportSet, weights: &MixingVector) -> Result<()> {
    w.write_record(["point", "weight"])?;
    for (u, f) in support.points().iter().zip(weights.weights()) {
        w.write_record([num(*u), num(*f)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an estimate file back into the exact support and mixing vector.
pub fn read_estimate(path: &Path) -> Result<(SupportSet, MixingVector)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    if r.headers()?.iter().collect::<Vec<_>>() != ["point", "weight"] {
        bail!("{}: expected header point,weight", path.display());
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let parse = |s: &str| {
            s.parse::<f64>()
                .with_context(|| format!("{}: line {line}", path.display()))
        };
        points.push(parse(&rec[0])?);
        weights.push(parse(&rec[1])?);
    }
    Ok((SupportSet::new(points)?, MixingVector::new(weights)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DataRecord {
    pub provenance: String,
    pub n: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub command: String,
    pub config: RunConfig,
    pub seed: Option<u64>,
    pub data: Option<DataRecord>,
    pub started_unix_seconds: u64,
    pub wall_time_seconds: f64,
    pub status: String,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let p = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&p).with_context(|| format!("cannot read {}", p.display()))?;
        serde_json::from_str(&text).with_context(|| format!("malformed {}", p.display()))
    }
}
