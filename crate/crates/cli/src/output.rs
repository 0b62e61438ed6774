//! Output directory with atomic file writes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Serialize;

pub struct OutputDir {
    pub path: PathBuf,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> anyhow::Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Renders a header and rows as CSV.
pub fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

impl OutputDir {
    pub fn create(path: PathBuf) -> anyhow::Result<Self> {
        fs::create_dir_all(path.join("runs")).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path })
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> anyhow::Result<()> {
        write_atomic(&self.path.join(name), bytes)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        self.write(name, &json_bytes(value)?)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> anyhow::Result<()> {
        self.write(name, &csv_bytes(header, rows)?)
    }

    /// Writes `runs/<id>/` by filling a staging directory and renaming it into place.
    pub fn write_run(&self, id: &str, files: &[(&str, serde_json::Value)]) -> anyhow::Result<()> {
        let runs = self.path.join("runs");
        let staging = runs.join(format!(".{id}.tmp"));
        let target = runs.join(id);
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir_all(&staging).with_context(|| format!("creating {}", staging.display()))?;
        for (name, value) in files {
            fs::write(staging.join(name), json_bytes(value)?)?;
        }
        if target.exists() {
            fs::remove_dir_all(&target).with_context(|| format!("replacing {}", target.display()))?;
        }
        fs::rename(&staging, &target).with_context(|| format!("renaming into {}", target.display()))?;
        Ok(())
    }
}
