//! CSV sinks and the run manifest.

use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

/// One CSV file with a fixed header.
pub struct CsvSink {
    writer: csv::Writer<File>,
    path: PathBuf,
    width: usize,
    rows: usize,
}

impl CsvSink {
    pub fn create(path: impl AsRef<Path>, header: &[&str]) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut writer = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(header)?;
        Ok(CsvSink { writer, path, width: header.len(), rows: 0 })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        anyhow::ensure!(fields.len() == self.width, "{}: {} fields for {} columns", self.path.display(), fields.len(), self.width);
        self.writer.write_record(fields)?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<usize> {
        self.writer.flush()?;
        Ok(self.rows)
    }
}

/// Shortest round-trip decimal form; non-finite values become `nan`.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        "nan".into()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), num)
}

/// Elapsed seconds since `start`, or an empty field when timing is off.
pub fn seconds(cfg: &ExperimentConfig, start: Instant) -> String {
    if cfg.record_timing {
        format!("{:.3}", start.elapsed().as_secs_f64())
    } else {
        String::new()
    }
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.serialize().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Records the configuration, its hash, versions and the files a run wrote.
pub fn write_manifest(cfg: &ExperimentConfig, outputs: &[(PathBuf, usize)], status: &str) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut text = String::new();
    text.push_str(&format!("mode: {}\n", cfg.mode));
    text.push_str(&format!("status: {status}\n"));
    text.push_str(&format!("config_sha256: {}\n", config_hash(cfg)));
    text.push_str(&format!("ulab_harness_version: {}\n", env!("CARGO_PKG_VERSION")));
    text.push_str("outputs:\n");
    for (path, rows) in outputs {
        let shown = path.strip_prefix(&cfg.out_dir).unwrap_or(path);
        text.push_str(&format!("  {} rows={rows}\n", shown.display()));
    }
    text.push_str("config:\n");
    for line in cfg.serialize().lines() {
        text.push_str(&format!("  {line}\n"));
    }
    fs::write(cfg.out_dir.join("manifest.txt"), text)?;
    Ok(())
}
