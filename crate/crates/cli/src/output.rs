//! Hash-named run directories, written atomically.
//!
//! A run goes to `<base>/<command>-<hash>`, where the hash covers the
//! command, its flags, the rng seed and the canonical config. Files are
//! written into a hidden staging directory that is renamed into place only
//! after every file has been written, so a failed run leaves nothing behind
//! and an existing run directory is never modified.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Everything a run's outputs depend on.
#[derive(Debug, Clone, Serialize)]
pub struct RunKey {
    pub command: String,
    pub flags: Vec<String>,
    pub rng_seed: u64,
    pub config: String,
}

impl RunKey {
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.command.as_bytes());
        h.update([0]);
        for f in &self.flags {
            h.update(f.as_bytes());
            h.update([0]);
        }
        h.update(self.rng_seed.to_le_bytes());
        h.update(self.config.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn dir_name(&self) -> String {
        format!("{}-{}", self.command, &self.hash()[..16])
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'a str,
    flags: &'a [String],
    rng_seed: u64,
    config_hash: String,
    config_path: String,
    version: &'static str,
    threads: usize,
    timings_s: Vec<(String, f64)>,
    files: Vec<String>,
    notes: &'a serde_json::Value,
}

/// Staging directory for one run.
pub struct RunDir {
    key: RunKey,
    config_path: PathBuf,
    staging: PathBuf,
    target: PathBuf,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    started: Instant,
    pub notes: serde_json::Value,
}

pub enum Prepared {
    Fresh(RunDir),
    /// The run already exists; nothing is written.
    Existing(PathBuf),
}

impl RunDir {
    pub fn prepare(base: &Path, key: RunKey, config_path: &Path) -> Result<Prepared, CliError> {
        let target = base.join(key.dir_name());
        if target.exists() {
            return Ok(Prepared::Existing(target));
        }
        fs::create_dir_all(base)?;
        let staging = base.join(format!(".{}.partial-{}", key.dir_name(), std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging)?;
        }
        fs::create_dir(&staging)?;
        let mut dir = RunDir {
            key,
            config_path: config_path.to_path_buf(),
            staging,
            target,
            files: Vec::new(),
            timings: Vec::new(),
            started: Instant::now(),
            notes: serde_json::Value::Null,
        };
        let canonical = dir.key.config.clone();
        dir.write_bytes("config.toml", canonical.as_bytes())?;
        Ok(Prepared::Fresh(dir))
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.staging.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path(name);
        fs::write(p, bytes)?;
        Ok(())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let p = self.path(name);
        let mut w = csv::Writer::from_path(p)?;
        for r in rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let p = self.path(name);
        let f = fs::File::create(p)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), value)?;
        Ok(())
    }

    pub fn create(&mut self, name: &str) -> Result<std::io::BufWriter<fs::File>, CliError> {
        let p = self.path(name);
        Ok(std::io::BufWriter::new(fs::File::create(p)?))
    }

    pub fn time(&mut self, label: &str, seconds: f64) {
        self.timings.push((label.to_string(), seconds));
    }

    /// Writes the manifest and moves the run into place.
    pub fn commit(mut self) -> Result<PathBuf, CliError> {
        let total = self.started.elapsed().as_secs_f64();
        self.timings.push(("total".into(), total));
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let manifest = Manifest {
            schema_version: SCHEMA_VERSION,
            command: &self.key.command,
            flags: &self.key.flags,
            rng_seed: self.key.rng_seed,
            config_hash: self.key.hash(),
            config_path: self.config_path.display().to_string(),
            version: env!("CARGO_PKG_VERSION"),
            threads: rayon::current_num_threads(),
            timings_s: self.timings.clone(),
            files,
            notes: &self.notes,
        };
        let f = fs::File::create(self.staging.join("manifest.json"))?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &manifest)?;
        fs::rename(&self.staging, &self.target)?;
        Ok(self.target.clone())
    }

    /// Drops the staging directory.
    pub fn abandon(self) {
        let _ = fs::remove_dir_all(&self.staging);
    }
}
