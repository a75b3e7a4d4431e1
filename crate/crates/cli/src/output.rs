//! Staged output: every file of a run is encoded in memory, written to a
//! temporary file in the destination directory, and only renamed into place
//! once all of them were written.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use qdm_core::datacube::{write_qdc, QdcObject};
use qdm_core::Result;
use serde::Serialize;
use serde_json::Value;

pub struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    pub fn add_bytes(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_qdc(&mut self, name: impl Into<String>, object: impl Into<QdcObject>) -> Result<()> {
        let mut buf = Vec::new();
        write_qdc(&mut buf, &object.into())?;
        self.add_bytes(name, buf);
        Ok(())
    }

    pub fn add_json(&mut self, name: impl Into<String>, value: &impl Serialize) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.add_bytes(name, bytes);
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.files.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes everything plus `manifest.json`.
    pub fn commit(mut self, mut manifest: RunManifest) -> Result<()> {
        manifest.outputs = self.names();
        manifest.outputs.push("manifest.json".into());
        manifest.wall_time_s = manifest.started.elapsed().as_secs_f64();
        self.add_json("manifest.json", &manifest)?;

        std::fs::create_dir_all(&self.dir)?;
        let mut staged = Vec::with_capacity(self.files.len());
        for (name, bytes) in &self.files {
            let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
            tmp.write_all(bytes)?;
            tmp.as_file().sync_all()?;
            staged.push((tmp, self.dir.join(name)));
        }
        for (tmp, dest) in staged {
            tmp.persist(&dest).map_err(|e| e.error)?;
        }
        Ok(())
    }
}

/// Everything needed to rerun a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<String>,
    pub options: Value,
    pub constants: Value,
    pub rng_algorithm: &'static str,
    pub rng_seed: Option<u64>,
    /// Anything the run derived that a rerun should reproduce.
    pub results: Value,
    pub timestamp_unix_s: u64,
    pub wall_time_s: f64,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn new(subcommand: &'static str, options: &impl Serialize) -> Self {
        Self {
            tool: "qdm",
            version: env!("CARGO_PKG_VERSION"),
            subcommand,
            inputs: Vec::new(),
            outputs: Vec::new(),
            options: serde_json::to_value(options).unwrap_or(Value::Null),
            constants: Value::Null,
            rng_algorithm: qdm_core::rng::ALGORITHM,
            rng_seed: None,
            results: Value::Null,
            timestamp_unix_s: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_time_s: 0.0,
            started: Instant::now(),
        }
    }
}
