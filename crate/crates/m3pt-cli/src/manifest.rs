//! Run manifests: a TOML record per run with the resolved configuration,
//! seeds, input hashes, timestamps, and artifact paths — enough to
//! reproduce the run bit-for-bit in single-threaded mode.

use std::io::Read;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use m3pt::error::Result;

pub const RUN_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub input_hashes: Vec<(String, String)>,
    pub artifacts: Vec<String>,
    pub config: toml::Value,
}

pub struct RunRecorder {
    command: String,
    seed: u64,
    started_at: chrono::DateTime<chrono::Utc>,
    input_hashes: Vec<(String, String)>,
    artifacts: Vec<String>,
}

impl RunRecorder {
    pub fn start(command: &str, seed: u64) -> Self {
        RunRecorder {
            command: command.to_string(),
            seed,
            started_at: chrono::Utc::now(),
            input_hashes: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    /// Hashes one input file into the manifest.
    pub fn hash_input(&mut self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = [0u8; 8192];
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.input_hashes.push((path.display().to_string(), hex));
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    /// Writes the manifest next to the run's artifacts.
    pub fn finish<C: Serialize>(self, config: &C, path: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            format_version: RUN_MANIFEST_VERSION,
            command: self.command,
            argv: std::env::args().collect(),
            seed: self.seed,
            started_at: self.started_at.to_rfc3339(),
            finished_at: chrono::Utc::now().to_rfc3339(),
            input_hashes: self.input_hashes,
            artifacts: self.artifacts,
            config: toml::Value::try_from(config)
                .map_err(m3pt::error::Error::TomlSer)?,
        };
        std::fs::write(path, toml::to_string_pretty(&manifest)?)?;
        Ok(path.to_path_buf())
    }
}

/// Refuses to clobber an existing artifact unless forced.
pub fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    let occupied = if path.is_dir() {
        std::fs::read_dir(path)?.next().is_some()
    } else {
        path.exists()
    };
    if occupied && !force {
        return Err(m3pt::error::Error::config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}
