use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub task: String,
    pub version: String,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn sha256_json<T: Serialize>(value: &T) -> CliResult<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

/// Output directory of one run plus the files written so far.
pub struct Workspace {
    pub dir: PathBuf,
    written: Vec<String>,
    started: Instant,
}

impl Workspace {
    pub fn open(config: &RunConfig) -> CliResult<Self> {
        std::fs::create_dir_all(&config.output_dir).map_err(|source| CliError::Io {
            path: config.output_dir.clone(),
            source,
        })?;
        Ok(Self {
            dir: config.output_dir.clone(),
            written: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Path of an artifact produced by an earlier stage.
    pub fn require(&self, file: &str, hint: &'static str) -> CliResult<PathBuf> {
        let p = self.path(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { path: p, hint })
        }
    }

    /// Path for a new artifact; the file is listed in the manifest.
    pub fn output(&mut self, file: &str) -> PathBuf {
        self.written.push(file.to_string());
        self.path(file)
    }

    pub fn write_json<T: Serialize>(&mut self, file: &str, value: &T) -> CliResult<()> {
        let path = self.output(file);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| CliError::Io { path, source })
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, file: &str, hint: &'static str) -> CliResult<T> {
        let path = self.require(file, hint)?;
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Integrity(format!("{} is not readable: {e}", path.display())))
    }

    /// Writes `manifest_<task>.json` listing every artifact with its digest.
    pub fn finish(mut self, task: &str, config: &RunConfig) -> CliResult<PathBuf> {
        let mut artifacts = Vec::with_capacity(self.written.len());
        self.written.sort();
        self.written.dedup();
        for file in &self.written {
            artifacts.push(Artifact {
                file: file.clone(),
                sha256: sha256_file(&self.path(file))?,
            });
        }
        let manifest = RunManifest {
            task: task.to_string(),
            version: VERSION.to_string(),
            config: config.clone(),
            artifacts,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let name = format!("manifest_{task}.json");
        let path = self.path(&name);
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(&path, text).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(path)
    }
}
