//! Run directory layout and manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const CONFIG_FILE: &str = "config.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHECKPOINTS: &str = "checkpoints";
pub const REPORTS: &str = "reports";
pub const DATA: &str = "data";

pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates the directory and its `checkpoints/` and `reports/` children.
    pub fn create(root: &Path) -> Result<Self, CliError> {
        for dir in [root.to_path_buf(), root.join(CHECKPOINTS), root.join(REPORTS)] {
            std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(CHECKPOINTS).join(name)
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join(REPORTS).join(name)
    }

    pub fn data(&self, name: &str) -> Result<PathBuf, CliError> {
        let dir = self.root.join(DATA);
        std::fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
        Ok(dir.join(name))
    }

    pub fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(|e| CliError::runtime(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| io_error(path, e))
    }

    /// SHA-256 of every file under the run directory except the manifest,
    /// keyed by relative path with `/` separators.
    pub fn checksums(&self) -> Result<BTreeMap<String, String>, CliError> {
        let mut out = BTreeMap::new();
        let mut stack = vec![self.root.clone()];
        while let Some(dir) = stack.pop() {
            let entries = std::fs::read_dir(&dir).map_err(|e| io_error(&dir, e))?;
            for entry in entries {
                let path = entry.map_err(|e| io_error(&dir, e))?.path();
                if path.is_dir() {
                    stack.push(path);
                    continue;
                }
                let rel = path.strip_prefix(&self.root).expect("under root");
                let key = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if key == MANIFEST_FILE {
                    continue;
                }
                let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
                out.insert(key, format!("{:x}", Sha256::digest(&bytes)));
            }
        }
        Ok(out)
    }
}

pub fn io_error(path: &Path, e: std::io::Error) -> CliError {
    let mut err = CliError::runtime(format!("{}: {e}", path.display()));
    err.path = Some(path.display().to_string());
    err
}
