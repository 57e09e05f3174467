use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::{io_err, CliError, CliResult};

/// SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// A pipeline stage whose outputs in `dir` are tagged with a config hash
/// sidecar `<name>.hash`.
pub struct Stage {
    dir: PathBuf,
    name: String,
    hash: String,
}

impl Stage {
    pub fn new<T: Serialize>(dir: &Path, name: &str, config: &T) -> CliResult<Self> {
        Ok(Stage {
            dir: dir.to_path_buf(),
            name: name.to_string(),
            hash: config_hash(&(name, config)),
        })
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn sidecar(&self) -> PathBuf {
        self.dir.join(format!("{}.hash", self.name))
    }

    /// True when every output exists and was produced under the same config.
    /// A sidecar with a different hash is refused rather than overwritten.
    pub fn is_done(&self, outputs: &[&str]) -> CliResult<bool> {
        let sidecar = self.sidecar();
        let recorded = match fs::read_to_string(&sidecar) {
            Ok(s) => s.trim().to_string(),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(false),
            Err(e) => return Err(io_err(&sidecar, e)),
        };
        if recorded != self.hash {
            return Err(CliError::Conflict(format!(
                "refusing to reuse {}: stage {:?} was produced with config hash {recorded}, current config hashes to {}; \
                 delete the directory or choose another --out",
                self.dir.display(),
                self.name,
                self.hash
            )));
        }
        Ok(outputs.iter().all(|o| self.dir.join(o).exists()))
    }

    pub fn mark_done(&self) -> CliResult<()> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let sidecar = self.sidecar();
        fs::write(&sidecar, format!("{}\n", self.hash)).map_err(|e| io_err(&sidecar, e))
    }
}
