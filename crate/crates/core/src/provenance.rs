//! Content hashes and the per-command run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the canonical (key-sorted) JSON rendering of `value`.
pub fn hash_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config values serialize");
    sha256_hex(serde_json::to_string(&v).expect("json value renders").as_bytes())
}

/// Order-sensitive hash over named tensors: name, shape, then little-endian values.
pub fn hash_tensors<'a>(tensors: impl IntoIterator<Item = (String, &'a Array2<f64>)>) -> String {
    let mut h = Sha256::new();
    for (name, t) in tensors {
        h.update(name.as_bytes());
        h.update([0u8]);
        h.update((t.nrows() as u64).to_le_bytes());
        h.update((t.ncols() as u64).to_le_bytes());
        for v in t.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub fn hash_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Skipped,
    Failed,
}

/// What one command consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    /// Hash of `command` + `config` + `inputs`; equal keys mean an equivalent run.
    pub run_key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
    pub wall_clock_secs: f64,
    pub status: ExitStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn run_key(command: &str, config: &serde_json::Value, inputs: &BTreeMap<String, String>) -> String {
        hash_json(&serde_json::json!({ "command": command, "config": config, "inputs": inputs }))
    }

    /// Refuses to record an output that does not exist.
    pub fn write(&self, path: &Path) -> io::Result<()> {
        if self.status == ExitStatus::Success {
            if let Some(missing) = self.outputs.iter().find(|p| !p.exists()) {
                return Err(io::Error::new(
                    io::ErrorKind::NotFound,
                    format!("manifest names missing artifact {}", missing.display()),
                ));
            }
        }
        let mut body = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        body.push('\n');
        write_atomic(path, body.as_bytes())
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        serde_json::from_str(&fs::read_to_string(path)?)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// True when a successful manifest with key `run_key` sits at `path` and all its outputs still exist.
    pub fn is_complete(path: &Path, run_key: &str) -> bool {
        match Self::read(path) {
            Ok(m) => {
                m.status == ExitStatus::Success
                    && m.run_key == run_key
                    && m.outputs.iter().all(|p| p.exists())
            }
            Err(_) => false,
        }
    }
}
