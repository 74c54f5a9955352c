//! Run manifests: every command records its parameters and the digests of
//! its inputs and outputs next to the files it wrote.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::io::write_atomic;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hex::encode(hasher.finalize())
}

/// Record of one command invocation; wall time is informational and is the
/// only field expected to differ between reruns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub tool_version: String,
    pub wall_time_s: f64,
}

/// Accumulates manifest fields while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn start(command: &str) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                command: command.to_string(),
                parameters: BTreeMap::new(),
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_time_s: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.manifest.parameters.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) -> &mut Self {
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(bytes));
        self
    }

    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> &mut Self {
        self.manifest.outputs.insert(path.display().to_string(), sha256_hex(bytes));
        self
    }

    /// Write the manifest as pretty JSON to `path`.
    pub fn finish(mut self, path: &Path) -> Result<(), CliError> {
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        let bytes = crate::io::to_json_pretty(&self.manifest)?;
        write_atomic(path, &bytes)
    }
}

/// Default manifest path for a single-output command: `<out>.manifest.json`.
pub fn manifest_path_for(out: &Path) -> std::path::PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    std::path::PathBuf::from(name)
}
