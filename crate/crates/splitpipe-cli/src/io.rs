//! File readers and atomic writers for every artifact the commands touch.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use splitpipe_core::cnn_ir::CnnModel;
use splitpipe_core::cost_model::{DeviceProfile, LinkProfile};
use splitpipe_core::dataset::{from_ndjson, DatasetError, DatasetRecord};
use splitpipe_core::gnn::{GnnParams, TrainConfig};
use splitpipe_core::model_zoo::{build_reference, ModelName};

use crate::error::CliError;

/// Trained-model artifact: the exact training configuration plus every
/// parameter matrix by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    pub config: TrainConfig,
    pub params: GnnParams,
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Io { path: path.to_path_buf(), message: e.to_string() })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<(T, Vec<u8>), CliError> {
    let bytes = read_bytes(path)?;
    let value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    Ok((value, bytes))
}

/// Model file: parse, then run shape inference so downstream code can
/// rely on unit shapes.
pub fn read_model(path: &Path) -> Result<(CnnModel, Vec<u8>), CliError> {
    let (model, bytes): (CnnModel, _) = read_json(path)?;
    let model = model.infer_shapes().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok((model, bytes))
}

pub fn read_zoo_model(name: &str) -> Result<CnnModel, CliError> {
    let name: ModelName = name.parse().map_err(|e: splitpipe_core::model_zoo::ZooError| {
        CliError::Domain(e.to_string())
    })?;
    Ok(build_reference(name))
}

pub fn read_device_profile(path: &Path) -> Result<(DeviceProfile, Vec<u8>), CliError> {
    let (profile, bytes): (DeviceProfile, _) = read_json(path)?;
    profile.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok((profile, bytes))
}

pub fn read_link_profile(path: &Path) -> Result<(LinkProfile, Vec<u8>), CliError> {
    let (link, bytes): (LinkProfile, _) = read_json(path)?;
    link.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok((link, bytes))
}

pub fn read_dataset(path: &Path) -> Result<(Vec<DatasetRecord>, Vec<u8>), CliError> {
    let bytes = read_bytes(path)?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })?;
    let records = from_ndjson(text).map_err(|e| match e {
        DatasetError::ParseError { line } => CliError::Parse {
            path: path.to_path_buf(),
            message: format!("bad record on line {line}"),
        },
        other => CliError::Domain(other.to_string()),
    })?;
    Ok((records, bytes))
}

pub fn read_params(path: &Path) -> Result<(ParamsFile, Vec<u8>), CliError> {
    let (file, bytes): (ParamsFile, _) = read_json(path)?;
    file.params.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    file.config.validate().map_err(|e| CliError::Domain(e.to_string()))?;
    Ok((file, bytes))
}

/// Write via a temp file in the same directory, then rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let io_err = |e: std::io::Error| CliError::Io { path: path.to_path_buf(), message: e.to_string() };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Resolve a profile path: explicit flag, else `SPLITPIPE_PROFILE_DIR`,
/// else the local `profiles/` directory.
pub fn resolve_profile(explicit: Option<&Path>, default_name: &str) -> Result<PathBuf, CliError> {
    if let Some(path) = explicit {
        return Ok(path.to_path_buf());
    }
    let dir = env::var_os("SPLITPIPE_PROFILE_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("profiles"));
    let candidate = dir.join(default_name);
    if candidate.is_file() {
        Ok(candidate)
    } else {
        Err(CliError::Io {
            path: candidate,
            message: "profile not found; pass it explicitly or set SPLITPIPE_PROFILE_DIR".into(),
        })
    }
}
