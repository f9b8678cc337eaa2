//! Parameter checkpoints: a JSON header plus a little-endian `f64` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::net::{NetSpec, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamHeader {
    pub layer_widths: Vec<usize>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<String>,
    /// File name of the binary sidecar, relative to the header.
    pub data_file: String,
}

/// Sidecar path for a header path: same stem, `.bin` extension.
pub fn sidecar_path(header: &Path) -> PathBuf {
    header.with_extension("bin")
}

pub fn write_f64_array(path: &Path, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_f64_array(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * 8 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("expected {} bytes, found {}", expected * 8, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn save_params(
    header_path: &Path,
    spec: &NetSpec,
    params: &ParamVector,
    role: Option<&str>,
) -> Result<()> {
    let data = sidecar_path(header_path);
    let header = ParamHeader {
        layer_widths: spec.layer_widths().to_vec(),
        count: params.len(),
        role: role.map(str::to_owned),
        data_file: file_name(&data),
    };
    write_json(header_path, &header)?;
    write_f64_array(&data, params.as_slice())
}

pub fn load_params(header_path: &Path) -> Result<(NetSpec, ParamVector, Option<String>)> {
    let header: ParamHeader = read_json(header_path)?;
    let spec = NetSpec::new(header.layer_widths.clone())?;
    if spec.param_count() != header.count {
        return Err(Error::Format {
            path: header_path.to_path_buf(),
            message: format!(
                "count {} disagrees with layer widths ({} params)",
                header.count,
                spec.param_count()
            ),
        });
    }
    let data_path = header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&header.data_file);
    let values = read_f64_array(&data_path, header.count)?;
    let params = ParamVector::from_vec(&spec, values)?;
    Ok((spec, params, header.role))
}
