//! "CStack v1" files: `<name>.json` sidecar plus `<name>.craw` payload of
//! little-endian float32 (re, im) pairs, channel-major, row-major per channel.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ComplexImageStack, Domain};

pub const CSTACK_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub version: u64,
    pub dims: Vec<usize>,
    pub channels: usize,
    pub domain: Domain,
}

/// Sidecar and payload paths for a stack name; a trailing `.json` or
/// `.craw` on `path` is ignored.
pub fn stack_paths(path: &Path) -> (PathBuf, PathBuf) {
    let base = match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("craw") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut json = base.clone().into_os_string();
    json.push(".json");
    let mut raw = base.into_os_string();
    raw.push(".craw");
    (json.into(), raw.into())
}

pub fn load_stack(path: impl AsRef<Path>) -> Result<ComplexImageStack> {
    let (json_path, raw_path) = stack_paths(path.as_ref());
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Sidecar {
        path: json_path.clone(),
        reason: e.to_string(),
    })?;
    if sidecar.version != CSTACK_VERSION {
        return Err(Error::UnsupportedVersion(sidecar.version));
    }
    let raw = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n: usize = sidecar.channels * sidecar.dims.iter().product::<usize>();
    let expected = (n * 8) as u64;
    if raw.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: raw.len() as u64,
        });
    }
    let data = raw
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    ComplexImageStack::new(sidecar.dims, sidecar.channels, data, sidecar.domain)
}

/// Write `stack` as CStack v1. Samples are narrowed to float32.
pub fn save_stack(stack: &ComplexImageStack, path: impl AsRef<Path>) -> Result<()> {
    let (json_path, raw_path) = stack_paths(path.as_ref());
    let sidecar = Sidecar {
        version: CSTACK_VERSION,
        dims: stack.dims().to_vec(),
        channels: stack.channels(),
        domain: stack.domain(),
    };
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    let mut raw = Vec::with_capacity(stack.data().len() * 8);
    for v in stack.data() {
        raw.extend_from_slice(&(v.re as f32).to_le_bytes());
        raw.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    if let Some(dir) = json_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&raw_path, raw).map_err(|e| Error::io(&raw_path, e))?;
    Ok(())
}
