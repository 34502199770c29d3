use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use senskit::grid::{ComplexImageStack, Domain};

use crate::CliError;

/// `<prefix><suffix>`, keeping any directory part of the prefix.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json(path: &Path) -> Result<serde_json::Value, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Single-channel real stack (mask, lambda map).
pub fn scalar_stack(dims: &[usize], values: impl IntoIterator<Item = f64>) -> ComplexImageStack {
    let data: Vec<Complex64> = values.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
    ComplexImageStack::new(dims.to_vec(), 1, data, Domain::Image).expect("length matches dims")
}

/// Binary 16-bit PGM of `values` (row-major, `dims = [rows, cols]`), scaled so
/// the maximum maps to 65535. An all-zero image stays zero.
pub fn write_pgm(path: &Path, dims: &[usize], values: &[f64]) -> Result<(), CliError> {
    let (rows, cols) = match dims {
        [r, c] => (*r, *c),
        _ => return Err(CliError::Dimension(format!("PGM output needs 2-D data, got {dims:?}"))),
    };
    let max = values.iter().cloned().fold(0.0, f64::max);
    let mut bytes = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    for &v in values {
        let level = if max > 0.0 { (v / max * 65535.0).round().clamp(0.0, 65535.0) as u16 } else { 0 };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        write_pgm(&p, &[1, 3], &[0.0, 0.5, 2.0]).unwrap();
        let b = fs::read(&p).unwrap();
        let header = b"P5\n3 1\n65535\n";
        assert_eq!(&b[..header.len()], header);
        let px: Vec<u16> = b[header.len()..].chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        assert_eq!(px, vec![0, 16384, 65535]);
    }

    #[test]
    fn suffix_keeps_directory() {
        assert_eq!(with_suffix(Path::new("out/run"), "_maps"), PathBuf::from("out/run_maps"));
    }
}
