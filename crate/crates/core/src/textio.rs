//! Shared helpers for the line-oriented text formats.

use crate::error::{Error, Result};
use std::fs;
use std::path::Path;

/// Serializes an f64 with 17 significant digits, enough for an exact
/// round-trip through `str::parse::<f64>()`.
pub fn fmt_g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Integer-valued cells (binary, categorical) print without a fraction.
pub fn fmt_cell(x: f64, integer: bool) -> String {
    if integer {
        format!("{}", x as i64)
    } else {
        fmt_g17(x)
    }
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn write_string(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::Io {
                path: parent.display().to_string(),
                msg: e.to_string(),
            })?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}
