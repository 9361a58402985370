//! Text serialization helpers shared by the graph and checkpoint formats.
//!
//! All files are UTF-8 with LF line endings. Floats are written with 17
//! significant digits, which round-trips every f64 exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// 17-significant-digit scientific notation.
pub(crate) fn format_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

pub(crate) fn parse_f64(s: &str, path: &Path, line: usize) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("bad float {s:?}: {e}"),
    })
}

pub(crate) fn parse_usize(s: &str, path: &Path, line: usize) -> Result<usize> {
    s.trim().parse::<usize>().map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line,
        msg: format!("bad integer {s:?}: {e}"),
    })
}

/// Parse a 0/1 field.
pub(crate) fn parse_bit(s: &str, path: &Path, line: usize) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("expected 0 or 1, got {other:?}"),
        }),
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_formatting_roundtrips_exactly() {
        for &x in &[
            0.0,
            1.0,
            -1.0,
            std::f64::consts::PI,
            1e-300,
            -3.937193874e17,
            f64::MIN_POSITIVE,
        ] {
            let s = format_f64(x);
            let y: f64 = s.parse().unwrap();
            assert_eq!(x.to_bits(), y.to_bits(), "{s}");
        }
    }
}
