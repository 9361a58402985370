//! Parameter checkpoint format.
//!
//! Text file. Line 1 is the magic header, then one block per tensor: a
//! `name rows cols` line followed by `rows` lines of `cols` space-separated
//! values (row-major, 17 significant digits).

use std::path::Path;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};
use crate::textio::{format_f64, parse_f64, parse_usize, read_to_string, write_file};

pub const CHECKPOINT_HEADER: &str = "BFTS-CKPT v1";

pub fn save_checkpoint(path: &Path, tensors: &[(&str, &Matrix)]) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, m) in tensors {
        if name.contains(char::is_whitespace) || name.is_empty() {
            return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        out.push_str(&format!("{} {} {}\n", name, m.rows(), m.cols()));
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|&v| format_f64(v)).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    write_file(path, &out)
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Matrix)>> {
    let text = read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CHECKPOINT_HEADER => {}
        Some((_, other)) => {
            return Err(Error::Checkpoint(format!(
                "bad header {other:?}, expected {CHECKPOINT_HEADER:?}"
            )))
        }
        None => return Err(Error::Checkpoint("empty file".into())),
    }

    let mut tensors = Vec::new();
    while let Some((lineno, line)) = lines.next() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                msg: format!("expected 'name rows cols', got {line:?}"),
            });
        }
        let name = parts[0].to_string();
        let rows = parse_usize(parts[1], path, lineno + 1)?;
        let cols = parse_usize(parts[2], path, lineno + 1)?;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (vlineno, vline) = lines.next().ok_or_else(|| Error::Checkpoint(format!(
                "tensor {name}: file ended mid-block"
            )))?;
            let values: Vec<&str> = vline.split_whitespace().collect();
            if values.len() != cols {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: vlineno + 1,
                    msg: format!("tensor {name}: expected {cols} values, got {}", values.len()),
                });
            }
            for v in values {
                data.push(parse_f64(v, path, vlineno + 1)?);
            }
        }
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok(tensors)
}
