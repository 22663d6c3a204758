//! Dense matrix files: one ASCII header line `SLMMAT <version> <rows> <cols>
//! <dtype>` followed by the row-major little-endian payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ensure_parent;
use crate::model::Scalar;

pub const MATRIX_MAGIC: &str = "SLMMAT";
pub const MATRIX_VERSION: u32 = 1;

pub fn write_matrix<T: Scalar>(path: &Path, rows: usize, cols: usize, data: &[T]) -> Result<()> {
    if data.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{rows}x{cols} matrix with {} values",
            data.len()
        )));
    }
    let mut bytes = format!(
        "{MATRIX_MAGIC} {MATRIX_VERSION} {rows} {cols} {}\n",
        T::DTYPE
    )
    .into_bytes();
    bytes.reserve(data.len() * T::BYTES);
    for &v in data {
        v.write_le(&mut bytes);
    }
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Returns rows, cols and the payload; the file dtype must be `T`.
pub fn read_matrix<T: Scalar>(path: &Path) -> Result<(usize, usize, Vec<T>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format("matrix file", format!("{}: {d}", path.display()));
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| bad("header is not UTF-8"))?;
    let f: Vec<&str> = header.split(' ').collect();
    if f.len() != 5 || f[0] != MATRIX_MAGIC {
        return Err(bad("bad header"));
    }
    let version: u32 = f[1].parse().map_err(|_| bad("bad version"))?;
    if version != MATRIX_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "matrix file",
            found: version,
            supported: MATRIX_VERSION,
        });
    }
    let rows: usize = f[2].parse().map_err(|_| bad("bad row count"))?;
    let cols: usize = f[3].parse().map_err(|_| bad("bad column count"))?;
    if f[4] != T::DTYPE {
        return Err(bad(&format!(
            "dtype {} where {} was expected",
            f[4],
            T::DTYPE
        )));
    }
    let payload = &bytes[nl + 1..];
    if payload.len() != rows * cols * T::BYTES {
        return Err(bad("payload length does not match header"));
    }
    let data = payload.chunks_exact(T::BYTES).map(T::read_le).collect();
    Ok((rows, cols, data))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match it.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some(o) => out.push(o),
            None => out.push('\\'),
        }
    }
    out
}

/// One `id<TAB>label` line per row; backslash, newline and tab are escaped.
pub fn write_labels(path: &Path, ids: &[u32], labels: &[String]) -> Result<()> {
    let mut text = String::new();
    for (id, l) in ids.iter().zip(labels) {
        text.push_str(&format!("{id}\t{}\n", escape(l)));
    }
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<(Vec<u32>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let (id, label) = line.split_once('\t').ok_or_else(|| {
            Error::format(
                "labels file",
                format!("{}:{}: missing tab", path.display(), n + 1),
            )
        })?;
        ids.push(id.parse().map_err(|_| {
            Error::format(
                "labels file",
                format!("{}:{}: bad id", path.display(), n + 1),
            )
        })?);
        labels.push(unescape(label));
    }
    Ok((ids, labels))
}
