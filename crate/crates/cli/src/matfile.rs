//! Binary and CSV matrix files.
//!
//! The binary container is a 24-byte little-endian header followed by the
//! row-major `f64` payload:
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 4    | magic `GCCA`               |
//! | 4      | 2    | format version (1)         |
//! | 6      | 2    | dtype code (1 = `f64`)     |
//! | 8      | 8    | rows                       |
//! | 16     | 8    | cols                       |
//!
//! Files ending in `.csv` hold one matrix row per line instead.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use faer::Mat;
use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"GCCA";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u16 = 1;
pub const HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum MatFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic bytes {found:?} at byte 0")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported format version {version} at byte 4")]
    UnsupportedVersion { path: PathBuf, version: u16 },
    #[error("{path}: unsupported dtype code {code} at byte 6")]
    UnsupportedDtype { path: PathBuf, code: u16 },
    #[error("{path}: header ends at byte {len}, expected {HEADER_LEN} bytes")]
    TruncatedHeader { path: PathBuf, len: usize },
    #[error("{path}: header declares {rows}x{cols} ({expected} payload bytes) but the payload has {actual} bytes starting at byte {HEADER_LEN}")]
    Truncated {
        path: PathBuf,
        rows: u64,
        cols: u64,
        expected: u128,
        actual: usize,
    },
    #[error("{path}: line {line}, column {column}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> MatFileError + '_ {
    move |source| MatFileError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Reads a matrix, choosing the format from the extension.
pub fn read_matrix(path: &Path) -> Result<Mat<f64>, MatFileError> {
    if is_csv(path) {
        read_csv(path)
    } else {
        decode(path, &fs::read(path).map_err(io_err(path))?)
    }
}

/// Writes a matrix atomically, choosing the format from the extension.
pub fn write_matrix(m: &Mat<f64>, path: &Path) -> Result<(), MatFileError> {
    let bytes = if is_csv(path) { encode_csv(m) } else { encode(m) };
    write_atomic(path, &bytes).map_err(io_err(path))
}

pub fn encode(m: &Mat<f64>) -> Vec<u8> {
    let (r, c) = (m.nrows(), m.ncols());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * r * c);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(r as u64).to_le_bytes());
    out.extend_from_slice(&(c as u64).to_le_bytes());
    for i in 0..r {
        for j in 0..c {
            out.extend_from_slice(&m[(i, j)].to_le_bytes());
        }
    }
    out
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<Mat<f64>, MatFileError> {
    let path_buf = || path.to_path_buf();
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(MatFileError::BadMagic {
                path: path_buf(),
                found: bytes[..4].try_into().expect("4 bytes"),
            });
        }
        return Err(MatFileError::TruncatedHeader {
            path: path_buf(),
            len: bytes.len(),
        });
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
    if found != MAGIC {
        return Err(MatFileError::BadMagic { path: path_buf(), found });
    }
    let u16_at = |o: usize| u16::from_le_bytes(bytes[o..o + 2].try_into().expect("2 bytes"));
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
    let version = u16_at(4);
    if version != VERSION {
        return Err(MatFileError::UnsupportedVersion { path: path_buf(), version });
    }
    let code = u16_at(6);
    if code != DTYPE_F64 {
        return Err(MatFileError::UnsupportedDtype { path: path_buf(), code });
    }
    let (rows, cols) = (u64_at(8), u64_at(16));
    let payload = &bytes[HEADER_LEN..];
    let expected = rows as u128 * cols as u128 * 8;
    if expected != payload.len() as u128 {
        return Err(MatFileError::Truncated {
            path: path_buf(),
            rows,
            cols,
            expected,
            actual: payload.len(),
        });
    }
    let (r, c) = (rows as usize, cols as usize);
    Ok(Mat::from_fn(r, c, |i, j| {
        let o = 8 * (i * c + j);
        f64::from_le_bytes(payload[o..o + 8].try_into().expect("8 bytes"))
    }))
}

fn encode_csv(m: &Mat<f64>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for i in 0..m.nrows() {
        // shortest representation that parses back to the same bits
        w.write_record((0..m.ncols()).map(|j| m[(i, j)].to_string()))
            .expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

fn read_csv(path: &Path) -> Result<Mat<f64>, MatFileError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, &e, 0))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, &e, 0))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row = record
            .iter()
            .enumerate()
            .map(|(j, cell)| {
                cell.parse::<f64>().map_err(|_| MatFileError::Csv {
                    path: path.to_path_buf(),
                    line,
                    column: j + 1,
                    message: format!("`{cell}` is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(MatFileError::Csv {
                    path: path.to_path_buf(),
                    line,
                    column: row.len().min(first.len()) + 1,
                    message: format!("{} cells, expected {}", row.len(), first.len()),
                });
            }
        }
        rows.push(row);
    }
    let c = rows.first().map(|r| r.len()).unwrap_or(0);
    Ok(Mat::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn csv_error(path: &Path, e: &csv::Error, column: usize) -> MatFileError {
    match e.kind() {
        csv::ErrorKind::Io(_) => MatFileError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e.to_string()),
        },
        _ => MatFileError::Csv {
            path: path.to_path_buf(),
            line: e.position().map(|p| p.line()).unwrap_or(0),
            column,
            message: e.to_string(),
        },
    }
}

/// Writes through a temporary file in the same directory and renames it
/// into place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
