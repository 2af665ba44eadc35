//! Binary matrix persistence.
//!
//! Layout: 8-byte ASCII magic `LROMMAT1`, u64 LE row count, u64 LE column
//! count, then `rows * cols` f64 LE values in row-major order. Round trips
//! are bit-exact, NaN payloads and signed zeros included; the file size is
//! exactly `24 + 8 * rows * cols` bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"LROMMAT1";

#[derive(Debug, Error)]
pub enum MatrixFileError {
    #[error("bad magic in {path}: expected LROMMAT1")]
    BadMagic { path: String },
    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    TruncatedFile {
        path: String,
        expected: u64,
        found: u64,
    },
    #[error("{path} carries {extra} trailing bytes")]
    TrailingBytes { path: String, extra: u64 },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> MatrixFileError + '_ {
    move |source| MatrixFileError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_matrix(path: &Path, matrix: &DMatrix<f64>) -> Result<(), MatrixFileError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    out.write_all(MAGIC).map_err(io_err(path))?;
    out.write_all(&(matrix.nrows() as u64).to_le_bytes())
        .map_err(io_err(path))?;
    out.write_all(&(matrix.ncols() as u64).to_le_bytes())
        .map_err(io_err(path))?;
    for i in 0..matrix.nrows() {
        for j in 0..matrix.ncols() {
            out.write_all(&matrix[(i, j)].to_bits().to_le_bytes())
                .map_err(io_err(path))?;
        }
    }
    out.flush().map_err(io_err(path))
}

pub fn load_matrix(path: &Path) -> Result<DMatrix<f64>, MatrixFileError> {
    let file = File::open(path).map_err(io_err(path))?;
    let found = file.metadata().map_err(io_err(path))?.len();
    let mut input = BufReader::new(file);

    let mut magic = [0u8; 8];
    if found < 24 {
        return Err(MatrixFileError::TruncatedFile {
            path: path.display().to_string(),
            expected: 24,
            found,
        });
    }
    input.read_exact(&mut magic).map_err(io_err(path))?;
    if &magic != MAGIC {
        return Err(MatrixFileError::BadMagic {
            path: path.display().to_string(),
        });
    }
    let mut dim = [0u8; 8];
    input.read_exact(&mut dim).map_err(io_err(path))?;
    let rows = u64::from_le_bytes(dim) as usize;
    input.read_exact(&mut dim).map_err(io_err(path))?;
    let cols = u64::from_le_bytes(dim) as usize;

    let expected = 24 + 8 * (rows as u64) * (cols as u64);
    if found < expected {
        return Err(MatrixFileError::TruncatedFile {
            path: path.display().to_string(),
            expected,
            found,
        });
    }
    if found > expected {
        return Err(MatrixFileError::TrailingBytes {
            path: path.display().to_string(),
            extra: found - expected,
        });
    }

    let mut data = vec![0.0f64; rows * cols];
    let mut buf = [0u8; 8];
    for value in data.iter_mut() {
        input.read_exact(&mut buf).map_err(io_err(path))?;
        *value = f64::from_bits(u64::from_le_bytes(buf));
    }
    Ok(DMatrix::from_fn(rows, cols, |i, j| data[i * cols + j]))
}

/// Column-vector convenience wrappers.
pub fn save_vector(path: &Path, v: &nalgebra::DVector<f64>) -> Result<(), MatrixFileError> {
    save_matrix(path, &DMatrix::from_fn(v.len(), 1, |i, _| v[i]))
}

pub fn load_vector(path: &Path) -> Result<nalgebra::DVector<f64>, MatrixFileError> {
    let m = load_matrix(path)?;
    Ok(nalgebra::DVector::from_fn(m.nrows() * m.ncols(), |i, _| {
        m[(i / m.ncols().max(1), i % m.ncols().max(1))]
    }))
}
