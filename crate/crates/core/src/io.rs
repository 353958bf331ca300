//! Matrix and vector file formats.
//!
//! SPMX is a little-endian binary container: the magic bytes `SPMX`, a `u32`
//! version, `n` and `m` as `u64`, then `n·m` `f64` values column by column.
//! The CSV reader takes one measurement per row.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{Result, SparseError};
use crate::matrix::DesignMatrix;

pub const SPMX_MAGIC: &[u8; 4] = b"SPMX";
pub const SPMX_VERSION: u32 = 1;

/// Refuse headers that would need more than this many entries.
const MAX_ENTRIES: u64 = 1 << 34;

fn format_err(msg: impl Into<String>) -> SparseError {
    SparseError::Format(msg.into())
}

pub fn write_spmx<W: Write>(mat: &DMatrix<f64>, w: W) -> Result<()> {
    let mut w = BufWriter::new(w);
    w.write_all(SPMX_MAGIC)?;
    w.write_u32::<LittleEndian>(SPMX_VERSION)?;
    w.write_u64::<LittleEndian>(mat.nrows() as u64)?;
    w.write_u64::<LittleEndian>(mat.ncols() as u64)?;
    for &v in mat.as_slice() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spmx<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| format_err("file too short for an SPMX header"))?;
    if &magic != SPMX_MAGIC {
        return Err(format_err("bad magic bytes, expected SPMX"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != SPMX_VERSION {
        return Err(format_err(format!("unsupported SPMX version {version}")));
    }
    let n = r.read_u64::<LittleEndian>()?;
    let m = r.read_u64::<LittleEndian>()?;
    let len = n
        .checked_mul(m)
        .filter(|&l| l <= MAX_ENTRIES)
        .ok_or_else(|| format_err(format!("implausible SPMX shape {n}x{m}")))?;
    let mut values = vec![0.0; len as usize];
    r.read_f64_into::<LittleEndian>(&mut values)
        .map_err(|_| format_err(format!("truncated SPMX payload, expected {len} values")))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(format_err("trailing bytes after SPMX payload"));
    }
    Ok(DMatrix::from_vec(n as usize, m as usize, values))
}

/// Reads a headerless numeric CSV; each row becomes a matrix row.
pub fn read_csv_matrix<R: Read>(r: R) -> Result<DMatrix<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| format_err(format!("row {}: `{s}` is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format_err(format!(
                    "row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn write_csv_matrix<W: Write>(mat: &DMatrix<f64>, w: W) -> Result<()> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    for i in 0..mat.nrows() {
        out.write_record(mat.row(i).iter().map(|v| format!("{v:e}")))?;
    }
    out.flush()?;
    Ok(())
}

/// Loads SPMX when the file starts with the magic bytes, CSV otherwise.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let path = path.as_ref();
    let mut head = [0u8; 4];
    let got = File::open(path)?.read(&mut head)?;
    if got == 4 && &head == SPMX_MAGIC {
        read_spmx(File::open(path)?)
    } else {
        read_csv_matrix(File::open(path)?)
    }
}

pub fn load_design(path: impl AsRef<Path>) -> Result<DesignMatrix> {
    DesignMatrix::new(load_matrix(path)?)
}

/// Loads a vector stored as either a single row or a single column.
pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let mat = load_matrix(path)?;
    match mat.shape() {
        (_, 1) | (1, _) => Ok(mat.as_slice().to_vec()),
        (n, m) => Err(format_err(format!(
            "expected a vector, got a {n}x{m} matrix"
        ))),
    }
}

pub fn save_spmx(mat: &DMatrix<f64>, path: impl AsRef<Path>) -> Result<()> {
    write_spmx(mat, File::create(path)?)
}
