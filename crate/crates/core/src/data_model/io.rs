//! FMAT / ATLS / CTBL binary files.
//!
//! All three formats are little-endian with a 4-byte magic and a `u32`
//! version (currently 1). Readers reject trailing bytes so that writing back
//! a loaded file reproduces it byte for byte.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use super::types::{AtlasPartition, CoordinateTable, TimeSeriesMatrix};
use crate::error::{Error, Result};

const FMAT_MAGIC: &[u8; 4] = b"FMAT";
const ATLS_MAGIC: &[u8; 4] = b"ATLS";
const CTBL_MAGIC: &[u8; 4] = b"CTBL";
const VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, offset: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(Error::TruncatedFile {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let offset = self.offset;
        let found = self.take(4)?;
        if found != expected {
            return Err(Error::BadMagic {
                offset,
                expected: String::from_utf8_lossy(expected).into_owned(),
                found: String::from_utf8_lossy(found).into_owned(),
            });
        }
        Ok(())
    }

    fn version(&mut self, format: &'static str) -> Result<()> {
        let offset = self.offset;
        let version = self.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format,
                version,
                offset,
            });
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Checks up front that `count` elements of `width` bytes are present.
    fn expect_payload(&self, count: u64, width: usize) -> Result<usize> {
        let available = self.bytes.len() - self.offset;
        let needed = count
            .checked_mul(width as u64)
            .and_then(|n| usize::try_from(n).ok())
            .unwrap_or(usize::MAX);
        if needed > available {
            return Err(Error::TruncatedFile {
                offset: self.offset,
                needed,
                available,
            });
        }
        Ok(count as usize)
    }

    fn finish(&self) -> Result<()> {
        let extra = self.bytes.len() - self.offset;
        if extra > 0 {
            return Err(Error::TrailingBytes {
                offset: self.offset,
                extra,
            });
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Array2<f64>> {
    let mut r = Reader::new(bytes);
    r.magic(FMAT_MAGIC)?;
    r.version("FMAT")?;
    let rows = r.u64()?;
    let cols = r.u64()?;
    let n = r.expect_payload(rows.saturating_mul(cols), 8)?;
    let mut values = Vec::with_capacity(n);
    for index in 0..n {
        let offset = r.offset;
        let value = f64::from_le_bytes(r.take(8)?.try_into().unwrap());
        if !value.is_finite() {
            return Err(Error::NonFiniteValue {
                index,
                offset,
                value,
            });
        }
        values.push(value);
    }
    r.finish()?;
    Array2::from_shape_vec((rows as usize, cols as usize), values)
        .map_err(|e| Error::InvalidShape(e.to_string()))
}

pub fn encode_matrix(m: ArrayView2<'_, f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.len());
    out.extend_from_slice(FMAT_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    // logical (row-major) iteration regardless of memory layout
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads an FMAT file; every entry must be finite.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    decode_matrix(&read_file(path.as_ref())?)
}

pub fn write_matrix(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    write_file(path.as_ref(), &encode_matrix(m))
}

/// Reads an FMAT file as a voxel × time series.
pub fn load_matrix(path: impl AsRef<Path>) -> Result<TimeSeriesMatrix> {
    TimeSeriesMatrix::new(read_matrix(path)?)
}

pub fn decode_atlas(bytes: &[u8]) -> Result<AtlasPartition> {
    let mut r = Reader::new(bytes);
    r.magic(ATLS_MAGIC)?;
    r.version("ATLS")?;
    let n_voxels = r.u64()?;
    let n_regions = r.u32()?;
    let n = r.expect_payload(n_voxels, 4)?;
    let labels = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    AtlasPartition::new(labels, n_regions)
}

pub fn encode_atlas(atlas: &AtlasPartition) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 4 * atlas.n_voxels());
    out.extend_from_slice(ATLS_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(atlas.n_voxels() as u64).to_le_bytes());
    out.extend_from_slice(&atlas.n_regions().to_le_bytes());
    for label in atlas.labels() {
        out.extend_from_slice(&label.to_le_bytes());
    }
    out
}

pub fn read_atlas(path: impl AsRef<Path>) -> Result<AtlasPartition> {
    decode_atlas(&read_file(path.as_ref())?)
}

pub fn write_atlas(path: impl AsRef<Path>, atlas: &AtlasPartition) -> Result<()> {
    write_file(path.as_ref(), &encode_atlas(atlas))
}

pub fn decode_coords(bytes: &[u8]) -> Result<CoordinateTable> {
    let mut r = Reader::new(bytes);
    r.magic(CTBL_MAGIC)?;
    r.version("CTBL")?;
    let dims = [r.u32()?, r.u32()?, r.u32()?];
    let n_voxels = r.u64()?;
    let n = r.expect_payload(n_voxels, 12)?;
    let coords = (0..n)
        .map(|_| Ok([r.i32()?, r.i32()?, r.i32()?]))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    CoordinateTable::new(dims, coords)
}

pub fn encode_coords(table: &CoordinateTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(28 + 12 * table.n_voxels());
    out.extend_from_slice(CTBL_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in table.dims() {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend_from_slice(&(table.n_voxels() as u64).to_le_bytes());
    for c in table.coords() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_coords(path: impl AsRef<Path>) -> Result<CoordinateTable> {
    decode_coords(&read_file(path.as_ref())?)
}

pub fn write_coords(path: impl AsRef<Path>, table: &CoordinateTable) -> Result<()> {
    write_file(path.as_ref(), &encode_coords(table))
}
