//! Raw binary array dump used by the patch store.
//!
//! Each block is a 32-byte little-endian header followed by the array values
//! as row-major little-endian `f64`:
//!
//! | bytes  | field                    |
//! |--------|--------------------------|
//! | 0..4   | magic `BSRK`             |
//! | 4..6   | version (`u16`, = 1)     |
//! | 6..8   | reserved, zero           |
//! | 8..12  | rows (`u32`)             |
//! | 12..16 | cols (`u32`)             |
//! | 16..24 | cell size, degrees (`f64`) |
//! | 24..32 | reserved, zero           |
//!
//! NaN bit patterns are written verbatim, so missing cells survive a round trip.

use std::io::{Read, Write};

use ndarray::{Array2, ArrayView2};

use super::{RasterError, Result};

pub const MAGIC: &[u8; 4] = b"BSRK";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 32;

/// Total bytes of one block holding a `rows × cols` array.
pub fn block_len(rows: usize, cols: usize) -> usize {
    HEADER_LEN + rows * cols * 8
}

pub fn write_block<W: Write>(w: &mut W, data: ArrayView2<'_, f64>, cell_size: f64) -> Result<usize> {
    let (rows, cols) = data.dim();
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&(rows as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(cols as u32).to_le_bytes());
    header[16..24].copy_from_slice(&cell_size.to_le_bytes());
    let mut buf = Vec::with_capacity(block_len(rows, cols));
    buf.extend_from_slice(&header);
    for v in data.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(buf.len())
}

/// Read one block, returning the array and its cell size.
pub fn read_block<R: Read>(r: &mut R) -> Result<(Array2<f64>, f64)> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[0..4] != MAGIC {
        return Err(RasterError::BadDump("bad magic".into()));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(RasterError::BadDump(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(header[8..12].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(header[12..16].try_into().expect("4 bytes")) as usize;
    let cell_size = f64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let mut body = vec![0u8; rows * cols * 8];
    r.read_exact(&mut body)?;
    let values: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let data = Array2::from_shape_vec((rows, cols), values)
        .map_err(|e| RasterError::BadDump(e.to_string()))?;
    Ok((data, cell_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::MISSING;

    #[test]
    fn header_layout() {
        let data = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, MISSING]).unwrap();
        let mut buf = Vec::new();
        let n = write_block(&mut buf, data.view(), 0.1).unwrap();
        assert_eq!(n, block_len(2, 3));
        assert_eq!(&buf[0..4], b"BSRK");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[8..12], &[2, 0, 0, 0]);
        assert_eq!(&buf[12..16], &[3, 0, 0, 0]);
        assert_eq!(&buf[16..24], &0.1f64.to_le_bytes());
        assert_eq!(&buf[32..40], &1.0f64.to_le_bytes());

        let (back, cs) = read_block(&mut buf.as_slice()).unwrap();
        assert_eq!(cs, 0.1);
        assert_eq!(back.dim(), (2, 3));
        assert!(back[[1, 2]].is_nan());
        assert_eq!(back[[1, 1]], 5.0);
    }

    #[test]
    fn rejects_garbage() {
        let buf = vec![0u8; 40];
        assert!(matches!(read_block(&mut buf.as_slice()), Err(RasterError::BadDump(_))));
    }
}
