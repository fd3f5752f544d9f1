//! Little-endian binary container for TT vectors and operators.
//!
//! Layout: 8-byte magic, `d` as u64, the mode sizes as u64 (operators store row sizes
//! then column sizes), the `d + 1` ranks as u64, then every core payload in row-major
//! order as f64.

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Result, TtError};
use crate::tt::{Core, OpCore, TtOperator, TtVector};

pub const VECTOR_MAGIC: &[u8; 8] = b"TTKVEC01";
pub const OPERATOR_MAGIC: &[u8; 8] = b"TTKOPR01";

// Guards allocation on corrupt headers.
const MAX_HEADER_VALUE: u64 = 1 << 32;

pub fn write_vector<W: Write>(mut w: W, v: &TtVector) -> Result<()> {
    w.write_all(VECTOR_MAGIC)?;
    w.write_u64::<LittleEndian>(v.ndim() as u64)?;
    for n in v.dims() {
        w.write_u64::<LittleEndian>(n as u64)?;
    }
    for r in v.ranks() {
        w.write_u64::<LittleEndian>(r as u64)?;
    }
    for c in v.cores() {
        for &x in c.data() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub fn read_vector<R: Read>(mut r: R) -> Result<TtVector> {
    expect_magic(&mut r, VECTOR_MAGIC)?;
    let d = read_len(&mut r)?;
    let dims = (0..d).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
    let ranks = (0..=d).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let len = ranks[k] * dims[k] * ranks[k + 1];
        cores.push(Core::from_vec(ranks[k], dims[k], ranks[k + 1], read_f64s(&mut r, len)?));
    }
    TtVector::new(cores).map_err(|e| TtError::Format(e.to_string()))
}

pub fn write_operator<W: Write>(mut w: W, op: &TtOperator) -> Result<()> {
    w.write_all(OPERATOR_MAGIC)?;
    w.write_u64::<LittleEndian>(op.ndim() as u64)?;
    for n in op.row_dims().into_iter().chain(op.col_dims()) {
        w.write_u64::<LittleEndian>(n as u64)?;
    }
    for r in op.ranks() {
        w.write_u64::<LittleEndian>(r as u64)?;
    }
    for c in op.cores() {
        for &x in c.data() {
            w.write_f64::<LittleEndian>(x)?;
        }
    }
    Ok(())
}

pub fn read_operator<R: Read>(mut r: R) -> Result<TtOperator> {
    expect_magic(&mut r, OPERATOR_MAGIC)?;
    let d = read_len(&mut r)?;
    let rows = (0..d).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
    let cols = (0..d).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
    let ranks = (0..=d).map(|_| read_len(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let len = ranks[k] * rows[k] * cols[k] * ranks[k + 1];
        cores.push(OpCore::from_vec(ranks[k], rows[k], cols[k], ranks[k + 1], read_f64s(&mut r, len)?));
    }
    TtOperator::new(cores).map_err(|e| TtError::Format(e.to_string()))
}

fn expect_magic<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<()> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    if &buf != magic {
        return Err(TtError::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&buf),
            String::from_utf8_lossy(magic)
        )));
    }
    Ok(())
}

fn read_len<R: Read>(r: &mut R) -> Result<usize> {
    let v = r.read_u64::<LittleEndian>()?;
    if v > MAX_HEADER_VALUE {
        return Err(TtError::Format(format!("header value {v} is implausibly large")));
    }
    Ok(v as usize)
}

fn read_f64s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; len];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}
