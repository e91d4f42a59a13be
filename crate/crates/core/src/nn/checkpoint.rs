//! Binary parameter checkpoints.
//!
//! Layout: `RPRM`, version byte, layer count (u32 LE), then per layer rows
//! and cols (u32 LE) followed by `rows * cols` f64 LE values.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::nn::{DenseMatrix, LayerParams};

pub const MAGIC: &[u8; 4] = b"RPRM";
pub const VERSION: u8 = 1;

pub fn write_params<W: Write>(mut w: W, params: &[LayerParams]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for p in params {
        w.write_all(&(p.weight.rows() as u32).to_le_bytes())?;
        w.write_all(&(p.weight.cols() as u32).to_le_bytes())?;
        for v in p.weight.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_params<R: Read>(mut r: R) -> Result<Vec<LayerParams>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Data("not a parameter checkpoint".into()));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != VERSION {
        return Err(Error::Data(format!(
            "unsupported checkpoint version {}",
            version[0]
        )));
    }
    let layers = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(layers);
    for _ in 0..layers {
        let rows = read_u32(&mut r)? as usize;
        let cols = read_u32(&mut r)? as usize;
        let mut values = Vec::with_capacity(rows * cols);
        let mut b = [0u8; 8];
        for _ in 0..rows * cols {
            r.read_exact(&mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        out.push(LayerParams::new(DenseMatrix::from_vec(rows, cols, values)?));
    }
    Ok(out)
}
