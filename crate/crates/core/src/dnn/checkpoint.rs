//! Binary network checkpoints.
//!
//! Layout, all little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic `b"CVFN"`                        |
//! | 4      | 4    | u32 format version (1)                 |
//! | 8      | 4    | u32 depth `L`                          |
//! | 12     | 4    | u32 width `W`                          |
//! | 16     | 4    | u32 input dimension `2d`               |
//! | 20     | 4    | u32 reserved, 0                        |
//! | 24     | 8    | f64 clip bound `B_K`                   |
//! | 32     | 8    | u64 parameter count `P`                |
//! | 40     | 8P   | f64 parameters in flat layout order    |

use std::io::{Read, Write};

use super::{MlpField, MlpParams};
use crate::error::{Error, Result};
use crate::field::CovarianceField;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CVFN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(field: &MlpField, mut out: W) -> Result<()> {
    let p = field.params();
    out.write_all(&CHECKPOINT_MAGIC)?;
    for v in [CHECKPOINT_VERSION, p.depth() as u32, p.width() as u32, p.input_dim() as u32, 0] {
        out.write_all(&v.to_le_bytes())?;
    }
    out.write_all(&field.bound().to_le_bytes())?;
    out.write_all(&(p.len() as u64).to_le_bytes())?;
    for x in p.flat() {
        out.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R) -> Result<MlpField> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let mut u32s = [0u32; 5];
    for v in u32s.iter_mut() {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b);
    }
    let [version, depth, width, input_dim, _] = u32s;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut b8 = [0u8; 8];
    input.read_exact(&mut b8)?;
    let bound = f64::from_le_bytes(b8);
    input.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let (depth, width, input_dim) = (depth as usize, width as usize, input_dim as usize);
    if depth == 0 || width == 0 || input_dim == 0 || count != MlpParams::param_count(depth, width, input_dim) {
        return Err(Error::Format("checkpoint dimensions are inconsistent".into()));
    }
    let mut flat = Vec::with_capacity(count);
    for _ in 0..count {
        input.read_exact(&mut b8)?;
        flat.push(f64::from_le_bytes(b8));
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    if !(bound > 0.0) {
        return Err(Error::Format("checkpoint bound must be positive".into()));
    }
    Ok(MlpField::new(MlpParams::from_flat(depth, width, input_dim, flat)?, bound))
}
