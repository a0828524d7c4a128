//! Binary container for sequence batches.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   9 bytes  "TSBN-SEQ1"
//! dtype   u8       0 = bit-packed binary, 1 = f64, 2 = u32 counts
//! M       u64      frame dimension
//! count   u64      number of sequences
//! then per sequence:
//!   T     u64      frames in this sequence
//!   data           row-major (time, dim) payload:
//!                  binary: ceil(T*M/8) bytes, bit k of byte b holds
//!                          element 8*b + k, padding bits zero
//!                  real:   T*M f64
//!                  count:  T*M u32
//! ```

use super::SequenceBatch;
use crate::error::{Result, TsbnError};
use crate::params::Likelihood;
use ndarray::Array2;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 9] = b"TSBN-SEQ1";

fn dtype_code(dtype: Likelihood) -> u8 {
    match dtype {
        Likelihood::Binary => 0,
        Likelihood::Real => 1,
        Likelihood::Count => 2,
    }
}

fn dtype_from_code(code: u8) -> Result<Likelihood> {
    match code {
        0 => Ok(Likelihood::Binary),
        1 => Ok(Likelihood::Real),
        2 => Ok(Likelihood::Count),
        other => Err(TsbnError::corrupt("sequence file", format!("unknown dtype code {other}"))),
    }
}

/// Writes a batch to disk in the container format above.
pub fn save_sequences(path: impl AsRef<Path>, batch: &SequenceBatch) -> Result<()> {
    batch.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[dtype_code(batch.dtype)])?;
    w.write_all(&(batch.dim as u64).to_le_bytes())?;
    w.write_all(&(batch.frames.len() as u64).to_le_bytes())?;
    for seq in &batch.frames {
        w.write_all(&(seq.nrows() as u64).to_le_bytes())?;
        let flat = seq.as_slice().expect("frames are standard layout");
        match batch.dtype {
            Likelihood::Binary => {
                let mut packed = vec![0u8; flat.len().div_ceil(8)];
                for (k, &x) in flat.iter().enumerate() {
                    if x == 1.0 {
                        packed[k / 8] |= 1 << (k % 8);
                    }
                }
                w.write_all(&packed)?;
            }
            Likelihood::Real => {
                for &x in flat {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            Likelihood::Count => {
                for &x in flat {
                    if x > u32::MAX as f64 {
                        return Err(TsbnError::InvalidConfig(format!(
                            "count {x} exceeds the u32 storage range"
                        )));
                    }
                    w.write_all(&(x as u32).to_le_bytes())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or_corrupt(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| TsbnError::corrupt("sequence file", "unexpected end of file"))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    read_exact_or_corrupt(r, &mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Reads a batch back; the inverse of [`save_sequences`].
pub fn load_sequences(path: impl AsRef<Path>) -> Result<SequenceBatch> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 9];
    read_exact_or_corrupt(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(TsbnError::corrupt("sequence file", "bad magic"));
    }
    let mut code = [0u8; 1];
    read_exact_or_corrupt(&mut r, &mut code)?;
    let dtype = dtype_from_code(code[0])?;
    let dim = read_u64(&mut r)? as usize;
    if dim == 0 {
        return Err(TsbnError::corrupt("sequence file", "zero frame dimension"));
    }
    let num_sequences = read_u64(&mut r)? as usize;
    let mut batch = SequenceBatch::new(dtype, dim);
    for _ in 0..num_sequences {
        let t_len = read_u64(&mut r)? as usize;
        let total = t_len
            .checked_mul(dim)
            .ok_or_else(|| TsbnError::corrupt("sequence file", "sequence size overflows"))?;
        let mut flat = vec![0.0f64; total];
        match dtype {
            Likelihood::Binary => {
                let mut packed = vec![0u8; total.div_ceil(8)];
                read_exact_or_corrupt(&mut r, &mut packed)?;
                for (k, x) in flat.iter_mut().enumerate() {
                    *x = ((packed[k / 8] >> (k % 8)) & 1) as f64;
                }
                // padding bits must be zero for the encoding to round-trip
                if total % 8 != 0 {
                    let last = packed[total / 8];
                    if last >> (total % 8) != 0 {
                        return Err(TsbnError::corrupt("sequence file", "nonzero padding bits"));
                    }
                }
            }
            Likelihood::Real => {
                let mut buf = [0u8; 8];
                for x in flat.iter_mut() {
                    read_exact_or_corrupt(&mut r, &mut buf)?;
                    *x = f64::from_le_bytes(buf);
                }
            }
            Likelihood::Count => {
                let mut buf = [0u8; 4];
                for x in flat.iter_mut() {
                    read_exact_or_corrupt(&mut r, &mut buf)?;
                    *x = u32::from_le_bytes(buf) as f64;
                }
            }
        }
        batch.frames.push(
            Array2::from_shape_vec((t_len, dim), flat)
                .map_err(|e| TsbnError::corrupt("sequence file", e.to_string()))?,
        );
    }
    // trailing garbage means the header undercounted
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(TsbnError::corrupt("sequence file", "trailing bytes after declared payload"));
    }
    Ok(batch)
}
