//! Binary parameter snapshots.
//!
//! Layout: 4-byte magic `RWP1`, u64 little-endian value count, then each
//! value as a little-endian f64 bit pattern. Bit patterns round-trip
//! exactly, including negative zero and subnormals.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::params::ParamVector;

const MAGIC: &[u8; 4] = b"RWP1";

/// Writes `params` to `path`, overwriting any existing file.
pub fn save_checkpoint(path: &Path, params: &ParamVector) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for &v in params.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ParamVector> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Ingest("checkpoint shorter than header".into()))?;
    if &magic != MAGIC {
        return Err(CoreError::Ingest(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let mut count_bytes = [0u8; 8];
    r.read_exact(&mut count_bytes)
        .map_err(|_| CoreError::Ingest("checkpoint shorter than header".into()))?;
    let count = u64::from_le_bytes(count_bytes) as usize;

    let mut values = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for i in 0..count {
        r.read_exact(&mut buf).map_err(|_| {
            CoreError::Ingest(format!("checkpoint truncated at value {i} of {count}"))
        })?;
        values.push(f64::from_le_bytes(buf));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CoreError::Ingest(
            "checkpoint has trailing bytes after declared values".into(),
        ));
    }
    Ok(ParamVector::from_vec(values))
}
