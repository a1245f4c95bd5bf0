//! Binary checkpoint format.
//!
//! ```text
//! "SEQOT1"  u32 version
//! u64 d_model, n_heads, n_layers, d_ff, vocab_size, max_len; f64 dropout
//! u32 tensor count, then per tensor:
//!   u32 name length, name bytes, u32 ndim, u64 dims..., f64 values...
//! ```
//! All integers and floats are little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelParameters};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"SEQOT1";
pub const VERSION: u32 = 1;

pub fn write<W: Write>(params: &ModelParameters, mut w: W) -> Result<()> {
    let c = params.config();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [c.d_model, c.n_heads, c.n_layers, c.d_ff, c.vocab_size, c.max_len] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&c.dropout.to_le_bytes())?;
    w.write_all(&(params.len() as u32).to_le_bytes())?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.ndim() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

fn read_u64<R: Read>(r: &mut R) -> Result<usize> {
    usize::try_from(u64::from_le_bytes(read_array(r)?)).map_err(|_| Error::Checkpoint("dimension overflow".into()))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_le_bytes(read_array(r)?))
}

pub fn read<R: Read>(mut r: R) -> Result<ModelParameters> {
    let magic: [u8; 6] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let config = ModelConfig {
        d_model: read_u64(&mut r)?,
        n_heads: read_u64(&mut r)?,
        n_layers: read_u64(&mut r)?,
        d_ff: read_u64(&mut r)?,
        vocab_size: read_u64(&mut r)?,
        max_len: read_u64(&mut r)?,
        dropout: read_f64(&mut r)?,
    };
    config.validate()?;
    let count = read_u32(&mut r)? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let shape = (0..ndim).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
        named.push((name, Tensor::new(&shape, data)?));
    }
    ModelParameters::from_named(config, named)
}

pub fn save(params: &ModelParameters, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParameters> {
    let f = std::fs::File::open(path)?;
    read(std::io::BufReader::new(f))
}
