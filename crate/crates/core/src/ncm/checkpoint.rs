//! Binary checkpoint layout, all integers and floats little-endian:
//!
//! ```text
//! magic     8 bytes  "DFNCM\0v1"
//! dim       u64
//! vocab     u64
//! seed      u64
//! hash      64 bytes ASCII hex (vocabulary hash)
//! emb       vocab*dim f64, row-major
//! out_w     vocab*2*dim f64, row-major
//! out_b     vocab f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelParams, Tensors};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DFNCM\0v1";
const HASH_LEN: usize = 64;

pub fn write_checkpoint<W: Write>(params: &ModelParams, mut out: W) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    if params.vocab_hash.len() != HASH_LEN {
        return Err(Error::Checkpoint("vocabulary hash must be 64 hex characters".into()));
    }
    out.write_all(MAGIC).map_err(io)?;
    for v in [params.dim as u64, params.vocab_size as u64, params.seed] {
        out.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    out.write_all(params.vocab_hash.as_bytes()).map_err(io)?;
    let t = &params.tensors;
    for x in t.emb.iter().chain(&t.out_w).chain(&t.out_b) {
        out.write_all(&x.to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

/// Reads a checkpoint and checks it against the expected vocabulary hash.
pub fn read_checkpoint<R: Read>(mut input: R, expected_hash: &str) -> Result<ModelParams> {
    let short = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic).map_err(short)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let mut word = [0u8; 8];
    let mut header = [0u64; 3];
    for h in header.iter_mut() {
        input.read_exact(&mut word).map_err(short)?;
        *h = u64::from_le_bytes(word);
    }
    let [dim, vocab_size, seed] = header;
    if dim == 0 || vocab_size == 0 || dim.saturating_mul(vocab_size) > 1 << 32 {
        return Err(Error::Checkpoint(format!("implausible shape {vocab_size}x{dim}")));
    }
    let (dim, vocab_size) = (dim as usize, vocab_size as usize);
    let mut hash = [0u8; HASH_LEN];
    input.read_exact(&mut hash).map_err(short)?;
    let vocab_hash = String::from_utf8(hash.to_vec())
        .map_err(|_| Error::Checkpoint("vocabulary hash is not ASCII".into()))?;
    if vocab_hash != expected_hash {
        return Err(Error::Checkpoint(format!(
            "vocabulary hash mismatch: checkpoint {vocab_hash}, expected {expected_hash}"
        )));
    }
    let mut read_block = |n: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        input.read_exact(&mut buf).map_err(short)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let tensors = Tensors {
        emb: read_block(vocab_size * dim)?,
        out_w: read_block(vocab_size * 2 * dim)?,
        out_b: read_block(vocab_size)?,
    };
    let mut rest = [0u8; 1];
    if input.read(&mut rest).map_err(short)? != 0 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(ModelParams {
        dim,
        vocab_size,
        vocab_hash,
        seed,
        tensors,
    })
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(params, BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected_hash: &str) -> Result<ModelParams> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file), expected_hash)
}
