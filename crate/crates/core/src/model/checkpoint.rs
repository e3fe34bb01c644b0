//! Parameter checkpoint files.
//!
//! Same framing conventions as the dataset container:
//!
//! ```text
//! magic   7 bytes  "FPCKPT1"
//! count   u32 tensor count
//! tensors count x (u32 name length, UTF-8 name,
//!                  u32 rank, rank x u64 dims, numel x f32 LE)
//! crc     u32 CRC32 (IEEE) of every byte between magic and crc
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{ParamSet, Tensor};
use crate::Real;

const MAGIC: &[u8; 7] = b"FPCKPT1";

/// Writes a named-tensor checkpoint (temp file plus rename).
pub fn save_checkpoint(params: &ParamSet, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    payload.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
        payload.extend_from_slice(&(tensor.shape().len() as u32).to_le_bytes());
        for &d in tensor.shape() {
            payload.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in tensor.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&payload);

    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    {
        let mut file = fs::File::create(&tmp)?;
        file.write_all(MAGIC)?;
        file.write_all(&payload)?;
        file.write_all(&crc.to_le_bytes())?;
        file.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<ParamSet> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::format(bytes.len() as u64, "file truncated"));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::format(0, "bad checkpoint magic"));
    }
    let crc_off = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_off..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[MAGIC.len()..crc_off]);
    if stored != computed {
        return Err(Error::format(
            crc_off as u64,
            format!("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}"),
        ));
    }

    struct Reader<'a> {
        bytes: &'a [u8],
        offset: usize,
        end: usize,
    }
    impl<'a> Reader<'a> {
        fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
            if self.offset + n > self.end {
                return Err(Error::format(
                    self.offset as u64,
                    format!("file truncated while reading {what}"),
                ));
            }
            let s = &self.bytes[self.offset..self.offset + n];
            self.offset += n;
            Ok(s)
        }
        fn u32(&mut self, what: &str) -> Result<u32> {
            Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
        }
    }

    let mut r = Reader {
        bytes: &bytes,
        offset: MAGIC.len(),
        end: crc_off,
    };
    let count = r.u32("tensor count")? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name_off = r.offset;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(name_off as u64, "tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(
                r.take(8, "dimension")?.try_into().unwrap(),
            ) as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4, "tensor data")?;
        let data: Vec<Real> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real)
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}
