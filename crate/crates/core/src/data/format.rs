//! Binary dataset container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   6 bytes  "FPSIM1"
//! header  u32 classes, u32 window, u64 count, f64 snr_db, u64 seed
//! names   classes x (u32 length, UTF-8 bytes)
//! records count x (window*2 f32 samples interleaved [i, q], u8 label)
//! crc     u32 CRC32 (IEEE) of every byte between magic and crc
//! ```
//!
//! Samples are stored in f32 regardless of the build's compute precision.
//! Externally prepared datasets are ingested by rewriting them into this
//! container; [`save_dataset`] is the reference writer.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::data::{DatasetMeta, LabeledDataset, GENERATOR_VERSION};
use crate::error::{Error, Result};
use crate::signal::IQFrame;
use crate::Real;

const MAGIC: &[u8; 6] = b"FPSIM1";

/// Serializes a dataset. The file is written to a sibling temp path and
/// renamed into place.
pub fn save_dataset(dataset: &LabeledDataset, path: &Path) -> Result<()> {
    let mut payload = Vec::with_capacity(32 + dataset.len() * (dataset.window() * 8 + 1));
    payload.extend_from_slice(&(dataset.classes as u32).to_le_bytes());
    payload.extend_from_slice(&(dataset.window() as u32).to_le_bytes());
    payload.extend_from_slice(&(dataset.len() as u64).to_le_bytes());
    payload.extend_from_slice(&(dataset.meta.snr_db as f64).to_le_bytes());
    payload.extend_from_slice(&dataset.meta.seed.to_le_bytes());
    for name in &dataset.scheme_names {
        payload.extend_from_slice(&(name.len() as u32).to_le_bytes());
        payload.extend_from_slice(name.as_bytes());
    }
    for (frame, &label) in dataset.frames.iter().zip(&dataset.labels) {
        for &v in frame.samples() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
        payload.push(label);
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

/// CRC32 of a dataset file's payload, as written by [`save_dataset`].
pub fn dataset_checksum(path: &Path) -> Result<u32> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::format(bytes.len() as u64, "file truncated"));
    }
    let crc_off = bytes.len() - 4;
    Ok(u32::from_le_bytes(bytes[crc_off..].try_into().unwrap()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + n > self.bytes.len() {
            return Err(Error::format(
                self.offset as u64,
                format!("file truncated while reading {what}"),
            ));
        }
        let slice = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Reads a dataset file, verifying magic and checksum.
pub fn load_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        offset: 0,
    };

    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}")));
    }

    // Checksum covers everything between magic and the trailing CRC.
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::format(bytes.len() as u64, "file truncated"));
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

    let classes = r.u32("class count")? as usize;
    let window = r.u32("window length")? as usize;
    let count = r.u64("frame count")? as usize;
    let snr_db = r.f64("snr")?;
    let seed = r.u64("seed")?;

    let mut scheme_names = Vec::with_capacity(classes);
    for i in 0..classes {
        let len = r.u32("name length")? as usize;
        let name_off = r.offset;
        let raw = r.take(len, "scheme name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| Error::format(name_off as u64, format!("scheme name {i} is not UTF-8")))?;
        scheme_names.push(name.to_string());
    }

    let mut frames = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for n in 0..count {
        let record_off = r.offset;
        let raw = r.take(window * 2 * 4, "frame samples")?;
        let mut samples = Vec::with_capacity(window * 2);
        for chunk in raw.chunks_exact(4) {
            samples.push(f32::from_le_bytes(chunk.try_into().unwrap()) as Real);
        }
        let frame = IQFrame::from_interleaved(samples).map_err(|e| {
            Error::format(record_off as u64, format!("record {n}: {e}"))
        })?;
        let label = r.take(1, "label")?[0];
        if label as usize >= classes {
            return Err(Error::format(
                (r.offset - 1) as u64,
                format!("record {n}: label {label} out of range for {classes} classes"),
            ));
        }
        frames.push(frame);
        labels.push(label);
    }

    LabeledDataset::new(
        frames,
        labels,
        classes,
        scheme_names,
        DatasetMeta {
            snr_db: snr_db as Real,
            seed,
            version: GENERATOR_VERSION,
        },
    )
}
