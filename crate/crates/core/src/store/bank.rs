//! CXFB feature-bank files.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic "CXFB" | version u32 | count u64 | d_g u32 | d_p u32 | g u32
//! per record: id_len u16 | id (UTF-8) | class_id u32 | d_g x f32 | g*g*d_p x f32
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Dims, FeatureRecord, GalleryIndex};
use crate::error::{Error, Result};

pub const BANK_MAGIC: &[u8; 4] = b"CXFB";
pub const BANK_VERSION: u32 = 1;

/// Serializes `records` into `out`. Every record must match `dims`.
pub fn write_feature_bank_to<W: Write>(records: &[FeatureRecord], dims: Dims, mut out: W) -> Result<()> {
    for r in records {
        if r.global.len() != dims.global_dim || r.patches.len() != dims.patch_len() {
            return Err(Error::DimensionMismatch(format!(
                "record {} does not match bank dims {:?}",
                r.image_id, dims
            )));
        }
        if r.image_id.len() > u16::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "image id longer than {} bytes",
                u16::MAX
            )));
        }
    }
    out.write_all(BANK_MAGIC)?;
    out.write_all(&BANK_VERSION.to_le_bytes())?;
    out.write_all(&(records.len() as u64).to_le_bytes())?;
    for d in [dims.global_dim, dims.patch_dim, dims.grid] {
        out.write_all(&u32::try_from(d).map_err(|_| dim_overflow())?.to_le_bytes())?;
    }
    for r in records {
        out.write_all(&(r.image_id.len() as u16).to_le_bytes())?;
        out.write_all(r.image_id.as_bytes())?;
        out.write_all(&r.class_id.to_le_bytes())?;
        for x in r.global.iter().chain(&r.patches) {
            out.write_all(&x.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn dim_overflow() -> Error {
    Error::InvalidArgument("dimension does not fit in u32".into())
}

/// Writes a bank file at `path`.
pub fn write_feature_bank(records: &[FeatureRecord], dims: Dims, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_feature_bank_to(records, dims, BufWriter::new(file))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Truncated(format!(
                "need {n} bytes for {what} at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(dim_overflow)?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Parses bank bytes into dims and records. Records are validated; the first
/// invalid one aborts the read.
pub fn read_feature_bank(bytes: &[u8]) -> Result<(Dims, Vec<FeatureRecord>)> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic != BANK_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(BANK_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = cur.u32("version")?;
    if version != BANK_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: BANK_VERSION,
            found: version,
        });
    }
    let count = cur.u64("record count")?;
    let dims = Dims::new(
        cur.u32("d_g")? as usize,
        cur.u32("d_p")? as usize,
        cur.u32("g")? as usize,
    );
    // Guard the allocation against a corrupt count.
    let min_record = 2 + 4 + 4 * (dims.global_dim + dims.patch_len());
    let remaining = bytes.len() - cur.pos;
    if (count as u128) * (min_record as u128) > remaining as u128 {
        return Err(Error::Truncated(format!(
            "header declares {count} records but only {remaining} bytes follow"
        )));
    }
    let mut records = Vec::with_capacity(count as usize);
    for n in 0..count {
        let id_len = cur.u16("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "image id")?)
            .map_err(|e| Error::InvalidArgument(format!("record {n}: image id is not UTF-8: {e}")))?
            .to_string();
        let class_id = cur.u32("class id")?;
        let global = cur.f32s(dims.global_dim, "global vector")?;
        let patches = cur.f32s(dims.patch_len(), "patch grid")?;
        let record = FeatureRecord::new(id, class_id, global, patches);
        record.validate(&dims)?;
        records.push(record);
    }
    if cur.pos != bytes.len() {
        return Err(Error::InvalidArgument(format!(
            "{} trailing bytes after last record",
            bytes.len() - cur.pos
        )));
    }
    Ok((dims, records))
}

/// Loads a bank file into an index. Classes without a supplied name get
/// `class_<id>`.
pub fn load_feature_bank(path: impl AsRef<Path>, class_names: &BTreeMap<u32, String>) -> Result<GalleryIndex> {
    let bytes = std::fs::read(path)?;
    let (dims, records) = read_feature_bank(&bytes)?;
    GalleryIndex::with_default_names(dims, records, class_names.clone())
}
