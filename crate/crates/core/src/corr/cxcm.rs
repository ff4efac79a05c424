//! CXCM correspondence-map files.
//!
//! ```text
//! magic "CXCM" | version u32 | count u64
//! per entry: q_len u16 | query id | g_len u16 | gallery id | M x (row u8, col u8)
//! ```
//!
//! `M` is not stored; readers take the grid side from the feature bank.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::CorrespondenceMap;
use crate::error::{Error, Result};

pub const CXCM_MAGIC: &[u8; 4] = b"CXCM";
pub const CXCM_VERSION: u32 = 1;

fn write_id<W: Write>(out: &mut W, id: &str) -> Result<()> {
    let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("id {id:?} too long")))?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(id.as_bytes())?;
    Ok(())
}

pub fn write_correspondences_to<W: Write>(maps: &[CorrespondenceMap], grid: usize, mut out: W) -> Result<()> {
    if let Some(m) = maps.iter().find(|m| m.grid != grid || m.mapping.len() != grid * grid) {
        return Err(Error::DimensionMismatch(format!(
            "map ({}, {}) is not a {grid}x{grid} map",
            m.query_id, m.gallery_id
        )));
    }
    out.write_all(CXCM_MAGIC)?;
    out.write_all(&CXCM_VERSION.to_le_bytes())?;
    out.write_all(&(maps.len() as u64).to_le_bytes())?;
    for m in maps {
        write_id(&mut out, &m.query_id)?;
        write_id(&mut out, &m.gallery_id)?;
        for &(r, c) in &m.mapping {
            out.write_all(&[r, c])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_correspondences(maps: &[CorrespondenceMap], grid: usize, path: impl AsRef<Path>) -> Result<()> {
    write_correspondences_to(maps, grid, BufWriter::new(File::create(path)?))
}

fn take<'a>(buf: &'a [u8], pos: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    if buf.len() - *pos < n {
        return Err(Error::Truncated(format!("need {n} bytes for {what} at offset {pos}")));
    }
    let s = &buf[*pos..*pos + n];
    *pos += n;
    Ok(s)
}

fn read_id(buf: &[u8], pos: &mut usize, what: &str) -> Result<String> {
    let len = u16::from_le_bytes(take(buf, pos, 2, what)?.try_into().unwrap()) as usize;
    let bytes = take(buf, pos, len, what)?;
    String::from_utf8(bytes.to_vec()).map_err(|e| Error::InvalidArgument(format!("{what} is not UTF-8: {e}")))
}

/// Parses a CXCM buffer whose maps cover a `grid x grid` patch grid.
pub fn read_correspondences(bytes: &[u8], grid: usize) -> Result<Vec<CorrespondenceMap>> {
    let mut pos = 0;
    let magic = take(bytes, &mut pos, 4, "magic")?;
    if magic != CXCM_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CXCM_MAGIC).into_owned(),
            found: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let version = u32::from_le_bytes(take(bytes, &mut pos, 4, "version")?.try_into().unwrap());
    if version != CXCM_VERSION {
        return Err(Error::UnsupportedVersion {
            expected: CXCM_VERSION,
            found: version,
        });
    }
    let count = u64::from_le_bytes(take(bytes, &mut pos, 8, "count")?.try_into().unwrap());
    let m = grid * grid;
    if (count as u128) * (4 + 2 * m as u128) > (bytes.len() - pos) as u128 {
        return Err(Error::Truncated(format!("header declares {count} maps")));
    }
    let mut maps = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let q = read_id(bytes, &mut pos, "query id")?;
        let g = read_id(bytes, &mut pos, "gallery id")?;
        let cells = take(bytes, &mut pos, 2 * m, "cell pairs")?;
        let mapping = cells.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        maps.push(CorrespondenceMap::new(q, g, grid, mapping)?);
    }
    if pos != bytes.len() {
        return Err(Error::InvalidArgument(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(maps)
}
