//! SVL1 volume and SMK1 mask files.
//!
//! SVL1: magic `SVL1`, little-endian `u32` H, W, D, `f32` sx, sy, sz,
//! `f32` raw_min, raw_max, then H·W·D `f32` voxels (x fastest, then y, then z).
//! SMK1: magic `SMK1`, `u32` H, W, D, then H·W·D `u8` values in the same order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{MaskVolume, Volume};

pub const VOLUME_MAGIC: &[u8; 4] = b"SVL1";
pub const MASK_MAGIC: &[u8; 4] = b"SMK1";
pub const VOLUME_HEADER_LEN: usize = 36;
pub const MASK_HEADER_LEN: usize = 16;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Corrupt(format!(
                "unexpected end of data at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn read_dims(r: &mut Reader<'_>) -> Result<(usize, usize, usize)> {
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let d = r.u32()? as usize;
    if h == 0 || w == 0 || d == 0 {
        return Err(Error::Corrupt(format!("zero dimension in header ({h}x{w}x{d})")));
    }
    Ok((h, w, d))
}

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(VOLUME_HEADER_LEN + 4 * v.voxels().len());
    out.extend_from_slice(VOLUME_MAGIC);
    for d in [v.height(), v.width(), v.depth()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out.extend_from_slice(&v.raw_range.0.to_le_bytes());
    out.extend_from_slice(&v.raw_range.1.to_le_bytes());
    for x in v.voxels() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8]) -> Result<Volume> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic != VOLUME_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected SVL1",
            String::from_utf8_lossy(magic)
        )));
    }
    let (h, w, d) = read_dims(&mut r)?;
    let spacing = [r.f32()?, r.f32()?, r.f32()?];
    let raw_range = (r.f32()?, r.f32()?);
    let n = h
        .checked_mul(w)
        .and_then(|x| x.checked_mul(d))
        .ok_or_else(|| Error::Corrupt("dimensions overflow".into()))?;
    let payload = &bytes[VOLUME_HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::Corrupt(format!(
            "header says {n} voxels ({} bytes) but payload has {} bytes",
            4 * n,
            payload.len()
        )));
    }
    let voxels: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = voxels.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("voxel {i} is not finite")));
    }
    let mut vol = Volume::new(h, w, d, voxels)?;
    vol.spacing = spacing;
    vol.raw_range = raw_range;
    Ok(vol)
}

pub fn encode_masks(m: &MaskVolume) -> Vec<u8> {
    let (h, w, d) = m.dims();
    let mut out = Vec::with_capacity(MASK_HEADER_LEN + h * w * d);
    out.extend_from_slice(MASK_MAGIC);
    for x in [h, w, d] {
        out.extend_from_slice(&(x as u32).to_le_bytes());
    }
    out.extend(m.to_bits());
    out
}

pub fn decode_masks(bytes: &[u8]) -> Result<MaskVolume> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r
        .take(4)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if magic != MASK_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected SMK1",
            String::from_utf8_lossy(magic)
        )));
    }
    let (h, w, d) = read_dims(&mut r)?;
    let payload = &bytes[MASK_HEADER_LEN..];
    if payload.len() != h * w * d {
        return Err(Error::Corrupt(format!(
            "header says {} mask bytes but payload has {}",
            h * w * d,
            payload.len()
        )));
    }
    MaskVolume::from_bits(h, w, d, payload)
}

/// Writes through a temporary sibling and renames it into place.
/// Writes through a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_volume(v))
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_volume(&bytes)
}

pub fn save_masks(m: &MaskVolume, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode_masks(m))
}

pub fn load_masks(path: impl AsRef<Path>) -> Result<MaskVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_masks(&bytes)
}
