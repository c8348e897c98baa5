//! `VOL1` on-disk format.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "VOL1"
//! 4       3 x u32 LE  dims (x, y, z)
//! 16      3 x f32 LE  spacing (x, y, z)
//! 28      4*x*y*z     f32 LE intensities, x fastest
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Volume, VolumeError};

pub const VOL1_MAGIC: [u8; 4] = *b"VOL1";
const HEADER_LEN: usize = 4 + 12 + 12;

pub fn encode_volume(v: &Volume) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * v.len());
    out.extend_from_slice(&VOL1_MAGIC);
    for d in v.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in v.spacing() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for x in v.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_volume(bytes: &[u8], id: &str) -> Result<Volume, VolumeError> {
    if bytes.len() < 4 {
        return Err(VolumeError::MalformedHeader(format!(
            "file is {} bytes, shorter than the magic",
            bytes.len()
        )));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != VOL1_MAGIC {
        return Err(VolumeError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(VolumeError::MalformedHeader(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    let word = |i: usize| -> [u8; 4] { bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap() };
    let mut shape = [0usize; 3];
    for (a, dim) in shape.iter_mut().enumerate() {
        *dim = u32::from_le_bytes(word(a)) as usize;
    }
    if shape.contains(&0) {
        return Err(VolumeError::MalformedHeader(format!(
            "zero dimension in {shape:?}"
        )));
    }
    let mut spacing = [0f32; 3];
    for (a, s) in spacing.iter_mut().enumerate() {
        *s = f32::from_le_bytes(word(3 + a));
    }
    if spacing.iter().any(|s| !s.is_finite()) {
        return Err(VolumeError::MalformedHeader(format!(
            "non-finite spacing {spacing:?}"
        )));
    }
    let declared = shape
        .iter()
        .try_fold(4usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| VolumeError::MalformedHeader(format!("dims {shape:?} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < declared {
        return Err(VolumeError::Truncated {
            expected: declared,
            found: payload.len(),
        });
    }
    if payload.len() > declared {
        return Err(VolumeError::DimensionMismatch {
            declared,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Volume::new(data, shape, spacing, id)
}

/// Writes atomically: the file is staged next to `path` and renamed into place.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<(), VolumeError> {
    let path = path.as_ref();
    let tmp = path.with_extension("vol1.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_volume(v))?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Reads a `VOL1` file; the volume id is the file stem.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume, VolumeError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_volume(&bytes, &id)
}
