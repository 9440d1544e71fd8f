//! Single-field container: `PPCF`, `u16` version, `u32` resolution, then
//! `D * D` little-endian `f64` values row-major and a CRC32 of those values.

use std::fs;
use std::path::Path;

use super::field::Field;
use crate::error::{Error, Result};
use crate::io::{check_magic, get_f64s, put_f64s, ByteReader};

pub const FIELD_MAGIC: &[u8; 4] = b"PPCF";
pub const FIELD_VERSION: u16 = 1;

pub fn encode_field(f: &Field) -> Vec<u8> {
    let mut out = Vec::with_capacity(10 + f.len() * 8 + 4);
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&FIELD_VERSION.to_le_bytes());
    out.extend_from_slice(&(f.resolution() as u32).to_le_bytes());
    put_f64s(&mut out, f.values());
    let crc = crc32fast::hash(&out[10..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_field(bytes: &[u8]) -> Result<Field> {
    let mut r = ByteReader::new(bytes, "field file");
    check_magic(r.take(4)?, FIELD_MAGIC)?;
    let version = r.u16()?;
    if version > FIELD_VERSION {
        return Err(Error::Version {
            found: version,
            supported: FIELD_VERSION,
        });
    }
    let d = r.u32()? as usize;
    let payload = r.take(d * d * 8)?;
    let stored = r.u32()?;
    if r.remaining() != 0 {
        return Err(Error::Format(format!("{} trailing bytes after checksum", r.remaining())));
    }
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Checksum {
            section: "values".into(),
            stored,
            computed,
        });
    }
    Field::new(d, get_f64s(payload))
}

pub fn save_field(f: &Field, path: &Path) -> Result<()> {
    fs::write(path, encode_field(f))?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<Field> {
    decode_field(&fs::read(path)?)
}
