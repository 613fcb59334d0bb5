//! Little-endian binary envelope shared by the on-disk artifact formats.
//!
//! Every artifact is: 8 magic bytes, versioned fields, then a CRC32 of all
//! preceding bytes. Readers check the checksum before any field so that
//! corruption is reported as corruption rather than as a parse error.

use crate::error::{CoreError, Result};
use crate::matrix::{Mask, Matrix};

pub(crate) fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub(crate) fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

pub(crate) fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn put_mask(buf: &mut Vec<u8>, m: &Mask) {
    for &b in m.bits() {
        buf.push(b as u8);
    }
}

/// Append the CRC32 of everything written so far.
pub(crate) fn seal(buf: &mut Vec<u8>) {
    let crc = crc32fast::hash(buf);
    buf.extend_from_slice(&crc.to_le_bytes());
}

/// Verify checksum and magic, returning a cursor positioned after the magic
/// with the checksum already stripped off the end.
pub(crate) fn open<'a>(buf: &'a [u8], magic: &[u8; 8]) -> Result<Cursor<'a>> {
    if buf.len() < magic.len() + 4 {
        return Err(CoreError::BadFile {
            offset: buf.len(),
            reason: "file too short".into(),
        });
    }
    let crc_stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
    let crc_actual = crc32fast::hash(&buf[..buf.len() - 4]);
    if crc_stored != crc_actual {
        return Err(CoreError::BadFile {
            offset: buf.len() - 4,
            reason: format!(
                "checksum mismatch: stored {crc_stored:#010x}, computed {crc_actual:#010x}"
            ),
        });
    }
    let mut cur = Cursor {
        buf: &buf[..buf.len() - 4],
        pos: 0,
    };
    if cur.take(magic.len(), "magic")? != magic {
        return Err(CoreError::BadFile {
            offset: 0,
            reason: "bad magic bytes".into(),
        });
    }
    Ok(cur)
}

pub(crate) struct Cursor<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::BadFile {
                offset: self.pos,
                reason: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let off = self.pos;
        let s = std::str::from_utf8(self.take(len, what)?).map_err(|_| CoreError::BadFile {
            offset: off,
            reason: format!("{what} is not UTF-8"),
        })?;
        Ok(s.to_string())
    }

    pub(crate) fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
        let start = self.pos;
        let raw = self.take(rows * cols * 8, what)?;
        let mut data = Vec::with_capacity(rows * cols);
        for chunk in raw.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(CoreError::BadFile {
                    offset: start,
                    reason: format!("non-finite value in {what}"),
                });
            }
            data.push(v);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    pub(crate) fn mask(&mut self, rows: usize, what: &str) -> Result<Mask> {
        let start = self.pos;
        let raw = self.take(rows, what)?;
        let mut bits = Vec::with_capacity(rows);
        for (i, &b) in raw.iter().enumerate() {
            match b {
                0 => bits.push(false),
                1 => bits.push(true),
                other => {
                    return Err(CoreError::BadFile {
                        offset: start + i,
                        reason: format!("mask byte {other} in {what}, want 0 or 1"),
                    })
                }
            }
        }
        Ok(Mask::rows_from(bits))
    }

    /// Error if any input remains; every reader must consume its file fully.
    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CoreError::BadFile {
                offset: self.pos,
                reason: format!("{} trailing bytes after last record", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}
