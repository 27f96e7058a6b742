//! Fixed-width little-endian encoding helpers.
//!
//! Offsets and sizes are always 64-bit, lengths of keys and values are
//! 32-bit. Every framed region ends with a CRC32 of its body.

use alloc::vec::Vec;

use crate::error::{Error, Region, Result};

pub fn put_u8(buf: &mut Vec<u8>, v: u8) {
    buf.push(v);
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

/// Writes a 32-bit length prefix followed by the bytes.
pub fn put_len_prefixed(buf: &mut Vec<u8>, bytes: &[u8]) {
    put_u32(buf, bytes.len() as u32);
    buf.extend_from_slice(bytes);
}

pub fn crc32(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Appends the CRC32 of everything written since `start`.
pub fn seal(buf: &mut Vec<u8>, start: usize) {
    let crc = crc32(&buf[start..]);
    put_u32(buf, crc);
}

/// Verifies and strips a trailing CRC32.
pub fn unseal(bytes: &[u8], region: Region) -> Result<&[u8]> {
    if bytes.len() < 4 {
        return Err(Error::corrupt(region, "truncated checksum"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
    if crc32(body) != stored {
        return Err(Error::corrupt(region, "checksum mismatch"));
    }
    Ok(body)
}

/// Bounds-checked cursor over an encoded region.
pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    region: Region,
}

impl<'a> Decoder<'a> {
    pub fn new(buf: &'a [u8], region: Region) -> Self {
        Self {
            buf,
            pos: 0,
            region,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pos >= self.buf.len()
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::corrupt(self.region, "truncated"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let b = self.bytes(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let b = self.bytes(8)?;
        let mut arr = [0u8; 8];
        arr.copy_from_slice(b);
        Ok(u64::from_le_bytes(arr))
    }

    pub fn len_prefixed(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.bytes(n)
    }
}
