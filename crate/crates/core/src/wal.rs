//! Write-ahead log record framing.
//!
//! `crc u32 | len u32 | seq u64 | kind u8 | key_len u32 | key | value`, where
//! `len` counts the bytes after it and the CRC covers `len` and the payload.

use alloc::vec::Vec;

use crate::coding::{crc32, put_u32, put_u64, put_u8, Decoder};
use crate::error::{Error, Region, Result};

pub const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalKind {
    Put,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub seq: u64,
    pub kind: WalKind,
    pub key: Vec<u8>,
    pub value: Vec<u8>,
}

pub fn encode_record(buf: &mut Vec<u8>, seq: u64, kind: WalKind, key: &[u8], value: &[u8]) {
    let start = buf.len();
    put_u32(buf, 0);
    let len = 8 + 1 + 4 + key.len() + value.len();
    put_u32(buf, len as u32);
    put_u64(buf, seq);
    put_u8(buf, if kind == WalKind::Put { 1 } else { 2 });
    put_u32(buf, key.len() as u32);
    buf.extend_from_slice(key);
    buf.extend_from_slice(value);
    let crc = crc32(&buf[start + 4..]);
    buf[start..start + 4].copy_from_slice(&crc.to_le_bytes());
}

fn decode_payload(p: &[u8]) -> Result<WalRecord> {
    let mut d = Decoder::new(p, Region::Wal);
    let seq = d.u64()?;
    let kind = match d.u8()? {
        1 => WalKind::Put,
        2 => WalKind::Delete,
        _ => return Err(Error::corrupt(Region::Wal, "unknown record kind")),
    };
    let key = d.len_prefixed()?.to_vec();
    let value = d.bytes(d.remaining())?.to_vec();
    Ok(WalRecord {
        seq,
        kind,
        key,
        value,
    })
}

/// Result of scanning a log: the valid prefix and whether junk followed it.
#[derive(Debug, Default)]
pub struct WalScan {
    pub records: Vec<WalRecord>,
    pub valid_len: usize,
    pub torn: bool,
}

/// Decodes records until the first truncated or mismatching frame, which is
/// treated as a torn tail.
pub fn scan_log(bytes: &[u8]) -> WalScan {
    let mut out = WalScan::default();
    let mut pos = 0;
    while pos < bytes.len() {
        let rest = &bytes[pos..];
        if rest.len() < HEADER_LEN {
            out.torn = true;
            break;
        }
        let crc = u32::from_le_bytes([rest[0], rest[1], rest[2], rest[3]]);
        let len = u32::from_le_bytes([rest[4], rest[5], rest[6], rest[7]]) as usize;
        if len == 0 || rest.len() < HEADER_LEN + len || crc32(&rest[4..HEADER_LEN + len]) != crc {
            out.torn = true;
            break;
        }
        match decode_payload(&rest[HEADER_LEN..HEADER_LEN + len]) {
            Ok(r) => out.records.push(r),
            Err(_) => {
                out.torn = true;
                break;
            }
        }
        pos += HEADER_LEN + len;
        out.valid_len = pos;
    }
    out
}
