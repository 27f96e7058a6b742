use alloc::vec::Vec;

use crate::coding::{put_len_prefixed, put_u32, put_u64, put_u8, Decoder};
use crate::error::{Error, Region, Result};

/// What an index entry points at. The variant fully determines the payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EntryValue {
    /// Value lives in the value file with this number (possibly retired;
    /// resolve through the inheritance map).
    Reference(u64),
    /// Small value stored next to its key.
    Inline(Vec<u8>),
    Tombstone,
}

impl EntryValue {
    pub const REFERENCE: u8 = 1;
    pub const INLINE: u8 = 2;
    pub const TOMBSTONE: u8 = 3;

    pub fn tag(&self) -> u8 {
        match self {
            EntryValue::Reference(_) => Self::REFERENCE,
            EntryValue::Inline(_) => Self::INLINE,
            EntryValue::Tombstone => Self::TOMBSTONE,
        }
    }

    /// True for entries that live on the KF side of a DTable.
    pub fn is_index_side(&self) -> bool {
        !matches!(self, EntryValue::Inline(_))
    }
}

/// A versioned entry of the index LSM-tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub key: Vec<u8>,
    pub seq: u64,
    pub value: EntryValue,
}

impl IndexEntry {
    pub fn new(key: impl Into<Vec<u8>>, seq: u64, value: EntryValue) -> Self {
        Self {
            key: key.into(),
            seq,
            value,
        }
    }

    /// Encoded as `key_len u32 | key | seq u64 | kind u8 | payload_len u32 | payload`.
    pub fn encode_into(&self, buf: &mut Vec<u8>) {
        put_len_prefixed(buf, &self.key);
        put_u64(buf, self.seq);
        put_u8(buf, self.value.tag());
        match &self.value {
            EntryValue::Reference(n) => {
                put_u32(buf, 8);
                put_u64(buf, *n);
            }
            EntryValue::Inline(v) => put_len_prefixed(buf, v),
            EntryValue::Tombstone => put_u32(buf, 0),
        }
    }

    pub fn encoded_len(&self) -> usize {
        let payload = match &self.value {
            EntryValue::Reference(_) => 8,
            EntryValue::Inline(v) => v.len(),
            EntryValue::Tombstone => 0,
        };
        4 + self.key.len() + 8 + 1 + 4 + payload
    }

    pub fn decode_from(d: &mut Decoder<'_>, region: Region) -> Result<Self> {
        let key = d.len_prefixed()?.to_vec();
        let seq = d.u64()?;
        let tag = d.u8()?;
        let payload = d.len_prefixed()?;
        let value = match tag {
            EntryValue::REFERENCE => {
                if payload.len() != 8 {
                    return Err(Error::corrupt(region, "reference payload must be 8 bytes"));
                }
                let mut arr = [0u8; 8];
                arr.copy_from_slice(payload);
                EntryValue::Reference(u64::from_le_bytes(arr))
            }
            EntryValue::INLINE => EntryValue::Inline(payload.to_vec()),
            EntryValue::TOMBSTONE => {
                if !payload.is_empty() {
                    return Err(Error::corrupt(region, "tombstone with payload"));
                }
                EntryValue::Tombstone
            }
            _ => return Err(Error::corrupt(region, "unknown entry kind")),
        };
        Ok(Self { key, seq, value })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn roundtrip_each_kind() {
        for value in [
            EntryValue::Reference(7),
            EntryValue::Inline(vec![1, 2, 3]),
            EntryValue::Tombstone,
        ] {
            let e = IndexEntry::new(&b"key"[..], 9, value);
            let mut buf = Vec::new();
            e.encode_into(&mut buf);
            assert_eq!(buf.len(), e.encoded_len());
            let mut d = Decoder::new(&buf, Region::DataBlock);
            assert_eq!(IndexEntry::decode_from(&mut d, Region::DataBlock).unwrap(), e);
        }
    }

    #[test]
    fn tombstone_with_payload_is_corrupt() {
        let mut buf = Vec::new();
        put_len_prefixed(&mut buf, b"k");
        put_u64(&mut buf, 1);
        put_u8(&mut buf, EntryValue::TOMBSTONE);
        put_len_prefixed(&mut buf, b"x");
        let mut d = Decoder::new(&buf, Region::DataBlock);
        assert!(IndexEntry::decode_from(&mut d, Region::DataBlock).is_err());
    }
}
