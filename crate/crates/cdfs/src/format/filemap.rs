//! File maps for fragmented files: a strip_info block followed by a packed
//! array of fragment descriptors mapping logical file bytes to media bytes.

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::wire::{put_addr, put_u32, Reader};
use crate::format::STRIP_INFO_VERSION;

pub const STRIP_INFO_LEN: usize = 12;
pub const FRAGMENT_DESCRIPTOR_SIZE: usize = 16;

const KIND: &str = "filemap";

/// One strip of valid data. Strips may logically overlap, but overlapping
/// regions must carry identical bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FragmentDescriptor {
    /// Location of the first byte of the strip; may be mid-block.
    pub loc: MediaAddress,
    /// Number of valid bytes in the strip; never zero.
    pub valid_chars: u32,
    /// Byte offset of the strip in the logical file.
    pub ordinal: u32,
}

impl FragmentDescriptor {
    pub fn logical_end(&self) -> u64 {
        u64::from(self.ordinal) + u64::from(self.valid_chars)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FileMap {
    /// Sorted ascending by ordinal.
    pub descriptors: Vec<FragmentDescriptor>,
}

impl FileMap {
    pub fn serialized_len(&self) -> usize {
        STRIP_INFO_LEN + self.descriptors.len() * FRAGMENT_DESCRIPTOR_SIZE
    }

    /// Highest mapped logical byte, which is the stream length.
    pub fn logical_extent(&self) -> u64 {
        self.descriptors
            .iter()
            .map(FragmentDescriptor::logical_end)
            .max()
            .unwrap_or(0)
    }

    /// Count of distinct mapped logical bytes (overlaps counted once).
    pub fn valid_byte_count(&self) -> u64 {
        let mut total = 0u64;
        let mut covered_to = 0u64;
        for d in &self.descriptors {
            let start = u64::from(d.ordinal).max(covered_to);
            let end = d.logical_end();
            if end > start {
                total += end - start;
            }
            covered_to = covered_to.max(end);
        }
        total
    }
}

pub fn encode_filemap(map: &FileMap) -> Result<Vec<u8>> {
    for d in &map.descriptors {
        if d.valid_chars == 0 {
            return Err(Error::ZeroLengthStrip);
        }
    }
    for pair in map.descriptors.windows(2) {
        if pair[0].ordinal > pair[1].ordinal {
            return Err(Error::SortViolation { kind: KIND });
        }
    }
    let mut buf = Vec::with_capacity(map.serialized_len());
    put_u32(&mut buf, STRIP_INFO_VERSION);
    put_u32(&mut buf, STRIP_INFO_LEN as u32);
    put_u32(&mut buf, map.descriptors.len() as u32);
    for d in &map.descriptors {
        put_addr(&mut buf, d.loc);
        put_u32(&mut buf, d.valid_chars);
        put_u32(&mut buf, d.ordinal);
    }
    Ok(buf)
}

/// Strip count from a decoded strip_info prefix, for sizing the full read.
pub fn filemap_strip_count(info: &[u8]) -> Result<u32> {
    if info.len() < STRIP_INFO_LEN {
        return Err(Error::Truncated { kind: KIND });
    }
    let version = u32::from_le_bytes(info[0..4].try_into().unwrap());
    if version != STRIP_INFO_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version: version as u16,
        });
    }
    Ok(u32::from_le_bytes(info[8..12].try_into().unwrap()))
}

pub fn decode_filemap(bytes: &[u8]) -> Result<FileMap> {
    let mut r = Reader::new(bytes, KIND);
    let version = r.u32()?;
    if version != STRIP_INFO_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version: version as u16,
        });
    }
    let info_len = r.u32()? as usize;
    if info_len < STRIP_INFO_LEN || info_len > bytes.len() {
        return Err(Error::Truncated { kind: KIND });
    }
    let count = r.u32()? as usize;
    let need = info_len
        .checked_add(
            count
                .checked_mul(FRAGMENT_DESCRIPTOR_SIZE)
                .ok_or(Error::Truncated { kind: KIND })?,
        )
        .ok_or(Error::Truncated { kind: KIND })?;
    if bytes.len() < need {
        return Err(Error::Truncated { kind: KIND });
    }
    r.seek(info_len)?;
    let mut descriptors = Vec::with_capacity(count);
    for _ in 0..count {
        let loc = r.addr()?;
        let valid_chars = r.u32()?;
        let ordinal = r.u32()?;
        if valid_chars == 0 {
            return Err(Error::ZeroLengthStrip);
        }
        descriptors.push(FragmentDescriptor {
            loc,
            valid_chars,
            ordinal,
        });
    }
    for pair in descriptors.windows(2) {
        if pair[0].ordinal > pair[1].ordinal {
            return Err(Error::SortViolation { kind: KIND });
        }
    }
    Ok(FileMap { descriptors })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(ordinal: u32, len: u32) -> FragmentDescriptor {
        FragmentDescriptor {
            loc: MediaAddress::from_raw(u64::from(ordinal) + 0x10000),
            valid_chars: len,
            ordinal,
        }
    }

    #[test]
    fn contiguous_file_as_one_strip() {
        let map = FileMap {
            descriptors: vec![strip(0, 1_000_000)],
        };
        let bytes = encode_filemap(&map).unwrap();
        assert_eq!(bytes.len(), STRIP_INFO_LEN + FRAGMENT_DESCRIPTOR_SIZE);
        let back = decode_filemap(&bytes).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.logical_extent(), 1_000_000);
        assert_eq!(back.valid_byte_count(), 1_000_000);
    }

    #[test]
    fn overlapping_strips_are_accepted_by_the_codec() {
        let map = FileMap {
            descriptors: vec![strip(0, 600_000), strip(500_000, 600_000)],
        };
        let back = decode_filemap(&encode_filemap(&map).unwrap()).unwrap();
        assert_eq!(back, map);
        assert_eq!(back.valid_byte_count(), 1_100_000);
    }

    #[test]
    fn unsorted_descriptors_rejected() {
        let map = FileMap {
            descriptors: vec![strip(500, 10), strip(0, 10)],
        };
        assert!(matches!(
            encode_filemap(&map),
            Err(Error::SortViolation { .. })
        ));
    }

    #[test]
    fn zero_length_strip_rejected() {
        let map = FileMap {
            descriptors: vec![strip(0, 0)],
        };
        assert!(matches!(encode_filemap(&map), Err(Error::ZeroLengthStrip)));
    }

    #[test]
    fn hole_between_strips_counts_only_valid_bytes() {
        let map = FileMap {
            descriptors: vec![strip(0, 10), strip(100, 10)],
        };
        assert_eq!(map.logical_extent(), 110);
        assert_eq!(map.valid_byte_count(), 20);
    }
}
