//! Directory List: a flat, sorted array with one element per live
//! directory, letting a directory be rewritten without rewriting its
//! ancestors. Elements are fixed size for binary searching.

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::time::Timestamp;
use crate::format::wire::{put_addr, put_u16, put_u32, put_u64, Reader};
use crate::format::{checksum, DIR_LIST_MAGIC, DIR_LIST_VERSION};

pub const DIR_LIST_HEADER_LEN: usize = 36;
pub const DIR_LIST_ELEMENT_SIZE: usize = 36;

const CHECKSUM_OFFSET: usize = 20;
const KIND: &str = "dir-list";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirListElement {
    pub dir_number: u32,
    /// Location of the most recent file header of this directory.
    pub header_location: MediaAddress,
    pub containing_dir: u32,
    /// Most recent modification time of anything beneath this directory.
    pub modify_time: Timestamp,
    /// Rolled-up sum of contained file sizes plus contained directories.
    pub contained_bytes: u64,
    pub header_size: u16,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirList {
    /// Self-referential location of this record.
    pub dir_list_loc: MediaAddress,
    pub prev_dir_list: MediaAddress,
    /// Sorted ascending by directory number; the root (1) comes first.
    pub elements: Vec<DirListElement>,
}

pub fn encode_dir_list(list: &DirList) -> Result<Vec<u8>> {
    for pair in list.elements.windows(2) {
        if pair[0].dir_number >= pair[1].dir_number {
            return Err(Error::SortViolation { kind: KIND });
        }
    }
    let mut buf =
        Vec::with_capacity(DIR_LIST_HEADER_LEN + list.elements.len() * DIR_LIST_ELEMENT_SIZE);
    buf.extend_from_slice(&DIR_LIST_MAGIC);
    put_u16(&mut buf, DIR_LIST_VERSION);
    put_u16(&mut buf, DIR_LIST_HEADER_LEN as u16);
    put_addr(&mut buf, list.dir_list_loc);
    put_u16(&mut buf, 0); // checksum
    put_u16(&mut buf, 0); // pad
    put_addr(&mut buf, list.prev_dir_list);
    put_u32(&mut buf, list.elements.len() as u32);
    debug_assert_eq!(buf.len(), DIR_LIST_HEADER_LEN);
    for e in &list.elements {
        put_u32(&mut buf, e.dir_number);
        put_addr(&mut buf, e.header_location);
        put_u32(&mut buf, e.containing_dir);
        put_u64(&mut buf, e.modify_time.0);
        put_u64(&mut buf, e.contained_bytes);
        put_u16(&mut buf, e.header_size);
        put_u16(&mut buf, 0); // pad
    }
    checksum::seal(&mut buf, CHECKSUM_OFFSET)?;
    Ok(buf)
}

/// Element count from a decoded header prefix, for sizing the full read.
pub fn dir_list_entry_count(header: &[u8]) -> Result<u32> {
    if header.len() < DIR_LIST_HEADER_LEN {
        return Err(Error::Truncated { kind: KIND });
    }
    if header[0..8] != DIR_LIST_MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    Ok(u32::from_le_bytes(header[32..36].try_into().unwrap()))
}

pub fn decode_dir_list(bytes: &[u8], actual_location: MediaAddress) -> Result<DirList> {
    let mut r = Reader::new(bytes, KIND);
    if r.bytes(8)? != DIR_LIST_MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    let version = r.u16()?;
    if version != DIR_LIST_VERSION {
        return Err(Error::UnsupportedVersion { kind: KIND, version });
    }
    let header_len = r.u16()? as usize;
    if header_len < DIR_LIST_HEADER_LEN {
        return Err(Error::Truncated { kind: KIND });
    }
    let dir_list_loc = r.addr()?;
    let _checksum = r.u16()?;
    let _pad = r.u16()?;
    let prev_dir_list = r.addr()?;
    let count = r.u32()? as usize;
    let total = header_len
        .checked_add(count.checked_mul(DIR_LIST_ELEMENT_SIZE).ok_or(Error::Truncated { kind: KIND })?)
        .ok_or(Error::Truncated { kind: KIND })?;
    if bytes.len() < total {
        return Err(Error::Truncated { kind: KIND });
    }
    if checksum::word_sum(&bytes[..total]) != 0 {
        return Err(Error::BadChecksum { kind: KIND });
    }
    if dir_list_loc != actual_location {
        return Err(Error::SelfRefMismatch {
            kind: KIND,
            stored: dir_list_loc.raw(),
            actual: actual_location.raw(),
        });
    }
    r.seek(header_len)?;
    let mut elements = Vec::with_capacity(count);
    for _ in 0..count {
        let dir_number = r.u32()?;
        let header_location = r.addr()?;
        let containing_dir = r.u32()?;
        let modify_time = Timestamp(r.u64()?);
        let contained_bytes = r.u64()?;
        let header_size = r.u16()?;
        let _pad = r.u16()?;
        elements.push(DirListElement {
            dir_number,
            header_location,
            containing_dir,
            modify_time,
            contained_bytes,
            header_size,
        });
    }
    for pair in elements.windows(2) {
        if pair[0].dir_number >= pair[1].dir_number {
            return Err(Error::SortViolation { kind: KIND });
        }
    }
    Ok(DirList {
        dir_list_loc,
        prev_dir_list,
        elements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::AddressScheme;

    fn element(n: u32) -> DirListElement {
        DirListElement {
            dir_number: n,
            header_location: AddressScheme::audio().address_of(4, 0).unwrap(),
            containing_dir: 1,
            modify_time: Timestamp(99),
            contained_bytes: 1234,
            header_size: 112,
        }
    }

    #[test]
    fn single_root_entry_round_trips() {
        let list = DirList {
            dir_list_loc: AddressScheme::audio().address_of(5, 0).unwrap(),
            prev_dir_list: MediaAddress::NULL,
            elements: vec![element(1)],
        };
        let bytes = encode_dir_list(&list).unwrap();
        assert_eq!(bytes.len(), DIR_LIST_HEADER_LEN + DIR_LIST_ELEMENT_SIZE);
        let back = decode_dir_list(&bytes, list.dir_list_loc).unwrap();
        assert_eq!(back, list);
        assert_eq!(back.elements[0].dir_number, 1);
    }

    #[test]
    fn unsorted_elements_rejected_at_encode() {
        let list = DirList {
            dir_list_loc: MediaAddress::ZERO,
            prev_dir_list: MediaAddress::NULL,
            elements: vec![element(1), element(5), element(3)],
        };
        assert!(matches!(
            encode_dir_list(&list),
            Err(Error::SortViolation { .. })
        ));
    }

    #[test]
    fn element_is_36_bytes() {
        let loc = AddressScheme::audio().address_of(5, 0).unwrap();
        let one = DirList {
            dir_list_loc: loc,
            prev_dir_list: MediaAddress::NULL,
            elements: vec![element(1)],
        };
        let two = DirList {
            elements: vec![element(1), element(2)],
            ..one.clone()
        };
        let e1 = encode_dir_list(&one).unwrap();
        let e2 = encode_dir_list(&two).unwrap();
        assert_eq!(e2.len() - e1.len(), 36);
    }

    #[test]
    fn count_mismatch_is_truncation() {
        let list = DirList {
            dir_list_loc: MediaAddress::ZERO,
            prev_dir_list: MediaAddress::NULL,
            elements: vec![element(1), element(2)],
        };
        let bytes = encode_dir_list(&list).unwrap();
        assert!(matches!(
            decode_dir_list(&bytes[..bytes.len() - 1], MediaAddress::ZERO),
            Err(Error::Truncated { .. })
        ));
    }
}
