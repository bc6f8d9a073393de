//! Directory records: a directory_info block followed by a packed array of
//! fixed-size entries, sorted by name for binary searching.

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::time::Timestamp;
use crate::format::wire::{put_addr, put_padded, put_u16, put_u32, put_u64, Reader};
use crate::format::{FileName, FileType, DIRECTORY_INFO_VERSION, MAX_NAME_LEN};

/// directory_info: version, length, entry count, entry size.
pub const DIRECTORY_INFO_LEN: usize = 16;
pub const DIR_ENTRY_SIZE: usize = 84;

const KIND: &str = "directory";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirEntry {
    pub file_name: FileName,
    /// For directory entries this is the all-zero address; the real
    /// location is found through the directory list.
    pub header_location: MediaAddress,
    pub modify_time: Timestamp,
    pub file_number: u32,
    pub file_size: u32,
    pub file_version: u32,
    pub file_type: FileType,
    pub header_size: u16,
    pub addname_count: u16,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Directory {
    /// Sorted ascending by name bytes; names are unique.
    pub entries: Vec<DirEntry>,
}

impl Directory {
    pub fn serialized_len(&self) -> usize {
        DIRECTORY_INFO_LEN + self.entries.len() * DIR_ENTRY_SIZE
    }

    /// Binary search by exact name bytes.
    pub fn find(&self, name: &[u8]) -> Option<&DirEntry> {
        self.entries
            .binary_search_by(|e| e.file_name.as_bytes().cmp(name))
            .ok()
            .map(|i| &self.entries[i])
    }
}

pub fn encode_directory(dir: &Directory) -> Result<Vec<u8>> {
    for pair in dir.entries.windows(2) {
        match pair[0].file_name.as_bytes().cmp(pair[1].file_name.as_bytes()) {
            std::cmp::Ordering::Less => {}
            std::cmp::Ordering::Equal => {
                return Err(Error::DuplicateName(pair[0].file_name.to_string_lossy()))
            }
            std::cmp::Ordering::Greater => return Err(Error::SortViolation { kind: KIND }),
        }
    }
    let mut buf = Vec::with_capacity(dir.serialized_len());
    put_u32(&mut buf, DIRECTORY_INFO_VERSION);
    put_u32(&mut buf, DIRECTORY_INFO_LEN as u32);
    put_u32(&mut buf, dir.entries.len() as u32);
    put_u32(&mut buf, DIR_ENTRY_SIZE as u32);
    for e in &dir.entries {
        if e.file_name.is_root() {
            return Err(Error::InvalidName("directory entry with empty name".into()));
        }
        put_padded(&mut buf, e.file_name.as_bytes(), MAX_NAME_LEN);
        put_addr(&mut buf, e.header_location);
        put_u64(&mut buf, e.modify_time.0);
        put_u32(&mut buf, e.file_number);
        put_u32(&mut buf, e.file_size);
        put_u32(&mut buf, e.file_version);
        put_u16(&mut buf, e.file_type.code());
        put_u16(&mut buf, e.header_size);
        put_u16(&mut buf, e.addname_count);
        put_u16(&mut buf, 0); // pad
    }
    Ok(buf)
}

pub fn decode_directory(bytes: &[u8]) -> Result<Directory> {
    let mut r = Reader::new(bytes, KIND);
    let version = r.u32()?;
    if version != DIRECTORY_INFO_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            version: version as u16,
        });
    }
    let info_len = r.u32()? as usize;
    if info_len < DIRECTORY_INFO_LEN || info_len > bytes.len() {
        return Err(Error::Truncated { kind: KIND });
    }
    let count = r.u32()? as usize;
    let entry_size = r.u32()? as usize;
    if entry_size != DIR_ENTRY_SIZE {
        return Err(Error::InvalidField(format!(
            "directory entry size {entry_size}, expected {DIR_ENTRY_SIZE}"
        )));
    }
    let need = info_len
        .checked_add(count.checked_mul(entry_size).ok_or(Error::Truncated { kind: KIND })?)
        .ok_or(Error::Truncated { kind: KIND })?;
    if bytes.len() < need {
        return Err(Error::Truncated { kind: KIND });
    }
    r.seek(info_len)?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_field = r.bytes(MAX_NAME_LEN)?;
        let end = name_field
            .iter()
            .position(|&b| b == 0)
            .unwrap_or(MAX_NAME_LEN);
        if name_field[end..].iter().any(|&b| b != 0) {
            return Err(Error::InvalidName("bytes after NUL padding".into()));
        }
        let file_name = FileName::new(name_field[..end].to_vec())?;
        let header_location = r.addr()?;
        let modify_time = Timestamp(r.u64()?);
        let file_number = r.u32()?;
        let file_size = r.u32()?;
        let file_version = r.u32()?;
        let file_type = FileType::from_code(r.u16()?)?;
        let header_size = r.u16()?;
        let addname_count = r.u16()?;
        let _pad = r.u16()?;
        entries.push(DirEntry {
            file_name,
            header_location,
            modify_time,
            file_number,
            file_size,
            file_version,
            file_type,
            header_size,
            addname_count,
        });
    }
    for pair in entries.windows(2) {
        match pair[0].file_name.as_bytes().cmp(pair[1].file_name.as_bytes()) {
            std::cmp::Ordering::Less => {}
            std::cmp::Ordering::Equal => {
                return Err(Error::DuplicateName(pair[0].file_name.to_string_lossy()))
            }
            std::cmp::Ordering::Greater => return Err(Error::SortViolation { kind: KIND }),
        }
    }
    Ok(Directory { entries })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn entry(name: &str, number: u32) -> DirEntry {
        DirEntry {
            file_name: name.parse().unwrap(),
            header_location: MediaAddress::from_raw(0x10000),
            modify_time: Timestamp(7),
            file_number: number,
            file_size: 100,
            file_version: 1,
            file_type: FileType::File,
            header_size: 112,
            addname_count: 0,
        }
    }

    #[test]
    fn two_entries_stored_in_name_order() {
        let dir = Directory {
            entries: vec![entry("life.c", 2), entry("wheel.c", 3)],
        };
        let bytes = encode_directory(&dir).unwrap();
        let back = decode_directory(&bytes).unwrap();
        assert_eq!(back, dir);
        assert_eq!(back.entries[0].file_name.to_string_lossy(), "life.c");
        assert_eq!(back.entries[1].file_name.to_string_lossy(), "wheel.c");
    }

    #[test]
    fn reversed_entries_rejected() {
        let dir = Directory {
            entries: vec![entry("wheel.c", 3), entry("life.c", 2)],
        };
        assert!(matches!(
            encode_directory(&dir),
            Err(Error::SortViolation { .. })
        ));
    }

    #[test]
    fn duplicate_names_rejected() {
        let dir = Directory {
            entries: vec![entry("same", 2), entry("same", 3)],
        };
        assert!(matches!(encode_directory(&dir), Err(Error::DuplicateName(_))));
    }

    #[test]
    fn entry_is_84_bytes() {
        let one = Directory {
            entries: vec![entry("a", 2)],
        };
        let empty = Directory::default();
        let with = encode_directory(&one).unwrap();
        let without = encode_directory(&empty).unwrap();
        assert_eq!(without.len(), DIRECTORY_INFO_LEN);
        assert_eq!(with.len() - without.len(), 84);
    }

    #[test]
    fn forty_nine_byte_name_cannot_exist() {
        assert!(FileName::new(vec![b'x'; 49]).is_err());
        // And a 48-byte name encodes fine.
        let dir = Directory {
            entries: vec![DirEntry {
                file_name: FileName::new(vec![b'x'; 48]).unwrap(),
                ..entry("a", 2)
            }],
        };
        let back = decode_directory(&encode_directory(&dir).unwrap()).unwrap();
        assert_eq!(back.entries[0].file_name.as_bytes().len(), 48);
    }

    #[test]
    fn binary_search_matches_linear_scan() {
        let mut names: Vec<String> = (0..100).map(|i| format!("file-{i:03}")).collect();
        names.sort();
        let dir = Directory {
            entries: names
                .iter()
                .enumerate()
                .map(|(i, n)| entry(n, i as u32 + 2))
                .collect(),
        };
        for probe in ["file-000", "file-042", "file-099", "missing"] {
            let linear = dir
                .entries
                .iter()
                .find(|e| e.file_name.as_bytes() == probe.as_bytes());
            assert_eq!(dir.find(probe.as_bytes()), linear);
        }
    }
}
