//! Bit-exact encoding and decoding of every on-media record.
//!
//! Every multi-byte integer is stored low-byte first. The validated records
//! (end-of-transaction, directory list, file header) carry three distinct
//! means of validation: an identifying constant string, a checksum, and a
//! self-referential pointer. Arrays are packed with fixed-size elements so
//! they can be binary searched without fitting in memory.

mod checksum;
mod directory;
mod dirlist;
pub mod dump;
mod eot;
mod fileheader;
mod filemap;
mod time;
mod wire;

pub use checksum::{seal, verify, word_sum};
pub use directory::{decode_directory, encode_directory, DirEntry, Directory, DIR_ENTRY_SIZE};
pub use dirlist::{
    decode_dir_list, dir_list_entry_count, encode_dir_list, DirList, DirListElement,
    DIR_LIST_ELEMENT_SIZE, DIR_LIST_HEADER_LEN,
};
pub use eot::{decode_eot, encode_eot, initial_eot, Eot, EOT_FIXED_LEN};
pub use fileheader::{
    decode_fileheader, encode_fileheader, AccessInfo, BackupInfo, FileHeader, FileInfo,
    PropertyList, SiteInfo, SoftLinkInfo, FILEHEADER_BASE_LEN,
};
pub use filemap::{
    decode_filemap, encode_filemap, filemap_strip_count, FileMap, FragmentDescriptor,
    FRAGMENT_DESCRIPTOR_SIZE, STRIP_INFO_LEN,
};
pub use time::{Timestamp, UNIX_EPOCH_OFFSET};

use crate::error::{Error, Result};

/// Identifying strings. The second byte is a format version, the seventh
/// distinguishes the record family.
pub const EOT_MAGIC: [u8; 8] = [0x9F, 0x02, b'C', b'D', b'F', b'S', 0xAD, 0x00];
pub const FILEHEADER_MAGIC: [u8; 8] = [0x9F, 0x01, b'C', b'D', b'F', b'S', 0xAD, 0x00];
pub const DIR_LIST_MAGIC: [u8; 8] = [0x9F, 0x01, b'C', b'D', b'F', b'S', 0xA8, 0x00];

/// Reserved pathname delimiters; never legal inside an entry name.
pub const DOWN_DELIMITER: u8 = 0xFE;
pub const UP_DELIMITER: u8 = 0xFD;

/// Entry names occupy a fixed 48-character field.
pub const MAX_NAME_LEN: usize = 48;

pub const EOT_VERSION: u16 = 1;
pub const DIR_LIST_VERSION: u16 = 1;
pub const HEADER_VERSION: u16 = 1;
pub const DIRECTORY_INFO_VERSION: u32 = 1;
pub const STRIP_INFO_VERSION: u32 = 1;
pub const IMPLEMENTATION_ID: u16 = 1;

/// File type codes. `FirmLink` is decoded for compatibility but never
/// produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum FileType {
    File = 1,
    Directory = 2,
    SoftLink = 3,
    Fragmented = 4,
    FirmLink = 5,
    Addname = 6,
}

impl FileType {
    pub fn from_code(code: u16) -> Result<FileType> {
        Ok(match code {
            1 => FileType::File,
            2 => FileType::Directory,
            3 => FileType::SoftLink,
            4 => FileType::Fragmented,
            5 => FileType::FirmLink,
            6 => FileType::Addname,
            other => return Err(Error::UnknownFileType(other)),
        })
    }

    pub fn code(self) -> u16 {
        self as u16
    }

    /// Types whose content is reachable through a file header.
    pub fn has_content(self) -> bool {
        matches!(self, FileType::File | FileType::Fragmented)
    }
}

impl std::fmt::Display for FileType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            FileType::File => "file",
            FileType::Directory => "directory",
            FileType::SoftLink => "soft-link",
            FileType::Fragmented => "fragmented",
            FileType::FirmLink => "firm-link",
            FileType::Addname => "addname",
        };
        f.write_str(name)
    }
}

/// A directory entry name: 1 to 48 bytes, none of which may be NUL or the
/// reserved down and up delimiters.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileName(Vec<u8>);

impl FileName {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Result<FileName> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(Error::InvalidName("empty name".into()));
        }
        if bytes.len() > MAX_NAME_LEN {
            return Err(Error::InvalidName(format!(
                "{} bytes, limit is {MAX_NAME_LEN}",
                bytes.len()
            )));
        }
        if let Some(&bad) = bytes
            .iter()
            .find(|&&b| b == 0 || b == DOWN_DELIMITER || b == UP_DELIMITER)
        {
            return Err(Error::InvalidName(format!("reserved byte {bad:#04x}")));
        }
        Ok(FileName(bytes))
    }

    /// The root directory has no name; only the root ever uses this.
    pub(crate) fn root() -> FileName {
        FileName(Vec::new())
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_string_lossy(&self) -> String {
        String::from_utf8_lossy(&self.0).into_owned()
    }
}

impl std::str::FromStr for FileName {
    type Err = Error;
    fn from_str(s: &str) -> Result<FileName> {
        FileName::new(s.as_bytes().to_vec())
    }
}

impl std::fmt::Display for FileName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_string_lossy())
    }
}

impl std::fmt::Debug for FileName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}", self.to_string_lossy())
    }
}
