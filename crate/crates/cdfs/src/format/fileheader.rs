//! File headers: per-file out-of-band records preceding file data.
//!
//! A header carries a fixed base section plus up to five optional sections
//! located by byte offsets from the start of the record; an offset of zero
//! means the section is absent. When the file is a soft link, the file_info
//! slot holds a soft_link_info section instead.

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::time::Timestamp;
use crate::format::wire::{put_addr, put_padded, put_u16, put_u32, put_u64, unpad, Reader};
use crate::format::{checksum, FileType, FILEHEADER_MAGIC, HEADER_VERSION};

/// Fixed base section length; `header_length` on the wire.
pub const FILEHEADER_BASE_LEN: usize = 40;

const CHECKSUM_OFFSET: usize = 12;
const KIND: &str = "fileheader";
const OWNER_LEN: usize = 32;
const GROUP_LEN: usize = 32;
const OPSYS_LEN: usize = 16;

const SECTION_VERSION: u16 = 1;
const ACCESS_INFO_LEN: usize = 70;
const BACKUP_INFO_FIXED_LEN: usize = 28;
const FILE_INFO_LEN: usize = 36;
const SOFT_LINK_FIXED_LEN: usize = 20;
const SITE_INFO_FIXED_LEN: usize = 36;
const PROPERTY_LIST_INFO_LEN: usize = 8;

/// UNIX-style ownership and permission bits; stored verbatim, never
/// enforced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessInfo {
    pub file_owner: String,
    pub file_group: String,
    pub file_access: u16,
}

/// Where the file lived when the header was written, and the version chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackupInfo {
    pub containing_directory_number: u32,
    /// Null for version 1.
    pub previous_version_location: MediaAddress,
    pub previous_eot_location: MediaAddress,
    /// Byte offset of the final name within `backup_pathname`.
    pub filename_offset: u16,
    pub previous_version_header_size: u16,
    /// Absolute pathname using the down delimiter (0xFE); stale after a
    /// containing directory is renamed.
    pub backup_pathname: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileInfo {
    /// First content byte for contiguous files; the file map for
    /// fragmented files.
    pub file_location: MediaAddress,
    /// Valid data bytes, not the highest mapped address.
    pub file_length: u32,
    pub write_time: Timestamp,
    pub creation_time: Timestamp,
    pub file_version_number: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftLinkInfo {
    pub creation_time: Timestamp,
    pub target_dir: u32,
    /// 0 selects the newest version of the target.
    pub target_version: u32,
    /// Delimited with 0xFE (down) and 0xFD (up); the target may not exist.
    pub target_name: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteInfo {
    pub opsys: String,
    pub opsys_version: String,
    pub site_name: String,
}

/// Two-element ASCII records; a zero-length value denotes a flag property.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PropertyList {
    pub entries: Vec<(Vec<u8>, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub fileheader_location: MediaAddress,
    pub file_number: u32,
    pub file_type: FileType,
    pub access_info: Option<AccessInfo>,
    pub backup_info: Option<BackupInfo>,
    pub file_info: Option<FileInfo>,
    pub soft_link_info: Option<SoftLinkInfo>,
    pub site_info: Option<SiteInfo>,
    pub property_list: Option<PropertyList>,
}

impl FileHeader {
    pub fn new(location: MediaAddress, file_number: u32, file_type: FileType) -> FileHeader {
        FileHeader {
            fileheader_location: location,
            file_number,
            file_type,
            access_info: None,
            backup_info: None,
            file_info: None,
            soft_link_info: None,
            site_info: None,
            property_list: None,
        }
    }

    pub fn serialized_len(&self) -> usize {
        let mut len = FILEHEADER_BASE_LEN;
        if self.access_info.is_some() {
            len += ACCESS_INFO_LEN;
        }
        if let Some(b) = &self.backup_info {
            len += BACKUP_INFO_FIXED_LEN + b.backup_pathname.len();
        }
        if self.file_info.is_some() {
            len += FILE_INFO_LEN;
        }
        if let Some(s) = &self.soft_link_info {
            len += SOFT_LINK_FIXED_LEN + s.target_name.len();
        }
        if let Some(s) = &self.site_info {
            len += SITE_INFO_FIXED_LEN + s.site_name.len();
        }
        if let Some(p) = &self.property_list {
            len += PROPERTY_LIST_INFO_LEN
                + p.entries
                    .iter()
                    .map(|(n, v)| 4 + n.len() + v.len())
                    .sum::<usize>();
        }
        len
    }
}

fn check_fixed_str(s: &str, width: usize, what: &str) -> Result<()> {
    if s.len() > width {
        return Err(Error::InvalidField(format!("{what} longer than {width} bytes")));
    }
    if s.as_bytes().contains(&0) {
        return Err(Error::InvalidField(format!("{what} contains NUL")));
    }
    Ok(())
}

fn printable_ascii(bytes: &[u8]) -> bool {
    bytes.iter().all(|&b| (0x20..=0x7E).contains(&b))
}

pub fn encode_fileheader(h: &FileHeader) -> Result<Vec<u8>> {
    let is_link = h.file_type == FileType::SoftLink;
    if is_link && (h.soft_link_info.is_none() || h.file_info.is_some()) {
        return Err(Error::TypeSectionMismatch {
            file_type: h.file_type.code(),
        });
    }
    if !is_link && h.soft_link_info.is_some() {
        return Err(Error::TypeSectionMismatch {
            file_type: h.file_type.code(),
        });
    }
    if h.file_type == FileType::FirmLink {
        return Err(Error::InvalidField("firm links are never written".into()));
    }

    let total = h.serialized_len();
    let total_u16 =
        u16::try_from(total).map_err(|_| Error::InvalidField("header over 64 KiB".into()))?;

    let mut access_off = 0u16;
    let mut backup_off = 0u16;
    let mut info_off = 0u16;
    let mut site_off = 0u16;
    let mut prop_off = 0u16;
    let mut at = FILEHEADER_BASE_LEN;
    if h.access_info.is_some() {
        access_off = at as u16;
        at += ACCESS_INFO_LEN;
    }
    if let Some(b) = &h.backup_info {
        backup_off = at as u16;
        at += BACKUP_INFO_FIXED_LEN + b.backup_pathname.len();
    }
    if h.file_info.is_some() {
        info_off = at as u16;
        at += FILE_INFO_LEN;
    }
    if let Some(s) = &h.soft_link_info {
        info_off = at as u16;
        at += SOFT_LINK_FIXED_LEN + s.target_name.len();
    }
    if let Some(s) = &h.site_info {
        site_off = at as u16;
        at += SITE_INFO_FIXED_LEN + s.site_name.len();
    }
    if h.property_list.is_some() {
        prop_off = at as u16;
    }

    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(&FILEHEADER_MAGIC);
    put_u16(&mut buf, HEADER_VERSION);
    put_u16(&mut buf, FILEHEADER_BASE_LEN as u16);
    put_u16(&mut buf, 0); // checksum
    put_u16(&mut buf, total_u16);
    put_addr(&mut buf, h.fileheader_location);
    put_u32(&mut buf, h.file_number);
    put_u16(&mut buf, h.file_type.code());
    put_u16(&mut buf, access_off);
    put_u16(&mut buf, backup_off);
    put_u16(&mut buf, info_off);
    put_u16(&mut buf, site_off);
    put_u16(&mut buf, prop_off);
    debug_assert_eq!(buf.len(), FILEHEADER_BASE_LEN);

    if let Some(a) = &h.access_info {
        check_fixed_str(&a.file_owner, OWNER_LEN, "file owner")?;
        check_fixed_str(&a.file_group, GROUP_LEN, "file group")?;
        put_u16(&mut buf, SECTION_VERSION);
        put_u16(&mut buf, ACCESS_INFO_LEN as u16);
        put_padded(&mut buf, a.file_owner.as_bytes(), OWNER_LEN);
        put_padded(&mut buf, a.file_group.as_bytes(), GROUP_LEN);
        put_u16(&mut buf, a.file_access);
    }
    if let Some(b) = &h.backup_info {
        let len = BACKUP_INFO_FIXED_LEN + b.backup_pathname.len();
        put_u16(&mut buf, SECTION_VERSION);
        put_u16(
            &mut buf,
            u16::try_from(len).map_err(|_| Error::InvalidField("backup pathname too long".into()))?,
        );
        put_u32(&mut buf, b.containing_directory_number);
        put_addr(&mut buf, b.previous_version_location);
        put_addr(&mut buf, b.previous_eot_location);
        put_u16(&mut buf, b.filename_offset);
        put_u16(&mut buf, b.previous_version_header_size);
        buf.extend_from_slice(&b.backup_pathname);
    }
    if let Some(i) = &h.file_info {
        put_u16(&mut buf, SECTION_VERSION);
        put_u16(&mut buf, FILE_INFO_LEN as u16);
        put_addr(&mut buf, i.file_location);
        put_u32(&mut buf, i.file_length);
        put_u64(&mut buf, i.write_time.0);
        put_u64(&mut buf, i.creation_time.0);
        put_u32(&mut buf, i.file_version_number);
    }
    if let Some(s) = &h.soft_link_info {
        let len = SOFT_LINK_FIXED_LEN + s.target_name.len();
        put_u16(&mut buf, SECTION_VERSION);
        put_u16(
            &mut buf,
            u16::try_from(len).map_err(|_| Error::InvalidField("link target too long".into()))?,
        );
        put_u64(&mut buf, s.creation_time.0);
        put_u32(&mut buf, s.target_dir);
        put_u32(&mut buf, s.target_version);
        buf.extend_from_slice(&s.target_name);
    }
    if let Some(s) = &h.site_info {
        check_fixed_str(&s.opsys, OPSYS_LEN, "opsys")?;
        check_fixed_str(&s.opsys_version, OPSYS_LEN, "opsys version")?;
        if s.site_name.as_bytes().contains(&0) {
            return Err(Error::InvalidField("site name contains NUL".into()));
        }
        let len = SITE_INFO_FIXED_LEN + s.site_name.len();
        put_u16(&mut buf, SECTION_VERSION);
        put_u16(
            &mut buf,
            u16::try_from(len).map_err(|_| Error::InvalidField("site name too long".into()))?,
        );
        put_padded(&mut buf, s.opsys.as_bytes(), OPSYS_LEN);
        put_padded(&mut buf, s.opsys_version.as_bytes(), OPSYS_LEN);
        buf.extend_from_slice(s.site_name.as_bytes());
    }
    if let Some(p) = &h.property_list {
        let body: usize = p.entries.iter().map(|(n, v)| 4 + n.len() + v.len()).sum();
        let len = PROPERTY_LIST_INFO_LEN + body;
        put_u32(&mut buf, SECTION_VERSION as u32);
        put_u16(
            &mut buf,
            u16::try_from(len).map_err(|_| Error::InvalidField("property list too long".into()))?,
        );
        put_u16(
            &mut buf,
            u16::try_from(p.entries.len())
                .map_err(|_| Error::InvalidField("too many properties".into()))?,
        );
        for (name, value) in &p.entries {
            if !printable_ascii(name) || !printable_ascii(value) || name.is_empty() {
                return Err(Error::NonAsciiProperty);
            }
            put_u16(&mut buf, name.len() as u16);
            put_u16(&mut buf, value.len() as u16);
            buf.extend_from_slice(name);
            buf.extend_from_slice(value);
        }
    }

    debug_assert_eq!(buf.len(), total);
    checksum::seal(&mut buf, CHECKSUM_OFFSET)?;
    Ok(buf)
}

pub fn decode_fileheader(bytes: &[u8], actual_location: MediaAddress) -> Result<FileHeader> {
    let mut r = Reader::new(bytes, KIND);
    if r.bytes(8)? != FILEHEADER_MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    let version = r.u16()?;
    if version != HEADER_VERSION {
        return Err(Error::UnsupportedVersion { kind: KIND, version });
    }
    let base_len = r.u16()? as usize;
    if base_len < FILEHEADER_BASE_LEN {
        return Err(Error::Truncated { kind: KIND });
    }
    let _checksum = r.u16()?;
    let total = r.u16()? as usize;
    if total < base_len || total > bytes.len() {
        return Err(Error::Truncated { kind: KIND });
    }
    if checksum::word_sum(&bytes[..total]) != 0 {
        return Err(Error::BadChecksum { kind: KIND });
    }
    let fileheader_location = r.addr()?;
    if fileheader_location != actual_location {
        return Err(Error::SelfRefMismatch {
            kind: KIND,
            stored: fileheader_location.raw(),
            actual: actual_location.raw(),
        });
    }
    let file_number = r.u32()?;
    let file_type = FileType::from_code(r.u16()?)?;
    let offsets = [r.u16()?, r.u16()?, r.u16()?, r.u16()?, r.u16()?];

    // Present offsets must be strictly increasing and inside the record.
    let mut prev = base_len;
    for &off in offsets.iter().filter(|&&o| o != 0) {
        let off = off as usize;
        if off < prev || off >= total {
            return Err(Error::SectionOverlap);
        }
        prev = off + 1;
    }

    let section = |off: u16| -> Result<Option<Reader<'_>>> {
        if off == 0 {
            return Ok(None);
        }
        let mut sr = Reader::new(&bytes[..total], KIND);
        sr.seek(off as usize)?;
        Ok(Some(sr))
    };

    let access_info = match section(offsets[0])? {
        None => None,
        Some(mut sr) => {
            let v = sr.u16()?;
            if v != SECTION_VERSION {
                return Err(Error::UnsupportedVersion { kind: KIND, version: v });
            }
            let len = sr.u16()? as usize;
            if len != ACCESS_INFO_LEN {
                return Err(Error::Truncated { kind: KIND });
            }
            let owner = unpad(sr.bytes(OWNER_LEN)?, KIND)?;
            let group = unpad(sr.bytes(GROUP_LEN)?, KIND)?;
            let file_access = sr.u16()?;
            Some(AccessInfo {
                file_owner: String::from_utf8(owner)
                    .map_err(|_| Error::InvalidField("owner not UTF-8".into()))?,
                file_group: String::from_utf8(group)
                    .map_err(|_| Error::InvalidField("group not UTF-8".into()))?,
                file_access,
            })
        }
    };

    let backup_info = match section(offsets[1])? {
        None => None,
        Some(mut sr) => {
            let v = sr.u16()?;
            if v != SECTION_VERSION {
                return Err(Error::UnsupportedVersion { kind: KIND, version: v });
            }
            let len = sr.u16()? as usize;
            if len < BACKUP_INFO_FIXED_LEN {
                return Err(Error::Truncated { kind: KIND });
            }
            let containing_directory_number = sr.u32()?;
            let previous_version_location = sr.addr()?;
            let previous_eot_location = sr.addr()?;
            let filename_offset = sr.u16()?;
            let previous_version_header_size = sr.u16()?;
            let backup_pathname = sr.bytes(len - BACKUP_INFO_FIXED_LEN)?.to_vec();
            Some(BackupInfo {
                containing_directory_number,
                previous_version_location,
                previous_eot_location,
                filename_offset,
                previous_version_header_size,
                backup_pathname,
            })
        }
    };

    let mut file_info = None;
    let mut soft_link_info = None;
    if let Some(mut sr) = section(offsets[2])? {
        let v = sr.u16()?;
        if v != SECTION_VERSION {
            return Err(Error::UnsupportedVersion { kind: KIND, version: v });
        }
        if file_type == FileType::SoftLink {
            let len = sr.u16()? as usize;
            if len < SOFT_LINK_FIXED_LEN {
                return Err(Error::Truncated { kind: KIND });
            }
            soft_link_info = Some(SoftLinkInfo {
                creation_time: Timestamp(sr.u64()?),
                target_dir: sr.u32()?,
                target_version: sr.u32()?,
                target_name: sr.bytes(len - SOFT_LINK_FIXED_LEN)?.to_vec(),
            });
        } else {
            let len = sr.u16()? as usize;
            if len != FILE_INFO_LEN {
                return Err(Error::Truncated { kind: KIND });
            }
            file_info = Some(FileInfo {
                file_location: sr.addr()?,
                file_length: sr.u32()?,
                write_time: Timestamp(sr.u64()?),
                creation_time: Timestamp(sr.u64()?),
                file_version_number: sr.u32()?,
            });
        }
    } else if file_type == FileType::SoftLink {
        return Err(Error::TypeSectionMismatch {
            file_type: file_type.code(),
        });
    }

    let site_info = match section(offsets[3])? {
        None => None,
        Some(mut sr) => {
            let v = sr.u16()?;
            if v != SECTION_VERSION {
                return Err(Error::UnsupportedVersion { kind: KIND, version: v });
            }
            let len = sr.u16()? as usize;
            if len < SITE_INFO_FIXED_LEN {
                return Err(Error::Truncated { kind: KIND });
            }
            let opsys = unpad(sr.bytes(OPSYS_LEN)?, KIND)?;
            let opsys_version = unpad(sr.bytes(OPSYS_LEN)?, KIND)?;
            let site = sr.bytes(len - SITE_INFO_FIXED_LEN)?.to_vec();
            Some(SiteInfo {
                opsys: String::from_utf8(opsys)
                    .map_err(|_| Error::InvalidField("opsys not UTF-8".into()))?,
                opsys_version: String::from_utf8(opsys_version)
                    .map_err(|_| Error::InvalidField("opsys version not UTF-8".into()))?,
                site_name: String::from_utf8(site)
                    .map_err(|_| Error::InvalidField("site name not UTF-8".into()))?,
            })
        }
    };

    let property_list = match section(offsets[4])? {
        None => None,
        Some(mut sr) => {
            let v = sr.u32()?;
            if v != SECTION_VERSION as u32 {
                return Err(Error::UnsupportedVersion {
                    kind: KIND,
                    version: v as u16,
                });
            }
            let _len = sr.u16()?;
            let count = sr.u16()?;
            let mut entries = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let name_len = sr.u16()? as usize;
                let value_len = sr.u16()? as usize;
                let name = sr.bytes(name_len)?.to_vec();
                let value = sr.bytes(value_len)?.to_vec();
                if !printable_ascii(&name) || !printable_ascii(&value) || name.is_empty() {
                    return Err(Error::NonAsciiProperty);
                }
                entries.push((name, value));
            }
            Some(PropertyList { entries })
        }
    };

    Ok(FileHeader {
        fileheader_location,
        file_number,
        file_type,
        access_info,
        backup_info,
        file_info,
        soft_link_info,
        site_info,
        property_list,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_info() -> FileInfo {
        FileInfo {
            file_location: MediaAddress::from_raw(0x20000),
            file_length: 3000,
            write_time: Timestamp(5000),
            creation_time: Timestamp(4000),
            file_version_number: 1,
        }
    }

    fn header_at(ordinal: u64) -> MediaAddress {
        crate::device::AddressScheme::audio()
            .address_of(ordinal, 0)
            .unwrap()
    }

    #[test]
    fn file_info_only_header_round_trips_with_zero_offsets() {
        let mut h = FileHeader::new(header_at(1), 2, FileType::File);
        h.file_info = Some(file_info());
        let bytes = encode_fileheader(&h).unwrap();
        assert_eq!(bytes.len(), 40 + 36);
        // access, backup offsets zero; file_info at 40; site, property zero.
        assert_eq!(u16::from_le_bytes(bytes[30..32].try_into().unwrap()), 0);
        assert_eq!(u16::from_le_bytes(bytes[32..34].try_into().unwrap()), 0);
        assert_eq!(u16::from_le_bytes(bytes[34..36].try_into().unwrap()), 40);
        assert_eq!(u16::from_le_bytes(bytes[36..38].try_into().unwrap()), 0);
        assert_eq!(u16::from_le_bytes(bytes[38..40].try_into().unwrap()), 0);
        let back = decode_fileheader(&bytes, header_at(1)).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn soft_link_header_swaps_file_info_for_link_info() {
        let mut h = FileHeader::new(header_at(2), 9, FileType::SoftLink);
        h.soft_link_info = Some(SoftLinkInfo {
            creation_time: Timestamp(77),
            target_dir: 1,
            target_version: 0,
            target_name: b"src\xFElib\xFEx.c".to_vec(),
        });
        let bytes = encode_fileheader(&h).unwrap();
        let back = decode_fileheader(&bytes, header_at(2)).unwrap();
        assert!(back.file_info.is_none());
        assert_eq!(back.soft_link_info, h.soft_link_info);
    }

    #[test]
    fn link_type_without_link_info_is_rejected() {
        let mut h = FileHeader::new(header_at(2), 9, FileType::SoftLink);
        h.file_info = Some(file_info());
        assert!(matches!(
            encode_fileheader(&h),
            Err(Error::TypeSectionMismatch { .. })
        ));
    }

    #[test]
    fn property_list_with_flag_property() {
        let mut h = FileHeader::new(header_at(3), 4, FileType::File);
        h.file_info = Some(file_info());
        h.property_list = Some(PropertyList {
            entries: vec![
                (b"RECLEN".to_vec(), b"80".to_vec()),
                (b"BITSTREAM".to_vec(), Vec::new()),
            ],
        });
        let bytes = encode_fileheader(&h).unwrap();
        let back = decode_fileheader(&bytes, header_at(3)).unwrap();
        let props = back.property_list.unwrap();
        assert_eq!(props.entries.len(), 2);
        assert_eq!(props.entries[1].0, b"BITSTREAM");
        assert!(props.entries[1].1.is_empty());
    }

    #[test]
    fn non_ascii_property_rejected() {
        let mut h = FileHeader::new(header_at(3), 4, FileType::File);
        h.file_info = Some(file_info());
        h.property_list = Some(PropertyList {
            entries: vec![(b"BIN".to_vec(), vec![0x01, 0x02])],
        });
        assert!(matches!(encode_fileheader(&h), Err(Error::NonAsciiProperty)));
    }

    #[test]
    fn all_sections_round_trip() {
        let mut h = FileHeader::new(header_at(4), 11, FileType::Fragmented);
        h.access_info = Some(AccessInfo {
            file_owner: "simsong".into(),
            file_group: "media".into(),
            file_access: 0o644,
        });
        h.backup_info = Some(BackupInfo {
            containing_directory_number: 1,
            previous_version_location: MediaAddress::NULL,
            previous_eot_location: MediaAddress::ZERO,
            filename_offset: 1,
            previous_version_header_size: 0,
            backup_pathname: b"\xFEbig.dat".to_vec(),
        });
        h.file_info = Some(file_info());
        h.site_info = Some(SiteInfo {
            opsys: "unix".into(),
            opsys_version: "4.2bsd".into(),
            site_name: "media-lab".into(),
        });
        h.property_list = Some(PropertyList {
            entries: vec![(b"RECLEN".to_vec(), b"512".to_vec())],
        });
        let bytes = encode_fileheader(&h).unwrap();
        assert_eq!(bytes.len(), h.serialized_len());
        let back = decode_fileheader(&bytes, header_at(4)).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn corrupting_any_validator_field_is_detected() {
        let mut h = FileHeader::new(header_at(1), 2, FileType::File);
        h.file_info = Some(file_info());
        let sealed = encode_fileheader(&h).unwrap();
        // Magic, checksum field, and self-reference bytes all detect flips.
        for at in (0..8).chain(12..14).chain(16..24) {
            for bit in 0..8 {
                let mut bytes = sealed.clone();
                bytes[at] ^= 1 << bit;
                assert!(
                    decode_fileheader(&bytes, header_at(1)).is_err(),
                    "byte {at} bit {bit} flip undetected"
                );
            }
        }
    }
}
