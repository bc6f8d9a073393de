//! File content streams, import and export against the native file system,
//! and fragmented-file updates.
//!
//! The file header physically precedes content and carries the length and
//! a checksum, and write-once media forbids backpatching, so written bytes
//! spool to native temporary storage until close, then header and content
//! are emitted together. At most one write stream may be open per volume.
//!
//! A fragmented file maps logical bytes to media strips. Patching writes a
//! new strip (padded to a minimum size by copying surrounding valid bytes
//! when available), a new map splitting the covered fragments, and a new
//! header; the old content is never rewritten.

use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::{
    AccessInfo, BackupInfo, DirEntry, FileHeader, FileInfo, FileMap, FileName, FileType,
    FragmentDescriptor, PropertyList, SiteInfo, Timestamp,
};
use crate::namespace::ResolvedEntry;
use crate::volume::Volume;

/// Written strips are padded up to this size when surrounding valid bytes
/// allow; readers accept strips down to one byte regardless.
pub const MIN_STRIP_SIZE: u32 = 4096;

/// Spool directory override for write streams.
pub const SPOOL_DIR_ENV: &str = "CDFS_SPOOL_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Whence {
    Start,
    Current,
    End,
}

enum ReadSource {
    Contiguous { start: MediaAddress },
    Fragmented { descriptors: Vec<FragmentDescriptor> },
}

/// A positioned reader over one version of a file's content.
pub struct ReadStream {
    source: ReadSource,
    pos: u64,
    end: u64,
}

impl ReadStream {
    pub fn position(&self) -> u64 {
        self.pos
    }

    /// Logical length: for fragmented files the highest mapped byte, which
    /// may exceed the count of valid bytes when there are holes.
    pub fn len(&self) -> u64 {
        self.end
    }

    pub fn is_empty(&self) -> bool {
        self.end == 0
    }

    /// Read up to `n` bytes from the current position. Reading an unmapped
    /// byte of a fragmented file is an error naming the first hole offset.
    pub fn read(&mut self, volume: &Volume, n: usize) -> Result<Vec<u8>> {
        let want = (self.end - self.pos).min(n as u64) as usize;
        let out = match &self.source {
            ReadSource::Contiguous { start } => {
                let addr = volume.scheme().add_bytes(*start, self.pos)?;
                volume.read_span(addr, want)?
            }
            ReadSource::Fragmented { descriptors } => {
                read_from_map(volume, descriptors, self.pos, want)?
            }
        };
        self.pos += out.len() as u64;
        Ok(out)
    }

    pub fn seek(&mut self, offset: i64, whence: Whence) -> Result<u64> {
        let base = match whence {
            Whence::Start => 0i128,
            Whence::Current => self.pos as i128,
            Whence::End => self.end as i128,
        };
        let target = base + offset as i128;
        if target < 0 || target > self.end as i128 {
            return Err(Error::SeekOutOfRange {
                pos: target as i64,
                end: self.end,
            });
        }
        self.pos = target as u64;
        Ok(self.pos)
    }

    pub fn close(self) {}
}

/// Metadata carried over from a native file on import.
#[derive(Debug, Clone, Default)]
pub struct PreservedMeta {
    pub write_time: Option<Timestamp>,
    pub access: Option<AccessInfo>,
}

/// An open write stream spooling to native temporary storage.
pub struct WriteStream {
    dirnum: u32,
    name: FileName,
    spool: std::fs::File,
    bytes_written: u64,
    align_content: bool,
    preserved: PreservedMeta,
}

impl WriteStream {
    pub fn write(&mut self, bytes: &[u8]) -> Result<()> {
        self.spool.write_all(bytes)?;
        self.bytes_written += bytes.len() as u64;
        Ok(())
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn set_align_content(&mut self, align: bool) {
        self.align_content = align;
    }

    pub fn set_preserved(&mut self, preserved: PreservedMeta) {
        self.preserved = preserved;
    }

    /// Abandon the stream; nothing reaches the media.
    pub fn abort(self, volume: &mut Volume) {
        volume.write_stream_open = false;
    }

    /// Emit the file header followed by the spooled content, creating the
    /// entry or superseding it as the next version. On error the spool is
    /// discarded and the volume keeps its previous state.
    pub fn close(mut self, volume: &mut Volume) -> Result<()> {
        volume.write_stream_open = false;
        if self.bytes_written > u64::from(u32::MAX) {
            return Err(Error::FileTooLarge(self.bytes_written));
        }
        self.spool.seek(SeekFrom::Start(0))?;
        let mut content = Vec::with_capacity(self.bytes_written as usize);
        self.spool.read_to_end(&mut content)?;

        let now = volume.clock_now();
        let existing = volume.exact_entry(self.dirnum, &self.name).ok();
        let existing = match existing {
            Some(e) if e.file_type == FileType::Addname => {
                Some(volume.primary_of(self.dirnum, e.file_number)?)
            }
            other => other,
        };
        let (file_number, version, prev_loc, prev_size, creation_time) = match &existing {
            Some(e) if e.file_type == FileType::Directory => {
                return Err(Error::IsADirectory(self.name.to_string_lossy()))
            }
            Some(e) if e.file_type.has_content() => {
                let old = volume.read_fileheader_at(e.header_location, e.header_size)?;
                let creation = old
                    .file_info
                    .as_ref()
                    .map(|i| i.creation_time)
                    .unwrap_or(now);
                (
                    e.file_number,
                    e.file_version + 1,
                    e.header_location,
                    e.header_size,
                    creation,
                )
            }
            Some(e) => {
                // Superseding a soft link name writes over the link entry.
                (e.file_number, e.file_version + 1, e.header_location, e.header_size, now)
            }
            None => (volume.alloc_file_number(), 1, MediaAddress::NULL, 0, now),
        };
        let write_time = self.preserved.write_time.unwrap_or(now);

        let emitted = emit_file(
            volume,
            EmitSpec {
                dirnum: self.dirnum,
                name: self.name.clone(),
                file_number,
                content: EmitContent::Contiguous(content),
                align_content: self.align_content,
                write_time,
                creation_time,
                version,
                previous_version_location: prev_loc,
                previous_version_header_size: prev_size,
                access_info: self.preserved.access.clone(),
                site_info: None,
                property_list: None,
            },
        )?;

        volume.touch_dir(self.dirnum, now)?;
        if existing.is_some() {
            volume.update_entry_for_emit(self.dirnum, &self.name, now, &emitted)?;
        } else {
            volume.insert_entry_for_emit(self.dirnum, &self.name, file_number, now, &emitted)?;
        }
        volume.note_file_written();
        Ok(())
    }
}

pub(crate) struct EmitSpec {
    pub dirnum: u32,
    pub name: FileName,
    pub file_number: u32,
    pub content: EmitContent,
    pub align_content: bool,
    pub write_time: Timestamp,
    pub creation_time: Timestamp,
    pub version: u32,
    pub previous_version_location: MediaAddress,
    pub previous_version_header_size: u16,
    pub access_info: Option<AccessInfo>,
    pub site_info: Option<SiteInfo>,
    pub property_list: Option<PropertyList>,
}

pub(crate) enum EmitContent {
    Contiguous(Vec<u8>),
    /// Maximal mapped runs of a fragmented file: (logical offset, bytes).
    Strips(Vec<(u64, Vec<u8>)>),
}

pub(crate) struct Emitted {
    pub header_location: MediaAddress,
    pub header_size: u16,
    pub file_size: u32,
    pub file_type: FileType,
}

/// Write one new file version to the media: header, then map for
/// fragmented content, then the bytes, in a single record group starting
/// on a fresh block (content alone starts on the next block boundary when
/// alignment is requested).
pub(crate) fn emit_file(volume: &mut Volume, spec: EmitSpec) -> Result<Emitted> {
    let (pathname, filename_offset) = volume.path_bytes(spec.dirnum, Some(&spec.name))?;
    let scheme = volume.scheme().clone();
    let bs = u64::from(scheme.block_size());
    let group_addr = scheme.address_of(volume.next_write_ordinal(), 0)?;

    let file_type = match &spec.content {
        EmitContent::Contiguous(_) => FileType::File,
        EmitContent::Strips(_) => FileType::Fragmented,
    };
    let mut header = FileHeader::new(group_addr, spec.file_number, file_type);
    header.access_info = spec.access_info.clone();
    header.site_info = spec.site_info.clone();
    header.property_list = spec.property_list.clone();
    header.backup_info = Some(BackupInfo {
        containing_directory_number: spec.dirnum,
        previous_version_location: spec.previous_version_location,
        previous_eot_location: volume.last_eot_address(),
        filename_offset,
        previous_version_header_size: spec.previous_version_header_size,
        backup_pathname: pathname,
    });
    header.file_info = Some(FileInfo {
        file_location: MediaAddress::ZERO,
        file_length: 0,
        write_time: spec.write_time,
        creation_time: spec.creation_time,
        file_version_number: spec.version,
    });
    let header_len = header.serialized_len() as u64;

    match spec.content {
        EmitContent::Contiguous(bytes) => {
            let file_length = u32::try_from(bytes.len())
                .map_err(|_| Error::FileTooLarge(bytes.len() as u64))?;
            if spec.align_content && !bytes.is_empty() {
                let header_blocks = header_len.div_ceil(bs);
                let content_blocks = (bytes.len() as u64).div_ceil(bs);
                let available = volume
                    .usable_blocks()
                    .saturating_sub(volume.next_write_ordinal());
                if header_blocks + content_blocks > available {
                    return Err(Error::MediaFull {
                        needed: header_blocks + content_blocks,
                        available,
                    });
                }
                let content_addr =
                    scheme.address_of(volume.next_write_ordinal() + header_blocks, 0)?;
                set_info(&mut header, content_addr, file_length);
                let header_bytes = crate::format::encode_fileheader(&header)?;
                volume.append_record(&header_bytes)?;
                volume.append_record(&bytes)?;
                Ok(Emitted {
                    header_location: group_addr,
                    header_size: header_bytes.len() as u16,
                    file_size: file_length,
                    file_type,
                })
            } else {
                let content_addr = scheme.add_bytes(group_addr, header_len)?;
                set_info(&mut header, content_addr, file_length);
                let header_bytes = crate::format::encode_fileheader(&header)?;
                volume.append_group(&[&header_bytes, &bytes])?;
                Ok(Emitted {
                    header_location: group_addr,
                    header_size: header_bytes.len() as u16,
                    file_size: file_length,
                    file_type,
                })
            }
        }
        EmitContent::Strips(runs) => {
            let mut descriptors = Vec::with_capacity(runs.len());
            let map_len = crate::format::STRIP_INFO_LEN
                + runs.len() * crate::format::FRAGMENT_DESCRIPTOR_SIZE;
            let mut at = header_len + map_len as u64;
            let mut valid_total = 0u64;
            for (ordinal, bytes) in &runs {
                let ordinal32 = u32::try_from(*ordinal)
                    .map_err(|_| Error::FileTooLarge(*ordinal))?;
                let len32 = u32::try_from(bytes.len())
                    .map_err(|_| Error::FileTooLarge(bytes.len() as u64))?;
                descriptors.push(FragmentDescriptor {
                    loc: scheme.add_bytes(group_addr, at)?,
                    valid_chars: len32,
                    ordinal: ordinal32,
                });
                at += bytes.len() as u64;
                valid_total += bytes.len() as u64;
            }
            let map = FileMap { descriptors };
            let map_bytes = crate::format::encode_filemap(&map)?;
            debug_assert_eq!(map_bytes.len(), map_len);
            let file_length =
                u32::try_from(valid_total).map_err(|_| Error::FileTooLarge(valid_total))?;
            set_info(&mut header, scheme.add_bytes(group_addr, header_len)?, file_length);
            let header_bytes = crate::format::encode_fileheader(&header)?;
            let mut parts: Vec<&[u8]> = vec![&header_bytes, &map_bytes];
            for (_, bytes) in &runs {
                parts.push(bytes);
            }
            volume.append_group(&parts)?;
            Ok(Emitted {
                header_location: group_addr,
                header_size: header_bytes.len() as u16,
                file_size: file_length,
                file_type,
            })
        }
    }
}

fn set_info(header: &mut FileHeader, location: MediaAddress, length: u32) {
    let info = header.file_info.as_mut().expect("file info present");
    info.file_location = location;
    info.file_length = length;
}

impl Volume {
    // ----- stream opening ----------------------------------------------------

    /// Open a file version for reading. Soft links resolve to their
    /// targets; a link's stored version selector applies when the caller
    /// asks for version 0.
    pub fn open_read(&mut self, dirnum: u32, name: &FileName, version: u32) -> Result<ReadStream> {
        self.ensure_catalog()?;
        let (target_dir, entry, link_version) = self.resolve_for_content(dirnum, name)?;
        let effective = if version != 0 { version } else { link_version };
        let (header, _) = self.locate_version(target_dir, &entry, effective)?;
        self.read_stream_for(&header)
    }

    pub(crate) fn read_stream_for(&self, header: &FileHeader) -> Result<ReadStream> {
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        match header.file_type {
            FileType::Fragmented => {
                let map = self.read_filemap_at(info.file_location)?;
                let end = map.logical_extent();
                Ok(ReadStream {
                    source: ReadSource::Fragmented {
                        descriptors: map.descriptors,
                    },
                    pos: 0,
                    end,
                })
            }
            _ => Ok(ReadStream {
                source: ReadSource::Contiguous {
                    start: info.file_location,
                },
                pos: 0,
                end: u64::from(info.file_length),
            }),
        }
    }

    /// Open a write stream creating `name` or superseding it as the next
    /// version on close. Only one write stream may be open at a time.
    pub fn open_write(&mut self, dirnum: u32, name: &FileName) -> Result<WriteStream> {
        self.ensure_catalog()?;
        if self.write_stream_open {
            return Err(Error::WriteStreamBusy);
        }
        self.node(dirnum)?;
        // Writing through a soft link supersedes the link's target.
        let (target_dir, target_name) = match self.exact_entry(dirnum, name) {
            Ok(e) if e.file_type == FileType::SoftLink => {
                let resolved = self.resolve_link(&ResolvedEntry {
                    containing_dir: dirnum,
                    file_number: e.file_number,
                    entry: e,
                    via_link_depth: 0,
                })?;
                (resolved.containing_dir, resolved.entry.file_name.clone())
            }
            Ok(e) if e.file_type == FileType::Directory => {
                return Err(Error::IsADirectory(name.to_string_lossy()))
            }
            _ => (dirnum, name.clone()),
        };
        let spool_dir = std::env::var_os(SPOOL_DIR_ENV)
            .map(std::path::PathBuf::from)
            .unwrap_or_else(std::env::temp_dir);
        let spool = tempfile::tempfile_in(spool_dir)?;
        self.write_stream_open = true;
        Ok(WriteStream {
            dirnum: target_dir,
            name: target_name,
            spool,
            bytes_written: 0,
            align_content: false,
            preserved: PreservedMeta::default(),
        })
    }

    /// Entry and version selector for content access, following links.
    fn resolve_for_content(
        &mut self,
        dirnum: u32,
        name: &FileName,
    ) -> Result<(u32, DirEntry, u32)> {
        let entry = self.resolve_in_dir(dirnum, name)?;
        match entry.file_type {
            FileType::SoftLink => {
                let mut depth = 0;
                let (resolved, version) = self.resolve_link_entry(dirnum, &entry, &mut depth)?;
                if resolved.entry.file_type == FileType::Directory {
                    return Err(Error::IsADirectory(name.to_string_lossy()));
                }
                Ok((resolved.containing_dir, resolved.entry, version))
            }
            FileType::Directory => Err(Error::IsADirectory(name.to_string_lossy())),
            _ => Ok((dirnum, entry, 0)),
        }
    }

    // ----- whole-content helpers ----------------------------------------------

    /// The fragment map of one version of a fragmented file.
    pub fn filemap_of(&mut self, dirnum: u32, name: &FileName, version: u32) -> Result<FileMap> {
        self.ensure_catalog()?;
        let (target_dir, entry, link_version) = self.resolve_for_content(dirnum, name)?;
        let effective = if version != 0 { version } else { link_version };
        let (header, _) = self.locate_version(target_dir, &entry, effective)?;
        if header.file_type != FileType::Fragmented {
            return Err(Error::InvalidField("file is not fragmented".into()));
        }
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        self.read_filemap_at(info.file_location)
    }

    /// All bytes of one version. Fragmented files with holes fail rather
    /// than inventing zeros.
    pub fn read_version_content(
        &mut self,
        dirnum: u32,
        name: &FileName,
        version: u32,
    ) -> Result<Vec<u8>> {
        self.ensure_catalog()?;
        let (target_dir, entry, link_version) = self.resolve_for_content(dirnum, name)?;
        let effective = if version != 0 { version } else { link_version };
        let (header, _) = self.locate_version(target_dir, &entry, effective)?;
        self.read_full_content(&header)
    }

    pub(crate) fn read_full_content(&self, header: &FileHeader) -> Result<Vec<u8>> {
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        match header.file_type {
            FileType::Fragmented => {
                let map = self.read_filemap_at(info.file_location)?;
                if let Some(hole) = first_hole(&map.descriptors) {
                    return Err(Error::Hole { offset: hole });
                }
                read_from_map(self, &map.descriptors, 0, map.logical_extent() as usize)
            }
            _ => self.read_span(info.file_location, info.file_length as usize),
        }
    }

    /// Maximal mapped runs of one version's content, holes preserved.
    pub(crate) fn content_runs(&self, header: &FileHeader) -> Result<Vec<(u64, Vec<u8>)>> {
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        match header.file_type {
            FileType::Fragmented => {
                let map = self.read_filemap_at(info.file_location)?;
                let mut runs: Vec<(u64, u64)> = Vec::new();
                for d in &map.descriptors {
                    let (start, end) = (u64::from(d.ordinal), d.logical_end());
                    match runs.last_mut() {
                        Some((_, re)) if start <= *re => *re = (*re).max(end),
                        _ => runs.push((start, end)),
                    }
                }
                runs.into_iter()
                    .map(|(start, end)| {
                        read_from_map(self, &map.descriptors, start, (end - start) as usize)
                            .map(|bytes| (start, bytes))
                    })
                    .collect()
            }
            _ => {
                let bytes = self.read_span(info.file_location, info.file_length as usize)?;
                Ok(vec![(0, bytes)])
            }
        }
    }

    // ----- import and export ----------------------------------------------------

    /// Copy a native file onto the volume; equivalent to open, write all,
    /// close. With `start_on_next_block` the content begins at offset 0 of
    /// a block; with `preserve` the native modify time and ownership are
    /// carried into the file info and access info.
    pub fn import_file(
        &mut self,
        native_path: &Path,
        dirnum: u32,
        name: &FileName,
        start_on_next_block: bool,
        preserve: bool,
    ) -> Result<()> {
        let mut source = std::fs::File::open(native_path)?;
        let mut stream = self.open_write(dirnum, name)?;
        stream.set_align_content(start_on_next_block);
        if preserve {
            stream.set_preserved(preserved_from_native(&source)?);
        }
        let mut buf = vec![0u8; 1 << 16];
        loop {
            let n = match source.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) => {
                    stream.abort(self);
                    return Err(e.into());
                }
            };
            if let Err(e) = stream.write(&buf[..n]) {
                stream.abort(self);
                return Err(e);
            }
        }
        stream.close(self)
    }

    /// Copy one version of a file out to the native file system. With
    /// `preserve` the stored times and permission bits are restored as far
    /// as the native system allows.
    pub fn export_file(
        &mut self,
        dirnum: u32,
        name: &FileName,
        version: u32,
        native_path: &Path,
        preserve: bool,
    ) -> Result<()> {
        self.ensure_catalog()?;
        let (target_dir, entry, link_version) = self.resolve_for_content(dirnum, name)?;
        let effective = if version != 0 { version } else { link_version };
        let (header, _) = self.locate_version(target_dir, &entry, effective)?;
        let content = self.read_full_content(&header)?;
        std::fs::write(native_path, &content)?;
        if preserve {
            let file = std::fs::OpenOptions::new().write(true).open(native_path)?;
            if let Some(info) = &header.file_info {
                file.set_modified(info.write_time.to_system_time())?;
            }
            if let Some(access) = &header.access_info {
                use std::os::unix::fs::PermissionsExt;
                let perms = std::fs::Permissions::from_mode(u32::from(access.file_access) & 0o777);
                std::fs::set_permissions(native_path, perms)?;
            }
        }
        Ok(())
    }

    // ----- fragmented files -------------------------------------------------------

    /// Rewrite a contiguous file as fragmented: a new header and a
    /// one-strip map addressing the existing content; no content bytes are
    /// rewritten.
    pub fn convert_to_fragmented(&mut self, dirnum: u32, name: &FileName) -> Result<()> {
        self.ensure_catalog()?;
        let (target_dir, entry, _) = self.resolve_for_content(dirnum, name)?;
        if entry.file_type == FileType::Fragmented {
            return Err(Error::AlreadyFragmented);
        }
        let old = self.read_fileheader_at(entry.header_location, entry.header_size)?;
        let info = old
            .file_info
            .clone()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        let descriptors = if info.file_length == 0 {
            Vec::new()
        } else {
            vec![FragmentDescriptor {
                loc: info.file_location,
                valid_chars: info.file_length,
                ordinal: 0,
            }]
        };
        let now = self.clock_now();
        self.touch_dir(target_dir, now)?;
        let emitted = self.emit_fragmented_header(
            target_dir,
            &entry,
            &old,
            FileMap { descriptors },
            &[],
            info.write_time,
            info.file_length,
        )?;
        self.update_entry_for_emit(target_dir, &entry.file_name.clone(), now, &emitted)?;
        self.note_file_written();
        Ok(())
    }

    /// Overwrite `bytes` at `offset` in a fragmented file (a contiguous
    /// file converts automatically). Writes one new strip, a new map, and
    /// a new header; old fragments covering the range are split around it.
    /// Patching at the logical end extends the file; patching past it
    /// leaves a hole, but a patch may not begin inside an existing hole.
    pub fn patch(&mut self, dirnum: u32, name: &FileName, offset: u64, bytes: &[u8]) -> Result<()> {
        if bytes.is_empty() {
            return Err(Error::EmptyPatch);
        }
        self.ensure_catalog()?;
        let (target_dir, entry, _) = self.resolve_for_content(dirnum, name)?;
        let old = self.read_fileheader_at(entry.header_location, entry.header_size)?;
        let info = old
            .file_info
            .clone()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        let base_map = match entry.file_type {
            FileType::Fragmented => self.read_filemap_at(info.file_location)?,
            _ if info.file_length == 0 => FileMap::default(),
            _ => FileMap {
                descriptors: vec![FragmentDescriptor {
                    loc: info.file_location,
                    valid_chars: info.file_length,
                    ordinal: 0,
                }],
            },
        };
        let end = base_map.logical_extent();
        let patch_start = offset;
        let patch_end = offset + bytes.len() as u64;

        // A patch overlapping an interior hole must cover it from its
        // start; starting inside one invents bytes before it.
        for (h0, h1) in holes_of(&base_map.descriptors) {
            let overlaps = patch_start < h1 && patch_end > h0;
            if overlaps && patch_start > h0 {
                return Err(Error::PatchIntoHole { hole_start: h0 });
            }
        }
        // Patching past the logical end creates a trailing hole, which is
        // legal for fragmented files.
        let _ = end;

        // Pad toward the minimum strip size over contiguously mapped bytes.
        let mapped = |pos: u64| find_covering(&base_map.descriptors, pos).is_some();
        let mut strip_start = patch_start;
        let mut strip_end = patch_end;
        while strip_end - strip_start < u64::from(MIN_STRIP_SIZE)
            && strip_start > 0
            && mapped(strip_start - 1)
        {
            strip_start -= 1;
        }
        while strip_end - strip_start < u64::from(MIN_STRIP_SIZE) && mapped(strip_end) {
            strip_end += 1;
        }

        let mut strip = Vec::with_capacity((strip_end - strip_start) as usize);
        if strip_start < patch_start {
            strip.extend(read_from_map(
                self,
                &base_map.descriptors,
                strip_start,
                (patch_start - strip_start) as usize,
            )?);
        }
        strip.extend_from_slice(bytes);
        if strip_end > patch_end {
            strip.extend(read_from_map(
                self,
                &base_map.descriptors,
                patch_end,
                (strip_end - patch_end) as usize,
            )?);
        }

        // Split old coverage around the new strip.
        let mut descriptors: Vec<FragmentDescriptor> = Vec::new();
        for d in &base_map.descriptors {
            let (ds, de) = (u64::from(d.ordinal), d.logical_end());
            if de <= strip_start || ds >= strip_end {
                descriptors.push(*d);
                continue;
            }
            if ds < strip_start {
                descriptors.push(FragmentDescriptor {
                    loc: d.loc,
                    valid_chars: (strip_start - ds) as u32,
                    ordinal: d.ordinal,
                });
            }
            if de > strip_end {
                descriptors.push(FragmentDescriptor {
                    loc: self.scheme().add_bytes(d.loc, strip_end - ds)?,
                    valid_chars: (de - strip_end) as u32,
                    ordinal: u32::try_from(strip_end).map_err(|_| Error::FileTooLarge(strip_end))?,
                });
            }
        }
        let now = self.clock_now();
        self.touch_dir(target_dir, now)?;
        let strip_ordinal =
            u32::try_from(strip_start).map_err(|_| Error::FileTooLarge(strip_start))?;
        let emitted = self.emit_fragmented_header_with_strip(
            target_dir,
            &entry,
            &old,
            descriptors,
            FragmentDescriptor {
                loc: MediaAddress::NULL, // placed by the emitter
                valid_chars: strip.len() as u32,
                ordinal: strip_ordinal,
            },
            &strip,
            now,
        )?;
        self.update_entry_for_emit(target_dir, &entry.file_name.clone(), now, &emitted)?;
        self.note_file_written();
        Ok(())
    }

    /// Emit a fragmented header and map in one record group; `extra` bytes
    /// (a new strip) follow the map contiguously.
    #[allow(clippy::too_many_arguments)]
    fn emit_fragmented_header(
        &mut self,
        dirnum: u32,
        entry: &DirEntry,
        old: &FileHeader,
        map: FileMap,
        extra: &[u8],
        write_time: Timestamp,
        file_length: u32,
    ) -> Result<Emitted> {
        let (pathname, filename_offset) = self.path_bytes(dirnum, Some(&entry.file_name))?;
        let scheme = self.scheme().clone();
        let group_addr = scheme.address_of(self.next_write_ordinal(), 0)?;
        let creation = old
            .file_info
            .as_ref()
            .map(|i| i.creation_time)
            .unwrap_or(write_time);
        let mut header = FileHeader::new(group_addr, entry.file_number, FileType::Fragmented);
        header.access_info = old.access_info.clone();
        header.site_info = old.site_info.clone();
        header.property_list = old.property_list.clone();
        header.backup_info = Some(BackupInfo {
            containing_directory_number: dirnum,
            previous_version_location: entry.header_location,
            previous_eot_location: self.last_eot_address(),
            filename_offset,
            previous_version_header_size: entry.header_size,
            backup_pathname: pathname,
        });
        header.file_info = Some(FileInfo {
            file_location: MediaAddress::ZERO,
            file_length,
            write_time,
            creation_time: creation,
            file_version_number: entry.file_version + 1,
        });
        let header_len = header.serialized_len() as u64;
        let map_addr = scheme.add_bytes(group_addr, header_len)?;
        set_info(&mut header, map_addr, file_length);
        let map_bytes = crate::format::encode_filemap(&map)?;
        let header_bytes = crate::format::encode_fileheader(&header)?;
        self.append_group(&[&header_bytes, &map_bytes, extra])?;
        Ok(Emitted {
            header_location: group_addr,
            header_size: header_bytes.len() as u16,
            file_size: file_length,
            file_type: FileType::Fragmented,
        })
    }

    /// Like `emit_fragmented_header`, but with one strip whose media
    /// location is inside the group, right after the map.
    #[allow(clippy::too_many_arguments)]
    fn emit_fragmented_header_with_strip(
        &mut self,
        dirnum: u32,
        entry: &DirEntry,
        old: &FileHeader,
        mut descriptors: Vec<FragmentDescriptor>,
        new_strip: FragmentDescriptor,
        strip_bytes: &[u8],
        write_time: Timestamp,
    ) -> Result<Emitted> {
        let scheme = self.scheme().clone();
        let group_addr = scheme.address_of(self.next_write_ordinal(), 0)?;
        // Header length is independent of addresses, so size a probe map
        // first to learn where the strip will land.
        descriptors.push(new_strip);
        descriptors.sort_by_key(|d| d.ordinal);
        let map = FileMap { descriptors };
        let file_length = u32::try_from(map.valid_byte_count())
            .map_err(|_| Error::FileTooLarge(map.valid_byte_count()))?;
        let header_len = {
            let mut probe = FileHeader::new(group_addr, entry.file_number, FileType::Fragmented);
            probe.access_info = old.access_info.clone();
            probe.site_info = old.site_info.clone();
            probe.property_list = old.property_list.clone();
            let (pathname, _) = self.path_bytes(dirnum, Some(&entry.file_name))?;
            probe.backup_info = Some(BackupInfo {
                containing_directory_number: dirnum,
                previous_version_location: entry.header_location,
                previous_eot_location: self.last_eot_address(),
                filename_offset: 0,
                previous_version_header_size: entry.header_size,
                backup_pathname: pathname,
            });
            probe.file_info = Some(FileInfo {
                file_location: MediaAddress::ZERO,
                file_length: 0,
                write_time,
                creation_time: write_time,
                file_version_number: 0,
            });
            probe.serialized_len() as u64
        };
        let strip_at = header_len + map.serialized_len() as u64;
        let strip_loc = scheme.add_bytes(group_addr, strip_at)?;
        let mut map = map;
        for d in map.descriptors.iter_mut() {
            if d.loc.is_null() {
                d.loc = strip_loc;
            }
        }
        self.emit_fragmented_header(
            dirnum,
            entry,
            old,
            map,
            strip_bytes,
            write_time,
            file_length,
        )
    }

    // ----- entry bookkeeping shared with compact ---------------------------------

    pub(crate) fn update_entry_for_emit(
        &mut self,
        dirnum: u32,
        name: &FileName,
        now: Timestamp,
        emitted: &Emitted,
    ) -> Result<()> {
        self.load_dir(dirnum)?;
        let node = self.node_mut(dirnum)?;
        let entries = &mut node.loaded.as_mut().unwrap().entries;
        match entries.binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes())) {
            Ok(pos) => {
                let e = &mut entries[pos];
                e.header_location = emitted.header_location;
                e.header_size = emitted.header_size;
                e.file_size = emitted.file_size;
                e.file_version += 1;
                e.file_type = emitted.file_type;
                e.modify_time = now;
                Ok(())
            }
            Err(_) => Err(Error::NoSuchEntry(name.to_string_lossy())),
        }
    }

    pub(crate) fn insert_entry_for_emit(
        &mut self,
        dirnum: u32,
        name: &FileName,
        file_number: u32,
        now: Timestamp,
        emitted: &Emitted,
    ) -> Result<()> {
        self.load_dir(dirnum)?;
        let node = self.node_mut(dirnum)?;
        let entries = &mut node.loaded.as_mut().unwrap().entries;
        match entries.binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes())) {
            Ok(_) => Err(Error::EntryExists(name.to_string_lossy())),
            Err(pos) => {
                entries.insert(
                    pos,
                    DirEntry {
                        file_name: name.clone(),
                        header_location: emitted.header_location,
                        modify_time: now,
                        file_number,
                        file_size: emitted.file_size,
                        file_version: 1,
                        file_type: emitted.file_type,
                        header_size: emitted.header_size,
                        addname_count: 0,
                    },
                );
                Ok(())
            }
        }
    }
}

// ----- fragment arithmetic -----------------------------------------------------

/// The covering descriptor for a logical position, if any. Descriptors are
/// sorted by ordinal; overlaps carry identical bytes so any cover works.
fn find_covering(descriptors: &[FragmentDescriptor], pos: u64) -> Option<&FragmentDescriptor> {
    let idx = descriptors.partition_point(|d| u64::from(d.ordinal) <= pos);
    descriptors[..idx].iter().rev().find(|d| d.logical_end() > pos)
}

/// Maximal unmapped runs strictly below the logical extent.
fn holes_of(descriptors: &[FragmentDescriptor]) -> Vec<(u64, u64)> {
    let mut holes = Vec::new();
    let mut covered_to = 0u64;
    for d in descriptors {
        let start = u64::from(d.ordinal);
        if start > covered_to {
            holes.push((covered_to, start));
        }
        covered_to = covered_to.max(d.logical_end());
    }
    holes
}

fn first_hole(descriptors: &[FragmentDescriptor]) -> Option<u64> {
    holes_of(descriptors).first().map(|&(h0, _)| h0)
}

/// Assemble bytes across strips; an unmapped byte raises a hole error
/// naming the first unmapped offset.
fn read_from_map(
    volume: &Volume,
    descriptors: &[FragmentDescriptor],
    start: u64,
    len: usize,
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(len);
    let mut pos = start;
    let end = start + len as u64;
    while pos < end {
        let d = find_covering(descriptors, pos).ok_or(Error::Hole { offset: pos })?;
        let take = (d.logical_end() - pos).min(end - pos) as usize;
        let media = volume
            .scheme()
            .add_bytes(d.loc, pos - u64::from(d.ordinal))?;
        out.extend(volume.read_span(media, take)?);
        pos += take as u64;
    }
    Ok(out)
}

/// Native metadata for `preserve` imports: modify time, numeric ownership,
/// and permission bits.
fn preserved_from_native(file: &std::fs::File) -> Result<PreservedMeta> {
    use std::os::unix::fs::MetadataExt;
    let meta = file.metadata()?;
    let write_time = Timestamp::from_system_time(meta.modified()?)?;
    Ok(PreservedMeta {
        write_time: Some(write_time),
        access: Some(AccessInfo {
            file_owner: meta.uid().to_string(),
            file_group: meta.gid().to_string(),
            file_access: (meta.mode() & 0o777) as u16,
        }),
    })
}
