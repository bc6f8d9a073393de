//! Garbage collection by compaction: copy the most recent version of every
//! live file and directory to a blank volume, in one transaction.
//!
//! Names, hierarchy, file numbers, addnames, links, property lists, and
//! site and access info are preserved; version numbers reset to 1 and the
//! history stays behind on the source.

use crate::device::{BlockDevice, MediaAddress};
use crate::error::{Error, Result};
use crate::fileio::{emit_file, EmitContent, EmitSpec};
use crate::format::{
    BackupInfo, DirEntry, FileHeader, FileType, SoftLinkInfo, Timestamp,
};
use crate::volume::{Clock, DirNode, LoadedDir, SystemClock, Volume, ROOT_DIR};

impl Volume {
    /// Copy the current view of this volume onto a fully virgin device.
    /// Returns the new volume, committed as a single transaction.
    pub fn compact(&mut self, dst: Box<dyn BlockDevice>) -> Result<Volume> {
        self.compact_with_clock(dst, Box::new(SystemClock))
    }

    pub fn compact_with_clock(
        &mut self,
        dst: Box<dyn BlockDevice>,
        clock: Box<dyn Clock>,
    ) -> Result<Volume> {
        self.ensure_catalog()?;
        let owner = self.owner().to_owned();
        let site = self.site()?;
        let mut out = Volume::init_volume_with_clock(dst, &owner, site, clock)?;

        // Preserve the source creation time on the destination root.
        self.load_dir(ROOT_DIR)?;
        let src_root_creation = self
            .node(ROOT_DIR)?
            .loaded
            .as_ref()
            .unwrap()
            .creation_time;
        let now = out.clock_now();
        out.touch_dir(ROOT_DIR, now)?;
        if let Some(loaded) = out.node_mut(ROOT_DIR)?.loaded.as_mut() {
            loaded.creation_time = src_root_creation;
        }

        let mut pending = vec![ROOT_DIR];
        while let Some(dirnum) = pending.pop() {
            self.load_dir(dirnum)?;
            let entries = self.entries(dirnum)?.to_vec();
            for e in &entries {
                match e.file_type {
                    FileType::Directory => {
                        self.load_dir(e.file_number)?;
                        let creation = self
                            .node(e.file_number)?
                            .loaded
                            .as_ref()
                            .unwrap()
                            .creation_time;
                        let modify = self.node(e.file_number)?.modify_time;
                        out.create_dir_for_compact(dirnum, e, creation, modify)?;
                        pending.push(e.file_number);
                    }
                    FileType::File | FileType::Fragmented => {
                        let (header, _) = self.locate_version(dirnum, e, 0)?;
                        self.copy_file_for_compact(&mut out, dirnum, e, &header)?;
                    }
                    FileType::SoftLink => {
                        let header =
                            self.read_fileheader_at(e.header_location, e.header_size)?;
                        let link = header.soft_link_info.clone().ok_or_else(|| {
                            Error::NotALink(e.file_name.to_string_lossy())
                        })?;
                        out.create_link_for_compact(dirnum, e, &header, link)?;
                    }
                    // Addnames in a second pass, firm links never produced.
                    FileType::Addname | FileType::FirmLink => {}
                }
            }
            for e in &entries {
                if e.file_type == FileType::Addname {
                    out.touch_dir(dirnum, e.modify_time)?;
                    out.insert_entry_raw(dirnum, e.clone())?;
                }
            }
        }
        out.next_free_file_number = self.next_free_file_number;
        out.commit()?;
        Ok(out)
    }

    fn create_dir_for_compact(
        &mut self,
        parent: u32,
        src_entry: &DirEntry,
        creation: Timestamp,
        modify: Timestamp,
    ) -> Result<()> {
        self.touch_dir(parent, modify)?;
        let mut entry = src_entry.clone();
        entry.header_location = MediaAddress::ZERO;
        entry.file_version = 1;
        entry.file_size = 0;
        entry.header_size = 0;
        self.insert_entry_raw(parent, entry)?;
        let catalog = self.catalog.as_mut().unwrap();
        catalog.dirs.insert(
            src_entry.file_number,
            DirNode {
                number: src_entry.file_number,
                parent,
                header_location: MediaAddress::NULL,
                header_size: 0,
                data_len: 0,
                modify_time: modify,
                contained_bytes: 0,
                dirty: true,
                name: Some(src_entry.file_name.clone()),
                loaded: Some(LoadedDir {
                    entries: Vec::new(),
                    dir_version: 0,
                    creation_time: creation,
                }),
            },
        );
        Ok(())
    }

    fn copy_file_for_compact(
        &mut self,
        out: &mut Volume,
        dirnum: u32,
        src_entry: &DirEntry,
        header: &FileHeader,
    ) -> Result<()> {
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        let runs = self.content_runs(header)?;
        // Hole-free files flatten back to contiguous storage; holes keep
        // the file fragmented on the destination.
        let content = if runs.len() == 1 && runs[0].0 == 0 {
            EmitContent::Contiguous(runs.into_iter().next().unwrap().1)
        } else if runs.is_empty() {
            EmitContent::Contiguous(Vec::new())
        } else {
            EmitContent::Strips(runs)
        };
        out.touch_dir(dirnum, src_entry.modify_time)?;
        let emitted = emit_file(
            out,
            EmitSpec {
                dirnum,
                name: src_entry.file_name.clone(),
                file_number: src_entry.file_number,
                content,
                align_content: false,
                write_time: info.write_time,
                creation_time: info.creation_time,
                version: 1,
                previous_version_location: MediaAddress::NULL,
                previous_version_header_size: 0,
                access_info: header.access_info.clone(),
                site_info: header.site_info.clone(),
                property_list: header.property_list.clone(),
            },
        )?;
        out.note_file_written();
        out.insert_entry_raw(
            dirnum,
            DirEntry {
                file_name: src_entry.file_name.clone(),
                header_location: emitted.header_location,
                modify_time: src_entry.modify_time,
                file_number: src_entry.file_number,
                file_size: emitted.file_size,
                file_version: 1,
                file_type: emitted.file_type,
                header_size: emitted.header_size,
                addname_count: src_entry.addname_count,
            },
        )
    }

    fn create_link_for_compact(
        &mut self,
        dirnum: u32,
        src_entry: &DirEntry,
        src_header: &FileHeader,
        link: SoftLinkInfo,
    ) -> Result<()> {
        self.touch_dir(dirnum, src_entry.modify_time)?;
        let (pathname, filename_offset) = self.path_bytes(dirnum, Some(&src_entry.file_name))?;
        let group_addr = self.scheme().address_of(self.next_write_ordinal(), 0)?;
        let mut header = FileHeader::new(group_addr, src_entry.file_number, FileType::SoftLink);
        header.access_info = src_header.access_info.clone();
        header.site_info = src_header.site_info.clone();
        header.property_list = src_header.property_list.clone();
        header.backup_info = Some(BackupInfo {
            containing_directory_number: dirnum,
            previous_version_location: MediaAddress::NULL,
            previous_eot_location: self.last_eot_address(),
            filename_offset,
            previous_version_header_size: 0,
            backup_pathname: pathname,
        });
        header.soft_link_info = Some(link);
        let bytes = crate::format::encode_fileheader(&header)?;
        let addr = self.append_record(&bytes)?;
        self.note_file_written();
        self.insert_entry_raw(
            dirnum,
            DirEntry {
                file_name: src_entry.file_name.clone(),
                header_location: addr,
                modify_time: src_entry.modify_time,
                file_number: src_entry.file_number,
                file_size: 0,
                file_version: 1,
                file_type: FileType::SoftLink,
                header_size: bytes.len() as u16,
                addname_count: src_entry.addname_count,
            },
        )
    }

    /// Sorted insert used when rebuilding directories wholesale.
    pub(crate) fn insert_entry_raw(&mut self, dirnum: u32, entry: DirEntry) -> Result<()> {
        self.load_dir(dirnum)?;
        let node = self.node_mut(dirnum)?;
        let entries = &mut node.loaded.as_mut().unwrap().entries;
        match entries.binary_search_by(|e| e.file_name.as_bytes().cmp(entry.file_name.as_bytes()))
        {
            Ok(_) => Err(Error::EntryExists(entry.file_name.to_string_lossy())),
            Err(pos) => {
                entries.insert(pos, entry);
                Ok(())
            }
        }
    }
}
