//! Directory-level operations: creation, lookup, rename, delete and
//! undelete, destruction, path resolution, addnames, and soft links.
//!
//! Directory entries live in memory as part of the volume catalog until
//! commit writes them out. Lookups use binary search over the sorted entry
//! arrays. An addname is an extra entry whose file number matches a
//! non-addname entry in the same directory; all calls behave the same
//! whichever name of a file they are given.

use crate::device::MediaAddress;
use crate::error::{Error, Result};
use crate::format::{
    BackupInfo, DirEntry, FileHeader, FileName, FileType, SoftLinkInfo,
    DOWN_DELIMITER, UP_DELIMITER,
};
use crate::volume::{DirNode, LoadedDir, Volume, ROOT_DIR};

/// Textual link cycles are possible on write-once media even though real
/// header cycles are not; resolution gives up past this depth.
pub const MAX_LINK_DEPTH: u32 = 64;

/// Result of resolving a path or link to an entry.
#[derive(Debug, Clone)]
pub struct ResolvedEntry {
    pub containing_dir: u32,
    pub file_number: u32,
    pub entry: DirEntry,
    pub via_link_depth: u32,
}

/// Entry information served either from the directory alone (no extra
/// device probes) or together with the decoded file header.
#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum FileInfoView {
    Cheap(DirEntry),
    Full { entry: DirEntry, header: FileHeader },
}

impl FileInfoView {
    pub fn entry(&self) -> &DirEntry {
        match self {
            FileInfoView::Cheap(e) => e,
            FileInfoView::Full { entry, .. } => entry,
        }
    }

    pub fn header(&self) -> Option<&FileHeader> {
        match self {
            FileInfoView::Cheap(_) => None,
            FileInfoView::Full { header, .. } => Some(header),
        }
    }
}

impl Volume {
    // ----- entry lookup ----------------------------------------------------

    /// The entry exactly as stored, addnames included.
    pub(crate) fn exact_entry(&mut self, dirnum: u32, name: &FileName) -> Result<DirEntry> {
        let entries = self.entries(dirnum)?;
        entries
            .binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes()))
            .ok()
            .map(|i| entries[i].clone())
            .ok_or_else(|| Error::NoSuchEntry(name.to_string_lossy()))
    }

    /// The primary entry carrying a file's real information, resolving an
    /// addname to its primary by file number.
    pub(crate) fn resolve_in_dir(&mut self, dirnum: u32, name: &FileName) -> Result<DirEntry> {
        let e = self.exact_entry(dirnum, name)?;
        if e.file_type == FileType::Addname {
            self.primary_of(dirnum, e.file_number)
        } else {
            Ok(e)
        }
    }

    pub(crate) fn primary_of(&mut self, dirnum: u32, file_number: u32) -> Result<DirEntry> {
        self.entries(dirnum)?
            .iter()
            .find(|e| e.file_number == file_number && e.file_type != FileType::Addname)
            .cloned()
            .ok_or_else(|| Error::NoSuchEntry(format!("file number {file_number}")))
    }

    fn insert_entry(&mut self, dirnum: u32, entry: DirEntry) -> Result<()> {
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

    fn remove_entry_exact(&mut self, dirnum: u32, name: &FileName) -> Result<DirEntry> {
        self.load_dir(dirnum)?;
        let node = self.node_mut(dirnum)?;
        let entries = &mut node.loaded.as_mut().unwrap().entries;
        match entries.binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes())) {
            Ok(pos) => Ok(entries.remove(pos)),
            Err(_) => Err(Error::NoSuchEntry(name.to_string_lossy())),
        }
    }

    fn update_entry<F: FnOnce(&mut DirEntry)>(
        &mut self,
        dirnum: u32,
        name: &FileName,
        f: F,
    ) -> Result<()> {
        self.load_dir(dirnum)?;
        let node = self.node_mut(dirnum)?;
        let entries = &mut node.loaded.as_mut().unwrap().entries;
        match entries.binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes())) {
            Ok(pos) => {
                f(&mut entries[pos]);
                Ok(())
            }
            Err(_) => Err(Error::NoSuchEntry(name.to_string_lossy())),
        }
    }

    /// Replace an entry under `dirnum`, reinserting under its (possibly
    /// new) name to keep the array sorted.
    fn reinsert_entry(&mut self, dirnum: u32, old_name: &FileName, entry: DirEntry) -> Result<()> {
        self.remove_entry_exact(dirnum, old_name)?;
        self.insert_entry(dirnum, entry)
    }

    // ----- directory creation and deletion ---------------------------------

    /// Create a directory; returns its sequentially assigned number.
    pub fn mkdir(&mut self, parent: u32, name: &FileName) -> Result<u32> {
        self.ensure_catalog()?;
        self.load_dir(parent)?;
        if self
            .entries(parent)?
            .binary_search_by(|e| e.file_name.as_bytes().cmp(name.as_bytes()))
            .is_ok()
        {
            return Err(Error::EntryExists(name.to_string_lossy()));
        }
        let now = self.clock_now();
        let number = self.alloc_file_number();
        self.touch_dir(parent, now)?;
        self.insert_entry(
            parent,
            DirEntry {
                file_name: name.clone(),
                header_location: MediaAddress::ZERO,
                modify_time: now,
                file_number: number,
                file_size: 0,
                file_version: 1,
                file_type: FileType::Directory,
                header_size: 0,
                addname_count: 0,
            },
        )?;
        let catalog = self.catalog.as_mut().unwrap();
        catalog.dirs.insert(
            number,
            DirNode {
                number,
                parent,
                header_location: MediaAddress::NULL,
                header_size: 0,
                data_len: 0,
                modify_time: now,
                contained_bytes: 0,
                dirty: true,
                name: Some(name.clone()),
                loaded: Some(LoadedDir {
                    entries: Vec::new(),
                    dir_version: 0,
                    creation_time: now,
                }),
            },
        );
        Ok(number)
    }

    fn remove_subtree_nodes(&mut self, dirnum: u32) {
        let catalog = self.catalog.as_mut().unwrap();
        let mut doomed = vec![dirnum];
        let mut i = 0;
        while i < doomed.len() {
            let parent = doomed[i];
            for node in catalog.dirs.values() {
                if node.parent == parent && node.number != parent {
                    doomed.push(node.number);
                }
            }
            i += 1;
        }
        for d in doomed {
            catalog.dirs.remove(&d);
        }
    }

    /// Detach an entry. With `name` of `None`, detaches the directory
    /// `dirnum` itself (never the root). A deleted directory need not be
    /// empty; its subtree simply drops out of the directory list. Deleting
    /// the primary name of a file with addnames promotes an addname.
    pub fn delete_entry(&mut self, dirnum: u32, name: Option<&FileName>) -> Result<()> {
        self.ensure_catalog()?;
        match name {
            None => {
                if dirnum == ROOT_DIR {
                    return Err(Error::RootDeletion);
                }
                let parent = self.node(dirnum)?.parent;
                let dir_name = self.name_of(dirnum)?;
                let now = self.clock_now();
                self.touch_dir(parent, now)?;
                // Remove the primary entry and every addname of it.
                self.remove_entry_exact(parent, &dir_name)?;
                let addnames: Vec<FileName> = self
                    .entries(parent)?
                    .iter()
                    .filter(|e| e.file_type == FileType::Addname && e.file_number == dirnum)
                    .map(|e| e.file_name.clone())
                    .collect();
                for a in addnames {
                    self.remove_entry_exact(parent, &a)?;
                }
                self.remove_subtree_nodes(dirnum);
                Ok(())
            }
            Some(name) => {
                let entry = self.exact_entry(dirnum, name)?;
                let now = self.clock_now();
                self.touch_dir(dirnum, now)?;
                match entry.file_type {
                    FileType::Addname => {
                        self.remove_entry_exact(dirnum, name)?;
                        let primary = self.primary_of(dirnum, entry.file_number)?;
                        self.update_entry(dirnum, &primary.file_name.clone(), |e| {
                            e.addname_count = e.addname_count.saturating_sub(1);
                        })
                    }
                    _ if entry.addname_count > 0 => {
                        // Promote the first addname to primary.
                        let removed = self.remove_entry_exact(dirnum, name)?;
                        let promoted_name = self
                            .entries(dirnum)?
                            .iter()
                            .find(|e| {
                                e.file_type == FileType::Addname
                                    && e.file_number == removed.file_number
                            })
                            .map(|e| e.file_name.clone())
                            .ok_or_else(|| Error::NoSuchEntry(name.to_string_lossy()))?;
                        self.update_entry(dirnum, &promoted_name, |e| {
                            e.file_type = removed.file_type;
                            e.header_location = removed.header_location;
                            e.file_size = removed.file_size;
                            e.file_version = removed.file_version;
                            e.header_size = removed.header_size;
                            e.addname_count = removed.addname_count - 1;
                            e.modify_time = now;
                        })
                    }
                    FileType::Directory => {
                        self.remove_entry_exact(dirnum, name)?;
                        self.remove_subtree_nodes(entry.file_number);
                        Ok(())
                    }
                    _ => {
                        self.remove_entry_exact(dirnum, name)?;
                        Ok(())
                    }
                }
            }
        }
    }

    // ----- undelete ---------------------------------------------------------

    /// Walk this directory's own version history, oldest versions last.
    /// The callback gets each historical entry array; returning
    /// `Some(value)` stops the walk.
    fn walk_directory_history<T>(
        &mut self,
        dirnum: u32,
        mut visit: impl FnMut(&[DirEntry]) -> Option<T>,
    ) -> Result<Option<T>> {
        self.load_dir(dirnum)?;
        let node = self.node(dirnum)?;
        let mut at = node.header_location;
        let mut hint = node.header_size;
        while !at.is_null() {
            let header = self.read_fileheader_at(at, hint)?;
            let info = header
                .file_info
                .as_ref()
                .ok_or(Error::Truncated { kind: "fileheader" })?;
            let data = self.read_span(info.file_location, info.file_length as usize)?;
            let directory = crate::format::decode_directory(&data)?;
            if let Some(v) = visit(&directory.entries) {
                return Ok(Some(v));
            }
            match &header.backup_info {
                Some(b) if !b.previous_version_location.is_null() => {
                    at = b.previous_version_location;
                    hint = b.previous_version_header_size;
                }
                _ => break,
            }
        }
        Ok(None)
    }

    /// Reattach a previously deleted entry found in an older version of
    /// the directory. Version 0 selects the most recent occurrence.
    pub fn undelete_entry(
        &mut self,
        dirnum: u32,
        name: &FileName,
        version: u32,
        assign_new_number: bool,
    ) -> Result<ResolvedEntry> {
        self.ensure_catalog()?;
        if self.exact_entry(dirnum, name).is_ok() {
            return Err(Error::EntryExists(name.to_string_lossy()));
        }
        let found = self.walk_directory_history(dirnum, |entries| {
            entries
                .iter()
                .find(|e| {
                    e.file_name.as_bytes() == name.as_bytes()
                        && (version == 0 || e.file_version == version)
                })
                .cloned()
        })?;
        let mut entry = found.ok_or_else(|| Error::NeverExisted(name.to_string_lossy()))?;
        let now = self.clock_now();
        self.touch_dir(dirnum, now)?;
        let old_number = entry.file_number;
        if assign_new_number {
            entry.file_number = self.alloc_file_number();
        }
        entry.modify_time = now;
        if entry.file_type == FileType::Directory {
            self.resurrect_directory(old_number, entry.file_number, dirnum, name)?;
        }
        self.insert_entry(dirnum, entry.clone())?;
        Ok(ResolvedEntry {
            containing_dir: dirnum,
            file_number: entry.file_number,
            entry,
            via_link_depth: 0,
        })
    }

    /// Rebuild catalog nodes for an undeleted directory and its subtree
    /// from the most recent directory list that still contained it.
    fn resurrect_directory(
        &mut self,
        old_number: u32,
        new_number: u32,
        parent: u32,
        name: &FileName,
    ) -> Result<()> {
        // Walk directory-list history for the element.
        let mut list_addr = self.catalog.as_ref().unwrap().dir_list_addr;
        let mut found = None;
        while !list_addr.is_null() {
            let list = self.read_dir_list_at(list_addr)?;
            if list.elements.iter().any(|e| e.dir_number == old_number) {
                found = Some(list);
                break;
            }
            list_addr = list.prev_dir_list;
        }
        let list = found.ok_or_else(|| Error::NeverExisted(name.to_string_lossy()))?;

        // The subtree as of that snapshot.
        let mut wanted = vec![old_number];
        let mut i = 0;
        while i < wanted.len() {
            let p = wanted[i];
            for e in &list.elements {
                if e.containing_dir == p && e.dir_number != p && !wanted.contains(&e.dir_number) {
                    wanted.push(e.dir_number);
                }
            }
            i += 1;
        }
        for dir_number in wanted {
            let element = list
                .elements
                .iter()
                .find(|e| e.dir_number == dir_number)
                .expect("collected from this list");
            let is_top = dir_number == old_number;
            let number = if is_top { new_number } else { dir_number };
            let node_parent = if is_top {
                parent
            } else if element.containing_dir == old_number {
                new_number
            } else {
                element.containing_dir
            };
            let catalog = self.catalog.as_mut().unwrap();
            catalog.dirs.insert(
                number,
                DirNode {
                    number,
                    parent: node_parent,
                    header_location: element.header_location,
                    header_size: element.header_size,
                    data_len: 0,
                    modify_time: element.modify_time,
                    contained_bytes: element.contained_bytes,
                    // A renumbered directory needs a fresh header carrying
                    // the new number.
                    dirty: is_top && new_number != old_number,
                    name: if is_top { Some(name.clone()) } else { None },
                    loaded: None,
                },
            );
        }
        Ok(())
    }

    // ----- rename -----------------------------------------------------------

    /// Rename an entry within its directory. Files get a fresh header
    /// chained to the old one; renaming an addname affects only that
    /// addname.
    pub fn rename_entry(&mut self, dirnum: u32, old: &FileName, new: &FileName) -> Result<()> {
        self.ensure_catalog()?;
        let entry = self.exact_entry(dirnum, old)?;
        if self.exact_entry(dirnum, new).is_ok() {
            return Err(Error::EntryExists(new.to_string_lossy()));
        }
        let now = self.clock_now();
        self.touch_dir(dirnum, now)?;
        match entry.file_type {
            FileType::Addname => {
                let mut e = entry;
                e.file_name = new.clone();
                e.modify_time = now;
                self.reinsert_entry(dirnum, old, e)
            }
            FileType::Directory => {
                let mut e = entry.clone();
                e.file_name = new.clone();
                e.modify_time = now;
                self.reinsert_entry(dirnum, old, e)?;
                let child = entry.file_number;
                {
                    let node = self.node_mut(child)?;
                    node.name = Some(new.clone());
                    node.dirty = true;
                    node.modify_time = node.modify_time.max(now);
                }
                // The rewritten header at commit will carry the new
                // backup pathname and a bumped version.
                Ok(())
            }
            _ => {
                let old_header =
                    self.read_fileheader_at(entry.header_location, entry.header_size)?;
                let (pathname, filename_offset) = self.path_bytes(dirnum, Some(new))?;
                let group_addr = self.scheme().address_of(self.next_write_ordinal(), 0)?;
                let mut header = FileHeader::new(group_addr, entry.file_number, entry.file_type);
                header.access_info = old_header.access_info.clone();
                header.site_info = old_header.site_info.clone();
                header.property_list = old_header.property_list.clone();
                header.backup_info = Some(BackupInfo {
                    containing_directory_number: dirnum,
                    previous_version_location: entry.header_location,
                    previous_eot_location: self.last_eot_address(),
                    filename_offset,
                    previous_version_header_size: entry.header_size,
                    backup_pathname: pathname,
                });
                if let Some(mut info) = old_header.file_info.clone() {
                    info.file_version_number += 1;
                    header.file_info = Some(info);
                }
                header.soft_link_info = old_header.soft_link_info.clone();
                let bytes = crate::format::encode_fileheader(&header)?;
                let addr = self.append_record(&bytes)?;
                debug_assert_eq!(addr, group_addr);
                self.note_file_written();
                let mut e = entry;
                e.file_name = new.clone();
                e.header_location = addr;
                e.header_size = bytes.len() as u16;
                e.file_version += 1;
                e.modify_time = now;
                self.reinsert_entry(dirnum, old, e)
            }
        }
    }

    // ----- listing and paths -------------------------------------------------

    /// Entries of a directory in stored (sorted) order. A non-empty
    /// pattern returns only the exactly matching entry.
    pub fn list_entries(&mut self, dirnum: u32, pattern: Option<&[u8]>) -> Result<Vec<DirEntry>> {
        self.ensure_catalog()?;
        let entries = self.entries(dirnum)?;
        Ok(match pattern {
            None | Some(b"") => entries.to_vec(),
            Some(p) => entries
                .iter()
                .filter(|e| e.file_name.as_bytes() == p)
                .cloned()
                .collect(),
        })
    }

    /// Full pathname of a directory, root downward. The root contributes
    /// only a leading delimiter; occurrences of the delimiter inside names
    /// are replaced by `replace`.
    pub fn path_of_dir(&mut self, dirnum: u32, delim: &str, replace: &str) -> Result<String> {
        self.ensure_catalog()?;
        self.node(dirnum)?;
        let mut names: Vec<FileName> = Vec::new();
        let mut cur = dirnum;
        while cur != ROOT_DIR {
            names.push(self.name_of(cur)?);
            cur = self.node(cur)?.parent;
        }
        names.reverse();
        if names.is_empty() {
            return Ok(delim.to_owned());
        }
        let mut out = Vec::new();
        for name in &names {
            out.extend_from_slice(delim.as_bytes());
            let replaced = replace_all(name.as_bytes(), delim.as_bytes(), replace.as_bytes());
            out.extend_from_slice(&replaced);
        }
        Ok(String::from_utf8_lossy(&out).into_owned())
    }

    // ----- path resolution ----------------------------------------------------

    /// Resolve a pathname with arbitrary down and up notations. A leading
    /// down delimiter makes the path absolute (the context is ignored).
    /// Soft links met mid-path resolve recursively; the final entry is
    /// returned as stored.
    pub fn resolve_path(
        &mut self,
        path: &[u8],
        context: u32,
        downdir: &str,
        updir: &str,
        updir_is_dir: bool,
    ) -> Result<ResolvedEntry> {
        self.ensure_catalog()?;
        self.node(context)?;
        let down = downdir.as_bytes();
        let up = updir.as_bytes();
        if down.is_empty() {
            return Err(Error::InvalidField("empty down delimiter".into()));
        }
        let absolute = path.starts_with(down);
        let body = if absolute { &path[down.len()..] } else { path };
        let tokens = tokenize_path(body, down, up, updir_is_dir)?;

        let mut current = if absolute { ROOT_DIR } else { context };
        let mut depth = 0u32;
        let mut iter = tokens.iter().peekable();
        while let Some(tok) = iter.next() {
            let last = iter.peek().is_none();
            match tok {
                PathToken::Up => {
                    if current == ROOT_DIR {
                        return Err(Error::EscapeAboveRoot);
                    }
                    current = self.node(current)?.parent;
                }
                PathToken::Name(name_bytes) => {
                    let name = FileName::new(name_bytes.clone())?;
                    let entry = self.resolve_in_dir(current, &name)?;
                    if last {
                        return Ok(ResolvedEntry {
                            containing_dir: current,
                            file_number: entry.file_number,
                            entry,
                            via_link_depth: depth,
                        });
                    }
                    current = self.descend(current, entry, &mut depth)?;
                }
            }
        }
        self.dir_resolved_entry(current, depth)
    }

    /// Step into a directory entry, resolving a link first if need be.
    fn descend(&mut self, containing: u32, entry: DirEntry, depth: &mut u32) -> Result<u32> {
        match entry.file_type {
            FileType::Directory => Ok(entry.file_number),
            FileType::SoftLink => {
                let (resolved, _) = self.resolve_link_entry(containing, &entry, depth)?;
                if resolved.entry.file_type == FileType::Directory {
                    Ok(resolved.entry.file_number)
                } else {
                    Err(Error::NotADirectory(entry.file_name.to_string_lossy()))
                }
            }
            _ => Err(Error::NotADirectory(entry.file_name.to_string_lossy())),
        }
    }

    /// A ResolvedEntry standing for a directory itself.
    fn dir_resolved_entry(&mut self, dirnum: u32, depth: u32) -> Result<ResolvedEntry> {
        if dirnum == ROOT_DIR {
            let node = self.node(ROOT_DIR)?;
            let entry = DirEntry {
                file_name: FileName::root(),
                header_location: MediaAddress::ZERO,
                modify_time: node.modify_time,
                file_number: ROOT_DIR,
                file_size: 0,
                file_version: node.loaded.as_ref().map_or(0, |l| l.dir_version),
                file_type: FileType::Directory,
                header_size: node.header_size,
                addname_count: 0,
            };
            return Ok(ResolvedEntry {
                containing_dir: ROOT_DIR,
                file_number: ROOT_DIR,
                entry,
                via_link_depth: depth,
            });
        }
        let parent = self.node(dirnum)?.parent;
        let name = self.name_of(dirnum)?;
        let entry = self.exact_entry(parent, &name)?;
        Ok(ResolvedEntry {
            containing_dir: parent,
            file_number: dirnum,
            entry,
            via_link_depth: depth,
        })
    }

    // ----- version views --------------------------------------------------------

    /// Entry information. Version 0 with `want_full` false is served from
    /// the cached directory alone, with no device probes.
    pub fn file_info(
        &mut self,
        dirnum: u32,
        name: &FileName,
        version: u32,
        want_full: bool,
    ) -> Result<FileInfoView> {
        self.ensure_catalog()?;
        let entry = self.resolve_in_dir(dirnum, name)?;
        if version == 0 && !want_full {
            return Ok(FileInfoView::Cheap(entry));
        }
        let (header, _) = self.locate_version(dirnum, &entry, version)?;
        Ok(FileInfoView::Full { entry, header })
    }

    /// Find a specific version's header: walk the chain from the newest
    /// header; when the chain is broken by destroyed blocks, fall back to
    /// scanning the directory's own history for the version's entry.
    pub(crate) fn locate_version(
        &mut self,
        dirnum: u32,
        entry: &DirEntry,
        version: u32,
    ) -> Result<(FileHeader, MediaAddress)> {
        let (start, hint) = if entry.file_type == FileType::Directory {
            let node = self.node(entry.file_number)?;
            (node.header_location, node.header_size)
        } else {
            (entry.header_location, entry.header_size)
        };
        if start.is_null() {
            return Err(Error::NoSuchVersion {
                name: entry.file_name.to_string_lossy(),
                version,
            });
        }
        let mut at = start;
        let mut size = hint;
        let mut chain_broken = false;
        loop {
            match self.read_fileheader_at(at, size) {
                Ok(header) => {
                    let this_version = header
                        .file_info
                        .as_ref()
                        .map(|i| i.file_version_number)
                        .unwrap_or(entry.file_version);
                    if version == 0 || this_version == version {
                        return Ok((header, at));
                    }
                    if this_version < version {
                        // Versions descend along the chain; it is not here.
                        break;
                    }
                    match &header.backup_info {
                        Some(b) if !b.previous_version_location.is_null() => {
                            at = b.previous_version_location;
                            size = b.previous_version_header_size;
                        }
                        _ => break,
                    }
                }
                Err(_) => {
                    chain_broken = true;
                    break;
                }
            }
        }
        // Fallback: the directory's own history names every version's
        // header directly.
        let name_bytes = entry.file_name.as_bytes().to_vec();
        let located = self.walk_directory_history(dirnum, |entries| {
            entries
                .iter()
                .find(|e| {
                    e.file_name.as_bytes() == name_bytes
                        && (version == 0 || e.file_version == version)
                })
                .map(|e| (e.header_location, e.header_size))
        })?;
        match located {
            Some((addr, size)) => match self.read_fileheader_at(addr, size) {
                Ok(header) => Ok((header, addr)),
                Err(_) => Err(Error::VersionDestroyed {
                    name: entry.file_name.to_string_lossy(),
                    version,
                }),
            },
            None if chain_broken => Err(Error::VersionDestroyed {
                name: entry.file_name.to_string_lossy(),
                version,
            }),
            None => Err(Error::NoSuchVersion {
                name: entry.file_name.to_string_lossy(),
                version,
            }),
        }
    }

    // ----- addnames ---------------------------------------------------------

    /// Attach an additional name to a file or directory in the same
    /// directory. Only the name, modify time, file number and type fields
    /// of an addname entry carry meaning.
    pub fn add_addname(&mut self, dirnum: u32, primary: &FileName, addname: &FileName) -> Result<()> {
        self.ensure_catalog()?;
        let primary_entry = self.resolve_in_dir(dirnum, primary)?;
        if self.exact_entry(dirnum, addname).is_ok() {
            return Err(Error::EntryExists(addname.to_string_lossy()));
        }
        let now = self.clock_now();
        self.touch_dir(dirnum, now)?;
        self.insert_entry(
            dirnum,
            DirEntry {
                file_name: addname.clone(),
                header_location: MediaAddress::ZERO,
                modify_time: now,
                file_number: primary_entry.file_number,
                file_size: 0,
                file_version: 0,
                file_type: FileType::Addname,
                header_size: 0,
                addname_count: 0,
            },
        )?;
        self.update_entry(dirnum, &primary_entry.file_name.clone(), |e| {
            e.addname_count += 1;
        })
    }

    pub fn remove_addname(&mut self, dirnum: u32, addname: &FileName) -> Result<()> {
        self.ensure_catalog()?;
        let entry = self.exact_entry(dirnum, addname)?;
        if entry.file_type != FileType::Addname {
            return Err(Error::NotAnAddname(addname.to_string_lossy()));
        }
        let now = self.clock_now();
        self.touch_dir(dirnum, now)?;
        self.remove_entry_exact(dirnum, addname)?;
        let primary = self.primary_of(dirnum, entry.file_number)?;
        self.update_entry(dirnum, &primary.file_name.clone(), |e| {
            e.addname_count = e.addname_count.saturating_sub(1);
        })
    }

    // ----- soft links ---------------------------------------------------------

    /// Create a soft link. The target is a 0xFE/0xFD delimited string
    /// resolved from `target_dir`; it need not exist.
    pub fn make_link(
        &mut self,
        dirnum: u32,
        name: &FileName,
        target_dir: u32,
        target: &[u8],
        target_version: u32,
    ) -> Result<()> {
        self.ensure_catalog()?;
        self.load_dir(dirnum)?;
        if self.exact_entry(dirnum, name).is_ok() {
            return Err(Error::EntryExists(name.to_string_lossy()));
        }
        validate_link_target(target)?;
        let now = self.clock_now();
        self.touch_dir(dirnum, now)?;
        let number = self.alloc_file_number();
        let (pathname, filename_offset) = self.path_bytes(dirnum, Some(name))?;
        let group_addr = self.scheme().address_of(self.next_write_ordinal(), 0)?;
        let mut header = FileHeader::new(group_addr, number, FileType::SoftLink);
        header.backup_info = Some(BackupInfo {
            containing_directory_number: dirnum,
            previous_version_location: MediaAddress::NULL,
            previous_eot_location: self.last_eot_address(),
            filename_offset,
            previous_version_header_size: 0,
            backup_pathname: pathname,
        });
        header.soft_link_info = Some(SoftLinkInfo {
            creation_time: now,
            target_dir,
            target_version,
            target_name: target.to_vec(),
        });
        let bytes = crate::format::encode_fileheader(&header)?;
        let addr = self.append_record(&bytes)?;
        self.note_file_written();
        self.insert_entry(
            dirnum,
            DirEntry {
                file_name: name.clone(),
                header_location: addr,
                modify_time: now,
                file_number: number,
                file_size: 0,
                file_version: 1,
                file_type: FileType::SoftLink,
                header_size: bytes.len() as u16,
                addname_count: 0,
            },
        )
    }

    /// Resolve a soft link to its ultimate non-link target.
    pub fn resolve_link(&mut self, link: &ResolvedEntry) -> Result<ResolvedEntry> {
        if link.entry.file_type != FileType::SoftLink {
            return Err(Error::NotALink(link.entry.file_name.to_string_lossy()));
        }
        let mut depth = link.via_link_depth;
        let (resolved, _) = self.resolve_link_entry(link.containing_dir, &link.entry, &mut depth)?;
        Ok(resolved)
    }

    /// Resolve one link entry; recursion consumes shared depth budget.
    /// Also returns the link's version selector (innermost nonzero wins).
    pub(crate) fn resolve_link_entry(
        &mut self,
        _containing: u32,
        entry: &DirEntry,
        depth: &mut u32,
    ) -> Result<(ResolvedEntry, u32)> {
        *depth += 1;
        if *depth > MAX_LINK_DEPTH {
            return Err(Error::LinkDepthExceeded);
        }
        let header = self.read_fileheader_at(entry.header_location, entry.header_size)?;
        let link = header
            .soft_link_info
            .ok_or_else(|| Error::NotALink(entry.file_name.to_string_lossy()))?;
        let target = self.walk_link_target(link.target_dir, &link.target_name, depth)?;
        if target.entry.file_type == FileType::SoftLink {
            let (inner, inner_version) =
                self.resolve_link_entry(target.containing_dir, &target.entry.clone(), depth)?;
            let version = if inner_version != 0 {
                inner_version
            } else {
                link.target_version
            };
            Ok((inner, version))
        } else {
            Ok((target, link.target_version))
        }
    }

    /// Walk a delimited target string. A name ended by the down delimiter
    /// selects a directory to descend into; a name ended by the up
    /// delimiter moves to the directory containing that name's (possibly
    /// link-resolved) target; a bare up delimiter moves to the parent of
    /// the currently selected directory.
    fn walk_link_target(
        &mut self,
        start_dir: u32,
        target: &[u8],
        depth: &mut u32,
    ) -> Result<ResolvedEntry> {
        if !self.catalog.as_ref().unwrap().dirs.contains_key(&start_dir) {
            return Err(Error::DanglingLink);
        }
        let mut current = start_dir;
        let mut acc: Vec<u8> = Vec::new();
        for &b in target {
            match b {
                DOWN_DELIMITER => {
                    if acc.is_empty() {
                        return Err(Error::InvalidLinkTarget("empty component".into()));
                    }
                    let name = FileName::new(std::mem::take(&mut acc))?;
                    let entry = self
                        .resolve_in_dir(current, &name)
                        .map_err(|_| Error::DanglingLink)?;
                    current = self
                        .descend(current, entry, depth)
                        .map_err(|e| match e {
                            Error::LinkDepthExceeded => Error::LinkDepthExceeded,
                            Error::EscapeAboveRoot => Error::EscapeAboveRoot,
                            _ => Error::DanglingLink,
                        })?;
                }
                UP_DELIMITER => {
                    if acc.is_empty() {
                        if current == ROOT_DIR {
                            return Err(Error::EscapeAboveRoot);
                        }
                        current = self.node(current)?.parent;
                    } else {
                        let name = FileName::new(std::mem::take(&mut acc))?;
                        let entry = self
                            .resolve_in_dir(current, &name)
                            .map_err(|_| Error::DanglingLink)?;
                        current = match entry.file_type {
                            FileType::SoftLink => {
                                let (resolved, _) =
                                    self.resolve_link_entry(current, &entry, depth)?;
                                resolved.containing_dir
                            }
                            // The directory containing a plain name is the
                            // directory it was found in.
                            _ => current,
                        };
                    }
                }
                other => acc.push(other),
            }
        }
        if acc.is_empty() {
            self.dir_resolved_entry(current, *depth)
        } else {
            let name = FileName::new(acc)?;
            let entry = self
                .resolve_in_dir(current, &name)
                .map_err(|_| Error::DanglingLink)?;
            Ok(ResolvedEntry {
                containing_dir: current,
                file_number: entry.file_number,
                entry,
                via_link_depth: *depth,
            })
        }
    }

    // ----- destroy -------------------------------------------------------------

    /// Overwrite the blocks of the selected version (all versions when 0)
    /// of an entry. With `name` of `None` the directory record itself is
    /// destroyed. Destroying all versions also detaches the entry.
    pub fn destroy(&mut self, dirnum: u32, name: Option<&FileName>, version: u32) -> Result<()> {
        self.ensure_catalog()?;
        match name {
            None => {
                if dirnum == ROOT_DIR {
                    return Err(Error::RootDeletion);
                }
                let node = self.node(dirnum)?;
                let (start, hint) = (node.header_location, node.header_size);
                let blocks = self.collect_version_blocks(start, hint, version)?;
                self.open_transaction();
                self.destroy_blocks(&blocks)?;
                if version == 0 {
                    self.delete_entry(dirnum, None)?;
                }
                Ok(())
            }
            Some(n) => {
                let entry = self.resolve_in_dir(dirnum, n)?;
                if entry.file_type == FileType::Directory {
                    return self.destroy(entry.file_number, None, version);
                }
                let blocks =
                    self.collect_version_blocks(entry.header_location, entry.header_size, version)?;
                self.open_transaction();
                self.destroy_blocks(&blocks)?;
                if version == 0 {
                    let now = self.clock_now();
                    self.touch_dir(dirnum, now)?;
                    let addnames: Vec<FileName> = self
                        .entries(dirnum)?
                        .iter()
                        .filter(|e| {
                            e.file_type == FileType::Addname
                                && e.file_number == entry.file_number
                        })
                        .map(|e| e.file_name.clone())
                        .collect();
                    for a in addnames {
                        self.remove_entry_exact(dirnum, &a)?;
                    }
                    self.remove_entry_exact(dirnum, &entry.file_name)?;
                }
                Ok(())
            }
        }
    }

    /// Block ordinals holding the selected version's header, map, and
    /// content. Record groups always start on fresh blocks, so these
    /// blocks belong to this file alone.
    fn collect_version_blocks(
        &mut self,
        start: MediaAddress,
        hint: u16,
        version: u32,
    ) -> Result<Vec<u64>> {
        let scheme = self.scheme().clone();
        let mut blocks: Vec<u64> = Vec::new();
        let span = |addr: MediaAddress, len: usize, blocks: &mut Vec<u64>| -> Result<()> {
            if len == 0 {
                return Ok(());
            }
            let (ordinal, offset) = scheme.split(addr)?;
            let bs = u64::from(scheme.block_size());
            let last = (u64::from(offset) + len as u64 - 1) / bs + ordinal;
            for b in ordinal..=last {
                if !blocks.contains(&b) {
                    blocks.push(b);
                }
            }
            Ok(())
        };
        let mut at = start;
        let mut size = hint;
        let mut matched = false;
        while !at.is_null() {
            let header = self.read_fileheader_at(at, size)?;
            let this_version = header
                .file_info
                .as_ref()
                .map(|i| i.file_version_number)
                .unwrap_or(1);
            let selected = version == 0 || this_version == version;
            if selected {
                matched = true;
                span(at, header.serialized_len(), &mut blocks)?;
                if let Some(info) = &header.file_info {
                    match header.file_type {
                        FileType::Fragmented => {
                            let map = self.read_filemap_at(info.file_location)?;
                            span(info.file_location, map.serialized_len(), &mut blocks)?;
                            for d in &map.descriptors {
                                span(d.loc, d.valid_chars as usize, &mut blocks)?;
                            }
                        }
                        _ => span(info.file_location, info.file_length as usize, &mut blocks)?,
                    }
                }
            }
            if version != 0 && matched {
                break;
            }
            match &header.backup_info {
                Some(b) if !b.previous_version_location.is_null() => {
                    at = b.previous_version_location;
                    size = b.previous_version_header_size;
                }
                _ => break,
            }
        }
        if !matched {
            return Err(Error::NoSuchVersion {
                name: String::new(),
                version,
            });
        }
        Ok(blocks)
    }

    fn destroy_blocks(&mut self, blocks: &[u64]) -> Result<()> {
        let scheme = self.scheme().clone();
        for &b in blocks {
            let addr = scheme.address_of(b, 0)?;
            // Skip blocks already destroyed, and virgin ones.
            if let crate::device::BlockReadResult::Written(_) = self.dev.read_block(addr)? {
                self.dev.destroy_block(addr)?;
            }
        }
        Ok(())
    }
}

// ----- path text machinery -----------------------------------------------------

#[derive(Debug, PartialEq, Eq)]
enum PathToken {
    Up,
    Name(Vec<u8>),
}

/// Split a path body into up-steps and names. With `updir_is_dir`, the
/// up notation only counts when it stands alone as a component; otherwise
/// it acts as a delimiter wherever it appears.
fn tokenize_path(
    body: &[u8],
    down: &[u8],
    up: &[u8],
    updir_is_dir: bool,
) -> Result<Vec<PathToken>> {
    let mut tokens = Vec::new();
    let mut acc: Vec<u8> = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if body[i..].starts_with(down) {
            if !acc.is_empty() {
                tokens.push(PathToken::Name(std::mem::take(&mut acc)));
            }
            i += down.len();
        } else if !updir_is_dir && !up.is_empty() && body[i..].starts_with(up) {
            if !acc.is_empty() {
                tokens.push(PathToken::Name(std::mem::take(&mut acc)));
            }
            tokens.push(PathToken::Up);
            i += up.len();
        } else {
            acc.push(body[i]);
            i += 1;
        }
    }
    if !acc.is_empty() {
        tokens.push(PathToken::Name(acc));
    }
    if updir_is_dir && !up.is_empty() {
        for t in tokens.iter_mut() {
            if matches!(t, PathToken::Name(n) if n == up) {
                *t = PathToken::Up;
            }
        }
    }
    Ok(tokens)
}

fn replace_all(haystack: &[u8], needle: &[u8], replacement: &[u8]) -> Vec<u8> {
    if needle.is_empty() {
        return haystack.to_vec();
    }
    let mut out = Vec::with_capacity(haystack.len());
    let mut i = 0;
    while i < haystack.len() {
        if haystack[i..].starts_with(needle) {
            out.extend_from_slice(replacement);
            i += needle.len();
        } else {
            out.push(haystack[i]);
            i += 1;
        }
    }
    out
}

/// Targets may not contain NUL and may not have an empty name just before
/// a down delimiter.
fn validate_link_target(target: &[u8]) -> Result<()> {
    let mut acc_len = 0usize;
    for &b in target {
        match b {
            0 => return Err(Error::InvalidLinkTarget("NUL byte".into())),
            DOWN_DELIMITER => {
                if acc_len == 0 {
                    return Err(Error::InvalidLinkTarget("empty component".into()));
                }
                acc_len = 0;
            }
            UP_DELIMITER => {
                acc_len = 0;
            }
            _ => acc_len += 1,
        }
    }
    Ok(())
}
