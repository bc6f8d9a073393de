//! Volume lifecycle: initialization, mount, transactions, recovery.
//!
//! A mounted volume tracks the last end-of-transaction record, the first
//! virgin block, and an in-memory catalog of live directories built from
//! the directory list. Mutations accumulate in memory and in file-content
//! writes; `commit` writes the modified directories (deepest first), the
//! new directory list, and a sealed EOT as the sole content of a fresh
//! block, in that order, so an interruption at any point leaves the
//! previous transaction intact.

mod compact;
mod fsck;

pub use fsck::{Finding, FsckReport, FsckStatus, StructureKind};

use std::cell::Cell;
use std::collections::BTreeMap;

use crate::device::{read_span, AddressScheme, BlockDevice, BlockReadResult, MediaAddress};
use crate::error::{Error, Result};
use crate::format::{
    self, decode_dir_list, decode_eot, decode_fileheader, dir_list_entry_count, encode_dir_list,
    encode_eot, BackupInfo, DirList, DirListElement, Directory, Eot, FileHeader, FileInfo,
    FileName, FileType, SiteInfo, Timestamp, DIR_LIST_HEADER_LEN, DOWN_DELIMITER,
    FILEHEADER_BASE_LEN, IMPLEMENTATION_ID,
};

/// The root directory always has number 1.
pub const ROOT_DIR: u32 = 1;

/// Injectable time source; volumes stamp records through this.
pub trait Clock {
    fn now(&self) -> Timestamp;
}

/// Wall-clock time.
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Timestamp::from_system_time(std::time::SystemTime::now())
            .expect("system time after 1901")
    }
}

/// Always the same instant; for tests.
pub struct FixedClock(pub Timestamp);

impl Clock for FixedClock {
    fn now(&self) -> Timestamp {
        self.0
    }
}

/// Strictly increasing time, one step per reading; for tests.
pub struct SteppingClock {
    next: Cell<u64>,
    step: u64,
}

impl SteppingClock {
    pub fn new(start: u64, step: u64) -> SteppingClock {
        SteppingClock {
            next: Cell::new(start),
            step,
        }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> Timestamp {
        let t = self.next.get();
        self.next.set(t + self.step);
        Timestamp(t)
    }
}

/// State of one open transaction.
pub(crate) struct TransState {
    pub(crate) start: Timestamp,
    pub(crate) files_written: u32,
}

/// In-memory entry list of a directory, loaded on demand.
pub(crate) struct LoadedDir {
    pub(crate) entries: Vec<format::DirEntry>,
    /// Version of the directory record itself; 0 until first written.
    pub(crate) dir_version: u32,
    pub(crate) creation_time: Timestamp,
}

/// One live directory.
pub(crate) struct DirNode {
    pub(crate) number: u32,
    pub(crate) parent: u32,
    /// Latest written header; null before the first commit touching it.
    pub(crate) header_location: MediaAddress,
    pub(crate) header_size: u16,
    /// Serialized length of the latest directory record.
    pub(crate) data_len: u32,
    /// Rolled-up most recent modification beneath this directory.
    pub(crate) modify_time: Timestamp,
    /// Rolled-up contained bytes.
    pub(crate) contained_bytes: u64,
    pub(crate) dirty: bool,
    pub(crate) name: Option<FileName>,
    pub(crate) loaded: Option<LoadedDir>,
}

pub(crate) struct Catalog {
    pub(crate) dirs: BTreeMap<u32, DirNode>,
    /// Location of the directory list backing this catalog; null when the
    /// volume has never committed one.
    pub(crate) dir_list_addr: MediaAddress,
}

pub struct Volume {
    pub(crate) dev: Box<dyn BlockDevice>,
    pub(crate) clock: Box<dyn Clock>,
    pub(crate) scheme: AddressScheme,
    /// Blocks this volume may use: the device capacity, further restricted
    /// by the address scheme recorded in the first EOT.
    pub(crate) usable_blocks: u64,
    pub(crate) last_eot: Eot,
    pub(crate) last_eot_addr: MediaAddress,
    pub(crate) next_write: u64,
    pub(crate) catalog: Option<Catalog>,
    pub(crate) next_free_file_number: u32,
    pub(crate) trans: Option<TransState>,
    pub(crate) write_stream_open: bool,
    /// Site description for the root header; set at init, read from the
    /// root header otherwise.
    pub(crate) site_cache: Option<SiteInfo>,
}

impl Volume {
    // ----- lifecycle -------------------------------------------------------

    /// Initialize a fully virgin device: writes exactly one block, the
    /// first EOT, with transaction number 0 and an empty root directory
    /// existing only logically.
    pub fn init_volume(dev: Box<dyn BlockDevice>, owner: &str, site: SiteInfo) -> Result<Volume> {
        Self::init_volume_with_clock(dev, owner, site, Box::new(SystemClock))
    }

    pub fn init_volume_with_clock(
        dev: Box<dyn BlockDevice>,
        owner: &str,
        site: SiteInfo,
        clock: Box<dyn Clock>,
    ) -> Result<Volume> {
        let (written, _, destroyed) = dev.state_counts();
        if written != 0 || destroyed != 0 {
            return Err(Error::DeviceNotVirgin);
        }
        let scheme = dev.geometry().scheme.clone();
        let usable = scheme.max_blocks().min(dev.geometry().capacity_blocks);
        let now = clock.now();
        let addr0 = scheme.address_of(0, 0)?;
        let eot = format::initial_eot(addr0, scheme.clone(), owner.to_owned(), now);
        let bytes = encode_eot(&eot)?;
        if bytes.len() > scheme.block_size() as usize {
            return Err(Error::OwnerTooLong);
        }
        let mut volume = Volume {
            dev,
            clock,
            scheme,
            usable_blocks: usable,
            last_eot: eot,
            last_eot_addr: addr0,
            next_write: 0,
            catalog: None,
            next_free_file_number: 2,
            trans: None,
            write_stream_open: false,
            site_cache: Some(site),
        };
        volume.append_record(&bytes)?;
        volume.catalog = Some(volume.fresh_root_catalog());
        Ok(volume)
    }

    /// Mount a device holding a CDFS volume. Block 0 must decode as a
    /// valid EOT; the most recent EOT is then located with at most
    /// `ceil(log2(capacity)) + 2` read probes, or without any search when
    /// the first EOT points at a terminal EOT followed by a virgin block.
    pub fn mount(dev: Box<dyn BlockDevice>) -> Result<Volume> {
        Self::mount_with_clock(dev, Box::new(SystemClock))
    }

    pub fn mount_with_clock(dev: Box<dyn BlockDevice>, clock: Box<dyn Clock>) -> Result<Volume> {
        let geometry_scheme = dev.geometry().scheme.clone();
        let addr0 = geometry_scheme.address_of(0, 0)?;
        let first = match dev.read_block(addr0)? {
            BlockReadResult::Written(bytes) => decode_eot(&bytes, addr0)?,
            BlockReadResult::Virgin | BlockReadResult::Unreadable => {
                return Err(Error::NoValidEot)
            }
        };
        if first.scheme != geometry_scheme {
            return Err(Error::GeometryMismatch);
        }
        let scheme = first.scheme.clone();
        let usable = scheme.max_blocks().min(dev.geometry().capacity_blocks);

        let (last_eot, last_eot_addr, next_write) = if !first.next_eot_location.is_null() {
            Self::mount_via_first_eot_pointer(dev.as_ref(), &scheme, usable, &first)?
        } else {
            Self::locate_last_eot(dev.as_ref(), &scheme, usable, (first.clone(), addr0), 1)?
        };

        let next_free_file_number = last_eot.next_free_file_number;
        Ok(Volume {
            dev,
            clock,
            scheme,
            usable_blocks: usable,
            last_eot,
            last_eot_addr,
            next_write,
            catalog: None,
            next_free_file_number,
            trans: None,
            write_stream_open: false,
            site_cache: None,
        })
    }

    /// The pre-mastered shortcut: the first EOT names the EOT closing the
    /// first transaction. If the block after it is virgin the volume is
    /// unmodified and no search is needed; otherwise only the tail beyond
    /// it is searched.
    fn mount_via_first_eot_pointer(
        dev: &dyn BlockDevice,
        scheme: &AddressScheme,
        usable: u64,
        first: &Eot,
    ) -> Result<(Eot, MediaAddress, u64)> {
        let pointed = first.next_eot_location;
        let pointed_ordinal = scheme.ordinal_of(pointed)?;
        if pointed_ordinal >= usable {
            return Err(Error::OutOfMedia {
                ordinal: pointed_ordinal,
                limit: usable,
            });
        }
        let following = pointed_ordinal + 1;
        if following >= usable {
            // The pointed EOT is the final block of the media.
            let eot = Self::read_eot_at(dev, scheme, pointed_ordinal)?;
            return Ok((eot, pointed, usable));
        }
        match dev.read_block(scheme.address_of(following, 0)?)? {
            BlockReadResult::Virgin => {
                let eot = Self::read_eot_at(dev, scheme, pointed_ordinal)?;
                Ok((eot, pointed, following))
            }
            _ => {
                // Annotated since mastering: search the tail.
                let first_pair = (
                    Self::read_eot_at(dev, scheme, pointed_ordinal)?,
                    pointed,
                );
                Self::locate_last_eot(dev, scheme, usable, first_pair, following + 1)
            }
        }
    }

    fn read_eot_at(
        dev: &dyn BlockDevice,
        scheme: &AddressScheme,
        ordinal: u64,
    ) -> Result<Eot> {
        let addr = scheme.address_of(ordinal, 0)?;
        match dev.read_block(addr)? {
            BlockReadResult::Written(bytes) => decode_eot(&bytes, addr),
            BlockReadResult::Virgin => Err(Error::BlockVirgin { ordinal }),
            BlockReadResult::Unreadable => Err(Error::BlockUnreadable { ordinal }),
        }
    }

    /// Locate the last EOT: binary search for the first virgin block in
    /// `[search_lo, usable)`, then validate the block before it, falling
    /// back to a backward recovery scan when the terminal block is not a
    /// valid EOT. `known` is an already-decoded EOT below `search_lo`.
    fn locate_last_eot(
        dev: &dyn BlockDevice,
        scheme: &AddressScheme,
        usable: u64,
        known: (Eot, MediaAddress),
        search_lo: u64,
    ) -> Result<(Eot, MediaAddress, u64)> {
        let first_virgin = dev
            .find_first_virgin(search_lo, usable)?
            .unwrap_or(usable);
        let known_ordinal = scheme.ordinal_of(known.1)?;
        if first_virgin == known_ordinal + 1 {
            // The known EOT is already the terminal block.
            return Ok((known.0, known.1, first_virgin));
        }
        let candidate = first_virgin - 1;
        Self::recover(dev, scheme, known, candidate, first_virgin)
    }

    /// Scan backward from `bad_tail` for the nearest block that validates
    /// as an EOT. Blocks above the recovered EOT stay dead, but the write
    /// position remains the first virgin block so the prefix rule holds.
    fn recover(
        dev: &dyn BlockDevice,
        scheme: &AddressScheme,
        known: (Eot, MediaAddress),
        bad_tail: u64,
        first_virgin: u64,
    ) -> Result<(Eot, MediaAddress, u64)> {
        let known_ordinal = scheme.ordinal_of(known.1)?;
        let mut ordinal = bad_tail;
        loop {
            if ordinal == known_ordinal {
                return Ok((known.0, known.1, first_virgin));
            }
            let addr = scheme.address_of(ordinal, 0)?;
            if let BlockReadResult::Written(bytes) = dev.read_block(addr)? {
                if let Ok(eot) = decode_eot(&bytes, addr) {
                    return Ok((eot, addr, first_virgin));
                }
            }
            if ordinal == 0 {
                return Err(Error::Unrecoverable);
            }
            ordinal -= 1;
        }
    }

    // ----- accessors -------------------------------------------------------

    pub fn device(&self) -> &dyn BlockDevice {
        self.dev.as_ref()
    }

    pub fn scheme(&self) -> &AddressScheme {
        &self.scheme
    }

    pub fn last_eot(&self) -> &Eot {
        &self.last_eot
    }

    pub fn last_eot_address(&self) -> MediaAddress {
        self.last_eot_addr
    }

    /// Ordinal of the first virgin block.
    pub fn next_write_ordinal(&self) -> u64 {
        self.next_write
    }

    pub fn usable_blocks(&self) -> u64 {
        self.usable_blocks
    }

    pub fn has_open_transaction(&self) -> bool {
        self.trans.is_some()
    }

    pub fn owner(&self) -> &str {
        &self.last_eot.owners_name
    }

    pub(crate) fn clock_now(&self) -> Timestamp {
        self.clock.now()
    }

    /// Open the transaction implicitly at the first mutation.
    pub(crate) fn open_transaction(&mut self) {
        if self.trans.is_none() {
            self.trans = Some(TransState {
                start: self.clock.now(),
                files_written: 0,
            });
        }
    }

    pub(crate) fn note_file_written(&mut self) {
        if let Some(t) = self.trans.as_mut() {
            t.files_written += 1;
        }
    }

    pub(crate) fn alloc_file_number(&mut self) -> u32 {
        let n = self.next_free_file_number;
        self.next_free_file_number += 1;
        n
    }

    // ----- media access ----------------------------------------------------

    pub(crate) fn read_span(&self, addr: MediaAddress, len: usize) -> Result<Vec<u8>> {
        read_span(self.dev.as_ref(), addr, len)
    }

    /// Raw committed bytes starting at an address; for record inspection.
    pub fn read_record_bytes(&self, addr: MediaAddress, len: usize) -> Result<Vec<u8>> {
        self.read_span(addr, len)
    }

    /// Decode the file map record at an address; for record inspection.
    pub fn read_filemap_record(&self, addr: MediaAddress) -> Result<format::FileMap> {
        self.read_filemap_at(addr)
    }

    /// Read and validate a file header. `size_hint` of 0 means unknown;
    /// the base section is read first to learn the full length.
    pub(crate) fn read_fileheader_at(
        &self,
        addr: MediaAddress,
        size_hint: u16,
    ) -> Result<FileHeader> {
        if size_hint as usize >= FILEHEADER_BASE_LEN {
            let bytes = self.read_span(addr, size_hint as usize)?;
            match decode_fileheader(&bytes, addr) {
                Err(Error::Truncated { .. }) => {}
                other => return other,
            }
        }
        let base = self.read_span(addr, FILEHEADER_BASE_LEN)?;
        let total = u16::from_le_bytes(base[14..16].try_into().unwrap()) as usize;
        if total < FILEHEADER_BASE_LEN {
            return Err(Error::Truncated { kind: "fileheader" });
        }
        let bytes = self.read_span(addr, total)?;
        decode_fileheader(&bytes, addr)
    }

    /// Read a file map whose strip count is not known in advance.
    pub(crate) fn read_filemap_at(&self, addr: MediaAddress) -> Result<format::FileMap> {
        let info = self.read_span(addr, format::STRIP_INFO_LEN)?;
        let count = format::filemap_strip_count(&info)? as usize;
        let total = format::STRIP_INFO_LEN + count * format::FRAGMENT_DESCRIPTOR_SIZE;
        let bytes = self.read_span(addr, total)?;
        format::decode_filemap(&bytes)
    }

    pub(crate) fn read_dir_list_at(&self, addr: MediaAddress) -> Result<DirList> {
        let header = self.read_span(addr, DIR_LIST_HEADER_LEN)?;
        let count = dir_list_entry_count(&header)? as usize;
        let total = DIR_LIST_HEADER_LEN + count * format::DIR_LIST_ELEMENT_SIZE;
        let bytes = self.read_span(addr, total)?;
        decode_dir_list(&bytes, addr)
    }

    /// Append one record group; it starts at offset 0 of the first virgin
    /// block and the final partial block is zero padded. Fails before
    /// writing anything when the media cannot hold it.
    pub(crate) fn append_record(&mut self, bytes: &[u8]) -> Result<MediaAddress> {
        self.append_group(&[bytes])
    }

    pub(crate) fn append_group(&mut self, parts: &[&[u8]]) -> Result<MediaAddress> {
        let total: usize = parts.iter().map(|p| p.len()).sum();
        let bs = self.scheme.block_size() as usize;
        let blocks = total.max(1).div_ceil(bs);
        let available = self.usable_blocks.saturating_sub(self.next_write);
        if blocks as u64 > available {
            return Err(Error::MediaFull {
                needed: blocks as u64,
                available,
            });
        }
        let start = self.scheme.address_of(self.next_write, 0)?;
        let mut buf = Vec::with_capacity(total.min(bs));
        let mut ordinal = self.next_write;
        for part in parts {
            let mut rest: &[u8] = part;
            while !rest.is_empty() {
                let take = (bs - buf.len()).min(rest.len());
                buf.extend_from_slice(&rest[..take]);
                rest = &rest[take..];
                if buf.len() == bs {
                    self.dev
                        .write_next(self.scheme.address_of(ordinal, 0)?, &buf)?;
                    ordinal += 1;
                    buf.clear();
                }
            }
        }
        if !buf.is_empty() || total == 0 {
            self.dev
                .write_next(self.scheme.address_of(ordinal, 0)?, &buf)?;
            ordinal += 1;
        }
        self.next_write = ordinal;
        Ok(start)
    }

    // ----- catalog ---------------------------------------------------------

    fn fresh_root_catalog(&self) -> Catalog {
        let creation = self.last_eot.filesystem_creation_time;
        let mut dirs = BTreeMap::new();
        dirs.insert(
            ROOT_DIR,
            DirNode {
                number: ROOT_DIR,
                parent: ROOT_DIR,
                header_location: MediaAddress::NULL,
                header_size: 0,
                data_len: 0,
                modify_time: creation,
                contained_bytes: 0,
                dirty: false,
                name: None,
                loaded: Some(LoadedDir {
                    entries: Vec::new(),
                    dir_version: 0,
                    creation_time: creation,
                }),
            },
        );
        Catalog {
            dirs,
            dir_list_addr: MediaAddress::NULL,
        }
    }

    /// Load the directory catalog if not yet loaded. Mounting defers this
    /// so the probe budget of mount itself stays within the seek bound.
    pub(crate) fn ensure_catalog(&mut self) -> Result<()> {
        if self.catalog.is_some() {
            return Ok(());
        }
        let catalog = if self.last_eot.current_dir_list.is_null() {
            self.fresh_root_catalog()
        } else {
            let addr = self.last_eot.current_dir_list;
            let list = self.read_dir_list_at(addr)?;
            let mut dirs = BTreeMap::new();
            for e in &list.elements {
                dirs.insert(
                    e.dir_number,
                    DirNode {
                        number: e.dir_number,
                        parent: e.containing_dir,
                        header_location: e.header_location,
                        header_size: e.header_size,
                        data_len: 0,
                        modify_time: e.modify_time,
                        contained_bytes: e.contained_bytes,
                        dirty: false,
                        name: None,
                        loaded: None,
                    },
                );
            }
            if !dirs.contains_key(&ROOT_DIR) {
                return Err(Error::UnknownDirectory(ROOT_DIR));
            }
            Catalog {
                dirs,
                dir_list_addr: addr,
            }
        };
        self.catalog = Some(catalog);
        Ok(())
    }

    pub(crate) fn node(&self, dirnum: u32) -> Result<&DirNode> {
        self.catalog
            .as_ref()
            .and_then(|c| c.dirs.get(&dirnum))
            .ok_or(Error::UnknownDirectory(dirnum))
    }

    pub(crate) fn node_mut(&mut self, dirnum: u32) -> Result<&mut DirNode> {
        self.catalog
            .as_mut()
            .and_then(|c| c.dirs.get_mut(&dirnum))
            .ok_or(Error::UnknownDirectory(dirnum))
    }

    /// Make sure a directory's entry array is in memory.
    pub(crate) fn load_dir(&mut self, dirnum: u32) -> Result<()> {
        self.ensure_catalog()?;
        let node = self.node(dirnum)?;
        if node.loaded.is_some() {
            return Ok(());
        }
        let (header_location, header_size) = (node.header_location, node.header_size);
        if header_location.is_null() {
            let creation = self.last_eot.filesystem_creation_time;
            let node = self.node_mut(dirnum)?;
            node.loaded = Some(LoadedDir {
                entries: Vec::new(),
                dir_version: 0,
                creation_time: creation,
            });
            return Ok(());
        }
        let header = self.read_fileheader_at(header_location, header_size)?;
        let info = header
            .file_info
            .as_ref()
            .ok_or(Error::Truncated { kind: "fileheader" })?;
        let data = self.read_span(info.file_location, info.file_length as usize)?;
        let directory = format::decode_directory(&data)?;
        let loaded = LoadedDir {
            entries: directory.entries,
            dir_version: info.file_version_number,
            creation_time: info.creation_time,
        };
        let node = self.node_mut(dirnum)?;
        node.data_len = info.file_length;
        node.loaded = Some(loaded);
        Ok(())
    }

    pub(crate) fn entries(&mut self, dirnum: u32) -> Result<&[format::DirEntry]> {
        self.load_dir(dirnum)?;
        Ok(&self.node(dirnum)?.loaded.as_ref().unwrap().entries)
    }

    /// Name of a directory, loading it from the parent when not cached.
    /// The root has no name.
    pub(crate) fn name_of(&mut self, dirnum: u32) -> Result<FileName> {
        if dirnum == ROOT_DIR {
            return Ok(FileName::root());
        }
        if let Some(name) = &self.node(dirnum)?.name {
            return Ok(name.clone());
        }
        let parent = self.node(dirnum)?.parent;
        self.load_dir(parent)?;
        let found = self
            .node(parent)?
            .loaded
            .as_ref()
            .unwrap()
            .entries
            .iter()
            .find(|e| e.file_type == FileType::Directory && e.file_number == dirnum)
            .map(|e| e.file_name.clone())
            .ok_or(Error::UnknownDirectory(dirnum))?;
        self.node_mut(dirnum)?.name = Some(found.clone());
        Ok(found)
    }

    /// Absolute pathname in on-media form: each component preceded by the
    /// down delimiter. Returns the bytes and the offset of the final name.
    pub(crate) fn path_bytes(
        &mut self,
        dirnum: u32,
        final_name: Option<&FileName>,
    ) -> Result<(Vec<u8>, u16)> {
        let mut names: Vec<FileName> = Vec::new();
        let mut cur = dirnum;
        let mut hops = 0usize;
        while cur != ROOT_DIR {
            names.push(self.name_of(cur)?);
            cur = self.node(cur)?.parent;
            hops += 1;
            if hops > 4096 {
                return Err(Error::UnknownDirectory(dirnum));
            }
        }
        names.reverse();
        if let Some(name) = final_name {
            names.push(name.clone());
        }
        let mut path = Vec::new();
        let mut offset = 1u16;
        if names.is_empty() {
            path.push(DOWN_DELIMITER);
        } else {
            for name in &names {
                path.push(DOWN_DELIMITER);
                offset = path.len() as u16;
                path.extend_from_slice(name.as_bytes());
            }
        }
        Ok((path, offset))
    }

    pub(crate) fn depth_of(&self, dirnum: u32) -> Result<u32> {
        let mut depth = 0;
        let mut cur = dirnum;
        while cur != ROOT_DIR {
            cur = self.node(cur)?.parent;
            depth += 1;
            if depth > 4096 {
                return Err(Error::UnknownDirectory(dirnum));
            }
        }
        Ok(depth)
    }

    /// Mark a directory modified at `now` and open the transaction.
    pub(crate) fn touch_dir(&mut self, dirnum: u32, now: Timestamp) -> Result<()> {
        self.open_transaction();
        let node = self.node_mut(dirnum)?;
        node.dirty = true;
        node.modify_time = node.modify_time.max(now);
        Ok(())
    }

    /// Site description stored on the root header.
    pub(crate) fn site(&mut self) -> Result<SiteInfo> {
        if let Some(site) = &self.site_cache {
            return Ok(site.clone());
        }
        self.ensure_catalog()?;
        let root = self.node(ROOT_DIR)?;
        let site = if root.header_location.is_null() {
            SiteInfo {
                opsys: String::new(),
                opsys_version: String::new(),
                site_name: String::new(),
            }
        } else {
            let header = self.read_fileheader_at(root.header_location, root.header_size)?;
            header.site_info.unwrap_or(SiteInfo {
                opsys: String::new(),
                opsys_version: String::new(),
                site_name: String::new(),
            })
        };
        self.site_cache = Some(site.clone());
        Ok(site)
    }

    // ----- commit ----------------------------------------------------------

    /// Complete the current transaction: write every modified directory
    /// (deepest first, root last), the directory list, and the EOT.
    /// Returns the address of the new EOT.
    pub fn commit(&mut self) -> Result<MediaAddress> {
        if self.write_stream_open {
            return Err(Error::WriteStreamOpen);
        }
        if self.trans.is_none() {
            return Err(Error::NoOpenTransaction);
        }
        self.ensure_catalog()?;
        let now = {
            let t = self.clock.now();
            t.max(self.trans.as_ref().unwrap().start)
        };

        let mut dirty: Vec<u32> = self
            .catalog
            .as_ref()
            .unwrap()
            .dirs
            .values()
            .filter(|n| n.dirty)
            .map(|n| n.number)
            .collect();

        self.recompute_rollups(&dirty)?;

        // Deepest first so a crash mid-commit never leaves a written
        // directory referencing an unwritten child.
        let mut with_depth: Vec<(u32, u32)> = Vec::with_capacity(dirty.len());
        for d in dirty.drain(..) {
            with_depth.push((self.depth_of(d)?, d));
        }
        with_depth.sort_by(|a, b| b.cmp(a));

        let dirs_written = with_depth.len() as u32;
        for (_, dirnum) in &with_depth {
            self.write_directory(*dirnum, now)?;
        }

        // Directory list.
        let elements: Vec<DirListElement> = self
            .catalog
            .as_ref()
            .unwrap()
            .dirs
            .values()
            .map(|n| DirListElement {
                dir_number: n.number,
                header_location: n.header_location,
                containing_dir: n.parent,
                modify_time: n.modify_time,
                contained_bytes: n.contained_bytes,
                header_size: n.header_size,
            })
            .collect();
        let list_addr = self.scheme.address_of(self.next_write, 0)?;
        let list = DirList {
            dir_list_loc: list_addr,
            prev_dir_list: self.last_eot.current_dir_list,
            elements,
        };
        let list_bytes = encode_dir_list(&list)?;
        self.append_record(&list_bytes)?;
        self.catalog.as_mut().unwrap().dir_list_addr = list_addr;

        // Terminal EOT, sole content of a fresh block.
        let trans = self.trans.as_ref().unwrap();
        let eot_addr = self.scheme.address_of(self.next_write, 0)?;
        let eot = Eot {
            eot_location: eot_addr,
            implementation_id: IMPLEMENTATION_ID,
            current_dir_list: list_addr,
            previous_eot_location: self.last_eot_addr,
            next_eot_location: MediaAddress::NULL,
            filesystem_creation_time: self.last_eot.filesystem_creation_time,
            trans_number: self.last_eot.trans_number + 1,
            trans_start_time: trans.start,
            trans_end_time: now,
            files_written_on_trans: trans.files_written,
            dirs_written_on_trans: dirs_written,
            next_free_file_number: self.next_free_file_number,
            scheme: self.scheme.clone(),
            encryption_standard: self.last_eot.encryption_standard,
            owners_name: self.last_eot.owners_name.clone(),
        };
        let eot_bytes = encode_eot(&eot)?;
        self.append_record(&eot_bytes)?;
        self.last_eot = eot;
        self.last_eot_addr = eot_addr;
        self.trans = None;
        Ok(eot_addr)
    }

    /// Recompute rolled-up modify times and contained bytes for every
    /// dirty directory and its ancestors, deepest first. Values of
    /// unchanged siblings are taken as they stand.
    fn recompute_rollups(&mut self, dirty: &[u32]) -> Result<()> {
        use std::collections::BTreeSet;
        let mut affected: BTreeSet<u32> = BTreeSet::new();
        for &d in dirty {
            let mut cur = d;
            loop {
                affected.insert(cur);
                if cur == ROOT_DIR {
                    break;
                }
                cur = self.node(cur)?.parent;
            }
        }
        let mut ordered: Vec<(u32, u32)> = Vec::with_capacity(affected.len());
        for &d in &affected {
            ordered.push((self.depth_of(d)?, d));
        }
        ordered.sort_by(|a, b| b.cmp(a));

        for (_, dirnum) in ordered {
            self.load_dir(dirnum)?;
            let child_dirs: Vec<u32> = self
                .node(dirnum)?
                .loaded
                .as_ref()
                .unwrap()
                .entries
                .iter()
                .filter(|e| e.file_type == FileType::Directory)
                .map(|e| e.file_number)
                .collect();
            let mut contained: u64 = self
                .node(dirnum)?
                .loaded
                .as_ref()
                .unwrap()
                .entries
                .iter()
                .filter(|e| e.file_type.has_content())
                .map(|e| u64::from(e.file_size))
                .sum();
            let mut modify = self.node(dirnum)?.modify_time;
            for child in child_dirs {
                let c = self.node(child)?;
                contained += c.contained_bytes;
                modify = modify.max(c.modify_time);
            }
            let node = self.node_mut(dirnum)?;
            node.contained_bytes = contained;
            node.modify_time = modify;
        }
        Ok(())
    }

    /// Write one dirty directory: file header followed contiguously by the
    /// directory record.
    fn write_directory(&mut self, dirnum: u32, now: Timestamp) -> Result<()> {
        self.load_dir(dirnum)?;

        // Refresh the entries describing child directories from their
        // nodes; deeper directories were written first.
        let child_updates: Vec<(u32, Timestamp, u32, u32, u16)> = {
            let node = self.node(dirnum)?;
            node.loaded
                .as_ref()
                .unwrap()
                .entries
                .iter()
                .filter(|e| e.file_type == FileType::Directory)
                .map(|e| e.file_number)
                .collect::<Vec<u32>>()
                .into_iter()
                .map(|num| {
                    let c = self.node(num).expect("child dir in catalog");
                    (num, c.modify_time, c.data_len, c.loaded.as_ref().map_or(0, |l| l.dir_version), c.header_size)
                })
                .collect()
        };
        {
            let node = self.node_mut(dirnum)?;
            let entries = &mut node.loaded.as_mut().unwrap().entries;
            for (num, modify, data_len, version, header_size) in child_updates {
                if let Some(e) = entries
                    .iter_mut()
                    .find(|e| e.file_type == FileType::Directory && e.file_number == num)
                {
                    e.modify_time = modify;
                    if version > 0 {
                        e.file_version = version;
                        e.file_size = data_len;
                        e.header_size = header_size;
                    }
                }
            }
        }

        let (pathname, filename_offset) = self.path_bytes(dirnum, None)?;
        let site = if dirnum == ROOT_DIR {
            Some(self.site()?)
        } else {
            None
        };

        let node = self.node(dirnum)?;
        let loaded = node.loaded.as_ref().unwrap();
        let directory = Directory {
            entries: loaded.entries.clone(),
        };
        let data = format::encode_directory(&directory)?;
        let group_addr = self.scheme.address_of(self.next_write, 0)?;

        let mut header = FileHeader::new(group_addr, dirnum, FileType::Directory);
        header.backup_info = Some(BackupInfo {
            containing_directory_number: node.parent,
            previous_version_location: node.header_location,
            previous_eot_location: self.last_eot_addr,
            filename_offset,
            previous_version_header_size: node.header_size,
            backup_pathname: pathname,
        });
        header.site_info = site;
        let dir_version = loaded.dir_version + 1;
        let creation_time = loaded.creation_time;
        let header_len = {
            // file_info is fixed size; account for it before computing the
            // content location.
            let mut probe = header.clone();
            probe.file_info = Some(FileInfo {
                file_location: MediaAddress::ZERO,
                file_length: 0,
                write_time: now,
                creation_time,
                file_version_number: dir_version,
            });
            probe.serialized_len()
        };
        header.file_info = Some(FileInfo {
            file_location: self.scheme.add_bytes(group_addr, header_len as u64)?,
            file_length: data.len() as u32,
            write_time: now,
            creation_time,
            file_version_number: dir_version,
        });
        let header_bytes = format::encode_fileheader(&header)?;
        debug_assert_eq!(header_bytes.len(), header_len);
        self.append_group(&[&header_bytes, &data])?;

        let node = self.node_mut(dirnum)?;
        node.header_location = group_addr;
        node.header_size = header_bytes.len() as u16;
        node.data_len = data.len() as u32;
        node.loaded.as_mut().unwrap().dir_version = dir_version;
        node.dirty = false;
        Ok(())
    }
}
