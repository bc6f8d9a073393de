//! Consistency checking: walk the transaction chain and every reachable
//! structure, validating magic, checksum and self-reference, and classify
//! every written block.

use std::collections::HashSet;

use crate::device::{BlockReadResult, MediaAddress};
use crate::error::{Error, Result};
use crate::format::{decode_directory, decode_eot, FileType};
use crate::volume::Volume;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StructureKind {
    Eot,
    DirList,
    FileHeader,
    Directory,
    FileMap,
    Content,
}

impl std::fmt::Display for StructureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            StructureKind::Eot => "eot",
            StructureKind::DirList => "dirlist",
            StructureKind::FileHeader => "fileheader",
            StructureKind::Directory => "directory",
            StructureKind::FileMap => "filemap",
            StructureKind::Content => "content",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FsckStatus {
    Ok,
    BadMagic,
    BadChecksum,
    SelfRefMismatch,
    Unreadable,
    Orphaned,
}

impl std::fmt::Display for FsckStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FsckStatus::Ok => "ok",
            FsckStatus::BadMagic => "bad-magic",
            FsckStatus::BadChecksum => "bad-checksum",
            FsckStatus::SelfRefMismatch => "self-ref-mismatch",
            FsckStatus::Unreadable => "unreadable",
            FsckStatus::Orphaned => "orphaned",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Finding {
    pub address: MediaAddress,
    pub kind: StructureKind,
    pub status: FsckStatus,
    pub detail: String,
}

#[derive(Debug)]
pub struct FsckReport {
    pub findings: Vec<Finding>,
    /// EOTs on the chain from the last transaction down to block 0.
    pub chain_length: u32,
    /// Transaction numbers descend by exactly one along the chain.
    pub chain_consistent: bool,
    pub files: u32,
    pub dirs: u32,
    /// Distinct file header records validated, including history.
    pub versions: u32,
    pub orphaned_blocks: Vec<u64>,
    pub destroyed_blocks: Vec<u64>,
}

impl FsckReport {
    /// No structural damage and nothing orphaned or destroyed.
    pub fn clean(&self) -> bool {
        self.structures_valid()
            && self.chain_consistent
            && self.orphaned_blocks.is_empty()
            && self.destroyed_blocks.is_empty()
    }

    /// Every reachable structure validated.
    pub fn structures_valid(&self) -> bool {
        self.findings.iter().all(|f| f.status == FsckStatus::Ok)
    }

    pub fn render(&self, volume: &Volume) -> String {
        use std::fmt::Write;
        let scheme = volume.scheme();
        let mut out = String::new();
        for f in &self.findings {
            let _ = write!(
                out,
                "{} {} {}",
                f.kind,
                scheme.format_address(f.address),
                f.status
            );
            if f.detail.is_empty() {
                out.push('\n');
            } else {
                let _ = writeln!(out, " {}", f.detail);
            }
        }
        let _ = writeln!(out, "chain_length = {}", self.chain_length);
        let _ = writeln!(out, "chain_consistent = {}", self.chain_consistent);
        let _ = writeln!(out, "files = {}", self.files);
        let _ = writeln!(out, "dirs = {}", self.dirs);
        let _ = writeln!(out, "versions = {}", self.versions);
        let _ = writeln!(out, "orphaned_blocks = {}", self.orphaned_blocks.len());
        let _ = writeln!(out, "destroyed_blocks = {}", self.destroyed_blocks.len());
        let _ = writeln!(out, "clean = {}", self.clean());
        out
    }
}

fn status_of(err: &Error) -> FsckStatus {
    match err {
        Error::BadMagic { .. } => FsckStatus::BadMagic,
        Error::BadChecksum { .. } => FsckStatus::BadChecksum,
        Error::SelfRefMismatch { .. } => FsckStatus::SelfRefMismatch,
        Error::BlockVirgin { .. } | Error::BlockUnreadable { .. } => FsckStatus::Unreadable,
        _ => FsckStatus::BadChecksum,
    }
}

struct Walker<'v> {
    volume: &'v Volume,
    findings: Vec<Finding>,
    covered: Vec<bool>,
    visited_headers: HashSet<u64>,
    visited_lists: HashSet<u64>,
    versions: u32,
}

impl<'v> Walker<'v> {
    fn cover_span(&mut self, addr: MediaAddress, len: usize) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        let scheme = self.volume.scheme();
        let (ordinal, offset) = scheme.split(addr)?;
        let bs = u64::from(scheme.block_size());
        let last = (u64::from(offset) + len as u64 - 1) / bs + ordinal;
        for b in ordinal..=last {
            if let Some(slot) = self.covered.get_mut(b as usize) {
                *slot = true;
            }
        }
        Ok(())
    }

    fn push(&mut self, addr: MediaAddress, kind: StructureKind, status: FsckStatus, detail: String) {
        self.findings.push(Finding {
            address: addr,
            kind,
            status,
            detail,
        });
    }

    fn pushe(&mut self, addr: MediaAddress, kind: StructureKind, err: &Error) {
        self.push(addr, kind, status_of(err), err.to_string());
    }

    /// Check every block under a content span for readability.
    fn check_content(&mut self, addr: MediaAddress, len: usize) -> Result<()> {
        if len == 0 {
            return Ok(());
        }
        self.cover_span(addr, len)?;
        let scheme = self.volume.scheme();
        let (ordinal, offset) = scheme.split(addr)?;
        let bs = u64::from(scheme.block_size());
        let last = (u64::from(offset) + len as u64 - 1) / bs + ordinal;
        for b in ordinal..=last {
            let a = scheme.address_of(b, 0)?;
            match self.volume.device().read_block(a)? {
                BlockReadResult::Written(_) => {}
                BlockReadResult::Unreadable => {
                    self.push(a, StructureKind::Content, FsckStatus::Unreadable, String::new());
                }
                BlockReadResult::Virgin => {
                    self.push(
                        a,
                        StructureKind::Content,
                        FsckStatus::Unreadable,
                        "content block is virgin".to_owned(),
                    );
                }
            }
        }
        Ok(())
    }

    /// Walk one file header and everything it references, then its version
    /// chain through the backup info.
    fn walk_header_chain(&mut self, start: MediaAddress, mut size_hint: u16) -> Result<()> {
        let mut at = start;
        loop {
            if at.is_null() || !self.visited_headers.insert(at.raw()) {
                return Ok(());
            }
            let header = match self.volume.read_fileheader_at(at, size_hint) {
                Ok(h) => h,
                Err(e) => {
                    self.pushe(at, StructureKind::FileHeader, &e);
                    return Ok(());
                }
            };
            self.cover_span(at, header.serialized_len())?;
            self.versions += 1;
            self.push(
                at,
                StructureKind::FileHeader,
                FsckStatus::Ok,
                format!("file={} type={}", header.file_number, header.file_type),
            );

            if let Some(info) = &header.file_info {
                match header.file_type {
                    FileType::Directory => self.walk_directory_data(
                        info.file_location,
                        info.file_length as usize,
                    )?,
                    FileType::Fragmented => {
                        self.walk_filemap(info.file_location)?;
                    }
                    _ => self.check_content(info.file_location, info.file_length as usize)?,
                }
            }

            match &header.backup_info {
                Some(b) if !b.previous_version_location.is_null() => {
                    size_hint = b.previous_version_header_size;
                    at = b.previous_version_location;
                }
                _ => return Ok(()),
            }
        }
    }

    fn walk_directory_data(&mut self, addr: MediaAddress, len: usize) -> Result<()> {
        self.cover_span(addr, len)?;
        let data = match self.volume.read_span(addr, len) {
            Ok(d) => d,
            Err(e) => {
                self.pushe(addr, StructureKind::Directory, &e);
                return Ok(());
            }
        };
        let directory = match decode_directory(&data) {
            Ok(d) => d,
            Err(e) => {
                self.pushe(addr, StructureKind::Directory, &e);
                return Ok(());
            }
        };
        self.push(
            addr,
            StructureKind::Directory,
            FsckStatus::Ok,
            format!("entries={}", directory.entries.len()),
        );
        for entry in &directory.entries {
            match entry.file_type {
                FileType::Directory | FileType::Addname | FileType::FirmLink => {}
                _ => self.walk_header_chain(entry.header_location, entry.header_size)?,
            }
        }
        Ok(())
    }

    fn walk_filemap(&mut self, addr: MediaAddress) -> Result<()> {
        let map = match self.volume.read_filemap_at(addr) {
            Ok(m) => m,
            Err(e) => {
                self.pushe(addr, StructureKind::FileMap, &e);
                return Ok(());
            }
        };
        self.cover_span(addr, map.serialized_len())?;
        self.push(
            addr,
            StructureKind::FileMap,
            FsckStatus::Ok,
            format!("strips={}", map.descriptors.len()),
        );
        for d in &map.descriptors {
            self.check_content(d.loc, d.valid_chars as usize)?;
        }
        Ok(())
    }

    fn walk_dir_list(&mut self, addr: MediaAddress) -> Result<()> {
        if addr.is_null() || !self.visited_lists.insert(addr.raw()) {
            return Ok(());
        }
        let list = match self.volume.read_dir_list_at(addr) {
            Ok(l) => l,
            Err(e) => {
                self.pushe(addr, StructureKind::DirList, &e);
                return Ok(());
            }
        };
        self.cover_span(
            addr,
            crate::format::DIR_LIST_HEADER_LEN
                + list.elements.len() * crate::format::DIR_LIST_ELEMENT_SIZE,
        )?;
        self.push(
            addr,
            StructureKind::DirList,
            FsckStatus::Ok,
            format!("entries={}", list.elements.len()),
        );
        for e in &list.elements {
            self.walk_header_chain(e.header_location, e.header_size)?;
        }
        Ok(())
    }
}

impl Volume {
    /// Walk the transaction chain and every reachable structure, verifying
    /// the validation trio on each, and classify every written block.
    pub fn fsck(&mut self) -> Result<FsckReport> {
        self.ensure_catalog()?;

        let mut walker = Walker {
            volume: self,
            findings: Vec::new(),
            covered: vec![false; self.next_write as usize],
            visited_headers: HashSet::new(),
            visited_lists: HashSet::new(),
            versions: 0,
        };

        // Transaction chain, newest first.
        let scheme = self.scheme.clone();
        let mut chain: Vec<(MediaAddress, u32, MediaAddress)> = Vec::new();
        let mut chain_consistent = true;
        let mut at = self.last_eot_addr;
        loop {
            walker.cover_span(at, 1)?;
            let ordinal = scheme.ordinal_of(at)?;
            let block = match self.dev.read_block(scheme.address_of(ordinal, 0)?)? {
                BlockReadResult::Written(bytes) => bytes,
                BlockReadResult::Virgin => {
                    walker.push(at, StructureKind::Eot, FsckStatus::Unreadable, "virgin".into());
                    chain_consistent = false;
                    break;
                }
                BlockReadResult::Unreadable => {
                    walker.push(at, StructureKind::Eot, FsckStatus::Unreadable, String::new());
                    chain_consistent = false;
                    break;
                }
            };
            match decode_eot(&block, at) {
                Ok(eot) => {
                    walker.push(
                        at,
                        StructureKind::Eot,
                        FsckStatus::Ok,
                        format!("trans={}", eot.trans_number),
                    );
                    chain.push((at, eot.trans_number, eot.current_dir_list));
                    if eot.previous_eot_location.is_null() {
                        break;
                    }
                    at = eot.previous_eot_location;
                }
                Err(e) => {
                    walker.pushe(at, StructureKind::Eot, &e);
                    chain_consistent = false;
                    break;
                }
            }
        }
        for pair in chain.windows(2) {
            if pair[0].1 != pair[1].1 + 1 {
                chain_consistent = false;
            }
        }
        if let Some(last) = chain.last() {
            if last.1 != 0 {
                chain_consistent = false;
            }
        }

        for (_, _, dir_list) in &chain {
            walker.walk_dir_list(*dir_list)?;
        }

        // Classify the remaining written blocks.
        let mut orphaned_blocks = Vec::new();
        let mut destroyed_blocks = Vec::new();
        for ordinal in 0..self.next_write {
            let a = scheme.address_of(ordinal, 0)?;
            match self.dev.read_block(a)? {
                BlockReadResult::Unreadable => destroyed_blocks.push(ordinal),
                BlockReadResult::Written(_) => {
                    if !walker.covered[ordinal as usize] {
                        orphaned_blocks.push(ordinal);
                        walker.push(a, StructureKind::Content, FsckStatus::Orphaned, String::new());
                    }
                }
                BlockReadResult::Virgin => {}
            }
        }

        let Walker {
            findings, versions, ..
        } = walker;

        // Live counts from the current catalog.
        let live_dirs: Vec<u32> = self.catalog.as_ref().unwrap().dirs.keys().copied().collect();
        let mut files = 0u32;
        for d in live_dirs.iter() {
            self.load_dir(*d)?;
            files += self
                .node(*d)?
                .loaded
                .as_ref()
                .unwrap()
                .entries
                .iter()
                .filter(|e| {
                    matches!(
                        e.file_type,
                        FileType::File | FileType::Fragmented | FileType::SoftLink
                    )
                })
                .count() as u32;
        }

        Ok(FsckReport {
            findings,
            chain_length: chain.len() as u32,
            chain_consistent,
            files,
            dirs: live_dirs.len() as u32,
            versions,
            orphaned_blocks,
            destroyed_blocks,
        })
    }
}
