//! Command execution: a thin adapter from parsed arguments to library
//! calls. Path syntax uses `/` going down and `..` as an up delimiter.

use std::io::Write;
use std::path::Path;

use clap::Parser as _;

use cdfs::device::{AddressScheme, DeviceGeometry, SchemeEntry, SimDevice};
use cdfs::format::{
    decode_dir_list, decode_eot, decode_fileheader, dump, FileName, FileType, SiteInfo,
    DIR_LIST_MAGIC, DOWN_DELIMITER, EOT_MAGIC, FILEHEADER_MAGIC, UP_DELIMITER,
};
use cdfs::namespace::FileInfoView;
use cdfs::volume::ROOT_DIR;
use cdfs::{Error, Volume};

use crate::{Command, ScriptLine};

pub enum CliError {
    Usage(String),
    Op(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> CliError {
        CliError::Op(e)
    }
}

type CliResult<T> = Result<T, CliError>;

pub fn run(image: &Path, command: Command) -> CliResult<()> {
    match command {
        Command::Init {
            capacity_blocks,
            block_size,
            scheme,
            owner,
            site,
        } => init(image, capacity_blocks, block_size, scheme, owner, site).map(|_| ()),
        Command::Script { file } => script(image, &file),
        other => {
            let mutates = other.mutates();
            let mut volume = mount(image)?;
            execute(&mut volume, other)?;
            if mutates && volume.has_open_transaction() {
                volume.commit()?;
            }
            Ok(())
        }
    }
}

fn mount(image: &Path) -> CliResult<Volume> {
    let dev = SimDevice::open_or_create(image, None)?;
    Ok(Volume::mount(Box::new(dev))?)
}

fn init(
    image: &Path,
    capacity_blocks: u64,
    block_size: u32,
    scheme: Option<String>,
    owner: String,
    site: String,
) -> CliResult<Volume> {
    if image.exists() {
        return Err(CliError::Usage(format!(
            "{} already exists; init needs a fresh image",
            image.display()
        )));
    }
    let scheme = match scheme {
        Some(text) => parse_scheme(&text)?,
        None => {
            if block_size == 2048 && capacity_blocks <= 70 * 60 * 75 {
                AddressScheme::audio()
            } else {
                AddressScheme::linear(capacity_blocks, block_size)?
            }
        }
    };
    if scheme.block_size() != block_size {
        return Err(CliError::Usage(format!(
            "scheme offset modulo {} disagrees with --block-size {block_size}",
            scheme.block_size()
        )));
    }
    let geometry = DeviceGeometry::new(capacity_blocks, scheme)?;
    let dev = SimDevice::open_or_create(image, Some(geometry))?;
    let site_info = SiteInfo {
        opsys: std::env::consts::OS.to_string(),
        opsys_version: String::new(),
        site_name: site,
    };
    Ok(Volume::init_volume(Box::new(dev), &owner, site_info)?)
}

fn parse_scheme(text: &str) -> CliResult<AddressScheme> {
    let mut entries = Vec::new();
    for part in text.split(',') {
        let (modulo, bits) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bad scheme field {part:?}")))?;
        entries.push(SchemeEntry {
            modulo: modulo
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad modulo {modulo:?}")))?,
            bits: bits
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("bad bit count {bits:?}")))?,
        });
    }
    Ok(AddressScheme::new(entries)?)
}

fn script(image: &Path, file: &Path) -> CliResult<()> {
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Op(e.into()))?;
    let mut volume: Option<Volume> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parsed = ScriptLine::try_parse_from(line.split_whitespace()).map_err(|e| {
            CliError::Usage(format!("script line {}: {e}", lineno + 1))
        })?;
        match parsed.command {
            Command::Init {
                capacity_blocks,
                block_size,
                scheme,
                owner,
                site,
            } => {
                if volume.is_some() {
                    return Err(CliError::Usage(format!(
                        "script line {}: init must come first",
                        lineno + 1
                    )));
                }
                volume = Some(init(image, capacity_blocks, block_size, scheme, owner, site)?);
            }
            Command::Script { .. } => {
                return Err(CliError::Usage(format!(
                    "script line {}: scripts do not nest",
                    lineno + 1
                )));
            }
            other => {
                if volume.is_none() {
                    volume = Some(mount(image)?);
                }
                execute(volume.as_mut().unwrap(), other)?;
            }
        }
    }
    if let Some(mut v) = volume {
        if v.has_open_transaction() {
            v.commit()?;
        }
    }
    Ok(())
}

fn execute(v: &mut Volume, command: Command) -> CliResult<()> {
    match command {
        Command::Init { .. } | Command::Script { .. } => unreachable!("handled by run"),
        Command::Ls { path, long } => {
            let dir = resolve_dir(v, &path)?;
            for e in v.list_entries(dir, None)? {
                if long {
                    println!(
                        "{:<10} v{:<4} {:>10} {} #{:<5} {}{}",
                        e.file_type.to_string(),
                        e.file_version,
                        e.file_size,
                        e.modify_time,
                        e.file_number,
                        e.file_name,
                        if e.addname_count > 0 {
                            format!(" (+{} addnames)", e.addname_count)
                        } else {
                            String::new()
                        }
                    );
                } else {
                    println!("{}", e.file_name);
                }
            }
            Ok(())
        }
        Command::Tree => {
            print_tree(v, ROOT_DIR, 0)?;
            Ok(())
        }
        Command::Put {
            native,
            cdpath,
            align,
            preserve,
        } => {
            let (dir, name) = resolve_parent(v, &cdpath)?;
            v.import_file(&native, dir, &name, align, preserve)?;
            Ok(())
        }
        Command::Get {
            cdpath,
            native,
            version,
            preserve,
        } => {
            let (dir, name) = resolve_parent(v, &cdpath)?;
            v.export_file(dir, &name, version, &native, preserve)?;
            Ok(())
        }
        Command::Cat { cdpath, version } => {
            let (dir, name) = resolve_parent(v, &cdpath)?;
            let content = v.read_version_content(dir, &name, version)?;
            std::io::stdout()
                .write_all(&content)
                .map_err(|e| CliError::Op(e.into()))?;
            Ok(())
        }
        Command::Mkdir { path } => {
            let (dir, name) = resolve_parent(v, &path)?;
            v.mkdir(dir, &name)?;
            Ok(())
        }
        Command::Rm { path } => {
            if path == "/" {
                return Err(CliError::Op(Error::RootDeletion));
            }
            let (dir, name) = resolve_parent(v, &path)?;
            v.delete_entry(dir, Some(&name))?;
            Ok(())
        }
        Command::Mv { old, new } => {
            let (old_dir, old_name) = resolve_parent(v, &old)?;
            let (new_dir, new_name) = if new.contains('/') {
                resolve_parent(v, &new)?
            } else {
                (old_dir, parse_name(&new)?)
            };
            if new_dir != old_dir {
                return Err(CliError::Usage(
                    "mv renames within one directory".to_string(),
                ));
            }
            v.rename_entry(old_dir, &old_name, &new_name)?;
            Ok(())
        }
        Command::Undelete {
            dirpath,
            name,
            version,
            new_number,
        } => {
            let dir = resolve_dir(v, &dirpath)?;
            v.undelete_entry(dir, &parse_name(&name)?, version, new_number)?;
            Ok(())
        }
        Command::Ln {
            target,
            linkpath,
            version,
        } => {
            let (dir, name) = resolve_parent(v, &linkpath)?;
            let (target_dir, target_bytes) = encode_link_target(&target, dir);
            v.make_link(dir, &name, target_dir, &target_bytes, version)?;
            Ok(())
        }
        Command::Addname { primarypath, name } => {
            let (dir, primary) = resolve_parent(v, &primarypath)?;
            v.add_addname(dir, &primary, &parse_name(&name)?)?;
            Ok(())
        }
        Command::History { cdpath } => {
            let (dir, name) = resolve_parent(v, &cdpath)?;
            print_history(v, dir, &name)?;
            Ok(())
        }
        Command::Destroy { cdpath, version } => {
            let (dir, name) = resolve_parent(v, &cdpath)?;
            v.destroy(dir, Some(&name), version)?;
            Ok(())
        }
        Command::Fsck { verbose } => {
            let report = v.fsck()?;
            if verbose {
                print!("{}", report.render(v));
            } else {
                for finding in report
                    .findings
                    .iter()
                    .filter(|f| f.status != cdfs::volume::FsckStatus::Ok)
                {
                    println!(
                        "{} {} {}",
                        finding.kind,
                        v.scheme().format_address(finding.address),
                        finding.status
                    );
                }
                println!("chain_length = {}", report.chain_length);
                println!("files = {}", report.files);
                println!("dirs = {}", report.dirs);
                println!("versions = {}", report.versions);
                println!("orphaned_blocks = {}", report.orphaned_blocks.len());
                println!("destroyed_blocks = {}", report.destroyed_blocks.len());
                println!("clean = {}", report.clean());
            }
            Ok(())
        }
        Command::Compact { dst_image } => {
            if dst_image.exists() {
                return Err(CliError::Usage(format!(
                    "{} already exists; compact needs a fresh image",
                    dst_image.display()
                )));
            }
            let geometry = v.device().geometry().clone();
            let dst = SimDevice::open_or_create(&dst_image, Some(geometry))?;
            v.compact(Box::new(dst))?;
            Ok(())
        }
        Command::Dump { address } => {
            let scheme = v.scheme().clone();
            let addr = if address.eq_ignore_ascii_case("last-eot") {
                v.last_eot_address()
            } else {
                scheme.parse_address(&address)?
            };
            print!("{}", dump_record(v, addr)?);
            Ok(())
        }
        Command::Df => {
            let (written, virgin, destroyed) = v.device().state_counts();
            println!("written = {written}");
            println!("virgin = {virgin}");
            println!("destroyed = {destroyed}");
            Ok(())
        }
    }
}

// ----- path helpers ----------------------------------------------------------

fn parse_name(text: &str) -> CliResult<FileName> {
    text.parse::<FileName>().map_err(CliError::Op)
}

/// Resolve a path that must name a directory.
fn resolve_dir(v: &mut Volume, path: &str) -> CliResult<u32> {
    let resolved = v.resolve_path(path.as_bytes(), ROOT_DIR, "/", "..", false)?;
    match resolved.entry.file_type {
        FileType::Directory => Ok(resolved.file_number),
        FileType::SoftLink => {
            let target = v.resolve_link(&resolved)?;
            if target.entry.file_type == FileType::Directory {
                Ok(target.file_number)
            } else {
                Err(CliError::Op(Error::NotADirectory(path.to_string())))
            }
        }
        _ => Err(CliError::Op(Error::NotADirectory(path.to_string()))),
    }
}

/// Split a path into its containing directory (resolved) and final name.
fn resolve_parent(v: &mut Volume, path: &str) -> CliResult<(u32, FileName)> {
    let trimmed = path.trim_end_matches('/');
    if trimmed.is_empty() {
        return Err(CliError::Usage(format!("{path:?} has no final name")));
    }
    let (parent, name) = match trimmed.rfind('/') {
        Some(at) => (&trimmed[..at], &trimmed[at + 1..]),
        None => ("", trimmed),
    };
    // Bare names resolve from the root context, like absolute paths.
    let dir = if parent.is_empty() {
        ROOT_DIR
    } else {
        resolve_dir(v, parent)?
    };
    Ok((dir, parse_name(name)?))
}

/// Encode a `/`-and-`..` path into the on-media delimited form.
fn encode_link_target(target: &str, link_dir: u32) -> (u32, Vec<u8>) {
    let absolute = target.starts_with('/');
    let start_dir = if absolute { ROOT_DIR } else { link_dir };
    let comps: Vec<&str> = target.split('/').filter(|c| !c.is_empty()).collect();
    let mut bytes = Vec::new();
    let mut pending_name = false;
    for c in comps {
        if c == ".." {
            if pending_name {
                bytes.push(DOWN_DELIMITER);
                pending_name = false;
            }
            bytes.push(UP_DELIMITER);
        } else {
            if pending_name {
                bytes.push(DOWN_DELIMITER);
            }
            bytes.extend_from_slice(c.as_bytes());
            pending_name = true;
        }
    }
    if target.ends_with('/') && pending_name {
        bytes.push(DOWN_DELIMITER);
    }
    (start_dir, bytes)
}

// ----- rendering ---------------------------------------------------------------

fn print_tree(v: &mut Volume, dir: u32, depth: usize) -> CliResult<()> {
    if depth == 0 {
        println!("/");
    }
    let entries = v.list_entries(dir, None)?;
    for e in entries {
        let indent = "  ".repeat(depth + 1);
        match e.file_type {
            FileType::Directory => {
                println!("{indent}{}/", e.file_name);
                print_tree(v, e.file_number, depth + 1)?;
            }
            FileType::SoftLink => println!("{indent}{} -> (soft link)", e.file_name),
            FileType::Addname => println!("{indent}{} (addname of #{})", e.file_name, e.file_number),
            _ => println!("{indent}{}", e.file_name),
        }
    }
    Ok(())
}

fn print_history(v: &mut Volume, dir: u32, name: &FileName) -> CliResult<()> {
    let newest = match v.file_info(dir, name, 0, false)? {
        FileInfoView::Cheap(e) => e,
        FileInfoView::Full { entry, .. } => entry,
    };
    for version in (1..=newest.file_version).rev() {
        match v.file_info(dir, name, version, true) {
            Ok(view) => {
                let header = view.header().expect("full view");
                if let Some(info) = &header.file_info {
                    let pathname = header
                        .backup_info
                        .as_ref()
                        .map(|b| render_pathname(&b.backup_pathname))
                        .unwrap_or_default();
                    println!(
                        "version {version:<3} length {:<10} written {} name {}",
                        info.file_length, info.write_time, pathname
                    );
                } else {
                    println!("version {version:<3} (soft link)");
                }
            }
            Err(Error::VersionDestroyed { .. }) => {
                println!("version {version:<3} destroyed");
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn render_pathname(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            DOWN_DELIMITER => out.push('/'),
            UP_DELIMITER => out.push_str(".."),
            other => out.push(other as char),
        }
    }
    out
}

/// Decode whatever record starts at `addr` by its identifying string.
fn dump_record(v: &mut Volume, addr: cdfs::device::MediaAddress) -> CliResult<String> {
    let scheme = v.scheme().clone();
    let head = v_read(v, addr, 40)?;
    if head.len() < 8 {
        return Err(CliError::Op(Error::Truncated { kind: "record" }));
    }
    let magic: [u8; 8] = head[0..8].try_into().unwrap();
    match magic {
        EOT_MAGIC => {
            let length = u16::from_le_bytes(head[10..12].try_into().unwrap()) as usize;
            let bytes = v_read(v, addr, length.max(40))?;
            let eot = decode_eot(&bytes, addr)?;
            Ok(dump::dump_eot(&eot, &scheme))
        }
        DIR_LIST_MAGIC => {
            let header = v_read(v, addr, cdfs::format::DIR_LIST_HEADER_LEN)?;
            let count = cdfs::format::dir_list_entry_count(&header)? as usize;
            let total = cdfs::format::DIR_LIST_HEADER_LEN
                + count * cdfs::format::DIR_LIST_ELEMENT_SIZE;
            let bytes = v_read(v, addr, total)?;
            let list = decode_dir_list(&bytes, addr)?;
            Ok(dump::dump_dir_list(&list, &scheme))
        }
        FILEHEADER_MAGIC => {
            let total = u16::from_le_bytes(head[14..16].try_into().unwrap()) as usize;
            let bytes = v_read(v, addr, total.max(40))?;
            let header = decode_fileheader(&bytes, addr)?;
            let mut out = dump::dump_fileheader(&header, &scheme);
            // A fragmented file's header leads straight to its map.
            if header.file_type == FileType::Fragmented {
                if let Some(info) = &header.file_info {
                    if let Ok(map) = v.read_filemap_record(info.file_location) {
                        out.push_str(&dump::dump_filemap(&map, &scheme));
                    }
                }
            }
            Ok(out)
        }
        _ => Err(CliError::Op(Error::BadMagic {
            kind: "no recognizable record at this address",
        })),
    }
}

fn v_read(v: &Volume, addr: cdfs::device::MediaAddress, len: usize) -> CliResult<Vec<u8>> {
    Ok(v.read_record_bytes(addr, len)?)
}
