//! Stable text rendering of decoded records: one line per field,
//! `name = value`. Consumed by the command-line `dump` command and usable
//! in golden-file tests.

use std::fmt::Write;

use crate::device::{AddressScheme, MediaAddress};
use crate::format::{
    DirList, Directory, Eot, FileHeader, FileMap, DIR_LIST_MAGIC, EOT_MAGIC, FILEHEADER_MAGIC,
};

fn hex_bytes(bytes: &[u8]) -> String {
    bytes
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn addr(scheme: &AddressScheme, a: MediaAddress) -> String {
    scheme.format_address(a)
}

pub fn dump_eot(e: &Eot, scheme: &AddressScheme) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "record = end-of-transaction");
    let _ = writeln!(out, "id_string = {}", hex_bytes(&EOT_MAGIC));
    let _ = writeln!(out, "eot_version = 1");
    let _ = writeln!(out, "eot_length = {}", e.serialized_len());
    let _ = writeln!(out, "eot_location = {}", addr(scheme, e.eot_location));
    let _ = writeln!(out, "implementation_id = {}", e.implementation_id);
    let _ = writeln!(out, "current_dir_list = {}", addr(scheme, e.current_dir_list));
    let _ = writeln!(
        out,
        "previous_eot_location = {}",
        addr(scheme, e.previous_eot_location)
    );
    let _ = writeln!(
        out,
        "next_eot_location = {}",
        addr(scheme, e.next_eot_location)
    );
    let _ = writeln!(
        out,
        "filesystem_creation_time = {}",
        e.filesystem_creation_time
    );
    let _ = writeln!(out, "trans_number = {}", e.trans_number);
    let _ = writeln!(out, "trans_start_time = {}", e.trans_start_time);
    let _ = writeln!(out, "trans_end_time = {}", e.trans_end_time);
    let _ = writeln!(out, "files_written_on_trans = {}", e.files_written_on_trans);
    let _ = writeln!(out, "dirs_written_on_trans = {}", e.dirs_written_on_trans);
    let _ = writeln!(out, "next_free_file_number = {}", e.next_free_file_number);
    for (i, entry) in e.scheme.entries().iter().enumerate() {
        let _ = writeln!(
            out,
            "pointerdes[{i}] = modulo {}, bits {}",
            entry.modulo, entry.bits
        );
    }
    let _ = writeln!(
        out,
        "number_of_used_pointerdefs = {}",
        e.scheme.used_count()
    );
    let _ = writeln!(
        out,
        "encryption_standard = {}",
        hex_bytes(&e.encryption_standard)
    );
    let _ = writeln!(out, "owners_name = {:?}", e.owners_name);
    out
}

pub fn dump_dir_list(l: &DirList, scheme: &AddressScheme) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "record = directory-list");
    let _ = writeln!(out, "id_string = {}", hex_bytes(&DIR_LIST_MAGIC));
    let _ = writeln!(out, "dir_list_version = 1");
    let _ = writeln!(out, "dir_list_loc = {}", addr(scheme, l.dir_list_loc));
    let _ = writeln!(out, "prev_dir_list = {}", addr(scheme, l.prev_dir_list));
    let _ = writeln!(out, "dir_list_entry_count = {}", l.elements.len());
    for (i, e) in l.elements.iter().enumerate() {
        let _ = writeln!(out, "element[{i}].dir_number = {}", e.dir_number);
        let _ = writeln!(
            out,
            "element[{i}].header_location = {}",
            addr(scheme, e.header_location)
        );
        let _ = writeln!(out, "element[{i}].containing_dir = {}", e.containing_dir);
        let _ = writeln!(out, "element[{i}].modify_time = {}", e.modify_time);
        let _ = writeln!(out, "element[{i}].contained_bytes = {}", e.contained_bytes);
        let _ = writeln!(out, "element[{i}].header_size = {}", e.header_size);
    }
    out
}

pub fn dump_directory(d: &Directory, scheme: &AddressScheme) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "record = directory");
    let _ = writeln!(out, "directory_entries = {}", d.entries.len());
    for (i, e) in d.entries.iter().enumerate() {
        let _ = writeln!(out, "entry[{i}].file_name = {:?}", e.file_name.to_string_lossy());
        let _ = writeln!(
            out,
            "entry[{i}].header_location = {}",
            if e.header_location.raw() == 0 {
                "0 (see directory list)".to_owned()
            } else {
                addr(scheme, e.header_location)
            }
        );
        let _ = writeln!(out, "entry[{i}].modify_time = {}", e.modify_time);
        let _ = writeln!(out, "entry[{i}].file_number = {}", e.file_number);
        let _ = writeln!(out, "entry[{i}].file_size = {}", e.file_size);
        let _ = writeln!(out, "entry[{i}].file_version = {}", e.file_version);
        let _ = writeln!(out, "entry[{i}].file_type = {}", e.file_type);
        let _ = writeln!(out, "entry[{i}].header_size = {}", e.header_size);
        let _ = writeln!(out, "entry[{i}].addname_count = {}", e.addname_count);
    }
    out
}

pub fn dump_fileheader(h: &FileHeader, scheme: &AddressScheme) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "record = fileheader");
    let _ = writeln!(out, "id_string = {}", hex_bytes(&FILEHEADER_MAGIC));
    let _ = writeln!(out, "header_version = 1");
    let _ = writeln!(out, "fileheader_length = {}", h.serialized_len());
    let _ = writeln!(
        out,
        "fileheader_location = {}",
        addr(scheme, h.fileheader_location)
    );
    let _ = writeln!(out, "file_number = {}", h.file_number);
    let _ = writeln!(out, "file_type = {}", h.file_type);
    if let Some(a) = &h.access_info {
        let _ = writeln!(out, "access_info.file_owner = {:?}", a.file_owner);
        let _ = writeln!(out, "access_info.file_group = {:?}", a.file_group);
        let _ = writeln!(out, "access_info.file_access = {:#05o}", a.file_access);
    }
    if let Some(b) = &h.backup_info {
        let _ = writeln!(
            out,
            "backup_info.containing_directory_number = {}",
            b.containing_directory_number
        );
        let _ = writeln!(
            out,
            "backup_info.previous_version_location = {}",
            addr(scheme, b.previous_version_location)
        );
        let _ = writeln!(
            out,
            "backup_info.previous_eot_location = {}",
            addr(scheme, b.previous_eot_location)
        );
        let _ = writeln!(out, "backup_info.filename_offset = {}", b.filename_offset);
        let _ = writeln!(
            out,
            "backup_info.previous_version_header_size = {}",
            b.previous_version_header_size
        );
        let _ = writeln!(
            out,
            "backup_info.backup_pathname = {:?}",
            render_delimited(&b.backup_pathname)
        );
    }
    if let Some(i) = &h.file_info {
        let _ = writeln!(out, "file_info.file_location = {}", addr(scheme, i.file_location));
        let _ = writeln!(out, "file_info.file_length = {}", i.file_length);
        let _ = writeln!(out, "file_info.write_time = {}", i.write_time);
        let _ = writeln!(out, "file_info.creation_time = {}", i.creation_time);
        let _ = writeln!(out, "file_info.file_version_number = {}", i.file_version_number);
    }
    if let Some(s) = &h.soft_link_info {
        let _ = writeln!(out, "soft_link_info.creation_time = {}", s.creation_time);
        let _ = writeln!(out, "soft_link_info.target_dir = {}", s.target_dir);
        let _ = writeln!(out, "soft_link_info.target_version = {}", s.target_version);
        let _ = writeln!(
            out,
            "soft_link_info.target_name = {:?}",
            render_delimited(&s.target_name)
        );
    }
    if let Some(s) = &h.site_info {
        let _ = writeln!(out, "site_info.opsys = {:?}", s.opsys);
        let _ = writeln!(out, "site_info.opsys_version = {:?}", s.opsys_version);
        let _ = writeln!(out, "site_info.site_name = {:?}", s.site_name);
    }
    if let Some(p) = &h.property_list {
        let _ = writeln!(out, "property_list.entries = {}", p.entries.len());
        for (i, (name, value)) in p.entries.iter().enumerate() {
            let _ = writeln!(
                out,
                "property[{i}] = {:?} {:?}",
                String::from_utf8_lossy(name),
                String::from_utf8_lossy(value)
            );
        }
    }
    out
}

pub fn dump_filemap(m: &FileMap, scheme: &AddressScheme) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "record = filemap");
    let _ = writeln!(out, "strip_count = {}", m.descriptors.len());
    for (i, d) in m.descriptors.iter().enumerate() {
        let _ = writeln!(out, "strip[{i}].loc = {}", addr(scheme, d.loc));
        let _ = writeln!(out, "strip[{i}].valid_chars = {}", d.valid_chars);
        let _ = writeln!(out, "strip[{i}].ordinal = {}", d.ordinal);
    }
    out
}

/// Render a 0xFE/0xFD delimited pathname with visible markers.
fn render_delimited(bytes: &[u8]) -> String {
    let mut out = String::new();
    for &b in bytes {
        match b {
            0xFE => out.push('/'),
            0xFD => out.push('^'),
            other => out.push_str(&String::from_utf8_lossy(&[other])),
        }
    }
    out
}
