//! End-Of-Transaction record.
//!
//! The EOT is the terminal record of every transaction and the first block
//! of every volume. It carries the volume metadata, the address partitioning
//! scheme, the location of the current directory list, and the transaction
//! chain pointers.

use crate::device::{AddressScheme, MediaAddress, SchemeEntry, MAX_SCHEME_ENTRIES};
use crate::error::{Error, Result};
use crate::format::time::Timestamp;
use crate::format::wire::{put_addr, put_u16, put_u32, put_u64, Reader};
use crate::format::{checksum, EOT_MAGIC, EOT_VERSION, IMPLEMENTATION_ID};

/// Serialized length up to and including `encryption_standard`; the
/// NUL-terminated owner name follows.
pub const EOT_FIXED_LEN: usize = 250;

const CHECKSUM_OFFSET: usize = 20;
const KIND: &str = "eot";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Eot {
    /// Where this record lives on the media; self-referential.
    pub eot_location: MediaAddress,
    pub implementation_id: u16,
    pub current_dir_list: MediaAddress,
    pub previous_eot_location: MediaAddress,
    pub next_eot_location: MediaAddress,
    pub filesystem_creation_time: Timestamp,
    pub trans_number: u32,
    pub trans_start_time: Timestamp,
    pub trans_end_time: Timestamp,
    pub files_written_on_trans: u32,
    pub dirs_written_on_trans: u32,
    pub next_free_file_number: u32,
    pub scheme: AddressScheme,
    pub encryption_standard: [u8; 32],
    /// Owner text, stored NUL terminated; may not contain NUL.
    pub owners_name: String,
}

impl Eot {
    pub fn serialized_len(&self) -> usize {
        EOT_FIXED_LEN + self.owners_name.len() + 1
    }
}

pub fn encode_eot(eot: &Eot) -> Result<Vec<u8>> {
    if eot.owners_name.as_bytes().contains(&0) {
        return Err(Error::InvalidField("owner name contains NUL".into()));
    }
    if eot.trans_start_time > eot.trans_end_time {
        return Err(Error::InvalidField(
            "transaction start time after end time".into(),
        ));
    }
    let total = eot.serialized_len();
    let length = u16::try_from(total).map_err(|_| Error::OwnerTooLong)?;

    let mut buf = Vec::with_capacity(total);
    buf.extend_from_slice(&EOT_MAGIC);
    put_u16(&mut buf, EOT_VERSION);
    put_u16(&mut buf, length);
    put_addr(&mut buf, eot.eot_location);
    put_u16(&mut buf, 0); // checksum, sealed below
    put_u16(&mut buf, eot.implementation_id);
    put_addr(&mut buf, eot.current_dir_list);
    put_addr(&mut buf, eot.previous_eot_location);
    put_addr(&mut buf, eot.next_eot_location);
    put_u64(&mut buf, eot.filesystem_creation_time.0);
    put_u32(&mut buf, eot.trans_number);
    put_u64(&mut buf, eot.trans_start_time.0);
    put_u64(&mut buf, eot.trans_end_time.0);
    put_u32(&mut buf, eot.files_written_on_trans);
    put_u32(&mut buf, eot.dirs_written_on_trans);
    put_u32(&mut buf, eot.next_free_file_number);
    for i in 0..MAX_SCHEME_ENTRIES {
        let e = eot
            .scheme
            .entries()
            .get(i)
            .copied()
            .unwrap_or(SchemeEntry { modulo: 0, bits: 0 });
        put_u32(&mut buf, e.modulo);
        put_u16(&mut buf, e.bits);
        put_u16(&mut buf, 0);
    }
    put_u16(&mut buf, eot.scheme.used_count());
    buf.extend_from_slice(&eot.encryption_standard);
    debug_assert_eq!(buf.len(), EOT_FIXED_LEN);
    buf.extend_from_slice(eot.owners_name.as_bytes());
    buf.push(0);

    // Odd-length records are zero extended for the word sum; the written
    // pad byte is the block padding that follows anyway.
    checksum::seal(&mut buf, CHECKSUM_OFFSET)?;
    Ok(buf)
}

/// Decode an EOT read from `actual_location`. The three validators are
/// checked in order: magic, checksum, self-reference.
pub fn decode_eot(bytes: &[u8], actual_location: MediaAddress) -> Result<Eot> {
    let mut r = Reader::new(bytes, KIND);
    let magic = r.bytes(8)?;
    if magic != EOT_MAGIC {
        return Err(Error::BadMagic { kind: KIND });
    }
    let version = r.u16()?;
    if version != EOT_VERSION {
        return Err(Error::UnsupportedVersion { kind: KIND, version });
    }
    let length = r.u16()? as usize;
    if length < EOT_FIXED_LEN + 1 || length > bytes.len() {
        return Err(Error::Truncated { kind: KIND });
    }
    let record = &bytes[..length];
    // word_sum zero-extends an odd tail, matching the sealing rule.
    if checksum::word_sum(record) != 0 {
        return Err(Error::BadChecksum { kind: KIND });
    }
    let eot_location = r.addr()?;
    if eot_location != actual_location {
        return Err(Error::SelfRefMismatch {
            kind: KIND,
            stored: eot_location.raw(),
            actual: actual_location.raw(),
        });
    }
    let _checksum = r.u16()?;
    let implementation_id = r.u16()?;
    let current_dir_list = r.addr()?;
    let previous_eot_location = r.addr()?;
    let next_eot_location = r.addr()?;
    let filesystem_creation_time = Timestamp(r.u64()?);
    let trans_number = r.u32()?;
    let trans_start_time = Timestamp(r.u64()?);
    let trans_end_time = Timestamp(r.u64()?);
    if trans_start_time > trans_end_time {
        return Err(Error::InvalidField(
            "transaction start time after end time".into(),
        ));
    }
    let files_written_on_trans = r.u32()?;
    let dirs_written_on_trans = r.u32()?;
    let next_free_file_number = r.u32()?;
    let mut raw_entries = [(0u32, 0u16); MAX_SCHEME_ENTRIES];
    for slot in raw_entries.iter_mut() {
        slot.0 = r.u32()?;
        slot.1 = r.u16()?;
        let _pad = r.u16()?;
    }
    let used = r.u16()? as usize;
    if !(2..=MAX_SCHEME_ENTRIES).contains(&used) {
        return Err(Error::InvalidScheme(format!("{used} active entries")));
    }
    let scheme = AddressScheme::new(
        raw_entries[..used]
            .iter()
            .map(|&(modulo, bits)| SchemeEntry { modulo, bits })
            .collect(),
    )?;
    let mut encryption_standard = [0u8; 32];
    encryption_standard.copy_from_slice(r.bytes(32)?);
    let owner_bytes = &record[EOT_FIXED_LEN..];
    if owner_bytes.last() != Some(&0) {
        return Err(Error::Truncated { kind: KIND });
    }
    let owner_body = &owner_bytes[..owner_bytes.len() - 1];
    if owner_body.contains(&0) {
        return Err(Error::InvalidField("owner name contains NUL".into()));
    }
    let owners_name = String::from_utf8(owner_body.to_vec())
        .map_err(|_| Error::InvalidField("owner name is not UTF-8".into()))?;

    Ok(Eot {
        eot_location,
        implementation_id,
        current_dir_list,
        previous_eot_location,
        next_eot_location,
        filesystem_creation_time,
        trans_number,
        trans_start_time,
        trans_end_time,
        files_written_on_trans,
        dirs_written_on_trans,
        next_free_file_number,
        scheme,
        encryption_standard,
        owners_name,
    })
}

/// A minimal first-transaction EOT for a fresh volume.
pub fn initial_eot(
    location: MediaAddress,
    scheme: AddressScheme,
    owner: String,
    now: Timestamp,
) -> Eot {
    Eot {
        eot_location: location,
        implementation_id: IMPLEMENTATION_ID,
        current_dir_list: MediaAddress::NULL,
        previous_eot_location: MediaAddress::NULL,
        next_eot_location: MediaAddress::NULL,
        filesystem_creation_time: now,
        trans_number: 0,
        trans_start_time: now,
        trans_end_time: now,
        files_written_on_trans: 0,
        dirs_written_on_trans: 0,
        next_free_file_number: 2,
        scheme,
        encryption_standard: [0u8; 32],
        owners_name: owner,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(owner: &str) -> Eot {
        initial_eot(
            MediaAddress::ZERO,
            AddressScheme::audio(),
            owner.to_owned(),
            Timestamp(1234567),
        )
    }

    #[test]
    fn minimal_eot_round_trips() {
        let eot = sample("");
        let bytes = encode_eot(&eot).unwrap();
        assert_eq!(bytes.len(), 251);
        let back = decode_eot(&bytes, MediaAddress::ZERO).unwrap();
        assert_eq!(back, eot);
    }

    #[test]
    fn owner_round_trips() {
        let eot = sample("MIT Media Lab");
        let bytes = encode_eot(&eot).unwrap();
        let back = decode_eot(&bytes, MediaAddress::ZERO).unwrap();
        assert_eq!(back.owners_name, "MIT Media Lab");
    }

    #[test]
    fn audio_scheme_pointerdes_layout() {
        let eot = sample("");
        let bytes = encode_eot(&eot).unwrap();
        // pointerdes array starts at byte 88: (70,16) (60,16) (75,16) (2048,16).
        let expect: [(u32, u16); 4] = [(70, 16), (60, 16), (75, 16), (2048, 16)];
        for (i, (modulo, bits)) in expect.iter().enumerate() {
            let at = 88 + i * 8;
            assert_eq!(u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()), *modulo);
            assert_eq!(
                u16::from_le_bytes(bytes[at + 4..at + 6].try_into().unwrap()),
                *bits
            );
        }
        // Remaining entries blank, used count 4.
        assert!(bytes[88 + 32..216].iter().all(|&b| b == 0));
        assert_eq!(u16::from_le_bytes(bytes[216..218].try_into().unwrap()), 4);
    }

    #[test]
    fn corrupt_magic_reports_bad_magic() {
        let mut bytes = encode_eot(&sample("x")).unwrap();
        bytes[3] ^= 0xFF;
        assert!(matches!(
            decode_eot(&bytes, MediaAddress::ZERO),
            Err(Error::BadMagic { .. })
        ));
    }

    #[test]
    fn corrupt_body_reports_bad_checksum() {
        let mut bytes = encode_eot(&sample("x")).unwrap();
        bytes[100] ^= 1;
        assert!(matches!(
            decode_eot(&bytes, MediaAddress::ZERO),
            Err(Error::BadChecksum { .. })
        ));
    }

    #[test]
    fn wrong_location_reports_self_reference() {
        let bytes = encode_eot(&sample("x")).unwrap();
        let elsewhere = AddressScheme::audio().address_of(5, 0).unwrap();
        assert!(matches!(
            decode_eot(&bytes, elsewhere),
            Err(Error::SelfRefMismatch { .. })
        ));
    }

    #[test]
    fn trailing_block_padding_is_tolerated() {
        let eot = sample("pad me");
        let mut bytes = encode_eot(&eot).unwrap();
        bytes.resize(2048, 0);
        assert_eq!(decode_eot(&bytes, MediaAddress::ZERO).unwrap(), eot);
    }
}
