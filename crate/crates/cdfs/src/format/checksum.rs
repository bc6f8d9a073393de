//! The 16-bit word-sum checksum used by every validated record.
//!
//! A record is taken as an array of 16-bit low-byte-first quantities,
//! zero-extended by one byte when its length is odd, and summed modulo
//! 65536. The sum of a valid record is zero; the checksum field is chosen
//! to make it so.

use crate::error::{Error, Result};

/// Sum of the record's 16-bit words modulo 65536.
pub fn word_sum(bytes: &[u8]) -> u16 {
    let mut sum = 0u16;
    let mut chunks = bytes.chunks_exact(2);
    for pair in &mut chunks {
        sum = sum.wrapping_add(u16::from_le_bytes([pair[0], pair[1]]));
    }
    if let [last] = chunks.remainder() {
        sum = sum.wrapping_add(u16::from(*last));
    }
    sum
}

/// Fill the 16-bit checksum field at `checksum_offset` so the whole record
/// sums to zero. The field must currently be zero.
pub fn seal(record: &mut [u8], checksum_offset: usize) -> Result<()> {
    if !checksum_offset.is_multiple_of(2) || checksum_offset + 2 > record.len() {
        return Err(Error::BadChecksumOffset { offset: checksum_offset });
    }
    let fill = 0u16.wrapping_sub(word_sum(record));
    record[checksum_offset..checksum_offset + 2].copy_from_slice(&fill.to_le_bytes());
    Ok(())
}

/// A sealed record sums to zero.
pub fn verify(record: &[u8]) -> bool {
    word_sum(record) == 0
}
