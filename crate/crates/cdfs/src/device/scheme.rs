//! Media addresses and the mixed-radix address scheme.
//!
//! A media address is a 64-bit quantity partitioned into a block address and
//! a byte offset within that block. The partitioning is described by an
//! [`AddressScheme`] of up to 16 fields, each with a modulo and a bit width;
//! the last field is always the in-block byte offset and its modulo equals
//! the block size. Field 0 occupies the most significant bits, so unsigned
//! comparison of raw values matches media order.

use std::fmt;

use crate::error::{Error, Result};

/// Maximum number of scheme fields carried by an end-of-transaction record.
pub const MAX_SCHEME_ENTRIES: usize = 16;

/// Reserved raw value meaning "no address". Block 0 byte 0 is a legal
/// target (the first EOT), so zero cannot serve as the sentinel.
const NULL_RAW: u64 = u64::MAX;

/// A 64-bit location on the media, interpreted through an [`AddressScheme`].
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MediaAddress(u64);

impl MediaAddress {
    pub const NULL: MediaAddress = MediaAddress(NULL_RAW);
    /// All-zero address: block 0, byte 0.
    pub const ZERO: MediaAddress = MediaAddress(0);

    pub fn from_raw(raw: u64) -> Self {
        MediaAddress(raw)
    }

    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn is_null(self) -> bool {
        self.0 == NULL_RAW
    }

    /// Serialized form: 8 bytes, low-byte first.
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Self {
        MediaAddress(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for MediaAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_null() {
            write!(f, "MediaAddress(null)")
        } else {
            write!(f, "MediaAddress({:#018x})", self.0)
        }
    }
}

/// One field of the partitioning scheme: values run `0..modulo` and are
/// stored in `bits` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchemeEntry {
    pub modulo: u32,
    pub bits: u16,
}

/// The active field descriptors of an address scheme.
///
/// Invariants checked at construction: 2..=16 fields, bit widths sum to 64,
/// every modulo is at least 2 and fits its bit width. The final field is the
/// in-block byte offset.
#[derive(Clone, PartialEq, Eq)]
pub struct AddressScheme {
    entries: Vec<SchemeEntry>,
}

impl AddressScheme {
    pub fn new(entries: Vec<SchemeEntry>) -> Result<Self> {
        if entries.len() < 2 || entries.len() > MAX_SCHEME_ENTRIES {
            return Err(Error::InvalidScheme(format!(
                "{} fields, need 2..=16",
                entries.len()
            )));
        }
        let bit_sum: u32 = entries.iter().map(|e| u32::from(e.bits)).sum();
        if bit_sum != 64 {
            return Err(Error::InvalidScheme(format!(
                "field bit widths sum to {bit_sum}, need 64"
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.modulo < 2 {
                return Err(Error::InvalidScheme(format!("field {i} modulo {}", e.modulo)));
            }
            if e.bits == 0 || e.bits > 63 {
                return Err(Error::InvalidScheme(format!("field {i} width {}", e.bits)));
            }
            if u64::from(e.modulo) > (1u64 << e.bits) {
                return Err(Error::InvalidScheme(format!(
                    "field {i} modulo {} does not fit {} bits",
                    e.modulo, e.bits
                )));
            }
        }
        Ok(AddressScheme { entries })
    }

    /// The audio-format CDROM partitioning: minute, second, block, offset.
    pub fn audio() -> Self {
        AddressScheme::new(vec![
            SchemeEntry { modulo: 70, bits: 16 },
            SchemeEntry { modulo: 60, bits: 16 },
            SchemeEntry { modulo: 75, bits: 16 },
            SchemeEntry { modulo: 2048, bits: 16 },
        ])
        .expect("audio scheme is valid")
    }

    /// A flat two-field scheme: block number plus byte offset.
    pub fn linear(capacity_blocks: u64, block_size: u32) -> Result<Self> {
        let modulo = u32::try_from(capacity_blocks.max(2)).map_err(|_| {
            Error::InvalidScheme("linear scheme limited to 2^32-1 blocks".into())
        })?;
        AddressScheme::new(vec![
            SchemeEntry { modulo, bits: 48 },
            SchemeEntry { modulo: block_size, bits: 16 },
        ])
    }

    pub fn entries(&self) -> &[SchemeEntry] {
        &self.entries
    }

    pub fn used_count(&self) -> u16 {
        self.entries.len() as u16
    }

    /// Block size is the modulo of the last field.
    pub fn block_size(&self) -> u32 {
        self.entries.last().expect("at least two fields").modulo
    }

    /// Number of addressable blocks: the product of the block-field moduli.
    pub fn max_blocks(&self) -> u64 {
        self.entries[..self.entries.len() - 1]
            .iter()
            .fold(1u64, |acc, e| acc.saturating_mul(u64::from(e.modulo)))
    }

    /// Unpack a raw address into field values, most significant first.
    pub fn decode_fields(&self, addr: MediaAddress) -> Result<Vec<u64>> {
        if addr.is_null() {
            return Err(Error::NullAddress);
        }
        let mut raw = addr.raw();
        let mut fields = vec![0u64; self.entries.len()];
        for (i, e) in self.entries.iter().enumerate().rev() {
            let mask = (1u64 << e.bits) - 1;
            let value = raw & mask;
            raw >>= e.bits;
            if value >= u64::from(e.modulo) {
                return Err(Error::FieldExceedsModulo {
                    index: i,
                    value,
                    modulo: e.modulo,
                });
            }
            fields[i] = value;
        }
        Ok(fields)
    }

    /// Pack field values, most significant first, into a raw address.
    pub fn encode_fields(&self, fields: &[u64]) -> Result<MediaAddress> {
        if fields.len() != self.entries.len() {
            return Err(Error::InvalidField(format!(
                "{} field values for a {}-field scheme",
                fields.len(),
                self.entries.len()
            )));
        }
        let mut raw = 0u64;
        for (i, (&value, e)) in fields.iter().zip(&self.entries).enumerate() {
            if value >= u64::from(e.modulo) {
                return Err(Error::FieldExceedsModulo {
                    index: i,
                    value,
                    modulo: e.modulo,
                });
            }
            raw = (raw << e.bits) | value;
        }
        Ok(MediaAddress::from_raw(raw))
    }

    /// Mixed-radix block ordinal of an address, ignoring the byte offset.
    pub fn ordinal_of(&self, addr: MediaAddress) -> Result<u64> {
        let fields = self.decode_fields(addr)?;
        let block_fields = &fields[..fields.len() - 1];
        let mut ordinal = 0u64;
        for (f, e) in block_fields.iter().zip(&self.entries) {
            ordinal = ordinal * u64::from(e.modulo) + f;
        }
        Ok(ordinal)
    }

    /// Byte offset within the block.
    pub fn offset_of(&self, addr: MediaAddress) -> Result<u32> {
        let fields = self.decode_fields(addr)?;
        Ok(fields[fields.len() - 1] as u32)
    }

    /// Both halves at once: (block ordinal, byte offset).
    pub fn split(&self, addr: MediaAddress) -> Result<(u64, u32)> {
        let fields = self.decode_fields(addr)?;
        let offset = fields[fields.len() - 1] as u32;
        let block_fields = &fields[..fields.len() - 1];
        let mut ordinal = 0u64;
        for (f, e) in block_fields.iter().zip(&self.entries) {
            ordinal = ordinal * u64::from(e.modulo) + f;
        }
        Ok((ordinal, offset))
    }

    /// Inverse of [`ordinal_of`](Self::ordinal_of), with an explicit offset.
    pub fn address_of(&self, ordinal: u64, offset: u32) -> Result<MediaAddress> {
        if u64::from(offset) >= u64::from(self.block_size()) {
            return Err(Error::InvalidField(format!(
                "offset {offset} not below block size {}",
                self.block_size()
            )));
        }
        let block_entries = &self.entries[..self.entries.len() - 1];
        let mut fields = vec![0u64; self.entries.len()];
        fields[self.entries.len() - 1] = u64::from(offset);
        let mut rest = ordinal;
        for (i, e) in block_entries.iter().enumerate().rev() {
            fields[i] = rest % u64::from(e.modulo);
            rest /= u64::from(e.modulo);
        }
        if rest != 0 {
            return Err(Error::OutOfMedia {
                ordinal,
                limit: self.max_blocks(),
            });
        }
        self.encode_fields(&fields)
    }

    /// Step by a signed number of blocks; the offset of the result is zero.
    pub fn advance(&self, addr: MediaAddress, nblocks: i64) -> Result<MediaAddress> {
        let ordinal = self.ordinal_of(addr)?;
        let target = if nblocks >= 0 {
            ordinal.checked_add(nblocks as u64)
        } else {
            ordinal.checked_sub(nblocks.unsigned_abs())
        }
        .ok_or(Error::OutOfMedia {
            ordinal,
            limit: self.max_blocks(),
        })?;
        self.address_of(target, 0)
    }

    /// Step forward by a byte count, carrying into the block fields.
    pub fn add_bytes(&self, addr: MediaAddress, nbytes: u64) -> Result<MediaAddress> {
        let (ordinal, offset) = self.split(addr)?;
        let bs = u64::from(self.block_size());
        let total = u64::from(offset) + nbytes;
        self.address_of(ordinal + total / bs, (total % bs) as u32)
    }

    /// Dotted rendering in field order, offset appended as `+NNNN` when
    /// nonzero, `null` for the null address.
    pub fn format_address(&self, addr: MediaAddress) -> String {
        if addr.is_null() {
            return "null".to_owned();
        }
        match self.decode_fields(addr) {
            Ok(fields) => {
                let blocks: Vec<String> = fields[..fields.len() - 1]
                    .iter()
                    .map(|f| format!("{f:03}"))
                    .collect();
                let offset = fields[fields.len() - 1];
                if offset == 0 {
                    blocks.join(".")
                } else {
                    format!("{}+{offset:04}", blocks.join("."))
                }
            }
            Err(_) => format!("invalid({:#018x})", addr.raw()),
        }
    }

    /// Accepts the dotted form produced by `format_address`, a plain block
    /// ordinal, or `null`.
    pub fn parse_address(&self, text: &str) -> Result<MediaAddress> {
        let text = text.trim();
        if text.eq_ignore_ascii_case("null") {
            return Ok(MediaAddress::NULL);
        }
        let (body, offset) = match text.split_once('+') {
            Some((b, o)) => {
                let off: u32 = o
                    .parse()
                    .map_err(|_| Error::InvalidField(format!("bad offset in {text:?}")))?;
                (b, off)
            }
            None => (text, 0),
        };
        if body.contains('.') {
            let parts: Vec<&str> = body.split('.').collect();
            if parts.len() != self.entries.len() - 1 {
                return Err(Error::InvalidField(format!(
                    "{} address fields for a {}-field scheme",
                    parts.len(),
                    self.entries.len() - 1
                )));
            }
            let mut fields = Vec::with_capacity(self.entries.len());
            for p in parts {
                fields.push(
                    p.parse::<u64>()
                        .map_err(|_| Error::InvalidField(format!("bad field {p:?}")))?,
                );
            }
            fields.push(u64::from(offset));
            self.encode_fields(&fields)
        } else {
            let ordinal: u64 = body
                .parse()
                .map_err(|_| Error::InvalidField(format!("bad block ordinal {body:?}")))?;
            self.address_of(ordinal, offset)
        }
    }
}

impl fmt::Debug for AddressScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|e| format!("{}:{}", e.modulo, e.bits))
            .collect();
        write!(f, "AddressScheme({})", parts.join(","))
    }
}
