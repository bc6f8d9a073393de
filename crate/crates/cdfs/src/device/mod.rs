//! Write-once block device contract and the file-backed DRAW simulator.
//!
//! The driver layer owes the file system five things: physical information
//! about the mounted disk, block reads that distinguish virgin from
//! unreadable blocks, sequential block writes, address arithmetic, and
//! location of the first virgin block in a range. Address arithmetic lives
//! in [`AddressScheme`]; the rest is the [`BlockDevice`] trait. The binary
//! search for the first virgin block is provided here for every device, so
//! drivers without that primitive still satisfy the contract.

mod scheme;
mod sim;

pub use scheme::{AddressScheme, MediaAddress, SchemeEntry, MAX_SCHEME_ENTRIES};
pub use sim::{SimDevice, SIM_HEADER_LEN, SIM_MAGIC};

use crate::error::{Error, Result};

/// Physical shape of a mounted device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceGeometry {
    pub block_size: u32,
    pub capacity_blocks: u64,
    pub scheme: AddressScheme,
}

impl DeviceGeometry {
    pub fn new(capacity_blocks: u64, scheme: AddressScheme) -> Result<Self> {
        if capacity_blocks < 2 {
            return Err(Error::InvalidScheme(format!(
                "capacity {capacity_blocks} blocks, need at least 2"
            )));
        }
        Ok(DeviceGeometry {
            block_size: scheme.block_size(),
            capacity_blocks,
            scheme,
        })
    }
}

/// Outcome of reading one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BlockReadResult {
    Written(Vec<u8>),
    Virgin,
    Unreadable,
}

/// Count of blocks in each state: (written, virgin, destroyed).
pub type StateCounts = (u64, u64, u64);

/// The driver contract for write-once media.
///
/// A device handle is a single-owner resource: reads take `&self` so
/// committed data can be read concurrently, mutations take `&mut self`.
pub trait BlockDevice {
    fn geometry(&self) -> &DeviceGeometry;

    /// Read one block. Every call counts as one probe.
    fn read_block(&self, addr: MediaAddress) -> Result<BlockReadResult>;

    /// Write the block at `addr`, which must be the lowest-ordinal virgin
    /// block. Content shorter than a block is zero-padded.
    fn write_next(&mut self, addr: MediaAddress, content: &[u8]) -> Result<()>;

    /// Overwrite a written block with zeros; it reads as unreadable after.
    fn destroy_block(&mut self, addr: MediaAddress) -> Result<()>;

    /// Session-local count of read probes.
    fn probe_count(&self) -> u64;

    fn state_counts(&self) -> StateCounts;

    /// Smallest ordinal of a virgin block in `[lo, hi)`, or `None` when the
    /// whole range is written. The range must satisfy the prefix property
    /// (written blocks precede virgin blocks). Costs at most
    /// `ceil(log2(hi - lo)) + 2` read probes.
    fn find_first_virgin(&self, lo: u64, hi: u64) -> Result<Option<u64>> {
        let capacity = self.geometry().capacity_blocks;
        if lo > hi || hi > capacity {
            return Err(Error::OutOfMedia {
                ordinal: hi,
                limit: capacity,
            });
        }
        let scheme = &self.geometry().scheme;
        let limit = hi;
        let (mut lo, mut hi) = (lo, hi);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match self.read_block(scheme.address_of(mid, 0)?)? {
                BlockReadResult::Virgin => hi = mid,
                _ => lo = mid + 1,
            }
        }
        Ok(if lo == limit { None } else { Some(lo) })
    }
}

/// Read `len` bytes starting at `addr`, crossing block boundaries.
pub fn read_span(dev: &dyn BlockDevice, addr: MediaAddress, len: usize) -> Result<Vec<u8>> {
    let scheme = &dev.geometry().scheme;
    let block_size = scheme.block_size() as usize;
    let (mut ordinal, offset) = scheme.split(addr)?;
    let mut offset = offset as usize;
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let block = match dev.read_block(scheme.address_of(ordinal, 0)?)? {
            BlockReadResult::Written(bytes) => bytes,
            BlockReadResult::Virgin => return Err(Error::BlockVirgin { ordinal }),
            BlockReadResult::Unreadable => return Err(Error::BlockUnreadable { ordinal }),
        };
        let take = (len - out.len()).min(block_size - offset);
        out.extend_from_slice(&block[offset..offset + take]);
        offset = 0;
        ordinal += 1;
    }
    Ok(out)
}
