//! File-backed DRAW simulator.
//!
//! The simulator makes an ordinary file take on the appearance of a small
//! write-once disk. Image layout, all integers low-byte first:
//!
//! ```text
//! bytes   0..8    magic "CDSIM\0\0\1"
//! bytes   8..12   block_size (32-bit)
//! bytes  12..20   capacity_blocks (64-bit)
//! bytes  20..22   used scheme entry count (16-bit)
//! bytes  22..150  16 scheme entries of 8 bytes: 32-bit modulo,
//!                 16-bit bit count, 16-bit zero pad
//! then            one state byte per block: 0 virgin, 1 written, 2 destroyed
//! then            capacity_blocks x block_size bytes of data
//! ```
//!
//! The per-block state byte persists so virgin, written and destroyed
//! survive process restarts. The probe counter is session local.

use std::cell::Cell;
use std::fs::{File, OpenOptions};
use std::io::Read;
use std::os::unix::fs::FileExt;
use std::path::Path;

use crate::device::{
    AddressScheme, BlockDevice, BlockReadResult, DeviceGeometry, MediaAddress, SchemeEntry,
    StateCounts, MAX_SCHEME_ENTRIES,
};
use crate::error::{Error, Result};

pub const SIM_MAGIC: [u8; 8] = *b"CDSIM\0\0\x01";
/// Fixed header length preceding the state table.
pub const SIM_HEADER_LEN: u64 = 22 + (MAX_SCHEME_ENTRIES as u64) * 8;

const STATE_VIRGIN: u8 = 0;
const STATE_WRITTEN: u8 = 1;
const STATE_DESTROYED: u8 = 2;

pub struct SimDevice {
    file: File,
    geometry: DeviceGeometry,
    /// In-memory mirror of the on-disk state table.
    state: Vec<u8>,
    /// Lowest ordinal whose state is virgin; blocks below it are written
    /// or destroyed (the prefix property).
    next_virgin: u64,
    probes: Cell<u64>,
}

impl SimDevice {
    /// Open an existing image, or create a fresh fully-virgin one when the
    /// path does not exist. Creating requires a geometry; opening checks a
    /// supplied geometry against the stored one.
    pub fn open_or_create(path: &Path, geometry: Option<DeviceGeometry>) -> Result<SimDevice> {
        if path.exists() {
            let dev = Self::open(path)?;
            if let Some(g) = geometry {
                if g != dev.geometry {
                    return Err(Error::GeometryMismatch);
                }
            }
            Ok(dev)
        } else {
            let geometry = geometry.ok_or_else(|| {
                Error::CorruptImage(format!("{} does not exist and no geometry given", path.display()))
            })?;
            Self::create(path, geometry)
        }
    }

    fn create(path: &Path, geometry: DeviceGeometry) -> Result<SimDevice> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(path)?;
        let mut header = Vec::with_capacity(SIM_HEADER_LEN as usize);
        header.extend_from_slice(&SIM_MAGIC);
        header.extend_from_slice(&geometry.block_size.to_le_bytes());
        header.extend_from_slice(&geometry.capacity_blocks.to_le_bytes());
        header.extend_from_slice(&geometry.scheme.used_count().to_le_bytes());
        for i in 0..MAX_SCHEME_ENTRIES {
            let e = geometry.scheme.entries().get(i).copied().unwrap_or(SchemeEntry {
                modulo: 0,
                bits: 0,
            });
            header.extend_from_slice(&e.modulo.to_le_bytes());
            header.extend_from_slice(&e.bits.to_le_bytes());
            header.extend_from_slice(&[0u8; 2]);
        }
        debug_assert_eq!(header.len() as u64, SIM_HEADER_LEN);
        file.write_at(&header, 0)?;
        // State table and data stay sparse; a fresh image is all virgin.
        let total = SIM_HEADER_LEN
            + geometry.capacity_blocks
            + geometry.capacity_blocks * u64::from(geometry.block_size);
        file.set_len(total)?;
        let state = vec![STATE_VIRGIN; geometry.capacity_blocks as usize];
        Ok(SimDevice {
            file,
            geometry,
            state,
            next_virgin: 0,
            probes: Cell::new(0),
        })
    }

    fn open(path: &Path) -> Result<SimDevice> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut header = vec![0u8; SIM_HEADER_LEN as usize];
        file.read_exact(&mut header)
            .map_err(|_| Error::CorruptImage("short header".into()))?;
        if header[0..8] != SIM_MAGIC {
            return Err(Error::CorruptImage("bad magic".into()));
        }
        let block_size = u32::from_le_bytes(header[8..12].try_into().unwrap());
        let capacity = u64::from_le_bytes(header[12..20].try_into().unwrap());
        let used = u16::from_le_bytes(header[20..22].try_into().unwrap()) as usize;
        if !(2..=MAX_SCHEME_ENTRIES).contains(&used) {
            return Err(Error::CorruptImage(format!("{used} scheme entries")));
        }
        let mut entries = Vec::with_capacity(used);
        for i in 0..used {
            let at = 22 + i * 8;
            entries.push(SchemeEntry {
                modulo: u32::from_le_bytes(header[at..at + 4].try_into().unwrap()),
                bits: u16::from_le_bytes(header[at + 4..at + 6].try_into().unwrap()),
            });
        }
        let scheme = AddressScheme::new(entries)
            .map_err(|e| Error::CorruptImage(format!("stored scheme: {e}")))?;
        if scheme.block_size() != block_size {
            return Err(Error::CorruptImage(
                "block size disagrees with scheme offset field".into(),
            ));
        }
        let geometry = DeviceGeometry::new(capacity, scheme)
            .map_err(|e| Error::CorruptImage(format!("stored geometry: {e}")))?;
        let expected_len =
            SIM_HEADER_LEN + capacity + capacity * u64::from(block_size);
        let actual_len = file.metadata()?.len();
        if actual_len != expected_len {
            return Err(Error::CorruptImage(format!(
                "file length {actual_len}, geometry implies {expected_len}"
            )));
        }
        let mut state = vec![0u8; capacity as usize];
        file.read_exact_at(&mut state, SIM_HEADER_LEN)?;
        let mut next_virgin = capacity;
        for (i, s) in state.iter().enumerate() {
            match *s {
                STATE_VIRGIN => {
                    next_virgin = i as u64;
                    break;
                }
                STATE_WRITTEN | STATE_DESTROYED => {}
                other => {
                    return Err(Error::CorruptImage(format!(
                        "block {i} has state byte {other}"
                    )))
                }
            }
        }
        // Everything past the first virgin block must be virgin too.
        if state[next_virgin as usize..].iter().any(|&s| s != STATE_VIRGIN) {
            return Err(Error::CorruptImage(
                "written blocks do not form a prefix".into(),
            ));
        }
        Ok(SimDevice {
            file,
            geometry,
            state,
            next_virgin,
            probes: Cell::new(0),
        })
    }

    fn data_offset(&self, ordinal: u64) -> u64 {
        SIM_HEADER_LEN
            + self.geometry.capacity_blocks
            + ordinal * u64::from(self.geometry.block_size)
    }

    fn set_state(&mut self, ordinal: u64, state: u8) -> Result<()> {
        self.state[ordinal as usize] = state;
        self.file.write_at(&[state], SIM_HEADER_LEN + ordinal)?;
        Ok(())
    }

    fn ordinal_in_range(&self, addr: MediaAddress) -> Result<u64> {
        let (ordinal, _) = self.geometry.scheme.split(addr)?;
        if ordinal >= self.geometry.capacity_blocks {
            return Err(Error::OutOfMedia {
                ordinal,
                limit: self.geometry.capacity_blocks,
            });
        }
        Ok(ordinal)
    }

    /// Reset the session probe counter; used when measuring probe bounds.
    pub fn reset_probes(&self) {
        self.probes.set(0);
    }
}

impl BlockDevice for SimDevice {
    fn geometry(&self) -> &DeviceGeometry {
        &self.geometry
    }

    fn read_block(&self, addr: MediaAddress) -> Result<BlockReadResult> {
        let ordinal = self.ordinal_in_range(addr)?;
        self.probes.set(self.probes.get() + 1);
        match self.state[ordinal as usize] {
            STATE_VIRGIN => Ok(BlockReadResult::Virgin),
            STATE_DESTROYED => Ok(BlockReadResult::Unreadable),
            _ => {
                let mut buf = vec![0u8; self.geometry.block_size as usize];
                self.file.read_exact_at(&mut buf, self.data_offset(ordinal))?;
                Ok(BlockReadResult::Written(buf))
            }
        }
    }

    fn write_next(&mut self, addr: MediaAddress, content: &[u8]) -> Result<()> {
        let (ordinal, offset) = self.geometry.scheme.split(addr)?;
        if offset != 0 {
            return Err(Error::UnalignedWrite { offset });
        }
        if ordinal >= self.geometry.capacity_blocks {
            return Err(Error::OutOfMedia {
                ordinal,
                limit: self.geometry.capacity_blocks,
            });
        }
        if content.len() > self.geometry.block_size as usize {
            return Err(Error::OversizedBlock {
                len: content.len(),
                block_size: self.geometry.block_size,
            });
        }
        if self.state[ordinal as usize] != STATE_VIRGIN {
            return Err(Error::AlreadyWritten { ordinal });
        }
        if ordinal != self.next_virgin {
            return Err(Error::NonSequentialWrite {
                expected: self.next_virgin,
                got: ordinal,
            });
        }
        let mut block = vec![0u8; self.geometry.block_size as usize];
        block[..content.len()].copy_from_slice(content);
        self.file.write_at(&block, self.data_offset(ordinal))?;
        self.set_state(ordinal, STATE_WRITTEN)?;
        self.next_virgin = ordinal + 1;
        Ok(())
    }

    fn destroy_block(&mut self, addr: MediaAddress) -> Result<()> {
        let ordinal = self.ordinal_in_range(addr)?;
        match self.state[ordinal as usize] {
            STATE_WRITTEN => {
                let zeros = vec![0u8; self.geometry.block_size as usize];
                self.file.write_at(&zeros, self.data_offset(ordinal))?;
                self.set_state(ordinal, STATE_DESTROYED)
            }
            _ => Err(Error::BlockVirgin { ordinal }),
        }
    }

    fn probe_count(&self) -> u64 {
        self.probes.get()
    }

    fn state_counts(&self) -> StateCounts {
        let mut counts = (0u64, 0u64, 0u64);
        for s in &self.state {
            match *s {
                STATE_WRITTEN => counts.0 += 1,
                STATE_VIRGIN => counts.1 += 1,
                _ => counts.2 += 1,
            }
        }
        counts
    }
}
