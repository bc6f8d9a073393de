//! Shared fixtures for integration tests: deterministic volumes, image
//! surgery at the documented byte level, and the in-memory shadow oracle
//! for fragmented files.

#![allow(dead_code)]

pub mod oracle;

use std::path::{Path, PathBuf};

use cdfs::device::{AddressScheme, DeviceGeometry, SimDevice};
use cdfs::format::{FileName, SiteInfo};
use cdfs::{SteppingClock, Volume};

/// Fixed header length of a simulator image, per the image format.
pub const SIM_HEADER_LEN: u64 = 150;

pub fn name(s: &str) -> FileName {
    s.parse().expect("valid name")
}

pub fn site() -> SiteInfo {
    SiteInfo {
        opsys: "unix".into(),
        opsys_version: "4.2bsd".into(),
        site_name: "test-site".into(),
    }
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
}

impl Fixture {
    pub fn new() -> Fixture {
        Fixture {
            dir: tempfile::tempdir().expect("tempdir"),
        }
    }

    pub fn image_path(&self, nameish: &str) -> PathBuf {
        self.dir.path().join(format!("{nameish}.cdsim"))
    }

    pub fn device(&self, nameish: &str, capacity: u64) -> SimDevice {
        let geometry = DeviceGeometry::new(capacity, AddressScheme::audio()).unwrap();
        SimDevice::open_or_create(&self.image_path(nameish), Some(geometry)).unwrap()
    }

    /// A fresh volume on a fresh device with a deterministic clock.
    pub fn volume(&self, nameish: &str, capacity: u64) -> Volume {
        let dev = self.device(nameish, capacity);
        Volume::init_volume_with_clock(
            Box::new(dev),
            "tester",
            site(),
            Box::new(SteppingClock::new(3_000_000_000, 1)),
        )
        .unwrap()
    }

    pub fn mount(&self, nameish: &str) -> cdfs::Result<Volume> {
        let dev = SimDevice::open_or_create(&self.image_path(nameish), None)?;
        Volume::mount_with_clock(
            Box::new(dev),
            Box::new(SteppingClock::new(3_100_000_000, 1)),
        )
    }
}

// ----- image surgery ------------------------------------------------------
//
// These helpers manipulate simulator images directly at the documented
// byte offsets, independent of the SimDevice implementation, so tests can
// fabricate crash prefixes and corruptions.

fn read_at(path: &Path, offset: u64, len: usize) -> Vec<u8> {
    use std::os::unix::fs::FileExt;
    let f = std::fs::File::open(path).unwrap();
    let mut buf = vec![0u8; len];
    f.read_exact_at(&mut buf, offset).unwrap();
    buf
}

pub fn image_geometry(path: &Path) -> (u32, u64) {
    let header = read_at(path, 0, 20);
    let block_size = u32::from_le_bytes(header[8..12].try_into().unwrap());
    let capacity = u64::from_le_bytes(header[12..20].try_into().unwrap());
    (block_size, capacity)
}

pub fn read_image_block(path: &Path, ordinal: u64) -> Vec<u8> {
    let (block_size, capacity) = image_geometry(path);
    read_at(
        path,
        SIM_HEADER_LEN + capacity + ordinal * u64::from(block_size),
        block_size as usize,
    )
}

pub fn image_block_state(path: &Path, ordinal: u64) -> u8 {
    read_at(path, SIM_HEADER_LEN + ordinal, 1)[0]
}

/// Overwrite one block's data and mark it written, bypassing the
/// write-once rule; for building test fixtures only.
pub fn poke_image_block(path: &Path, ordinal: u64, content: &[u8]) {
    use std::io::{Seek, SeekFrom, Write};
    let (block_size, capacity) = image_geometry(path);
    assert!(content.len() <= block_size as usize);
    let mut block = vec![0u8; block_size as usize];
    block[..content.len()].copy_from_slice(content);
    let mut f = std::fs::OpenOptions::new().write(true).open(path).unwrap();
    f.seek(SeekFrom::Start(SIM_HEADER_LEN + ordinal)).unwrap();
    f.write_all(&[1u8]).unwrap();
    f.seek(SeekFrom::Start(
        SIM_HEADER_LEN + capacity + ordinal * u64::from(block_size),
    ))
    .unwrap();
    f.write_all(&block).unwrap();
}

/// Mark the first `prefix` blocks written without touching their data;
/// the sparse file reads them back as zero blocks.
pub fn mark_image_prefix_written(path: &Path, prefix: u64) {
    use std::io::{Seek, SeekFrom, Write};
    let mut f = std::fs::OpenOptions::new().write(true).open(path).unwrap();
    f.seek(SeekFrom::Start(SIM_HEADER_LEN)).unwrap();
    f.write_all(&vec![1u8; prefix as usize]).unwrap();
}

/// Truncate an image to its first `prefix` blocks: everything at or past
/// the boundary reverts to virgin with zeroed data, as if the writer died
/// mid-stream.
pub fn truncate_image_to_prefix(src: &Path, dst: &Path, prefix: u64) {
    use std::io::{Seek, SeekFrom, Write};
    std::fs::copy(src, dst).unwrap();
    let (block_size, capacity) = image_geometry(dst);
    let mut f = std::fs::OpenOptions::new().write(true).open(dst).unwrap();
    if prefix < capacity {
        let virgin = vec![0u8; (capacity - prefix) as usize];
        f.seek(SeekFrom::Start(SIM_HEADER_LEN + prefix)).unwrap();
        f.write_all(&virgin).unwrap();
        let zeros = vec![0u8; block_size as usize];
        for b in prefix..capacity {
            f.seek(SeekFrom::Start(
                SIM_HEADER_LEN + capacity + b * u64::from(block_size),
            ))
            .unwrap();
            f.write_all(&zeros).unwrap();
        }
    }
}

/// Count of written blocks according to the state table.
pub fn written_blocks(path: &Path) -> u64 {
    let (_, capacity) = image_geometry(path);
    read_at(path, SIM_HEADER_LEN, capacity as usize)
        .iter()
        .filter(|&&s| s == 1)
        .count() as u64
}

/// Flip one bit inside a block's stored data.
pub fn corrupt_image_block(path: &Path, ordinal: u64, byte: usize, bit: u8) {
    use std::io::{Read, Seek, SeekFrom, Write};
    let (block_size, capacity) = image_geometry(path);
    let at = SIM_HEADER_LEN + capacity + ordinal * u64::from(block_size) + byte as u64;
    let mut f = std::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .open(path)
        .unwrap();
    f.seek(SeekFrom::Start(at)).unwrap();
    let mut b = [0u8; 1];
    f.read_exact(&mut b).unwrap();
    b[0] ^= 1 << bit;
    f.seek(SeekFrom::Start(at)).unwrap();
    f.write_all(&b).unwrap();
}

// ----- content hashing ------------------------------------------------------

pub fn content_hash(bytes: &[u8]) -> [u8; 32] {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().into()
}

/// Deterministic pseudo-random bytes for test content.
pub fn patterned_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
    (0..len)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 24) as u8
        })
        .collect()
}
