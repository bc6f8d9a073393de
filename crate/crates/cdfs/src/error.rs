//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    // Device and simulator image errors.
    #[error("corrupt simulator image: {0}")]
    CorruptImage(String),
    #[error("geometry disagrees with the existing image")]
    GeometryMismatch,
    #[error("invalid address scheme: {0}")]
    InvalidScheme(String),
    #[error("null media address used where a real address is required")]
    NullAddress,
    #[error("address field {index} holds {value}, modulo is {modulo}")]
    FieldExceedsModulo { index: usize, value: u64, modulo: u32 },
    #[error("block ordinal {ordinal} outside media ({limit} blocks)")]
    OutOfMedia { ordinal: u64, limit: u64 },
    #[error("write address must be block aligned, offset is {offset}")]
    UnalignedWrite { offset: u32 },
    #[error("blocks may only be written in sequence: next is {expected}, got {got}")]
    NonSequentialWrite { expected: u64, got: u64 },
    #[error("block {ordinal} already written")]
    AlreadyWritten { ordinal: u64 },
    #[error("block {ordinal} is virgin")]
    BlockVirgin { ordinal: u64 },
    #[error("block {ordinal} is unreadable")]
    BlockUnreadable { ordinal: u64 },
    #[error("content of {len} bytes exceeds block size {block_size}")]
    OversizedBlock { len: usize, block_size: u32 },

    // Record format errors.
    #[error("{kind}: bad magic")]
    BadMagic { kind: &'static str },
    #[error("{kind}: checksum verification failed")]
    BadChecksum { kind: &'static str },
    #[error("{kind}: self-reference mismatch (stored {stored:#018x}, read from {actual:#018x})")]
    SelfRefMismatch { kind: &'static str, stored: u64, actual: u64 },
    #[error("{kind}: truncated or inconsistent length")]
    Truncated { kind: &'static str },
    #[error("{kind}: unsupported version {version}")]
    UnsupportedVersion { kind: &'static str, version: u16 },
    #[error("checksum field offset {offset} is odd or out of range")]
    BadChecksumOffset { offset: usize },
    #[error("invalid entry name: {0}")]
    InvalidName(String),
    #[error("duplicate name {0:?} in directory")]
    DuplicateName(String),
    #[error("{kind}: entries out of order")]
    SortViolation { kind: &'static str },
    #[error("file header sections overlap or are out of order")]
    SectionOverlap,
    #[error("file type {file_type} inconsistent with present sections")]
    TypeSectionMismatch { file_type: u16 },
    #[error("unknown file type code {0}")]
    UnknownFileType(u16),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error("timestamp before 1901-01-01 GMT")]
    PreEpochTime,
    #[error("property names and values must be printable ASCII")]
    NonAsciiProperty,
    #[error("zero-length strip in file map")]
    ZeroLengthStrip,

    // Volume lifecycle errors.
    #[error("device is not virgin")]
    DeviceNotVirgin,
    #[error("no valid end-of-transaction record found")]
    NoValidEot,
    #[error("unrecoverable volume: no valid EOT found down to block 0")]
    Unrecoverable,
    #[error("no open transaction")]
    NoOpenTransaction,
    #[error("a write stream is open")]
    WriteStreamOpen,
    #[error("media full: {needed} more blocks needed, {available} available")]
    MediaFull { needed: u64, available: u64 },
    #[error("owner name does not fit a single-block EOT")]
    OwnerTooLong,

    // Namespace errors.
    #[error("unknown directory {0}")]
    UnknownDirectory(u32),
    #[error("no entry named {0:?}")]
    NoSuchEntry(String),
    #[error("entry {0:?} already exists")]
    EntryExists(String),
    #[error("the root directory may not be deleted")]
    RootDeletion,
    #[error("{0:?} is not a directory")]
    NotADirectory(String),
    #[error("{0:?} is a directory")]
    IsADirectory(String),
    #[error("soft link depth limit exceeded")]
    LinkDepthExceeded,
    #[error("path escapes above the root directory")]
    EscapeAboveRoot,
    #[error("dangling soft link target")]
    DanglingLink,
    #[error("no version {version} of {name:?}")]
    NoSuchVersion { name: String, version: u32 },
    #[error("version {version} of {name:?} has been destroyed")]
    VersionDestroyed { name: String, version: u32 },
    #[error("{0:?} is not an addname")]
    NotAnAddname(String),
    #[error("{0:?} is not a soft link")]
    NotALink(String),
    #[error("{0:?} never existed in this directory")]
    NeverExisted(String),
    #[error("invalid link target: {0}")]
    InvalidLinkTarget(String),

    // File stream errors.
    #[error("another write stream is already open")]
    WriteStreamBusy,
    #[error("unmapped byte at logical offset {offset}")]
    Hole { offset: u64 },
    #[error("seek to {pos} outside [0, {end}]")]
    SeekOutOfRange { pos: i64, end: u64 },
    #[error("file is already fragmented")]
    AlreadyFragmented,
    #[error("a fragmented file cannot be converted back to contiguous")]
    FragmentedToContiguous,
    #[error("patch starts inside a hole beginning at offset {hole_start}")]
    PatchIntoHole { hole_start: u64 },
    #[error("empty patch")]
    EmptyPatch,
    #[error("file of {0} bytes exceeds the 32-bit length limit")]
    FileTooLarge(u64),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
