//! CDFS: a transactional, versioned, hierarchical file system for
//! write-once media.
//!
//! Information is organized in transactions: a group of files, the
//! directories containing them, a directory list, and a terminal
//! end-of-transaction block. Blocks are only ever written consecutively,
//! so a volume is always a written prefix followed by virgin blocks, and
//! mounting locates the last transaction with a bounded binary search.
//! Nothing is ever modified in place: updates write new versions, old
//! versions stay readable, and deleted entries can be recovered from
//! directory history.
//!
//! The crate is organized in layers:
//!
//! - [`device`]: the write-once driver contract, mixed-radix block
//!   addressing, and a file-backed simulator.
//! - [`format`]: bit-exact codecs for every on-media record.
//! - [`volume`]: volume lifecycle: initialize, mount, commit, recover,
//!   fsck, compact.
//! - [`namespace`]: directories, names, versions, addnames, soft links.
//! - [`fileio`]: content streams, import and export, fragmented files.

pub mod device;
mod error;
pub mod fileio;
pub mod format;
pub mod namespace;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{Clock, FixedClock, SteppingClock, SystemClock, Volume};
