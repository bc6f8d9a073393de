//! In-memory reference model for fragmented file content: a plain byte
//! sequence plus a hole set, mirroring the patch and read rules.

#![allow(dead_code)]

/// Authoritative shadow of a fragmented file's logical content.
#[derive(Debug, Clone, Default)]
pub struct ShadowOracle {
    bytes: Vec<Option<u8>>,
}

#[derive(Debug, PartialEq, Eq)]
pub enum OracleError {
    /// First unmapped offset touched by a read.
    Hole(u64),
    /// Patch starting strictly inside an existing interior hole.
    PatchIntoHole(u64),
    SeekOutOfRange,
}

impl ShadowOracle {
    pub fn from_contiguous(bytes: &[u8]) -> ShadowOracle {
        ShadowOracle {
            bytes: bytes.iter().copied().map(Some).collect(),
        }
    }

    /// Logical extent: highest mapped byte.
    pub fn end(&self) -> u64 {
        self.bytes.len() as u64
    }

    pub fn valid_bytes(&self) -> u64 {
        self.bytes.iter().filter(|b| b.is_some()).count() as u64
    }

    fn holes(&self) -> Vec<(u64, u64)> {
        let mut holes = Vec::new();
        let mut start: Option<u64> = None;
        for (i, b) in self.bytes.iter().enumerate() {
            match (b, start) {
                (None, None) => start = Some(i as u64),
                (Some(_), Some(s)) => {
                    holes.push((s, i as u64));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(s) = start {
            holes.push((s, self.bytes.len() as u64));
        }
        holes
    }

    pub fn patch(&mut self, offset: u64, data: &[u8]) -> Result<(), OracleError> {
        let patch_start = offset;
        let patch_end = offset + data.len() as u64;
        for (h0, h1) in self.holes() {
            let overlaps = patch_start < h1 && patch_end > h0;
            if overlaps && patch_start > h0 {
                return Err(OracleError::PatchIntoHole(h0));
            }
        }
        if patch_end > self.bytes.len() as u64 {
            self.bytes.resize(patch_end as usize, None);
        }
        for (i, &b) in data.iter().enumerate() {
            self.bytes[offset as usize + i] = Some(b);
        }
        Ok(())
    }

    pub fn read(&self, offset: u64, n: usize) -> Result<Vec<u8>, OracleError> {
        let want = (self.end().saturating_sub(offset)).min(n as u64) as usize;
        let mut out = Vec::with_capacity(want);
        for i in 0..want {
            match self.bytes[offset as usize + i] {
                Some(b) => out.push(b),
                None => return Err(OracleError::Hole(offset + i as u64)),
            }
        }
        Ok(out)
    }

    /// Full content; errors at the first hole.
    pub fn full(&self) -> Result<Vec<u8>, OracleError> {
        self.read(0, self.bytes.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_tracks_holes_and_patches() {
        let mut o = ShadowOracle::from_contiguous(b"hello");
        assert_eq!(o.end(), 5);
        o.patch(5, b"!!").unwrap();
        assert_eq!(o.full().unwrap(), b"hello!!");
        // Past-the-end patch creates a hole.
        o.patch(10, b"xy").unwrap();
        assert_eq!(o.end(), 12);
        assert_eq!(o.read(0, 7).unwrap(), b"hello!!");
        assert_eq!(o.read(0, 8), Err(OracleError::Hole(7)));
        // Filling from the hole start is allowed; mid-hole is not.
        assert_eq!(o.patch(8, b"z"), Err(OracleError::PatchIntoHole(7)));
        o.patch(7, b"z").unwrap();
        assert_eq!(o.read(7, 1).unwrap(), b"z");
    }
}
