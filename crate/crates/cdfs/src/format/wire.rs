//! Little-endian field readers and writers shared by the record codecs.

use crate::device::MediaAddress;
use crate::error::{Error, Result};

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    kind: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], kind: &'static str) -> Self {
        Reader { buf, pos: 0, kind }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Truncated { kind: self.kind });
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn addr(&mut self) -> Result<MediaAddress> {
        Ok(MediaAddress::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn seek(&mut self, pos: usize) -> Result<()> {
        if pos > self.buf.len() {
            return Err(Error::Truncated { kind: self.kind });
        }
        self.pos = pos;
        Ok(())
    }
}

pub fn put_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

pub fn put_addr(buf: &mut Vec<u8>, a: MediaAddress) {
    buf.extend_from_slice(&a.to_le_bytes());
}

/// Fixed-width character field, NUL padded.
pub fn put_padded(buf: &mut Vec<u8>, bytes: &[u8], width: usize) {
    debug_assert!(bytes.len() <= width);
    buf.extend_from_slice(bytes);
    buf.extend(std::iter::repeat_n(0u8, width - bytes.len()));
}

/// Strip trailing NUL padding; interior NULs are an error.
pub fn unpad(field: &[u8], kind: &'static str) -> Result<Vec<u8>> {
    let end = field.iter().position(|&b| b == 0).unwrap_or(field.len());
    if field[end..].iter().any(|&b| b != 0) {
        return Err(Error::InvalidField(format!("{kind}: bytes after NUL padding")));
    }
    Ok(field[..end].to_vec())
}
