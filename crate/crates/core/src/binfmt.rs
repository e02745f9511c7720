//! Little-endian helpers shared by the small binary artifact formats.

use std::path::Path;

use crate::error::{Error, FormatError, Result};

pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut buf = magic.to_vec();
        buf.extend_from_slice(&version.to_le_bytes());
        Writer { buf }
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }
}

pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor after them.
    pub fn open(bytes: &'a [u8], path: &'a Path, magic: [u8; 4], version: u32) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        let found: [u8; 4] = r.take(4)?.try_into().unwrap();
        if found != magic {
            return Err(Error::format(path, FormatError::BadMagic { expected: magic, found }));
        }
        let v = r.u32()?;
        if v != version {
            return Err(Error::format(
                path,
                FormatError::VersionMismatch { expected: version, found: v },
            ));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.path,
                FormatError::Truncated {
                    expected: self.pos.saturating_add(n) as u64,
                    actual: self.bytes.len() as u64,
                },
            )),
        }
    }

    /// Fails early when `n` more bytes cannot possibly be present.
    pub fn require(&self, n: usize) -> Result<()> {
        let need = self.pos.saturating_add(n);
        if need > self.bytes.len() {
            return Err(Error::format(
                self.path,
                FormatError::Truncated { expected: need as u64, actual: self.bytes.len() as u64 },
            ));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(self.path, FormatError::NonFinite { record: 0 }));
        }
        Ok(v)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        self.require(n.saturating_mul(8))?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.path,
                FormatError::TrailingBytes {
                    expected: self.pos as u64,
                    actual: self.bytes.len() as u64,
                },
            ));
        }
        Ok(())
    }
}
