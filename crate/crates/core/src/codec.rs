//! Little-endian binary primitives shared by the trial-file and model-archive
//! formats. The reader tracks its byte offset so that every decode failure can
//! name where it happened.

use crate::{Error, Result};

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length exceeds u32"));
    }

    /// Length-prefixed (u32) UTF-8 string.
    pub fn str(&mut self, s: &str) {
        self.len_u32(s.len());
        self.bytes(s.as_bytes());
    }

    pub fn f64_slice(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn error(&self, field: &'static str, reason: impl Into<String>) -> Error {
        Error::Format {
            offset: self.offset(),
            field,
            reason: reason.into(),
        }
    }

    pub fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                field,
                format!("need {n} bytes, {} remain", self.remaining()),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, field: &'static str) -> Result<[u8; N]> {
        let mut out = [0u8; N];
        out.copy_from_slice(self.take(N, field)?);
        Ok(out)
    }

    pub fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(field)?))
    }

    pub fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(field)?))
    }

    pub fn f32(&mut self, field: &'static str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(field)?))
    }

    pub fn f64(&mut self, field: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(field)?))
    }

    /// Reads a u32 count and checks that at least `count * elem_size` bytes
    /// remain, so a corrupt count cannot trigger a huge allocation.
    pub fn count(&mut self, field: &'static str, elem_size: usize) -> Result<usize> {
        let at = self.offset();
        let n = self.u32(field)? as usize;
        if n.saturating_mul(elem_size) > self.remaining() {
            return Err(Error::Format {
                offset: at,
                field,
                reason: format!("declared {n} entries but only {} bytes remain", self.remaining()),
            });
        }
        Ok(n)
    }

    pub fn str(&mut self, field: &'static str) -> Result<String> {
        let n = self.count(field, 1)?;
        let at = self.offset();
        let raw = self.take(n, field)?;
        String::from_utf8(raw.to_vec()).map_err(|e| Error::Format {
            offset: at,
            field,
            reason: e.to_string(),
        })
    }

    pub fn f64_vec(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64(field)).collect()
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4], field: &'static str) -> Result<()> {
        let at = self.offset();
        let got = self.take(4, field)?;
        if got != magic {
            return Err(Error::Format {
                offset: at,
                field,
                reason: format!(
                    "expected {:?}, found {:?}",
                    String::from_utf8_lossy(magic),
                    String::from_utf8_lossy(got)
                ),
            });
        }
        Ok(())
    }

    pub fn finish(&self, field: &'static str) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(field, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
