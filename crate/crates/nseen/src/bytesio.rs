//! Little-endian binary stream helpers with running SHA-256 checksums,
//! shared by the model checkpoint and index file formats.

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAX_STRING_LEN: usize = 1 << 20;

pub struct CheckedWriter<W: Write> {
    inner: W,
    hasher: Sha256,
}

impl<W: Write> CheckedWriter<W> {
    pub fn new(inner: W) -> Self {
        CheckedWriter {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)?;
        Ok(())
    }

    pub fn write_u8(&mut self, v: u8) -> Result<()> {
        self.write_bytes(&[v])
    }

    pub fn write_u32(&mut self, v: u32) -> Result<()> {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_u64(&mut self, v: u64) -> Result<()> {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_usize(&mut self, v: usize) -> Result<()> {
        self.write_u64(v as u64)
    }

    pub fn write_f64(&mut self, v: f64) -> Result<()> {
        self.write_bytes(&v.to_le_bytes())
    }

    pub fn write_str(&mut self, s: &str) -> Result<()> {
        self.write_usize(s.len())?;
        self.write_bytes(s.as_bytes())
    }

    /// Appends the SHA-256 digest of everything written so far and returns it.
    pub fn finish(mut self) -> Result<[u8; 32]> {
        let digest: [u8; 32] = self.hasher.finalize().into();
        self.inner.write_all(&digest)?;
        self.inner.flush()?;
        Ok(digest)
    }
}

pub struct CheckedReader<R: Read> {
    inner: R,
    hasher: Sha256,
}

impl<R: Read> CheckedReader<R> {
    pub fn new(inner: R) -> Self {
        CheckedReader {
            inner,
            hasher: Sha256::new(),
        }
    }

    pub fn read_bytes(&mut self, buf: &mut [u8]) -> Result<()> {
        self.inner
            .read_exact(buf)
            .map_err(|e| Error::Corrupt(format!("unexpected end of stream ({e})")))?;
        self.hasher.update(&*buf);
        Ok(())
    }

    pub fn read_u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_bytes(&mut b)?;
        Ok(b[0])
    }

    pub fn read_u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_bytes(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_usize(&mut self) -> Result<usize> {
        let v = self.read_u64()?;
        usize::try_from(v).map_err(|_| Error::Corrupt(format!("length {v} out of range")))
    }

    pub fn read_f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_bytes(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn read_f64_vec(&mut self) -> Result<Vec<f64>> {
        let len = self.read_usize()?;
        let mut out = Vec::with_capacity(len.min(1 << 24));
        for _ in 0..len {
            out.push(self.read_f64()?);
        }
        Ok(out)
    }

    pub fn read_string(&mut self) -> Result<String> {
        let len = self.read_usize()?;
        if len > MAX_STRING_LEN {
            return Err(Error::Corrupt(format!("string length {len} exceeds limit")));
        }
        let mut buf = vec![0u8; len];
        self.read_bytes(&mut buf)?;
        String::from_utf8(buf).map_err(|_| Error::Corrupt("invalid UTF-8".into()))
    }

    pub fn expect_magic(&mut self, magic: &'static str) -> Result<()> {
        let mut buf = vec![0u8; magic.len()];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::BadMagic { expected: magic })?;
        if buf != magic.as_bytes() {
            return Err(Error::BadMagic { expected: magic });
        }
        self.hasher.update(&buf);
        Ok(())
    }

    /// Reads the trailing digest and compares it against the running hash.
    pub fn verify_checksum(mut self) -> Result<[u8; 32]> {
        let expected: [u8; 32] = self.hasher.finalize().into();
        let mut stored = [0u8; 32];
        self.inner
            .read_exact(&mut stored)
            .map_err(|_| Error::Corrupt("missing trailing checksum".into()))?;
        if stored != expected {
            return Err(Error::ChecksumMismatch);
        }
        Ok(stored)
    }
}
