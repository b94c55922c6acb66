//! Little-endian binary helpers shared by the model file formats.

use std::io::{Read, Write};

use crate::error::{Error, Result};

pub(crate) struct Encoder<W: Write> {
    inner: W,
}

impl<W: Write> Encoder<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn magic(&mut self, tag: &[u8; 4], version: u32) -> Result<()> {
        self.inner.write_all(tag)?;
        self.u32(version)
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn usize(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Codec(format!("{v} does not fit in u32")))?;
        self.u32(v)
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn f64s(&mut self, vs: &[f64]) -> Result<()> {
        for &v in vs {
            self.f64(v)?;
        }
        Ok(())
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.usize(b.len())?;
        self.inner.write_all(b)?;
        Ok(())
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.bytes(s.as_bytes())
    }

    pub fn finish(self) -> W {
        self.inner
    }
}

pub(crate) struct Decoder<R: Read> {
    inner: R,
}

impl<R: Read> Decoder<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }

    pub fn magic(&mut self, tag: &[u8; 4], version: u32) -> Result<()> {
        let mut got = [0u8; 4];
        self.inner.read_exact(&mut got)?;
        if &got != tag {
            return Err(Error::Codec(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(tag)
            )));
        }
        let v = self.u32()?;
        if v != version {
            return Err(Error::Codec(format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn usize(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>> {
        let n = self.usize()?;
        let mut b = vec![0u8; n];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?).map_err(|e| Error::Codec(e.to_string()))
    }
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
