//! Checksummed, versioned binary container shared by the HIN archive, the
//! adjacency cache and model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic          [u8; 8]
//! format_version u32
//! section_count  u32
//! payload_len    u64
//! checksum       [u8; 32]   SHA-256 of the payload
//! payload        section_count × { tag [u8; 4], len u64, bytes [u8; len] }
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};

const HEADER_LEN: usize = 8 + 4 + 4 + 8 + 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub magic: [u8; 8],
    pub version: u32,
    sections: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new(magic: [u8; 8], version: u32) -> Self {
        Self {
            magic,
            version,
            sections: Vec::new(),
        }
    }

    pub fn push(&mut self, tag: [u8; 4], bytes: Vec<u8>) {
        self.sections.push((tag, bytes));
    }

    pub fn section(&self, tag: [u8; 4]) -> Result<&[u8]> {
        self.sections
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, b)| b.as_slice())
            .ok_or_else(|| Error::Format(format!("missing section {}", String::from_utf8_lossy(&tag))))
    }

    pub fn payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (tag, bytes) in &self.sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(bytes);
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&payload));
        out.extend_from_slice(&payload);
        out
    }

    /// Parses and verifies a container. `expected_version` must match exactly.
    pub fn from_bytes(bytes: &[u8], magic: [u8; 8], expected_version: u32) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format("truncated header".into()));
        }
        if bytes[..8] != magic {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let mut d = Decoder::new(&bytes[8..HEADER_LEN]);
        let version = d.u32()?;
        if version != expected_version {
            return Err(Error::Format(format!(
                "format version {version} is not supported (expected {expected_version})"
            )));
        }
        let count = d.u32()? as usize;
        let payload_len = d.u64()? as usize;
        let checksum = d.take(32)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != payload_len {
            return Err(Error::Format("payload length mismatch".into()));
        }
        if Sha256::digest(payload).as_slice() != checksum {
            return Err(Error::Format("checksum mismatch".into()));
        }
        let mut d = Decoder::new(payload);
        let mut sections = Vec::with_capacity(count);
        for _ in 0..count {
            let tag: [u8; 4] = d.take(4)?.try_into().expect("4 bytes");
            let len = d.u64()? as usize;
            sections.push((tag, d.take(len)?.to_vec()));
        }
        if !d.is_empty() {
            return Err(Error::Format("trailing bytes after last section".into()));
        }
        Ok(Self {
            magic,
            version,
            sections,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, magic: [u8; 8], expected_version: u32) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, magic, expected_version)
    }
}

#[derive(Debug, Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.u64(v as u64)
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.usize(s.len());
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn strings(&mut self, items: &[String]) -> &mut Self {
        self.usize(items.len());
        for s in items {
            self.str(s);
        }
        self
    }

    pub fn usizes(&mut self, items: &[usize]) -> &mut Self {
        self.usize(items.len());
        for &v in items {
            self.usize(v);
        }
        self
    }

    pub fn f64s(&mut self, items: &[f64]) -> &mut Self {
        self.usize(items.len());
        for &v in items {
            self.f64(v);
        }
        self
    }

    pub fn sparse(&mut self, m: &SparseMatrix) -> &mut Self {
        self.usize(m.rows()).usize(m.cols());
        self.usizes(m.indptr()).usizes(m.indices()).f64s(m.values())
    }

    pub fn dense(&mut self, m: &DenseMatrix) -> &mut Self {
        self.usize(m.rows()).usize(m.cols()).f64s(m.as_slice())
    }
}

#[derive(Debug)]
pub struct Decoder<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("unexpected end of section".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("length overflows usize".into()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    /// Reads a length prefix and checks it against the remaining bytes.
    fn len(&mut self, item_size: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(item_size) > self.bytes.len() - self.pos {
            return Err(Error::Format("length prefix exceeds section".into()));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8".into()))
    }

    pub fn strings(&mut self) -> Result<Vec<String>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn usizes(&mut self) -> Result<Vec<usize>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.usize()).collect()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn sparse(&mut self) -> Result<SparseMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let indptr = self.usizes()?;
        let indices = self.usizes()?;
        let values = self.f64s()?;
        SparseMatrix::from_csr(rows, cols, indptr, indices, values)
    }

    pub fn dense(&mut self) -> Result<DenseMatrix> {
        let rows = self.usize()?;
        let cols = self.usize()?;
        let data = self.f64s()?;
        DenseMatrix::from_vec(rows, cols, data).map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
