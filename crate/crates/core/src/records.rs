//! Little-endian binary encoding shared by dataset and checkpoint files.
//!
//! A file is a 4-byte magic, a `u32` version, a container-specific header,
//! a `u32` record count and the records. Each record is
//! `name_len: u32, name: utf8, dtype: u8, rank: u32, extents: u64 * rank, data`
//! with dtype codes 0 = f32, 1 = f64, 2 = i64.

use savp_tensor::{DType, Element, Tensor};

use crate::error::{Error, Result};

pub const I64_CODE: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum Record {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    I64 { shape: Vec<usize>, data: Vec<i64> },
}

impl Record {
    pub fn shape(&self) -> &[usize] {
        match self {
            Record::F32(t) => t.shape(),
            Record::F64(t) => t.shape(),
            Record::I64 { shape, .. } => shape,
        }
    }

    pub fn i64(shape: impl Into<Vec<usize>>, data: Vec<i64>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Format(format!("i64 record of shape {shape:?} with {} values", data.len())));
        }
        Ok(Record::I64 { shape, data })
    }

    /// Converts a float record to element type `F`.
    pub fn to_tensor<F: Element>(&self) -> Result<Tensor<F>> {
        match self {
            Record::F32(t) => Ok(t.cast()),
            Record::F64(t) => Ok(t.cast()),
            Record::I64 { .. } => Err(Error::Format("expected a float record".into())),
        }
    }

    pub fn as_i64(&self) -> Result<&[i64]> {
        match self {
            Record::I64 { data, .. } => Ok(data),
            _ => Err(Error::Format("expected an i64 record".into())),
        }
    }
}

impl<F: Element> From<Tensor<F>> for Record {
    fn from(t: Tensor<F>) -> Self {
        match F::DTYPE {
            DType::F32 => Record::F32(t.cast()),
            DType::F64 => Record::F64(t.cast()),
        }
    }
}

#[derive(Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 4], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// Length-prefixed bytes.
    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.buf.extend_from_slice(b);
    }

    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }

    pub fn records(&mut self, records: &[(String, Record)]) {
        self.u32(records.len() as u32);
        for (name, rec) in records {
            self.str(name);
            let code = match rec {
                Record::F32(_) => DType::F32.code(),
                Record::F64(_) => DType::F64.code(),
                Record::I64 { .. } => I64_CODE,
            };
            self.buf.push(code);
            let shape = rec.shape();
            self.u32(shape.len() as u32);
            for &e in shape {
                self.u64(e as u64);
            }
            match rec {
                Record::F32(t) => t.data().iter().for_each(|v| v.to_le_bytes_into(&mut self.buf)),
                Record::F64(t) => t.data().iter().for_each(|v| v.to_le_bytes_into(&mut self.buf)),
                Record::I64 { data, .. } => data.iter().for_each(|v| self.buf.extend_from_slice(&v.to_le_bytes())),
            }
        }
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version; returns a reader positioned after them.
    pub fn open(buf: &'a [u8], magic: &[u8; 4], version: u32) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        let m = r.take(4)?;
        if m != magic {
            return Err(Error::Format(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(m),
                String::from_utf8_lossy(magic)
            )));
        }
        let v = r.u32()?;
        if v != version {
            return Err(Error::Format(format!("unsupported version {v}, expected {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Format(format!("truncated: needed {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn str(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub fn records(&mut self) -> Result<Vec<(String, Record)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.str()?;
            let code = self.take(1)?[0];
            let rank = self.u32()? as usize;
            if rank > 8 {
                return Err(Error::Format(format!("record {name}: rank {rank} too large")));
            }
            let shape = (0..rank).map(|_| self.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &e| acc.checked_mul(e))
                .ok_or_else(|| Error::Format(format!("record {name}: extent overflow")))?;
            let rec = match code {
                0 => Record::F32(self.floats(&name, shape, n)?),
                1 => Record::F64(self.floats(&name, shape, n)?),
                I64_CODE => {
                    let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("extent overflow".into()))?)?;
                    let data = raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                    Record::i64(shape, data)?
                }
                other => return Err(Error::Format(format!("record {name}: unknown dtype code {other}"))),
            };
            out.push((name, rec));
        }
        Ok(out)
    }

    fn floats<F: Element>(&mut self, name: &str, shape: Vec<usize>, n: usize) -> Result<Tensor<F>> {
        let width = F::DTYPE.size_of();
        let raw = self.take(n.checked_mul(width).ok_or_else(|| Error::Format("extent overflow".into()))?)?;
        let data = raw.chunks_exact(width).map(F::from_le_slice).collect();
        Tensor::new(shape, data).map_err(|e| Error::Format(format!("record {name}: {e}")))
    }

    /// Errors unless every byte was consumed.
    pub fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

/// Looks up a record by name.
pub fn find<'r>(records: &'r [(String, Record)], name: &str) -> Result<&'r Record> {
    records
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, r)| r)
        .ok_or_else(|| Error::Format(format!("missing record {name}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Record)> {
        vec![
            ("a".into(), Record::F32(Tensor::from_f64([2, 2], &[1.0, -2.5, 3.0, 0.1]).unwrap())),
            ("b".into(), Record::F64(Tensor::scalar(std::f64::consts::PI))),
            ("c".into(), Record::i64([3], vec![-1, 0, 7]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_is_exact() {
        let mut w = Writer::new(b"TEST", 1);
        w.str("header");
        w.records(&sample());
        let mut r = Reader::open(&w.buf, b"TEST", 1).unwrap();
        assert_eq!(r.str().unwrap(), "header");
        assert_eq!(r.records().unwrap(), sample());
        r.finish().unwrap();
    }

    #[test]
    fn every_truncation_is_rejected() {
        let mut w = Writer::new(b"TEST", 1);
        w.records(&sample());
        for cut in 0..w.buf.len() {
            let res = Reader::open(&w.buf[..cut], b"TEST", 1).and_then(|mut r| {
                r.records()?;
                r.finish()
            });
            assert!(res.is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn rejects_wrong_magic_or_version() {
        let w = Writer::new(b"TEST", 1);
        assert!(Reader::open(&w.buf, b"NOPE", 1).is_err());
        assert!(Reader::open(&w.buf, b"TEST", 2).is_err());
    }
}
