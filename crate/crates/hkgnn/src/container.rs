//! Little-endian binary container shared by every on-disk artifact.
//!
//! A file starts with an 8-byte magic string and a u32 format version, then
//! a flat sequence of typed values. Multi-part artifacts delimit their parts
//! with string tags so a reader can dispatch on what comes next, and
//! [`Reader::end`] asserts the file holds nothing more. Every decode failure
//! carries the file path and what was being read at the time.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Longest vector or string a well-formed artifact can hold; anything above
/// this is treated as corruption rather than trusted as an allocation size.
const MAX_LEN: u64 = 1 << 28;

#[derive(Debug)]
pub struct Writer<W: Write> {
    w: W,
    label: String,
}

impl Writer<BufWriter<File>> {
    pub fn create(path: &Path, magic: &[u8; 8], version: u32) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Writer::new(BufWriter::new(file), &path.display().to_string(), magic, version)
    }
}

impl<W: Write> Writer<W> {
    /// Wraps a sink and writes the header. `label` names the destination in
    /// error messages.
    pub fn new(w: W, label: &str, magic: &[u8; 8], version: u32) -> Result<Self> {
        let mut out = Writer { w, label: label.to_string() };
        out.bytes(magic)?;
        out.u32(version)?;
        Ok(out)
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.w.write_all(b).map_err(|e| Error::io(self.label.clone(), e))
    }

    pub fn u8(&mut self, v: u8) -> Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i64(&mut self, v: i64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn bool(&mut self, v: bool) -> Result<()> {
        self.u8(v as u8)
    }

    pub fn str(&mut self, s: &str) -> Result<()> {
        self.u64(s.len() as u64)?;
        self.bytes(s.as_bytes())
    }

    pub fn u32s(&mut self, v: &[u32]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for &x in v {
            self.u32(x)?;
        }
        Ok(())
    }

    pub fn u64s(&mut self, v: &[u64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for &x in v {
            self.u64(x)?;
        }
        Ok(())
    }

    pub fn f64s(&mut self, v: &[f64]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for &x in v {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn strs(&mut self, v: &[String]) -> Result<()> {
        self.u64(v.len() as u64)?;
        for s in v {
            self.str(s)?;
        }
        Ok(())
    }

    /// Row count, column count, then the row-major data.
    pub fn tensor(&mut self, t: &Tensor) -> Result<()> {
        self.u64(t.rows() as u64)?;
        self.u64(t.cols() as u64)?;
        for &x in t.data() {
            self.f64(x)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(self.label, e))
    }
}

#[derive(Debug)]
pub struct Reader<R: Read> {
    r: R,
    label: String,
}

impl Reader<BufReader<File>> {
    pub fn open(path: &Path, magic: &[u8; 8], version: u32) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Reader::new(BufReader::new(file), &path.display().to_string(), magic, version)
    }
}

impl<R: Read> Reader<R> {
    /// Wraps a source and checks the header before anything else is decoded.
    pub fn new(r: R, label: &str, magic: &[u8; 8], version: u32) -> Result<Self> {
        let mut input = Reader { r, label: label.to_string() };
        let mut got = [0u8; 8];
        input.fill(&mut got, "magic")?;
        if &got != magic {
            return Err(input.corrupt(format!(
                "magic {:?} does not match {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let got_version = input.u32()?;
        if got_version != version {
            return Err(input.corrupt(format!("format version {got_version}, expected {version}")));
        }
        Ok(input)
    }

    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::artifact(self.label.clone(), msg)
    }

    fn fill(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        self.r.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                self.corrupt(format!("truncated while reading {what}"))
            } else {
                Error::io(self.label.clone(), e)
            }
        })
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > MAX_LEN {
            return Err(self.corrupt(format!("{what} length {n} is implausibly large")));
        }
        Ok(n as usize)
    }

    pub fn u8(&mut self) -> Result<u8> {
        let mut b = [0u8; 1];
        self.fill(&mut b, "u8")?;
        Ok(b[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        let mut b = [0u8; 4];
        self.fill(&mut b, "u32")?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, "u64")?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn i64(&mut self) -> Result<i64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, "i64")?;
        Ok(i64::from_le_bytes(b))
    }

    pub fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.fill(&mut b, "f64")?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn bool(&mut self) -> Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(self.corrupt(format!("bool byte {v}"))),
        }
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.len("string")?;
        let mut buf = vec![0u8; n];
        self.fill(&mut buf, "string body")?;
        String::from_utf8(buf).map_err(|e| self.corrupt(format!("non-utf8 string: {e}")))
    }

    /// Reads a tag and checks it is the expected one; artifacts use this to
    /// assert part order.
    pub fn expect_str(&mut self, want: &str) -> Result<()> {
        let got = self.str()?;
        if got != want {
            return Err(self.corrupt(format!("found {got:?} where {want:?} was expected")));
        }
        Ok(())
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>> {
        let n = self.len("u32 vector")?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn u64s(&mut self) -> Result<Vec<u64>> {
        let n = self.len("u64 vector")?;
        (0..n).map(|_| self.u64()).collect()
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len("f64 vector")?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn strs(&mut self) -> Result<Vec<String>> {
        let n = self.len("string vector")?;
        (0..n).map(|_| self.str()).collect()
    }

    pub fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.len("tensor rows")?;
        let cols = self.len("tensor cols")?;
        let numel = rows
            .checked_mul(cols)
            .filter(|&n| n as u64 <= MAX_LEN)
            .ok_or_else(|| self.corrupt(format!("tensor {rows}x{cols} is implausibly large")))?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::new(vec![rows, cols], data)
    }

    /// Succeeds only at end of file; trailing bytes mean the artifact and
    /// this build disagree about the format.
    pub fn end(&mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.r.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(self.corrupt("trailing bytes after the last field".to_string())),
            Err(e) => Err(Error::io(self.label.clone(), e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"HKGNTEST";

    fn encode(f: impl FnOnce(&mut Writer<&mut Vec<u8>>)) -> Vec<u8> {
        let mut buf = Vec::new();
        let mut w = Writer::new(&mut buf, "mem", MAGIC, 1).unwrap();
        f(&mut w);
        w.finish().unwrap();
        buf
    }

    fn reader(buf: &[u8]) -> Reader<&[u8]> {
        Reader::new(buf, "mem", MAGIC, 1).unwrap()
    }

    #[test]
    fn every_primitive_roundtrips() {
        let buf = encode(|w| {
            w.u8(7).unwrap();
            w.u32(0xdead_beef).unwrap();
            w.u64(u64::MAX).unwrap();
            w.i64(-42).unwrap();
            w.f64(-0.5).unwrap();
            w.bool(true).unwrap();
            w.str("héllo").unwrap();
            w.u32s(&[3, 1, 4]).unwrap();
            w.f64s(&[1.5, -2.5]).unwrap();
            w.strs(&["a".to_string(), String::new()]).unwrap();
        });
        let mut r = reader(&buf);
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 0xdead_beef);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.i64().unwrap(), -42);
        assert_eq!(r.f64().unwrap(), -0.5);
        assert!(r.bool().unwrap());
        assert_eq!(r.str().unwrap(), "héllo");
        assert_eq!(r.u32s().unwrap(), vec![3, 1, 4]);
        assert_eq!(r.f64s().unwrap(), vec![1.5, -2.5]);
        assert_eq!(r.strs().unwrap(), vec!["a".to_string(), String::new()]);
        r.end().unwrap();
    }

    #[test]
    fn tensors_roundtrip_bitwise() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, f64::MIN_POSITIVE, 6.0]).unwrap();
        let buf = encode(|w| w.tensor(&t).unwrap());
        let mut r = reader(&buf);
        let back = r.tensor().unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
        r.end().unwrap();
    }

    #[test]
    fn wrong_magic_and_version_are_rejected() {
        let buf = encode(|_| {});
        let err = Reader::new(&buf[..], "mem", b"OTHERFMT", 1).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
        let err = Reader::new(&buf[..], "mem", MAGIC, 2).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn truncation_is_reported_with_context() {
        let buf = encode(|w| w.str("abcdef").unwrap());
        let cut = &buf[..buf.len() - 2];
        let mut r = reader(cut);
        let err = r.str().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("truncated") && msg.contains("mem"), "{msg}");
    }

    #[test]
    fn trailing_bytes_fail_the_end_check() {
        let mut buf = encode(|w| w.u8(1).unwrap());
        buf.push(0);
        let mut r = reader(&buf);
        r.u8().unwrap();
        let err = r.end().unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn absurd_lengths_are_corruption_not_allocations() {
        let buf = encode(|w| w.u64(u64::MAX).unwrap());
        let mut r = reader(&buf);
        let err = r.str().unwrap_err();
        assert!(err.to_string().contains("implausibly large"), "{err}");
    }

    #[test]
    fn tag_mismatch_names_both_sides() {
        let buf = encode(|w| w.str("part-a").unwrap());
        let mut r = reader(&buf);
        let err = r.expect_str("part-b").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("part-a") && msg.contains("part-b"), "{msg}");
    }
}
