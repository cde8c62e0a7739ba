//! Little-endian record encoding shared by the parameter and trajectory
//! files: `magic | body | crc32(body)`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

#[derive(Default)]
pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        self.buf.reserve(vs.len() * 8);
        for v in vs {
            self.f64(*v);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    /// Frames the body with `magic` and a CRC32 trailer.
    pub fn finish(self, magic: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(magic.len() + self.buf.len() + 4);
        out.extend_from_slice(magic);
        out.extend_from_slice(&self.buf);
        out.extend_from_slice(&crc32fast::hash(&self.buf).to_le_bytes());
        out
    }
}

pub struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
    path: PathBuf,
}

impl<'a> Decoder<'a> {
    /// Checks the magic and the checksum and returns a reader over the body.
    pub fn open(bytes: &'a [u8], magic: &[u8], path: &Path) -> Result<Self> {
        if bytes.len() < magic.len() + 4 {
            return Err(Error::format(path, "file is truncated"));
        }
        if &bytes[..magic.len()] != magic {
            return Err(Error::format(path, "bad magic"));
        }
        let body = &bytes[magic.len()..bytes.len() - 4];
        let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(Error::format(path, "checksum mismatch (truncated or corrupted)"));
        }
        Ok(Self {
            buf: body,
            pos: 0,
            path: path.to_path_buf(),
        })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(&self.path, "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| self.err("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.err("name is not UTF-8"))
    }

    pub fn err(&self, reason: impl Into<String>) -> Error {
        Error::format(&self.path, reason)
    }

    pub fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let mut e = Encoder::new();
        e.str("w");
        e.u64(3);
        e.f64s(&[1.0, -2.5, f64::MIN_POSITIVE]);
        let bytes = e.finish(b"TEST");
        let p = Path::new("x");
        let mut d = Decoder::open(&bytes, b"TEST", p).unwrap();
        assert_eq!(d.str().unwrap(), "w");
        assert_eq!(d.u64().unwrap(), 3);
        assert_eq!(d.f64s(3).unwrap(), vec![1.0, -2.5, f64::MIN_POSITIVE]);
        d.finish().unwrap();

        let mut bad = bytes.clone();
        bad[6] ^= 1;
        assert!(Decoder::open(&bad, b"TEST", p).is_err());
        assert!(Decoder::open(&bytes[..bytes.len() - 3], b"TEST", p).is_err());
        assert!(Decoder::open(&bytes, b"NOPE", p).is_err());
    }
}
