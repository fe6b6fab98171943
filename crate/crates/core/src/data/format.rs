//! `TNSD` dataset files.
//!
//! Layout, all integers little-endian: magic `TNSD`, version `u16`, sample
//! count `u32`, the generator spec, then per sample label `u16`, cell `u16`,
//! bbox `x, y, w, h` as `u16` and the `E × E` image as `f32`. A CRC32 of
//! every preceding byte closes the file.

use std::path::Path;

use super::synth::{Dataset, Sample, SynthSpec};
use crate::error::{Error, Result};
use crate::geometry::Rect;
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"TNSD";
pub const VERSION: u16 = 1;

/// Little-endian writer into a byte buffer.
#[derive(Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn u16(&mut self, v: u16) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }
    /// Appends the CRC32 of everything written so far.
    pub fn finish(mut self) -> Vec<u8> {
        let crc = crc32fast::hash(&self.buf);
        self.u32(crc);
        self.buf
    }
}

/// Little-endian reader that reports the offset of every failure.
pub(crate) struct Reader<'a> {
    pub data: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn error(&self, msg: impl Into<String>) -> Error {
        Error::Format { offset: self.pos as u64, msg: msg.into() }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(self.error(format!("truncated: need {n} bytes, {} left", self.data.len() - self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
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
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let start = self.pos;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format { offset: start as u64, msg: "invalid UTF-8".into() })
    }

    /// Checks and strips the trailing CRC32; must run before any other read.
    pub fn verify_crc(data: &'a [u8]) -> Result<Self> {
        if data.len() < 4 {
            return Err(Error::Format { offset: 0, msg: "file shorter than its checksum".into() });
        }
        let body = data.len() - 4;
        let stored = u32::from_le_bytes(data[body..].try_into().unwrap());
        let actual = crc32fast::hash(&data[..body]);
        if stored != actual {
            return Err(Error::Format {
                offset: body as u64,
                msg: format!("checksum mismatch: stored {stored:08x}, computed {actual:08x}"),
            });
        }
        Ok(Self::new(&data[..body]))
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.error(format!("{} unexpected trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_spec(w: &mut Writer, s: &SynthSpec) {
    for v in [s.image_extent, s.glyph_extent, s.num_classes, s.grid_n, s.base_resolution] {
        w.u16(v as u16);
    }
    w.f64(s.clutter_density as f64);
    w.f64(s.clutter_contrast as f64);
    w.u64(s.seed);
}

fn read_spec(r: &mut Reader) -> Result<SynthSpec> {
    let start = r.pos;
    let spec = SynthSpec {
        image_extent: r.u16()? as usize,
        glyph_extent: r.u16()? as usize,
        num_classes: r.u16()? as usize,
        grid_n: r.u16()? as usize,
        base_resolution: r.u16()? as usize,
        clutter_density: r.f64()? as Real,
        clutter_contrast: r.f64()? as Real,
        seed: r.u64()?,
    };
    spec.validate().map_err(|e| Error::Format { offset: start as u64, msg: format!("invalid spec block: {e}") })?;
    Ok(spec)
}

pub fn encode(data: &Dataset) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(MAGIC);
    w.u16(VERSION);
    w.u32(data.samples.len() as u32);
    write_spec(&mut w, &data.spec);
    for s in &data.samples {
        w.u16(s.label as u16);
        w.u16(s.cell as u16);
        for v in [s.bbox.x, s.bbox.y, s.bbox.w, s.bbox.h] {
            w.u16(v as u16);
        }
        for &v in s.image.data() {
            w.f32(v as f32);
        }
    }
    w.finish()
}

pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::verify_crc(bytes)?;
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, not a TNSD file".into() });
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::Format { offset: 4, msg: format!("unsupported version {version}") });
    }
    let count = r.u32()? as usize;
    let spec = read_spec(&mut r)?;
    let e = spec.image_extent;
    let k = spec.grid_n * spec.grid_n;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let at = r.pos;
        let label = r.u16()? as usize;
        let cell = r.u16()? as usize;
        let bbox = Rect::new(r.u16()? as usize, r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
        if label >= spec.num_classes || cell >= k || bbox.right() > e || bbox.bottom() > e {
            return Err(Error::Format { offset: at as u64, msg: "sample header out of range".into() });
        }
        let raw = r.take(e * e * 4)?;
        let pixels = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as Real).collect();
        let image = Tensor::new([e, e, 1], pixels).expect("sized to the extent");
        samples.push(Sample { image, label, cell, bbox });
    }
    r.expect_end()?;
    Ok(Dataset { spec, samples })
}

pub fn save(data: &Dataset, path: &Path) -> Result<u32> {
    let bytes = encode(data);
    std::fs::write(path, &bytes)?;
    Ok(checksum(&bytes))
}

pub fn load(path: &Path) -> Result<Dataset> {
    decode(&std::fs::read(path)?)
}

/// The CRC32 stored at the end of an encoded file.
pub fn checksum(bytes: &[u8]) -> u32 {
    let n = bytes.len();
    u32::from_le_bytes(bytes[n - 4..].try_into().unwrap())
}
