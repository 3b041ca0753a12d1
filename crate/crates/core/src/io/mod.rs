//! On-disk formats. Every `decode_*` takes raw bytes and returns a
//! structured error on malformed input, never panicking; `read_*` wraps the
//! decoder and attaches the path. All binary formats are little-endian.

mod config;
mod frgd;
mod frgf;
mod ply;
mod text;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{read_config, write_config, PipelineConfig, Profile, SolverChoice, CONFIG_KEYS};
pub use frgd::{decode_depth_png, decode_frgd, encode_depth_png, encode_frgd, read_depth, write_depth};
pub use frgf::{decode_frgf, encode_frgf, read_frgf, write_frgf};
pub use ply::{decode_ply, encode_ply, read_ply, write_ply, PlyData, PlyEncoding};
pub use text::{
    decode_correspondences, decode_intrinsics, decode_pose, encode_correspondences, encode_intrinsics, encode_pose,
    read_correspondences, read_intrinsics, read_pose, write_correspondences, write_intrinsics, write_pose,
    CORRESPONDENCE_HEADER,
};

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::from(e).at(path))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::from(e).at(path))
}

/// Bounds-checked little-endian reader that remembers its byte offset.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    format: &'static str,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8], format: &'static str) -> Self {
        Self { buf, pos: 0, format }
    }

    pub(crate) fn offset(&self) -> u64 {
        self.pos as u64
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn error(&self, message: impl Into<String>) -> Error {
        Error::format(self.format, self.offset(), message)
    }

    pub(crate) fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::format(self.format, offset as u64, message)
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != expect {
            return Err(self.error_at(0, format!("bad magic {got:02x?}, expected {:?}", String::from_utf8_lossy(expect))));
        }
        Ok(())
    }

    /// `count` f32 values, checking the payload length before allocating.
    pub(crate) fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f32>> {
        let bytes = count
            .checked_mul(4)
            .filter(|&b| b <= self.remaining())
            .ok_or_else(|| {
                self.error(format!(
                    "truncated {what}: {count} floats need {} bytes, {} left",
                    count.saturating_mul(4),
                    self.remaining()
                ))
            })?;
        let raw = self.take(bytes, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
