//! File formats. Every multi-byte field is little-endian.

pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod image;
pub mod report;
pub mod sdf;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, StoredTensor, TensorData, CHECKPOINT_VERSION};
pub use config::{dump_config, parse_config, parse_config_with, RunConfig, TaskOptions};
pub use dataset::{decode_rays, encode_rays, load_rays, save_rays, RayDataset};
pub use image::{decode_png, decode_ppm, encode_png, encode_ppm, load_image, save_image};
pub use report::{FinalRecord, MetricReport, Record};
pub use sdf::{decode_sdf, encode_sdf, load_sdf_samples, save_sdf_samples};

use crate::error::{Error, Result};

/// Bounds-checked little-endian cursor; errors carry the byte offset.
pub(crate) struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(what: &'static str, bytes: &'a [u8]) -> Self {
        Self { what, bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::format(self.what, offset as u64, msg)
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                self.bytes.len(),
                format!("truncated {field}: missing {} bytes", n - self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn magic(&mut self, magic: &[u8]) -> Result<()> {
        let at = self.pos;
        if self.take(magic.len(), "magic")? != magic {
            return Err(self.error(at, format!("bad magic, expected {:?}", String::from_utf8_lossy(magic))));
        }
        Ok(())
    }

    pub(crate) fn u8(&mut self, field: &str) -> Result<u8> {
        Ok(self.take(1, field)?[0])
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, field: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(self.error(self.pos, format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

pub(crate) fn write_file(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}
