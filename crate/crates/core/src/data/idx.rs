//! Reader for the big-endian IDX files used by MNIST.
//!
//! Images: magic `0x00000803`, count, rows, cols, then `count * rows * cols`
//! bytes. Labels: magic `0x00000801`, count, then `count` bytes.

use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::param(format!(
                "{} pixels for a {rows}x{cols} image",
                pixels.len()
            )));
        }
        Ok(Self { rows, cols, pixels })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    name: &'a str,
}

impl<'a> Cursor<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.name.to_string(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let end = self.pos + 4;
        let Some(chunk) = self.bytes.get(self.pos..end) else {
            return Err(self.fail(self.pos, format!("truncated header while reading {what}")));
        };
        self.pos = end;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated {what}: need {n} bytes from offset {}", self.pos),
            ));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let magic = self.u32("magic")?;
        if magic != expected {
            return Err(self.fail(0, format!("bad magic 0x{magic:08x}, expected 0x{expected:08x}")));
        }
        Ok(())
    }
}

pub fn parse_idx_images(bytes: &[u8], name: &str) -> Result<Vec<GrayImage>> {
    let mut c = Cursor { bytes, pos: 0, name };
    c.magic(IMAGES_MAGIC)?;
    let count = c.u32("image count")? as usize;
    let rows = c.u32("rows")? as usize;
    let cols = c.u32("cols")? as usize;
    let size = rows * cols;
    let body = c.take(count * size, "pixel data")?;
    if c.pos != bytes.len() {
        return Err(c.fail(c.pos, format!("{} trailing bytes after declared images", bytes.len() - c.pos)));
    }
    Ok(body
        .chunks_exact(size.max(1))
        .take(count)
        .map(|px| GrayImage {
            rows,
            cols,
            pixels: px.to_vec(),
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], name: &str) -> Result<Vec<usize>> {
    let mut c = Cursor { bytes, pos: 0, name };
    c.magic(LABELS_MAGIC)?;
    let count = c.u32("label count")? as usize;
    let body = c.take(count, "labels")?;
    if c.pos != bytes.len() {
        return Err(c.fail(c.pos, format!("{} trailing bytes after declared labels", bytes.len() - c.pos)));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// Loads an image file and its label file, checking that the counts agree.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<(Vec<GrayImage>, Vec<usize>)> {
    let read = |p: &Path| std::fs::read(p).map_err(|e| Error::io(p, e));
    let images = parse_idx_images(&read(images_path)?, &images_path.display().to_string())?;
    let labels = parse_idx_labels(&read(labels_path)?, &labels_path.display().to_string())?;
    if images.len() != labels.len() {
        return Err(Error::Format {
            path: labels_path.display().to_string(),
            offset: 4,
            message: format!("{} labels for {} images", labels.len(), images.len()),
        });
    }
    Ok((images, labels))
}
