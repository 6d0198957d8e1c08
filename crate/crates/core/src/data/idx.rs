//! IDX reader (the MNIST container format).
//!
//! Header words are big-endian `u32`. Images use magic `0x00000803` followed
//! by count, rows and cols; labels use `0x00000801` followed by count. The
//! payload is one unsigned byte per pixel or label.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Dataset, LabeledExample};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let end = self.pos + 4;
        let word = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(self.bytes.len(), "truncated header"))?;
        self.pos = end;
        Ok(u32::from_be_bytes(word.try_into().expect("4 bytes")))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32()?;
        if got != expected {
            return Err(self.fail(0, format!("unexpected magic {got:#010x}, expected {expected:#010x}")));
        }
        Ok(())
    }

    fn payload(&mut self, len: usize) -> Result<&'a [u8]> {
        let end = self.pos + len;
        if end > self.bytes.len() {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated payload: need {len} bytes after offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
}

/// Parses an image/label pair already in memory. Paths are used only in
/// error messages.
pub fn parse_idx(
    images: &[u8],
    labels: &[u8],
    images_path: &Path,
    labels_path: &Path,
) -> Result<Dataset> {
    let mut img = Reader {
        path: images_path,
        bytes: images,
        pos: 0,
    };
    img.magic(IMAGES_MAGIC)?;
    let count = img.u32()? as usize;
    let rows = img.u32()? as usize;
    let cols = img.u32()? as usize;
    let dim = rows * cols;
    let pixels = img.payload(count * dim)?;

    let mut lab = Reader {
        path: labels_path,
        bytes: labels,
        pos: 0,
    };
    lab.magic(LABELS_MAGIC)?;
    let label_count = lab.u32()? as usize;
    if label_count != count {
        return Err(lab.fail(
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    let label_bytes = lab.payload(count)?;

    let num_classes = label_bytes.iter().copied().max().map_or(0, |m| m as usize + 1).max(2);
    let examples = pixels
        .chunks_exact(dim.max(1))
        .take(count)
        .zip(label_bytes)
        .map(|(px, &label)| LabeledExample {
            features: px.iter().map(|&p| f64::from(p) / 255.0).collect(),
            label: label as usize,
        })
        .collect();
    Dataset::new(examples, num_classes)
}

/// Reads an IDX image file and its label file.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp): (PathBuf, PathBuf) = (images_path.as_ref().into(), labels_path.as_ref().into());
    let images = std::fs::read(&ip)?;
    let labels = std::fs::read(&lp)?;
    parse_idx(&images, &labels, &ip, &lp)
}

/// Encodes `count x rows x cols` pixels as an IDX image file.
pub fn encode_idx_images(rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() as u32 / (rows * cols).max(1);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGES_MAGIC, count, rows, cols] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Encodes labels as an IDX label file.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
