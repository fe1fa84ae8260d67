use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    file: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], file: &'static str) -> Self {
        Reader { bytes, pos: 0, file }
    }

    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated { file: self.file, field }),
        }
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(Error::BadMagic {
                file: self.file,
                expected,
                found,
            });
        }
        Ok(())
    }
}

/// Decodes an IDX image/label pair. Intensities are scaled by 1/255 and the
/// class count is taken as `max(label) + 1` (at least 2).
pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let mut img = Reader::new(images, "images");
    img.magic(IMAGES_MAGIC)?;
    let n_images = img.u32("count")? as usize;
    let rows = img.u32("rows")? as usize;
    let cols = img.u32("cols")? as usize;

    let mut lab = Reader::new(labels, "labels");
    lab.magic(LABELS_MAGIC)?;
    let n_labels = lab.u32("count")? as usize;
    if n_images != n_labels {
        return Err(Error::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let pixel_count = n_images
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or(Error::Truncated {
            file: "images",
            field: "pixels",
        })?;
    let raw = img.take(pixel_count, "pixels")?;
    let pixels: Vec<f64> = raw.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab.take(n_labels, "labels")?.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::from_parts(rows, cols, pixels, labels, num_classes, "idx")
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let images = std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let labels = std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "idx".into());
    Ok(parse_idx(&images, &labels)?.with_name(name))
}

/// Encodes a dataset as IDX bytes `(images, labels)`. Intensities are
/// quantized to `round(v * 255)`; labels must fit in a byte.
pub fn encode_idx(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let n = u32::try_from(ds.len()).map_err(|_| Error::InvalidArgument("too many samples".into()))?;
    let mut images = Vec::with_capacity(16 + ds.len() * ds.dim());
    images.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&n.to_be_bytes());
    images.extend_from_slice(&(ds.height() as u32).to_be_bytes());
    images.extend_from_slice(&(ds.width() as u32).to_be_bytes());
    images.extend(ds.images().as_slice().iter().map(|&v| (v * 255.0).round() as u8));

    let mut labels = Vec::with_capacity(8 + ds.len());
    labels.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&n.to_be_bytes());
    for &y in ds.labels() {
        let b = u8::try_from(y).map_err(|_| Error::InvalidArgument(format!("label {y} exceeds 255")))?;
        labels.push(b);
    }
    Ok((images, labels))
}
