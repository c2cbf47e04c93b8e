//! IDX file format: big-endian magic + dimensions header, unsigned-byte
//! payload. Images use magic 0x00000803 (count x rows x cols), labels
//! 0x00000801 (count). Parsing and serialization round-trip byte-exact.

use std::path::Path;

use super::{normalize_per_channel, Dataset};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        if self.rows * self.cols == 0 {
            0
        } else {
            self.pixels.len() / (self.rows * self.cols)
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.count() as u32).to_be_bytes());
        out.extend_from_slice(&(self.rows as u32).to_be_bytes());
        out.extend_from_slice(&(self.cols as u32).to_be_bytes());
        out.extend_from_slice(&self.pixels);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxLabels {
    pub labels: Vec<u8>,
}

impl IdxLabels {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.labels.len());
        out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
        out.extend_from_slice(&(self.labels.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.labels);
        out
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!("file truncated inside {what} (need bytes {offset}..{end})"),
        });
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<IdxImages> {
    let magic = read_be_u32(bytes, 0, "image magic")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4, "image count")? as usize;
    let rows = read_be_u32(bytes, 8, "row count")? as usize;
    let cols = read_be_u32(bytes, 12, "column count")? as usize;
    let want = count * rows * cols;
    let have = bytes.len() - 16;
    if have < want {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "pixel payload truncated: header promises {want} bytes, {} missing",
                want - have
            ),
        });
    }
    if have > want {
        return Err(Error::Format {
            offset: 16 + want,
            message: format!("{} trailing bytes after pixel payload", have - want),
        });
    }
    Ok(IdxImages { rows, cols, pixels: bytes[16..].to_vec() })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<IdxLabels> {
    let magic = read_be_u32(bytes, 0, "label magic")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = read_be_u32(bytes, 4, "label count")? as usize;
    let have = bytes.len() - 8;
    if have < count {
        return Err(Error::Format {
            offset: bytes.len(),
            message: format!(
                "label payload truncated: header promises {count} bytes, {} missing",
                count - have
            ),
        });
    }
    if have > count {
        return Err(Error::Format {
            offset: 8 + count,
            message: format!("{} trailing bytes after label payload", have - count),
        });
    }
    Ok(IdxLabels { labels: bytes[8..].to_vec() })
}

/// Loads an (images, labels) IDX pair into a normalized single-channel
/// dataset: pixels scaled to [0,1], then standardized and clamped.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let image_bytes =
        std::fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let label_bytes =
        std::fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let images = parse_idx_images(&image_bytes)?;
    let labels = parse_idx_labels(&label_bytes)?;

    if images.count() != labels.labels.len() {
        return Err(Error::Structural(format!(
            "{} images but {} labels",
            images.count(),
            labels.labels.len()
        )));
    }
    if images.rows != images.cols {
        return Err(Error::Structural(format!(
            "non-square images ({}x{}) are not supported by the probe",
            images.rows, images.cols
        )));
    }
    if images.count() == 0 {
        return Err(Error::Structural("IDX file holds zero images".into()));
    }

    let side = images.rows;
    let n = images.count();
    let mut data: Vec<f64> = images.pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let (norm_mean, norm_std) = normalize_per_channel(&mut data, n, 1, side);
    let class_count = labels.labels.iter().copied().max().unwrap() as usize + 1;
    let dataset = Dataset {
        images: data,
        labels: labels.labels.iter().map(|&l| l as usize).collect(),
        class_count: class_count.max(2),
        channels: 1,
        side,
        norm_mean,
        norm_std,
    };
    dataset.validate()?;
    Ok(dataset)
}
