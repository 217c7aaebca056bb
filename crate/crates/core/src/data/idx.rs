//! MNIST IDX files: big-endian magic, dimension sizes, then raw bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

/// Grayscale bitmap with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Bitmap {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
}

impl Bitmap {
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Box-filter downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Bitmap {
        if factor <= 1 {
            return self.clone();
        }
        let (h, w) = (self.height / factor, self.width / factor);
        let area = (factor * factor) as f32;
        let mut pixels = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        s += self.get(y * factor + dy, x * factor + dx);
                    }
                }
                pixels.push(s / area);
            }
        }
        Bitmap {
            height: h,
            width: w,
            pixels,
        }
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or(Error::Truncated("idx"))
}

/// Parses an IDX3 image file; pixels are scaled by 1/255.
pub fn parse_images(bytes: &[u8]) -> Result<Vec<Bitmap>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format {
            what: "idx",
            msg: format!("bad image magic {magic:#010x}, expected {IMAGES_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let payload = &bytes[16..];
    let size = rows * cols;
    if payload.len() < count * size {
        return Err(Error::Truncated("idx"));
    }
    Ok(payload
        .chunks_exact(size.max(1))
        .take(count)
        .map(|chunk| Bitmap {
            height: rows,
            width: cols,
            pixels: chunk.iter().map(|&b| b as f32 / 255.0).collect(),
        })
        .collect())
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format {
            what: "idx",
            msg: format!("bad label magic {magic:#010x}, expected {LABELS_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 4)? as usize;
    let payload = &bytes[8..];
    if payload.len() < count {
        return Err(Error::Truncated("idx"));
    }
    Ok(payload[..count].to_vec())
}

/// Loads digit bitmaps and, when given, their labels.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<(Vec<Bitmap>, Option<Vec<u8>>)> {
    let bitmaps = parse_images(&fs::read(images)?)?;
    let labels = match labels {
        Some(p) => {
            let l = parse_labels(&fs::read(p)?)?;
            if l.len() != bitmaps.len() {
                return Err(Error::Format {
                    what: "idx",
                    msg: format!("{} labels for {} images", l.len(), bitmaps.len()),
                });
            }
            Some(l)
        }
        None => None,
    };
    Ok((bitmaps, labels))
}

/// Serialises bitmaps as an IDX3 file (bytes rounded from [0, 1]).
pub fn encode_images(bitmaps: &[Bitmap]) -> Vec<u8> {
    let (rows, cols) = bitmaps.first().map_or((28, 28), |b| (b.height, b.width));
    let mut out = Vec::with_capacity(16 + bitmaps.len() * rows * cols);
    for v in [IMAGES_MAGIC, bitmaps.len() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for b in bitmaps {
        out.extend(b.pixels.iter().map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = magic.to_be_bytes().to_vec();
        for d in dims {
            v.extend_from_slice(&d.to_be_bytes());
        }
        v
    }

    #[test]
    fn scales_bytes_to_unit_range() {
        let mut bytes = header(IMAGES_MAGIC, &[2, 28, 28]);
        bytes.extend(std::iter::repeat_n(0u8, 784));
        bytes.extend(std::iter::repeat_n(255u8, 784));
        let imgs = parse_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 2);
        assert!(imgs[0].pixels.iter().all(|&p| p == 0.0));
        assert!(imgs[1].pixels.iter().all(|&p| p == 1.0));
    }

    #[test]
    fn header_arithmetic_for_full_training_file() {
        // 60000 images of 28x28 -> 16 + 60000 * 784 bytes
        let count = 60_000u32;
        let mut bytes = header(IMAGES_MAGIC, &[count, 28, 28]);
        bytes.resize(16 + count as usize * 784, 7);
        let imgs = parse_images(&bytes).unwrap();
        assert_eq!(imgs.len(), 60_000);
        assert!(imgs.iter().all(|b| b.height == 28 && b.width == 28));
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let bytes = header(LABELS_MAGIC, &[1, 28, 28]);
        assert!(matches!(parse_images(&bytes), Err(Error::Format { .. })));
        let mut bytes = header(IMAGES_MAGIC, &[2, 28, 28]);
        bytes.extend(std::iter::repeat_n(1u8, 784 + 10));
        assert!(matches!(parse_images(&bytes), Err(Error::Truncated(_))));
        assert!(matches!(parse_images(&[0, 0]), Err(Error::Truncated(_))));
        let mut labels = header(LABELS_MAGIC, &[3]);
        labels.extend([1, 2]);
        assert!(matches!(parse_labels(&labels), Err(Error::Truncated(_))));
    }

    #[test]
    fn encode_parse_roundtrip() {
        let b = Bitmap {
            height: 2,
            width: 3,
            pixels: vec![0.0, 1.0, 128.0 / 255.0, 1.0 / 255.0, 0.5 + 0.5 / 255.0, 0.25],
        };
        let parsed = parse_images(&encode_images(std::slice::from_ref(&b))).unwrap();
        assert_eq!(parsed[0].pixels[..4], b.pixels[..4]);
    }
}
