//! SWDS sequence files and batch assembly.
//!
//! Layout (little-endian): magic `SWDS`, u32 version, u32 count, u16 frames,
//! u16 channels, u16 height, u16 width, u8 dtype tag, then the payload in
//! `(count, frames, C, H, W)` order. The high bit of the dtype tag marks
//! datasets whose sprites are procedural glyphs rather than MNIST digits.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use super::generator::{generate_sequence, procedural_glyph, GeneratorConfig};
use super::idx::Bitmap;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

pub const SWDS_MAGIC: &[u8; 4] = b"SWDS";
pub const SWDS_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 2 * 4 + 1;
const PROCEDURAL_FLAG: u8 = 0x80;

/// On-disk sample type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleType {
    /// Bytes, value = byte / 255.
    U8 = 0,
    F32 = 1,
    F64 = 2,
}

impl SampleType {
    pub fn size(self) -> usize {
        match self {
            SampleType::U8 => 1,
            SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(SampleType::U8),
            1 => Ok(SampleType::F32),
            2 => Ok(SampleType::F64),
            t => Err(Error::Format {
                what: "swds",
                msg: format!("unknown dtype tag {t}"),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHeader {
    pub count: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: SampleType,
    pub procedural: bool,
}

impl DatasetHeader {
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn sequence_len(&self) -> usize {
        self.frames * self.frame_len()
    }
}

/// A set of equally shaped frame sequences held in memory as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceDataset {
    pub header: DatasetHeader,
    data: Vec<f32>,
}

/// `frames` is `(B, T, C, H, W)`; the first `inputs` frames are the
/// observed part of each sequence.
#[derive(Clone, Debug)]
pub struct SequenceBatch<T> {
    pub frames: Tensor<T>,
    pub inputs: usize,
    pub indices: Vec<usize>,
}

impl<T: Scalar> SequenceBatch<T> {
    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total_frames(&self) -> usize {
        self.frames.shape()[1]
    }

    /// Frames `[start, start + len)` of every sample.
    pub fn slice(&self, start: usize, len: usize) -> Result<Tensor<T>> {
        crate::tensor::kernels::narrow(&self.frames, 1, start, len)
    }

    pub fn input(&self) -> Result<Tensor<T>> {
        self.slice(0, self.inputs)
    }

    pub fn target(&self) -> Result<Tensor<T>> {
        self.slice(self.inputs, self.total_frames() - self.inputs)
    }
}

fn check_dim(name: &str, v: usize) -> Result<u16> {
    u16::try_from(v).ok().filter(|&v| v > 0).ok_or_else(|| Error::Format {
        what: "swds",
        msg: format!("{name} = {v} must be in 1..=65535"),
    })
}

impl SequenceDataset {
    pub fn new(header: DatasetHeader, data: Vec<f32>) -> Result<Self> {
        let expected = header.count * header.sequence_len();
        if data.len() != expected {
            return Err(Error::Format {
                what: "swds",
                msg: format!("payload has {} values, header implies {expected}", data.len()),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Format {
                what: "swds",
                msg: format!("value {v} outside [0, 1]"),
            });
        }
        Ok(SequenceDataset { header, data })
    }

    pub fn len(&self) -> usize {
        self.header.count
    }

    pub fn is_empty(&self) -> bool {
        self.header.count == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.data
    }

    pub fn sequence(&self, index: usize) -> Result<&[f32]> {
        if index >= self.header.count {
            return Err(Error::invalid(
                "dataset",
                format!("index {index} out of range for {} sequences", self.header.count),
            ));
        }
        let n = self.header.sequence_len();
        Ok(&self.data[index * n..(index + 1) * n])
    }

    /// Batch of the given sequences, with the first `inputs` frames marked
    /// as observations.
    pub fn batch<T: Scalar>(&self, indices: &[usize], inputs: usize) -> Result<SequenceBatch<T>> {
        let h = &self.header;
        if inputs > h.frames {
            return Err(Error::invalid(
                "dataset",
                format!("{inputs} input frames requested from {}-frame sequences", h.frames),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * h.sequence_len());
        for &i in indices {
            data.extend(self.sequence(i)?.iter().map(|&v| T::lit(v as f64)));
        }
        let frames = Tensor::new(&[indices.len(), h.frames, h.channels, h.height, h.width], data)?;
        Ok(SequenceBatch {
            frames,
            inputs,
            indices: indices.to_vec(),
        })
    }

    /// Number of batches per epoch; a trailing partial batch counts.
    pub fn num_batches(&self, batch_size: usize) -> usize {
        self.header.count.div_ceil(batch_size.max(1))
    }

    /// Splits `order` (a permutation of sequence indices) into batches.
    pub fn iterate_batches<'a, T: Scalar>(
        &'a self,
        order: &'a [usize],
        batch_size: usize,
        inputs: usize,
    ) -> impl Iterator<Item = Result<SequenceBatch<T>>> + 'a {
        order.chunks(batch_size.max(1)).map(move |idx| self.batch(idx, inputs))
    }

    /// Like [`SequenceDataset::iterate_batches`], taking ownership of the order.
    pub fn iter_batches_owned<T: Scalar>(
        &self,
        order: Vec<usize>,
        batch_size: usize,
        inputs: usize,
    ) -> impl Iterator<Item = Result<SequenceBatch<T>>> + '_ {
        let size = batch_size.max(1);
        (0..order.len().div_ceil(size)).map(move |k| {
            let end = ((k + 1) * size).min(order.len());
            self.batch(&order[k * size..end], inputs)
        })
    }

    /// Epoch order: identity, or shuffled by `rng`.
    pub fn epoch_order<R: Rng + ?Sized>(&self, rng: Option<&mut R>) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.header.count).collect();
        if let Some(r) = rng {
            order.shuffle(r);
        }
        order
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let h = &self.header;
        let count = u32::try_from(h.count).map_err(|_| Error::Format {
            what: "swds",
            msg: "count exceeds u32".into(),
        })?;
        let dims = [
            check_dim("frames", h.frames)?,
            check_dim("channels", h.channels)?,
            check_dim("height", h.height)?,
            check_dim("width", h.width)?,
        ];
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * h.dtype.size());
        out.extend_from_slice(SWDS_MAGIC);
        out.extend_from_slice(&SWDS_VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        for d in dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(h.dtype as u8 | if h.procedural { PROCEDURAL_FLAG } else { 0 });
        match h.dtype {
            SampleType::U8 => out.extend(self.data.iter().map(|&v| (v * 255.0).round() as u8)),
            SampleType::F32 => self.data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            SampleType::F64 => self
                .data
                .iter()
                .for_each(|&v| out.extend_from_slice(&(v as f64).to_le_bytes())),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated("swds"));
        }
        if &bytes[..4] != SWDS_MAGIC {
            return Err(Error::BadMagic("swds"));
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated("swds"));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
        let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().expect("2 bytes")) as usize;
        let version = u32_at(4);
        if version != SWDS_VERSION {
            return Err(Error::VersionMismatch {
                what: "swds",
                found: version,
                expected: SWDS_VERSION,
            });
        }
        let tag = bytes[20];
        let header = DatasetHeader {
            count: u32_at(8) as usize,
            frames: u16_at(12),
            channels: u16_at(14),
            height: u16_at(16),
            width: u16_at(18),
            dtype: SampleType::from_tag(tag & !PROCEDURAL_FLAG)?,
            procedural: tag & PROCEDURAL_FLAG != 0,
        };
        let n = header.count * header.sequence_len();
        let payload = &bytes[HEADER_LEN..];
        let size = header.dtype.size();
        if payload.len() < n * size {
            return Err(Error::Truncated("swds"));
        }
        if payload.len() > n * size {
            return Err(Error::Format {
                what: "swds",
                msg: format!("{} trailing bytes", payload.len() - n * size),
            });
        }
        let data = match header.dtype {
            SampleType::U8 => payload.iter().map(|&b| b as f32 / 255.0).collect(),
            SampleType::F32 => payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect(),
            SampleType::F64 => payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as f32)
                .collect(),
        };
        SequenceDataset::new(header, data)
    }

    pub fn write(&self, path: &Path) -> Result<usize> {
        let bytes = self.encode()?;
        let mut w = BufWriter::new(fs::File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(bytes.len())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

/// Sprite source for [`build_dataset`].
#[derive(Clone, Copy, Debug)]
pub enum Sprites<'a> {
    /// Digit bitmaps (e.g. MNIST), downsampled when the generator's sprite
    /// is smaller.
    Bitmaps(&'a [Bitmap]),
    Procedural,
}

/// Generates `count` sequences. Sequence `i` draws only from its own
/// stream, so content does not depend on generation order.
pub fn build_dataset(seed: u64, count: usize, cfg: &GeneratorConfig, sprites: Sprites<'_>) -> Result<SequenceDataset> {
    if count == 0 || cfg.frames == 0 || cfg.sprite == 0 || cfg.sprite > cfg.canvas {
        return Err(Error::invalid(
            "build_dataset",
            format!(
                "need count >= 1, frames >= 1 and 1 <= sprite <= canvas (got {count}, {}, {}, {})",
                cfg.frames, cfg.sprite, cfg.canvas
            ),
        ));
    }
    let pool: Option<Vec<Bitmap>> = match sprites {
        Sprites::Bitmaps([]) => return Err(Error::invalid("build_dataset", "empty sprite set")),
        Sprites::Bitmaps(b) => Some(
            b.iter()
                .map(|bm| {
                    let factor = (bm.height / cfg.sprite).max(1);
                    bm.downsample(factor)
                })
                .collect(),
        ),
        Sprites::Procedural => None,
    };
    if let Some(p) = &pool {
        if p.iter().any(|b| b.height != cfg.sprite || b.width != cfg.sprite) {
            return Err(Error::invalid(
                "build_dataset",
                format!("sprites do not reduce to {0}x{0}", cfg.sprite),
            ));
        }
    }
    let mut data = Vec::with_capacity(count * cfg.frames * cfg.canvas * cfg.canvas);
    for i in 0..count {
        let mut r = rng::item_stream(seed, i as u64);
        let chosen: Vec<Bitmap> = (0..cfg.digits)
            .map(|_| match &pool {
                Some(p) => p[r.random_range(0..p.len())].clone(),
                None => procedural_glyph(&mut r, cfg.sprite),
            })
            .collect();
        data.extend(generate_sequence(&mut r, &chosen, cfg).frames);
    }
    SequenceDataset::new(
        DatasetHeader {
            count,
            frames: cfg.frames,
            channels: 1,
            height: cfg.canvas,
            width: cfg.canvas,
            dtype: SampleType::F32,
            procedural: pool.is_none(),
        },
        data,
    )
}
