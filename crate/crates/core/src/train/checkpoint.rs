//! SWLS checkpoints.
//!
//! Layout (little-endian): magic `SWLS`, u32 version, u32 header length and
//! the UTF-8 header text (`key = value` lines holding the model config plus
//! `step`, `epoch` and `param_count`), u32 record count, then one record per
//! tensor: u32 name length, name, u8 dtype tag, u8 rank, u32 per dimension,
//! raw data. Adam moments are stored as `<name>#adam_m` / `<name>#adam_v`.
//! A final section holds the named RNG states: u8 count, then per generator
//! u32 name length, name, 32-byte seed, u64 stream, u128 word position.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kv;
use crate::model::{Model, ModelConfig};
use crate::params::ParameterStore;
use crate::tensor::{DType, Scalar, Tensor};

pub const SWLS_MAGIC: &[u8; 4] = b"SWLS";
pub const SWLS_VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: ModelConfig,
    /// Weights, Adam moments and the optimizer step counter.
    pub store: ParameterStore<T>,
    /// Completed training epochs.
    pub epoch: u64,
    pub rngs: Vec<(String, ChaCha8Rng)>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format {
        what: WHAT,
        msg: format!("{v} does not fit in u32"),
    })?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[T]) -> Result<()> {
    put_str(out, name)?;
    out.push(T::DTYPE.tag());
    out.push(u8::try_from(shape.len()).map_err(|_| Error::Format {
        what: WHAT,
        msg: format!("rank {} too large", shape.len()),
    })?);
    for &d in shape {
        put_u32(out, d)?;
    }
    for &v in data {
        v.write_le(out);
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).ok_or(Error::Truncated(WHAT))?;
        let s = self.bytes.get(self.at..end).ok_or(Error::Truncated(WHAT))?;
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| Error::Format {
            what: WHAT,
            msg: format!("invalid UTF-8: {e}"),
        })
    }
}

struct Record<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn read_record<T: Scalar>(c: &mut Cursor<'_>) -> Result<(String, Record<T>)> {
    let name = c.string()?;
    let tag = c.u8()?;
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Format {
        what: WHAT,
        msg: format!("tensor `{name}`: unknown dtype tag {tag}"),
    })?;
    if dtype != T::DTYPE {
        return Err(Error::Format {
            what: WHAT,
            msg: format!("tensor `{name}` is {dtype:?}, expected {:?}", T::DTYPE),
        });
    }
    let rank = c.u8()? as usize;
    let shape = (0..rank)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let size = dtype.size();
    let raw = c.take(n.checked_mul(size).ok_or(Error::Truncated(WHAT))?)?;
    let data = raw.chunks_exact(size).map(T::read_le).collect();
    Ok((name, Record { shape, data }))
}

impl<T: Scalar> Checkpoint<T> {
    fn header_text(&self) -> String {
        format!(
            "{}step = {}\nepoch = {}\nparam_count = {}\n",
            self.config.to_text(),
            self.store.step,
            self.epoch,
            self.store.numel()
        )
    }

    pub fn rng(&self, name: &str) -> Option<&ChaCha8Rng> {
        self.rngs.iter().find(|(n, _)| n == name).map(|(_, r)| r)
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SWLS_MAGIC);
        out.extend_from_slice(&SWLS_VERSION.to_le_bytes());
        put_str(&mut out, &self.header_text())?;
        put_u32(&mut out, 3 * self.store.len())?;
        for p in self.store.iter() {
            let shape = p.value.shape();
            put_tensor(&mut out, &p.name, shape, p.value.data())?;
            put_tensor(&mut out, &format!("{}#adam_m", p.name), shape, &p.adam_m)?;
            put_tensor(&mut out, &format!("{}#adam_v", p.name), shape, &p.adam_v)?;
        }
        out.push(u8::try_from(self.rngs.len()).map_err(|_| Error::Format {
            what: WHAT,
            msg: "too many RNG states".into(),
        })?);
        for (name, rng) in &self.rngs {
            put_str(&mut out, name)?;
            out.extend_from_slice(&rng.get_seed());
            out.extend_from_slice(&rng.get_stream().to_le_bytes());
            out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
        }
        Ok(out)
    }

    /// Parses a checkpoint and validates it against the configuration in its
    /// own header: every parameter the model defines must be present with the
    /// shape that configuration implies. When `expected` is given the stored
    /// configuration must also equal it.
    pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut c = Cursor { bytes, at: 0 };
        if c.take(4)? != SWLS_MAGIC {
            return Err(Error::BadMagic(WHAT));
        }
        let version = c.u32()?;
        if version != SWLS_VERSION {
            return Err(Error::VersionMismatch {
                what: WHAT,
                found: version,
                expected: SWLS_VERSION,
            });
        }
        let text = c.string()?;
        let mut map: BTreeMap<String, String> = kv::parse(&text)?;
        let mut meta = |key: &str| -> Result<u64> {
            map.remove(key)
                .ok_or_else(|| Error::Format {
                    what: WHAT,
                    msg: format!("header lacks `{key}`"),
                })?
                .parse()
                .map_err(|e| Error::Format {
                    what: WHAT,
                    msg: format!("header `{key}`: {e}"),
                })
        };
        let step = meta("step")?;
        let epoch = meta("epoch")?;
        let param_count = meta("param_count")?;
        let config = ModelConfig::from_map(&mut map)?;
        if let Some(k) = map.keys().next() {
            return Err(Error::Format {
                what: WHAT,
                msg: format!("unknown header key `{k}`"),
            });
        }
        if let Some(exp) = expected {
            if exp != &config {
                return Err(Error::ConfigMismatch(describe_diff(exp, &config)));
            }
        }

        let count = c.u32()? as usize;
        let mut records: HashMap<String, Record<T>> = HashMap::with_capacity(count);
        for _ in 0..count {
            let (name, rec) = read_record::<T>(&mut c)?;
            if records.insert(name.clone(), rec).is_some() {
                return Err(Error::Format {
                    what: WHAT,
                    msg: format!("duplicate tensor `{name}`"),
                });
            }
        }
        let rng_count = c.u8()? as usize;
        let mut rngs = Vec::with_capacity(rng_count);
        for _ in 0..rng_count {
            let name = c.string()?;
            let seed: [u8; 32] = c.take(32)?.try_into().expect("32 bytes");
            let mut rng = ChaCha8Rng::from_seed(seed);
            rng.set_stream(c.u64()?);
            rng.set_word_pos(c.u128()?);
            rngs.push((name, rng));
        }
        if c.at != bytes.len() {
            return Err(Error::Format {
                what: WHAT,
                msg: format!("{} trailing bytes", bytes.len() - c.at),
            });
        }

        // Shapes and names implied by the header's configuration.
        let (_, template) = Model::init::<T>(config.clone(), 0).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        if template.numel() as u64 != param_count {
            return Err(Error::ConfigMismatch(format!(
                "header config has {} parameters, header records {param_count}",
                template.numel()
            )));
        }
        if records.len() != 3 * template.len() {
            return Err(Error::ConfigMismatch(format!(
                "file holds {} tensors, config implies {}",
                records.len(),
                3 * template.len()
            )));
        }
        let mut store = ParameterStore::new();
        for p in template.iter() {
            let mut take = |name: &str| -> Result<Vec<T>> {
                let rec = records
                    .remove(name)
                    .ok_or_else(|| Error::ConfigMismatch(format!("missing tensor `{name}`")))?;
                if rec.shape != p.value.shape() {
                    return Err(Error::ConfigMismatch(format!(
                        "tensor `{name}` has shape {:?}, header config implies {:?}",
                        rec.shape,
                        p.value.shape()
                    )));
                }
                Ok(rec.data)
            };
            let value = Tensor::new(p.value.shape(), take(&p.name)?)?;
            let m = take(&format!("{}#adam_m", p.name))?;
            let v = take(&format!("{}#adam_v", p.name))?;
            let id = store.add(&p.name, value)?;
            let q = store.get_mut(id);
            q.adam_m = m;
            q.adam_v = v;
        }
        store.step = step;
        Ok(Checkpoint {
            config,
            store,
            epoch,
            rngs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path, expected: Option<&ModelConfig>) -> Result<Self> {
        Self::decode(&fs::read(path)?, expected)
    }

    /// Copies weights and moments into an existing store of the same layout.
    pub fn restore_into(&self, store: &mut ParameterStore<T>) -> Result<()> {
        if store.len() != self.store.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} parameters, target has {}",
                self.store.len(),
                store.len()
            )));
        }
        for (dst, src) in store.iter_mut().zip(self.store.iter()) {
            if dst.name != src.name {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{}` vs `{}`",
                    src.name, dst.name
                )));
            }
            if dst.value.shape() != src.value.shape() {
                return Err(Error::TensorShapeMismatch {
                    name: src.name.clone(),
                    found: src.value.shape().to_vec(),
                    expected: dst.value.shape().to_vec(),
                });
            }
        }
        *store = self.store.clone();
        Ok(())
    }
}

fn describe_diff(expected: &ModelConfig, found: &ModelConfig) -> String {
    let a = expected.to_text();
    let b = found.to_text();
    let diffs: Vec<String> = a
        .lines()
        .zip(b.lines())
        .filter(|(x, y)| x != y)
        .map(|(x, y)| format!("expected `{x}`, file has `{y}`"))
        .collect();
    diffs.join("; ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use rand::RngCore;

    fn tiny() -> ModelConfig {
        let mut c = ModelConfig::base(8, 8, 2, 8, 2);
        c.window_size = 2;
        c.heads = 2;
        c
    }

    fn sample() -> Checkpoint<f32> {
        let (_, mut store) = Model::init::<f32>(tiny(), 3).unwrap();
        store.step = 17;
        for (k, p) in store.iter_mut().enumerate() {
            for (i, m) in p.adam_m.iter_mut().enumerate() {
                *m = (k * 31 + i) as f32 * 1e-3;
            }
            p.adam_v[0] = 0.5;
        }
        let mut r = stream(9, Stream::Shuffle);
        r.next_u64();
        Checkpoint {
            config: tiny(),
            store,
            epoch: 4,
            rngs: vec![("shuffle".into(), r), ("dropout".into(), stream(9, Stream::Dropout))],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let ck = sample();
        let back = Checkpoint::<f32>::decode(&ck.encode().unwrap(), Some(&tiny())).unwrap();
        assert_eq!(back, ck);
        let (mut a, mut b) = (ck.rngs[0].1.clone(), back.rngs[0].1.clone());
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn distinct_errors() {
        let bytes = sample().encode().unwrap();
        let mut v = bytes.clone();
        v[4] = 2;
        assert!(matches!(
            Checkpoint::<f32>::decode(&v, None),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
        assert!(matches!(
            Checkpoint::<f32>::decode(&bytes[..bytes.len() - 3], None),
            Err(Error::Truncated(_))
        ));
        assert!(matches!(
            Checkpoint::<f32>::decode(b"SWDS", None),
            Err(Error::BadMagic(_))
        ));
        assert!(matches!(
            Checkpoint::<f64>::decode(&bytes, None),
            Err(Error::Format { .. })
        ));
        let mut other = tiny();
        other.embed_dim = 16;
        assert!(matches!(
            Checkpoint::<f32>::decode(&bytes, Some(&other)),
            Err(Error::ConfigMismatch(_))
        ));
    }
}
