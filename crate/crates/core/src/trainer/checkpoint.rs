//! Binary checkpoint format.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes  "PLCK"
//! version      u32      currently 1
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON (epoch, EER bits, rng, dims, meta)
//! block_count  u32
//! block_count times:
//!   name_len   u32
//!   name       name_len bytes of UTF-8
//!   rank       u32
//!   dims       rank × u64
//!   values     product(dims) × f64
//! ```
//!
//! Blocks are named `param/<block>`, `adam.m/<block>` and `adam.v/<block>`,
//! in model block order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelDims, ToyModel};
use super::optim::AdamState;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PLCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where the augmentation stream stood when the checkpoint was taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// ChaCha word position, stored as a decimal string in the header.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ToyModel,
    pub optimizer: AdamState,
    /// Number of completed epochs (0 for the initial model).
    pub epoch: usize,
    pub val_eer: f64,
    pub rng: RngState,
    /// Free-form provenance, e.g. the config hash.
    pub meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    epoch: usize,
    val_eer_bits: u64,
    adam_step: u64,
    rng: RngState,
    dims: ModelDims,
    meta: serde_json::Value,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

impl Checkpoint {
    pub fn config_hash(&self) -> Option<&str> {
        self.meta.get("config_hash").and_then(|v| v.as_str())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            epoch: self.epoch,
            val_eer_bits: self.val_eer.to_bits(),
            adam_step: self.optimizer.step,
            rng: self.rng,
            dims: self.model.dims(),
            meta: self.meta.clone(),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let names = self.model.names();
        let groups = [
            ("param", self.model.params()),
            ("adam.m", &self.optimizer.m[..]),
            ("adam.v", &self.optimizer.v[..]),
        ];
        out.extend_from_slice(&((3 * names.len()) as u32).to_le_bytes());
        for (prefix, tensors) in groups {
            for (name, t) in names.iter().zip(tensors) {
                write_block(&mut out, &format!("{prefix}/{name}"), t);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Integrity(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)?;
        let count = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(count);
        for _ in 0..count {
            blocks.push(r.block()?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Integrity(format!(
                "{} trailing bytes after checkpoint blocks",
                bytes.len() - r.pos
            )));
        }
        if !count.is_multiple_of(3) {
            return Err(Error::Integrity(format!("{count} blocks is not three groups")));
        }
        let per = count / 3;
        let mut groups: Vec<Vec<(String, Tensor)>> = Vec::new();
        for (g, prefix) in ["param/", "adam.m/", "adam.v/"].into_iter().enumerate() {
            let mut group = Vec::with_capacity(per);
            for (name, t) in blocks[g * per..(g + 1) * per].iter().cloned() {
                let short = name.strip_prefix(prefix).ok_or_else(|| {
                    Error::Integrity(format!("block {name} where a {prefix} block was expected"))
                })?;
                group.push((short.to_string(), t));
            }
            groups.push(group);
        }
        let v = groups.pop().expect("three groups");
        let m = groups.pop().expect("three groups");
        let model = ToyModel::from_blocks(header.dims, groups.pop().expect("three groups"))?;
        let check = |group: &[(String, Tensor)]| -> Result<Vec<Tensor>> {
            group
                .iter()
                .zip(model.names().iter().zip(model.params()))
                .map(|((name, t), (want, p))| {
                    if name != want || t.shape() != p.shape() {
                        Err(Error::Integrity(format!(
                            "moment block {name} {:?} does not match parameter {want} {:?}",
                            t.shape(),
                            p.shape()
                        )))
                    } else {
                        Ok(t.clone())
                    }
                })
                .collect()
        };
        let optimizer = AdamState {
            step: header.adam_step,
            m: check(&m)?,
            v: check(&v)?,
        };
        Ok(Self {
            model,
            optimizer,
            epoch: header.epoch,
            val_eer: f64::from_bits(header.val_eer_bits),
            rng: header.rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn write_block(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Integrity(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn block(&mut self) -> Result<(String, Tensor)> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| Error::Integrity("block name is not UTF-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = self.take(n.checked_mul(8).ok_or_else(|| {
            Error::Integrity(format!("block {name} is too large"))
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| Error::Integrity(format!("block {name}: {e}")))?;
        Ok((name, t))
    }
}
