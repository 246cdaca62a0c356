//! Versioned binary checkpoints.
//!
//! Layout (little endian): magic `STRGCKPT`, `u32` version, `u64` length and
//! UTF-8 JSON metadata, `u64` tensor count, then per tensor: `u32` name length,
//! name, `u32` rank, `u64` dims, `f64` data.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use strgate_tensor::{ParamStore, Tensor};

use crate::discriminator::DiscriminatorConfig;
use crate::error::{Error, Result};
use crate::generator::GeneratorConfig;
use crate::trainer::TrainConfig;

const MAGIC: &[u8; 8] = b"STRGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_RANK: u32 = 8;
const DISC_PREFIX: &str = "disc.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub step: usize,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub generator: ParamStore,
    /// Parameters named `disc.*`.
    pub discriminator: ParamStore,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        let meta = serde_json::to_vec(&self.meta).map_err(std::io::Error::other)?;
        w.write_u64::<LittleEndian>(meta.len() as u64)?;
        w.write_all(&meta)?;
        let count = self.generator.len() + self.discriminator.len();
        w.write_u64::<LittleEndian>(count as u64)?;
        for (name, t) in self.generator.iter().chain(self.discriminator.iter()) {
            w.write_u32::<LittleEndian>(name.len() as u32)?;
            w.write_all(name.as_bytes())?;
            w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
            for &d in t.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let io = |e: std::io::Error| corrupt(format!("truncated or unreadable: {e}"));
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(corrupt("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(io)?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let meta_len = r.read_u64::<LittleEndian>().map_err(io)?;
        let mut meta = Vec::new();
        r.by_ref().take(meta_len).read_to_end(&mut meta).map_err(io)?;
        if meta.len() as u64 != meta_len {
            return Err(corrupt("truncated metadata"));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        let count = r.read_u64::<LittleEndian>().map_err(io)?;
        let mut generator = ParamStore::new();
        let mut discriminator = ParamStore::new();
        for _ in 0..count {
            let len = r.read_u32::<LittleEndian>().map_err(io)?;
            let mut name = vec![0u8; len as usize];
            r.read_exact(&mut name).map_err(io)?;
            let name = String::from_utf8(name).map_err(|_| corrupt("tensor name is not UTF-8"))?;
            let rank = r.read_u32::<LittleEndian>().map_err(io)?;
            if rank > MAX_RANK {
                return Err(corrupt(format!("{name}: implausible rank {rank}")));
            }
            let shape: Vec<usize> = (0..rank)
                .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
                .collect::<std::io::Result<_>>()
                .map_err(io)?;
            let numel: usize = shape.iter().product();
            let mut data = vec![0.0; numel];
            r.read_f64_into::<LittleEndian>(&mut data).map_err(io)?;
            let t = Tensor::new(shape, data)?;
            if name.starts_with(DISC_PREFIX) {
                discriminator.insert(name, t);
            } else {
                generator.insert(name, t);
            }
        }
        Ok(Self {
            meta,
            generator,
            discriminator,
        })
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
            let mut w = BufWriter::new(file);
            self.write_to(&mut w).map_err(|e| Error::io(&tmp, e))?;
            w.flush().map_err(|e| Error::io(&tmp, e))?;
        }
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut g = ParamStore::new();
        g.insert("enc1.down.weight", Tensor::from_fn([2, 4, 4, 4], |i| i as f64 * 0.5 - 3.0));
        g.insert("ga1.alpha", Tensor::scalar(1.25));
        let mut d = ParamStore::new();
        d.insert("disc.head.bias", Tensor::full([1], -0.1));
        Checkpoint {
            meta: CheckpointMeta {
                generator: GeneratorConfig::default(),
                discriminator: DiscriminatorConfig::default(),
                step: 17,
                train: None,
            },
            generator: g,
            discriminator: d,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        assert!(Checkpoint::read_from(&mut &buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read_from(&mut bad.as_slice()).is_err());
        let mut bad = buf;
        bad[8] = 99;
        assert!(matches!(Checkpoint::read_from(&mut bad.as_slice()), Err(Error::Checkpoint(_))));
    }
}
