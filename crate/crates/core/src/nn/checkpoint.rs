//! Parameter checkpoints.
//!
//! ```text
//! magic    8 bytes  "STTCKPT\0"
//! version  u32
//! config   u32 byte length + utf-8 text (TOML)
//! count    u32
//! per tensor: u32 name length, name, u32 rank, rank x u64 extents,
//!             product(extents) x f64
//! crc32    u32 over every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::params::ParamSet;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STTCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const WHAT: &str = "checkpoint";

pub fn to_bytes(params: &ParamSet, config: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(params.len() * 8 + 1024);
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    out.extend((config.len() as u32).to_le_bytes());
    out.extend(config.as_bytes());
    out.extend((params.specs.len() as u32).to_le_bytes());
    for spec in &params.specs {
        out.extend((spec.name.len() as u32).to_le_bytes());
        out.extend(spec.name.as_bytes());
        out.extend((spec.shape.len() as u32).to_le_bytes());
        for &d in &spec.shape {
            out.extend((d as u64).to_le_bytes());
        }
        for v in spec.slot.of(&params.values) {
            out.extend(v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend(crc.to_le_bytes());
    out
}

pub fn save(path: impl AsRef<Path>, params: &ParamSet, config: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(params, config)).map_err(|e| Error::io(path, e))
}

/// A checkpoint's config text and tensors in file order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub tensors: Vec<(String, Vec<usize>, Vec<f64>)>,
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 8 {
        return Err(Error::Truncated { what: WHAT });
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { what: WHAT, expected: "STTCKPT" });
    }
    if bytes.len() < 16 {
        return Err(Error::Truncated { what: WHAT });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { what: WHAT, found: version, expected: CHECKPOINT_VERSION });
    }
    let body = &bytes[..bytes.len() - 4];
    let mut pos = 12;
    let mut take = |n: usize| -> Result<&[u8]> {
        let end = pos + n;
        if end > body.len() {
            return Err(Error::Truncated { what: WHAT });
        }
        let s = &body[pos..end];
        pos = end;
        Ok(s)
    };
    let config_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let config = String::from_utf8(take(config_len)?.to_vec())
        .map_err(|_| Error::Malformed { what: WHAT, detail: "config is not utf-8".into() })?;
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut tensors = Vec::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::Malformed { what: WHAT, detail: "tensor name is not utf-8".into() })?;
        let rank = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let raw = take(n.checked_mul(8).ok_or(Error::Truncated { what: WHAT })?)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((name, shape, values));
    }
    if pos != body.len() {
        return Err(Error::Truncated { what: WHAT });
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { what: WHAT, stored, computed });
    }
    Ok(Checkpoint { config, tensors })
}

pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl Checkpoint {
    /// Copies the stored tensors into `params`, which must have exactly the
    /// same names and shapes in the same order.
    pub fn restore_into(&self, params: &mut ParamSet) -> Result<()> {
        if self.tensors.len() != params.specs.len() {
            return Err(Error::CheckpointMismatch(format!(
                "{} tensors stored, model has {}",
                self.tensors.len(),
                params.specs.len()
            )));
        }
        for ((name, shape, _), spec) in self.tensors.iter().zip(&params.specs) {
            if *name != spec.name {
                return Err(Error::CheckpointMismatch(format!("expected tensor {}, found {name}", spec.name)));
            }
            if *shape != spec.shape {
                return Err(Error::CheckpointMismatch(format!("{name}: shape {shape:?}, model expects {:?}", spec.shape)));
            }
        }
        for ((_, _, values), spec) in self.tensors.iter().zip(&params.specs) {
            spec.slot.of_mut(&mut params.values).copy_from_slice(values);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamBuilder};

    fn params(seed: u64, second: &[usize]) -> ParamSet {
        let mut pb = ParamBuilder::new(seed);
        pb.add("a.weight", &[3, 2], Init::Normal(1.0));
        pb.add("a.bias", second, Init::Normal(1.0));
        pb.finish()
    }

    #[test]
    fn round_trip_and_mismatches() {
        let p = params(1, &[2]);
        let bytes = to_bytes(&p, "preset = \"small\"\n");
        let ck = from_bytes(&bytes).unwrap();
        assert_eq!(ck.config, "preset = \"small\"\n");
        let mut q = params(2, &[2]);
        ck.restore_into(&mut q).unwrap();
        assert_eq!(q, p);

        let mut wrong_shape = params(2, &[3]);
        assert!(matches!(ck.restore_into(&mut wrong_shape), Err(Error::CheckpointMismatch(_))));
        let mut pb = ParamBuilder::new(0);
        pb.add("a.weight", &[3, 2], Init::Zeros);
        pb.add("b.bias", &[2], Init::Zeros);
        assert!(matches!(ck.restore_into(&mut pb.finish()), Err(Error::CheckpointMismatch(_))));
    }

    #[test]
    fn corrupted_files() {
        let bytes = to_bytes(&params(1, &[2]), "");
        assert!(matches!(from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Truncated { .. })));
        let mut flipped = bytes.clone();
        flipped[30] ^= 1;
        assert!(matches!(from_bytes(&flipped), Err(Error::Checksum { .. })));
    }
}
