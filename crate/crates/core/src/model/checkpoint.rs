//! Binary checkpoint codec.
//!
//! Layout, all integers u64 little-endian and all reals f64 little-endian:
//!
//! ```text
//! "BATCKPT1"
//! image_side patch_side channels layers heads mlp_hidden boundary_gates token_residual
//! tensor_count
//! repeated tensor_count times: element_count, element_count reals
//! ```
//!
//! Tensors appear in [`ParameterSet::tensors`] order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, ParameterSet};

pub const MAGIC: &[u8; 8] = b"BATCKPT1";

pub fn encode(cfg: &ModelConfig, params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (16 + params.scalar_count() + 100));
    out.extend_from_slice(MAGIC);
    for field in [
        cfg.image_side,
        cfg.patch_side,
        cfg.channels,
        cfg.layers,
        cfg.heads,
        cfg.mlp_hidden,
        cfg.boundary_gates as usize,
        cfg.token_residual as usize,
    ] {
        out.extend_from_slice(&(field as u64).to_le_bytes());
    }
    let tensors = params.tensors();
    out.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for (_, t) in tensors {
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        if self.bytes.len() - self.at < n {
            return Err(ModelError::Checkpoint(format!("truncated at byte {}", self.at)));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn flag(what: &str, v: usize) -> Result<bool, ModelError> {
    match v {
        0 => Ok(false),
        1 => Ok(true),
        other => Err(ModelError::Checkpoint(format!("bad {what} flag {other}"))),
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ParameterSet), ModelError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut header = [0usize; 8];
    for h in header.iter_mut() {
        *h = r.u64()? as usize;
    }
    let cfg = ModelConfig {
        image_side: header[0],
        patch_side: header[1],
        channels: header[2],
        layers: header[3],
        heads: header[4],
        mlp_hidden: header[5],
        boundary_gates: flag("gate", header[6])?,
        token_residual: flag("residual", header[7])?,
    };
    cfg.validate()?;

    let mut params = ParameterSet::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
    let count = r.u64()? as usize;
    let mut tensors = params.tensors_mut();
    if count != tensors.len() {
        return Err(ModelError::Checkpoint(format!(
            "{count} tensors stored, configuration declares {}",
            tensors.len()
        )));
    }
    for (name, t) in tensors.iter_mut() {
        let n = r.u64()? as usize;
        if n != t.len() {
            return Err(ModelError::Checkpoint(format!("{name}: {n} values stored, expected {}", t.len())));
        }
        for v in t.data.iter_mut() {
            *v = r.f64()?;
        }
    }
    if r.at != bytes.len() {
        return Err(ModelError::Checkpoint("trailing bytes".into()));
    }
    Ok((cfg, params))
}

pub fn save(path: &Path, cfg: &ModelConfig, params: &ParameterSet) -> Result<(), ModelError> {
    std::fs::write(path, encode(cfg, params)).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<(ModelConfig, ParameterSet), ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes)
}
