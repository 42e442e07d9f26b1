//! Checkpoint file format (all integers little-endian):
//!
//! ```text
//! b"TTLM"                       magic
//! u32                           format version (1)
//! u32 + bytes                   UTF-8 JSON ModelConfig
//! u32                           tensor count
//! per tensor, in layout order:
//!   u32 + bytes                 tensor name
//!   u32                         rank
//!   u32 × rank                  dims
//!   f32 × prod(dims)            row-major values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Layout, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TTLM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    w.write_all(&(cfg.len() as u32).to_le_bytes())?;
    w.write_all(&cfg)?;
    let layout = model.layout();
    w.write_all(&(layout.tensors.len() as u32).to_le_bytes())?;
    for spec in &layout.tensors {
        w.write_all(&(spec.name.len() as u32).to_le_bytes())?;
        w.write_all(spec.name.as_bytes())?;
        w.write_all(&(spec.shape.len() as u32).to_le_bytes())?;
        for &d in &spec.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in model.tensor(&spec.name).expect("layout tensor") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(model.n_params() * 4 + 4096);
    write_checkpoint(model, &mut buf).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes[..])
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::Truncated(what.to_string()))?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<Model> {
    let mut r = Reader { inner: r };
    let magic = r.bytes(4, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let cfg_len = r.u32("config length")? as usize;
    let cfg_bytes = r.bytes(cfg_len, "config")?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)?;
    config.validate()?;
    let layout = Layout::new(&config);

    let count = r.u32("tensor count")? as usize;
    let mut params = Vec::with_capacity(layout.total);
    for (i, spec) in layout.tensors.iter().enumerate() {
        if i >= count {
            return Err(Error::TensorMismatch {
                name: spec.name.clone(),
                detail: format!("missing from tensor table ({count} entries present)"),
            });
        }
        let name_len = r.u32("tensor name length")? as usize;
        let name = String::from_utf8_lossy(&r.bytes(name_len, "tensor name")?).into_owned();
        let rank = r.u32(&format!("rank of {name}"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32(&format!("shape of {name}"))? as usize);
        }
        if name != spec.name {
            return Err(Error::TensorMismatch {
                name: spec.name.clone(),
                detail: format!("expected at table position {i}, found {name:?}"),
            });
        }
        if shape != spec.shape {
            return Err(Error::TensorMismatch {
                name: spec.name.clone(),
                detail: format!("shape {shape:?} does not match config shape {:?}", spec.shape),
            });
        }
        let data = r.bytes(spec.len() * 4, &format!("data of {name}"))?;
        params.extend(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])),
        );
    }
    if count > layout.tensors.len() {
        return Err(Error::TensorMismatch {
            name: format!("#{}", layout.tensors.len()),
            detail: format!(
                "tensor table has {count} entries, config expects {}",
                layout.tensors.len()
            ),
        });
    }
    let mut rest = Vec::new();
    r.inner
        .read_to_end(&mut rest)
        .map_err(|_| Error::Truncated("trailer".into()))?;
    if !rest.is_empty() {
        return Err(Error::input(format!("checkpoint has {} trailing bytes", rest.len())));
    }
    Model::from_params(config, params)
}
