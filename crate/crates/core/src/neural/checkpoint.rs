//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "CRTRCKPT"
//! version u32
//! meta    u64 length + UTF-8 JSON {"architecture": .., "metadata": ..}
//! count   u32
//! count × { name: u32 length + UTF-8, ndim: u32, dims: u64 × ndim, data: f64 × prod(dims) }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Classifier, Module, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CRTRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A loaded model plus the free-form metadata stored alongside it
/// (feature ids, window settings, registry hash, standardization stats).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Classifier,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture: Architecture,
    metadata: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    model: &Classifier,
    metadata: &serde_json::Value,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let header = serde_json::to_vec(&Header {
        architecture: *model.architecture(),
        metadata: metadata.clone(),
    })?;
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);

    let mut blocks = Vec::new();
    model.visit("", &mut |name, p| {
        blocks.push((name.to_string(), p.value.clone()))
    });
    buf.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for (name, t) in &blocks {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, bytes: u64) -> Result<usize> {
        let n = usize::try_from(bytes).map_err(|_| Error::Checkpoint("length overflow".into()))?;
        if n > self.buf.len() - self.pos {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        Ok(n)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut raw = Vec::new();
    fs::File::open(path)?.read_to_end(&mut raw)?;
    let mut r = Reader { buf: &raw, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let header: Header = serde_json::from_slice(r.take(n)?)?;

    let count = r.u32()? as usize;
    let mut blocks = BTreeMap::new();
    for _ in 0..count {
        let n = r.u32()? as u64;
        let n = r.len(n)?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let d = r.u64()?;
            shape.push(
                usize::try_from(d).map_err(|_| Error::Checkpoint("dimension overflow".into()))?,
            );
        }
        let len: usize = shape.iter().product();
        let bytes = r.len((len as u64).saturating_mul(8))?;
        let data = r
            .take(bytes)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        blocks.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != raw.len() {
        return Err(Error::Checkpoint(
            "trailing bytes after parameter blocks".into(),
        ));
    }

    let mut model = Classifier::zeros(header.architecture)?;
    let mut problem = None;
    let mut used = 0;
    model.visit_mut("", &mut |name, p| {
        if problem.is_some() {
            return;
        }
        match blocks.get(name) {
            None => problem = Some(format!("missing parameter `{name}`")),
            Some(t) if t.shape() != p.value.shape() => {
                problem = Some(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    t.shape(),
                    p.value.shape()
                ))
            }
            Some(t) => {
                p.value = t.clone();
                used += 1;
            }
        }
    });
    if let Some(m) = problem {
        return Err(Error::Checkpoint(m));
    }
    if used != blocks.len() {
        return Err(Error::Checkpoint(format!(
            "{} unexpected parameter blocks",
            blocks.len() - used
        )));
    }
    Ok(Checkpoint {
        model,
        metadata: header.metadata,
    })
}

impl Checkpoint {
    /// Loads and checks the stored layout against `expected`.
    pub fn load_expecting(path: &Path, expected: &Architecture) -> Result<Self> {
        let ck = load_checkpoint(path)?;
        ck.model.architecture().ensure_matches(expected)?;
        Ok(ck)
    }
}
