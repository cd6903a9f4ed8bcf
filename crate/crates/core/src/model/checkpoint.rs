//! Checkpoint container: model config, a step counter and named f64
//! arrays, closed by a CRC-32 of everything before it. Layout (all
//! integers little-endian):
//!
//! ```text
//! magic      8 bytes  "MASKMACK"
//! version    u32
//! config     6 × u32  n_blocks, d_hidden, n_heads, context, d_state, k_intr
//! step       u64
//! count      u32
//! count × {  name_len u16, name (utf-8), ndim u8, dims ndim × u32,
//!            data product(dims) × f64 }
//! crc32      u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelConfig, ModelError, Params};
use crate::numeric::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"MASKMACK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub step: u64,
    /// Model parameters first (layout order), then any extra arrays such as
    /// optimizer state.
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_params(params: &Params, step: u64) -> Self {
        Checkpoint { config: *params.config(), step, arrays: params.named_arrays() }
    }

    /// The model parameters, i.e. the first `layout` arrays.
    pub fn params(&self) -> Result<Params, ModelError> {
        let n = Params::zeros(self.config)?.len();
        if self.arrays.len() < n {
            return Err(ModelError::Format(format!("{} arrays, model needs {n}", self.arrays.len())));
        }
        Params::from_named(self.config, self.arrays[..n].to_vec())
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, ModelError> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let c = &self.config;
        for v in [c.n_blocks, c.d_hidden, c.n_heads, c.context, c.d_state, c.k_intr] {
            out.extend_from_slice(&u32_of(v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&u32_of(self.arrays.len())?.to_le_bytes());
        for (name, t) in &self.arrays {
            let bytes = name.as_bytes();
            let len = u16::try_from(bytes.len()).map_err(|_| ModelError::Format(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(bytes);
            let ndim = u8::try_from(t.shape().len()).map_err(|_| ModelError::Format("too many dims".into()))?;
            out.push(ndim);
            for &d in t.shape() {
                out.extend_from_slice(&u32_of(d)?.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || bytes[..8] != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        if bytes.len() < 12 {
            return Err(ModelError::Checksum);
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        if bytes.len() < 16 {
            return Err(ModelError::Checksum);
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(ModelError::Checksum);
        }
        let mut r = Cursor { buf: body, pos: 12 };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let config = ModelConfig {
            n_blocks: dims[0],
            d_hidden: dims[1],
            n_heads: dims[2],
            context: dims[3],
            d_state: dims[4],
            k_intr: dims[5],
        };
        config.validate()?;
        let step = r.u64()?;
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| ModelError::Format("array name is not utf-8".into()))?;
            let ndim = r.take(1)?[0] as usize;
            let shape: Vec<usize> = (0..ndim).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| ModelError::Format("array too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            arrays.push((name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(ModelError::Format(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, step, arrays })
    }
}

fn u32_of(v: usize) -> Result<u32, ModelError> {
    u32::try_from(v).map_err(|_| ModelError::Format(format!("{v} does not fit in u32")))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Format("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), ModelError> {
    let bytes = ckpt.to_bytes()?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    f.sync_all()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
