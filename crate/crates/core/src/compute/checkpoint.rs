//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic            8 bytes   "PRFRCKPT"
//! version          u32       1
//! config_len       u32
//! config           config_len bytes of UTF-8 (the run config, key = value)
//! num_users        u64
//! num_items        u64
//! adam_step        u64
//! param_count      u32
//! param_count times:
//!   name_len       u16
//!   name           name_len bytes of UTF-8
//!   decay          u8        0 or 1
//!   rows           u64
//!   cols           u64
//!   value          rows*cols f64, row-major
//!   first_moment   rows*cols f64
//!   second_moment  rows*cols f64
//! ```
//!
//! Nothing may follow the last parameter.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::params::{Param, ParamStore};
use super::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PRFRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}, expected {CHECKPOINT_VERSION}")]
    Version(u32),
    #[error("truncated checkpoint while reading {0}")]
    Truncated(&'static str),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub num_users: usize,
    pub num_items: usize,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.params.num_scalars() * 24);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config.as_bytes());
        out.extend_from_slice(&(self.num_users as u64).to_le_bytes());
        out.extend_from_slice(&(self.num_items as u64).to_le_bytes());
        out.extend_from_slice(&self.params.step().to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for (_, p) in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.push(p.decay as u8);
            out.extend_from_slice(&(p.value.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(p.value.ncols() as u64).to_le_bytes());
            for m in [&p.value, &p.first_moment, &p.second_moment] {
                for v in m.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Version(version));
        }
        let config_len = r.u32("config length")? as usize;
        let config = std::str::from_utf8(r.take(config_len, "config")?)
            .map_err(|_| CheckpointError::Corrupt("config is not UTF-8".into()))?
            .to_string();
        let num_users = r.usize("num_users")?;
        let num_items = r.usize("num_items")?;
        let step = r.u64("adam step")?;
        let count = r.u32("param count")?;
        let mut params = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u16("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| CheckpointError::Corrupt("parameter name is not UTF-8".into()))?
                .to_string();
            let decay = match r.take(1, "decay flag")?[0] {
                0 => false,
                1 => true,
                other => return Err(CheckpointError::Corrupt(format!("decay flag {other}"))),
            };
            let rows = r.usize("rows")?;
            let cols = r.usize("cols")?;
            let numel = rows
                .checked_mul(cols)
                .filter(|n| n.checked_mul(24).is_some_and(|b| b <= r.bytes.len()))
                .ok_or(CheckpointError::Truncated("parameter payload"))?;
            let value = r.matrix(rows, cols, numel)?;
            let first_moment = r.matrix(rows, cols, numel)?;
            let second_moment = r.matrix(rows, cols, numel)?;
            for (what, m) in [("value", &value), ("moment", &first_moment), ("moment", &second_moment)] {
                if !m.iter().all(|v| v.is_finite()) {
                    return Err(CheckpointError::Corrupt(format!("non-finite {what} in '{name}'")));
                }
            }
            params
                .push(Param {
                    name,
                    value,
                    first_moment,
                    second_moment,
                    decay,
                })
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        }
        if !r.bytes.is_empty() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", r.bytes.len())));
        }
        params.set_step(step);
        Ok(Self {
            config,
            num_users,
            num_items,
            params,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CheckpointError> {
        // Write-then-rename so a crash never leaves a half-written file.
        let tmp = path.with_extension("tmp");
        let io = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        fs::write(&tmp, self.encode()).map_err(io)?;
        fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        usize::try_from(self.u64(what)?).map_err(|_| CheckpointError::Corrupt(format!("{what} too large")))
    }

    fn matrix(&mut self, rows: usize, cols: usize, numel: usize) -> Result<Matrix, CheckpointError> {
        let raw = self.take(numel * 8, "parameter payload")?;
        let values = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Matrix::from_shape_vec((rows, cols), values)
            .map_err(|_| CheckpointError::Corrupt(format!("unrepresentable shape {rows}x{cols}")))
    }
}
