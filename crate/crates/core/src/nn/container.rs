//! Keyed binary container for checkpoints.
//!
//! ```text
//! ODACKPT1\n
//! u32 n_meta,   then per entry: u32 len | key bytes | u32 len | value bytes
//! u32 n_arrays, then per entry: u32 len | name bytes | u64 rows | u64 cols | rows*cols f64
//! u64 FNV-1a of everything between the magic and the checksum
//! ```
//! All integers and floats little-endian. Values are stored as `f64`, so an
//! `f32` or `f64` parameter set round-trips exactly.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;

use super::{Adam, ParamSet};
use crate::seeding::{fnv1a, FNV_OFFSET};
use crate::Scalar;

pub const MAGIC: &[u8; 9] = b"ODACKPT1\n";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("bad magic bytes: not a checkpoint")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint entry {0:?} missing")]
    Missing(String),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Array2<f64>>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta(&self, key: &str) -> Result<&str, ContainerError> {
        self.meta.get(key).map(String::as_str).ok_or_else(|| ContainerError::Missing(key.to_string()))
    }

    pub fn meta_parsed<V: std::str::FromStr>(&self, key: &str) -> Result<V, ContainerError> {
        self.meta(key)?.parse().map_err(|_| ContainerError::Malformed(format!("meta {key}")))
    }

    pub fn put_params<T: Scalar>(&mut self, prefix: &str, p: &ParamSet<T>) {
        for (name, a) in p.iter() {
            self.arrays.insert(format!("{prefix}/{name}"), a.mapv(|x| x.as_f64()));
        }
    }

    /// Every array stored under `prefix/`.
    pub fn params<T: Scalar>(&self, prefix: &str) -> ParamSet<T> {
        let head = format!("{prefix}/");
        let mut p = ParamSet::new();
        for (k, a) in self.arrays.range(head.clone()..) {
            let Some(name) = k.strip_prefix(&head) else { break };
            p.insert(name, a.mapv(T::of));
        }
        p
    }

    pub fn put_adam<T: Scalar>(&mut self, prefix: &str, opt: &Adam<T>) {
        self.put_params(&format!("{prefix}.m"), &opt.m);
        self.put_params(&format!("{prefix}.v"), &opt.v);
        self.set_meta(&format!("{prefix}.t"), opt.t);
    }

    pub fn adam<T: Scalar>(&self, prefix: &str) -> Result<Adam<T>, ContainerError> {
        Ok(Adam {
            m: self.params(&format!("{prefix}.m")),
            v: self.params(&format!("{prefix}.v")),
            t: self.meta_parsed(&format!("{prefix}.t"))?,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        let put_str = |body: &mut Vec<u8>, s: &str| {
            body.extend_from_slice(&(s.len() as u32).to_le_bytes());
            body.extend_from_slice(s.as_bytes());
        };
        body.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut body, k);
            put_str(&mut body, v);
        }
        body.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (k, a) in &self.arrays {
            put_str(&mut body, k);
            body.extend_from_slice(&(a.nrows() as u64).to_le_bytes());
            body.extend_from_slice(&(a.ncols() as u64).to_le_bytes());
            for x in a.iter() {
                body.extend_from_slice(&x.to_le_bytes());
            }
        }
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&body);
        out.extend_from_slice(&fnv1a(FNV_OFFSET, &body).to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < MAGIC.len() + 8 {
            return Err(if bytes.starts_with(&MAGIC[..bytes.len().min(MAGIC.len())]) {
                ContainerError::Truncated
            } else {
                ContainerError::BadMagic
            });
        }
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let body = &bytes[MAGIC.len()..bytes.len() - 8];
        let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
        if stored != fnv1a(FNV_OFFSET, body) {
            return Err(ContainerError::Checksum);
        }
        let mut r = Reader { b: body, pos: 0 };
        let mut c = Container::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            c.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| ContainerError::Malformed("array size".into()))?;
            let mut data = Vec::with_capacity(n.min(body.len() / 8));
            for _ in 0..n {
                data.push(f64::from_bits(r.u64()?));
            }
            let a = Array2::from_shape_vec((rows, cols), data).map_err(|e| ContainerError::Malformed(e.to_string()))?;
            c.arrays.insert(k, a);
        }
        if r.pos != body.len() {
            return Err(ContainerError::Malformed("trailing bytes".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or(ContainerError::Truncated)?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| ContainerError::Malformed("non-UTF-8 key".into()))
    }
}
