//! Versioned binary checkpoint.
//!
//! Layout (little-endian):
//!
//! ```text
//! "GLDNETCK"  u32 version  u8 float bits (32|64)
//! u32 len + UTF-8 run config (key = value lines)
//! u64 step
//! u32 count, then per tensor:
//!     u16 len + UTF-8 name, u8 kind, u8 rank, u32 extents[rank], values
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! `kind` is 0 for parameters, 1 for batchnorm buffers and 2/3 for the Adam
//! first/second moments of the parameter of the same name.

use std::path::Path;

use gldnet_core::network::GldNet;
use gldnet_core::scalar::Scalar;
use gldnet_core::tensorcore::{AdamState, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"GLDNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

impl TensorKind {
    fn tag(self) -> u8 {
        match self {
            Self::Param => 0,
            Self::Buffer => 1,
            Self::AdamM => 2,
            Self::AdamV => 3,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => Self::Param,
            1 => Self::Buffer,
            2 => Self::AdamM,
            3 => Self::AdamV,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub kind: TensorKind,
    pub shape: Vec<usize>,
    /// Values widened to `f64`; exact for both stored widths.
    pub data: Vec<f64>,
}

/// Decoded checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub bits: u8,
    pub config: String,
    pub step: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshot of a model and, optionally, its optimizer.
    pub fn capture<S: Scalar>(net: &GldNet<S>, opt: Option<&AdamState<S>>, step: u64, config: &str) -> Self {
        let bits = if core::mem::size_of::<S>() == 4 { 32 } else { 64 };
        let mut tensors = Vec::new();
        for (i, e) in net.store.entries().iter().enumerate() {
            let shape = e.value.shape().to_vec();
            let widen = |v: &[S]| v.iter().map(|x| x.f64()).collect::<Vec<_>>();
            let kind = if e.trainable { TensorKind::Param } else { TensorKind::Buffer };
            tensors.push(NamedTensor { name: e.name.clone(), kind, shape: shape.clone(), data: widen(e.value.data()) });
            if let (Some(o), true) = (opt, e.trainable) {
                tensors.push(NamedTensor { name: e.name.clone(), kind: TensorKind::AdamM, shape: shape.clone(), data: widen(&o.m[i]) });
                tensors.push(NamedTensor { name: e.name.clone(), kind: TensorKind::AdamV, shape, data: widen(&o.v[i]) });
            }
        }
        Self { bits, config: config.to_string(), step, tensors }
    }

    pub fn has_optimizer(&self) -> bool {
        self.tensors.iter().any(|t| t.kind == TensorKind::AdamM)
    }

    /// Copies stored values into `net` (and `opt` when given). Every entry
    /// of the store must be present with the same shape.
    pub fn restore<S: Scalar>(&self, net: &mut GldNet<S>, opt: Option<&mut AdamState<S>>, path: &Path) -> Result<()> {
        let err = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        let find = |name: &str, kind: TensorKind| self.tensors.iter().find(|t| t.name == name && t.kind == kind);
        let narrow = |t: &NamedTensor| t.data.iter().map(|&v| S::of(v)).collect::<Vec<S>>();
        let expected = net.store.entries().len();
        let stored = self.tensors.iter().filter(|t| matches!(t.kind, TensorKind::Param | TensorKind::Buffer)).count();
        if stored != expected {
            return Err(err(format!("holds {stored} tensors, model has {expected}")));
        }
        let mut opt = opt;
        for (i, e) in net.store.entries_mut().iter_mut().enumerate() {
            let kind = if e.trainable { TensorKind::Param } else { TensorKind::Buffer };
            let t = find(&e.name, kind).ok_or_else(|| err(format!("missing tensor {:?}", e.name)))?;
            if t.shape != e.value.shape() {
                return Err(err(format!("{:?} has shape {:?}, model expects {:?}", e.name, t.shape, e.value.shape())));
            }
            e.value = Tensor::new(&t.shape, narrow(t))?;
            if let (Some(o), true) = (opt.as_deref_mut(), e.trainable) {
                let m = find(&e.name, TensorKind::AdamM).ok_or_else(|| err(format!("missing Adam state for {:?}", e.name)))?;
                let v = find(&e.name, TensorKind::AdamV).ok_or_else(|| err(format!("missing Adam state for {:?}", e.name)))?;
                o.m[i] = narrow(m);
                o.v[i] = narrow(v);
            }
        }
        if let Some(o) = opt {
            o.step = self.step;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.bits);
        b.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config.as_bytes());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            b.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
            b.extend_from_slice(t.name.as_bytes());
            b.push(t.kind.tag());
            b.push(t.shape.len() as u8);
            for &d in &t.shape {
                b.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.data {
                if self.bits == 32 {
                    b.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    b.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&b);
        b.extend_from_slice(&crc.to_le_bytes());
        b
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |msg: String| Error::Checkpoint { path: path.to_path_buf(), msg };
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(err("not a checkpoint (bad magic)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(err(format!("checksum mismatch (stored {stored:08x}, computed {actual:08x})")));
        }
        let mut r = Reader { b: body, pos: MAGIC.len() };
        let truncated = |_| err("truncated".into());
        let version = r.u32().map_err(truncated)?;
        if version != VERSION {
            return Err(err(format!("unsupported version {version}")));
        }
        let bits = r.u8().map_err(truncated)?;
        if bits != 32 && bits != 64 {
            return Err(err(format!("unsupported float width {bits}")));
        }
        let n = r.u32().map_err(truncated)? as usize;
        let config = String::from_utf8(r.take(n).map_err(truncated)?.to_vec()).map_err(|_| err("config is not UTF-8".into()))?;
        let step = r.u64().map_err(truncated)?;
        let count = r.u32().map_err(truncated)? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u16().map_err(truncated)? as usize;
            let name = String::from_utf8(r.take(n).map_err(truncated)?.to_vec()).map_err(|_| err("tensor name is not UTF-8".into()))?;
            let kind = TensorKind::from_tag(r.u8().map_err(truncated)?).ok_or_else(|| err(format!("{name:?}: unknown tensor kind")))?;
            let rank = r.u8().map_err(truncated)? as usize;
            let shape: Vec<usize> = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<std::result::Result<_, _>>().map_err(truncated)?;
            let numel: usize = shape.iter().product();
            let width = usize::from(bits / 8);
            let raw = r.take(numel * width).map_err(truncated)?;
            let data = raw
                .chunks_exact(width)
                .map(|c| {
                    if bits == 32 {
                        f64::from(f32::from_le_bytes(c.try_into().unwrap()))
                    } else {
                        f64::from_le_bytes(c.try_into().unwrap())
                    }
                })
                .collect();
            tensors.push(NamedTensor { name, kind, shape, data });
        }
        if r.pos != body.len() {
            return Err(err(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Self { bits, config, step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        // write then rename so a crash never leaves a torn file behind
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint { path: path.to_path_buf(), msg: e.to_string() })?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ()> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.b.len()).ok_or(())?;
        let s = &self.b[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, ()> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> std::result::Result<u16, ()> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> std::result::Result<u32, ()> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, ()> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
