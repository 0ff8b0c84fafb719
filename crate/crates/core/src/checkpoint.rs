//! Binary checkpoint container. All integers little endian:
//!
//! ```text
//! magic     8 bytes  "TONEGAN\0"
//! version   u32
//! kind      u8       0 generator, 1 discriminator, 2 multi-scale discriminator
//! step      u64
//! seed      u64
//! config    u32 length + UTF-8 text (resolved run configuration)
//! count     u32
//! tensor    u16 name length + UTF-8 name, u8 dtype (0 f32, 1 f64),
//!           u8 rank, rank x u64 dims, raw little-endian elements
//! ```

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::tensor::{ParamSet, Tensor};

pub const MAGIC: [u8; 8] = *b"TONEGAN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Discriminator,
    MultiScale,
}

impl ModelKind {
    fn code(self) -> u8 {
        match self {
            ModelKind::Generator => 0,
            ModelKind::Discriminator => 1,
            ModelKind::MultiScale => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ModelKind::Generator),
            1 => Some(ModelKind::Discriminator),
            2 => Some(ModelKind::MultiScale),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::MultiScale => "multiscale",
        }
    }
}

/// A tensor kept in its serialized element encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl RawTensor {
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.len() * T::DTYPE.size());
        for &v in t.data() {
            v.write_le(&mut bytes);
        }
        Self {
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Decodes into `T`; an element type different from `T` is converted.
    pub fn to_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let size = self.dtype.size();
        let data: Vec<T> = match self.dtype {
            DType::F32 => self.bytes.chunks_exact(size).map(|c| T::of(f32::read_le(c) as f64)).collect(),
            DType::F64 => self.bytes.chunks_exact(size).map(|c| T::of(f64::read_le(c))).collect(),
        };
        Tensor::from_vec(&self.shape, data)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub step: u64,
    pub seed: u64,
    pub config: String,
    tensors: Vec<(String, RawTensor)>,
}

impl Checkpoint {
    pub fn new(kind: ModelKind, step: u64, seed: u64, config: String) -> Self {
        Self {
            kind,
            step,
            seed,
            config,
            tensors: Vec::new(),
        }
    }

    pub fn tensors(&self) -> &[(String, RawTensor)] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&RawTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push<T: Real>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("tensor name too long: {name}")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
        }
        self.tensors.push((name, RawTensor::from_tensor(t)));
        Ok(())
    }

    /// Stores every tensor of `params` under `prefix`.
    pub fn push_params<T: Real, P: ParamSet<T>>(&mut self, prefix: &str, params: &P) -> Result<()> {
        for (n, t) in params.named_tensors() {
            self.push(format!("{prefix}{n}"), t)?;
        }
        Ok(())
    }

    /// Fills `params` from tensors stored under `prefix`; names and shapes
    /// must all match.
    pub fn load_params<T: Real, P: ParamSet<T>>(&self, prefix: &str, params: &mut P) -> Result<()> {
        let lookup = |name: &str| {
            self.get(&format!("{prefix}{name}"))
                .and_then(|raw| raw.to_tensor::<T>().ok())
        };
        params.load_named(&lookup)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        b.push(self.kind.code());
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&(self.config.len() as u32).to_le_bytes());
        b.extend_from_slice(self.config.as_bytes());
        b.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u16).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.push(t.dtype.code());
            b.push(t.shape.len() as u8);
            for &d in &t.shape {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            b.extend_from_slice(&t.bytes);
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let kind = ModelKind::from_code(r.u8()?)
            .ok_or_else(|| Error::Checkpoint("unknown model kind".into()))?;
        let step = r.u64()?;
        let seed = r.u64()?;
        let clen = r.u32()? as usize;
        let config = String::from_utf8(r.take(clen)?.to_vec())
            .map_err(|_| Error::Checkpoint("config block is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec())
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("duplicate tensor {name}")));
            }
            let dtype = DType::from_code(r.u8()?)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: unknown dtype")))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Checkpoint("dimension overflow".into()))?);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
            let data = r.take(n)?.to_vec();
            tensors.push((name, RawTensor { dtype, shape, bytes: data }));
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after tensor table".into()));
        }
        Ok(Self {
            kind,
            step,
            seed,
            config,
            tensors,
        })
    }

    /// Writes through a temporary file and renames, so a crash never
    /// leaves a truncated checkpoint under the final name.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
