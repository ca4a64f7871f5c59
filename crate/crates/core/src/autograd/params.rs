use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a learnable tensor; drives weight decay and complexity accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    Factor,
}

impl ParamKind {
    pub fn is_norm(self) -> bool {
        matches!(self, ParamKind::NormScale | ParamKind::NormShift)
    }
}

#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Non-learnable state saved with a model (normalization running statistics).
#[derive(Debug, Clone)]
pub struct Buffer<T: Scalar> {
    pub name: String,
    pub data: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufferId(pub(crate) usize);

/// Named learnable tensors plus auxiliary buffers.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    buffers: Vec<Buffer<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        tensor.set_requires_grad(true);
        self.params.push(Param { name, kind, tensor });
        ParamId(self.params.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, data: Vec<T>) -> BufferId {
        self.buffers.push(Buffer { name: name.into(), data });
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn buffers(&self) -> &[Buffer<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Buffer<T>] {
        &mut self.buffers
    }

    pub fn buffer(&self, id: BufferId) -> &[T] {
        &self.buffers[id.0].data
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Vec<T> {
        &mut self.buffers[id.0].data
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Order-sensitive FNV-1a digest over parameter and buffer bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut bytes = Vec::new();
        let values = self
            .params
            .iter()
            .flat_map(|p| p.tensor.data().iter())
            .chain(self.buffers.iter().flat_map(|b| b.data.iter()));
        for v in values {
            bytes.clear();
            v.write_le(&mut bytes);
            for &b in &bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// Copies every same-named, same-shaped parameter and buffer from `other`.
    /// Returns the number of parameters copied.
    pub fn copy_matching(&mut self, other: &ParamStore<T>) -> usize {
        let mut copied = 0;
        for p in &mut self.params {
            if let Some(src) = other.params.iter().find(|q| q.name == p.name) {
                if src.tensor.shape() == p.tensor.shape() {
                    p.tensor.data_mut().copy_from_slice(src.tensor.data());
                    copied += 1;
                }
            }
        }
        for b in &mut self.buffers {
            if let Some(src) = other.buffers.iter().find(|q| q.name == b.name) {
                if src.data.len() == b.data.len() {
                    b.data.copy_from_slice(&src.data);
                }
            }
        }
        copied
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                })
                .collect(),
            buffers: self
                .buffers
                .iter()
                .map(|b| Buffer {
                    name: b.name.clone(),
                    data: b.data.iter().map(|v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Replaces values from another store with identical layout.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.params.len() != self.params.len() || other.buffers.len() != self.buffers.len() {
            return Err(Error::Config {
                stage: "load".into(),
                msg: format!(
                    "expected {} parameters and {} buffers, found {} and {}",
                    self.params.len(),
                    self.buffers.len(),
                    other.params.len(),
                    other.buffers.len()
                ),
            });
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Config {
                    stage: dst.name.clone(),
                    msg: format!(
                        "checkpoint holds {} {:?}, model expects {:?}",
                        src.name,
                        src.tensor.shape(),
                        dst.tensor.shape()
                    ),
                });
            }
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        for (dst, src) in self.buffers.iter_mut().zip(&other.buffers) {
            if dst.name != src.name || dst.data.len() != src.data.len() {
                return Err(Error::Config {
                    stage: dst.name.clone(),
                    msg: format!("buffer mismatch against checkpoint entry {}", src.name),
                });
            }
            dst.data.copy_from_slice(&src.data);
        }
        Ok(())
    }
}
