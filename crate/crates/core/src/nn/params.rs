use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::{NnError, Tape, Tensor};
use super::tape::Grads;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug)]
struct Param {
    name: String,
    value: Tensor,
    grad: Tensor,
    m: Tensor,
    v: Tensor,
    trainable: bool,
}

static NEXT_TAG: AtomicUsize = AtomicUsize::new(1);

/// Named parameters with gradient accumulators and Adam moments.
///
/// Each store carries a unique tag so gradients recorded against one store
/// are never applied to another.
#[derive(Debug)]
pub struct ParamStore {
    tag: u64,
    params: Vec<Param>,
    steps: u64,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        let params = self
            .params
            .iter()
            .map(|p| Param {
                name: p.name.clone(),
                value: p.value.clone(),
                grad: p.grad.clone(),
                m: p.m.clone(),
                v: p.v.clone(),
                trainable: p.trainable,
            })
            .collect();
        Self { tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed) as u64, params, steps: self.steps }
    }
}

impl PartialEq for ParamStore {
    /// Compares names and values only.
    fn eq(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MAGEPRM\0";
pub const CHECKPOINT_VERSION: u32 = 1;

impl ParamStore {
    pub fn new() -> Self {
        Self { tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed) as u64, params: Vec::new(), steps: 0 }
    }

    pub(crate) fn tag(&self) -> u64 {
        self.tag
    }

    /// Registers a parameter; names must be unique.
    pub fn add(&mut self, name: &str, value: Tensor) -> ParamId {
        assert!(self.find(name).is_none(), "duplicate parameter {name}");
        let (r, c) = value.shape();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Tensor::zeros(r, c),
            m: Tensor::zeros(r, c),
            v: Tensor::zeros(r, c),
            trainable: true,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
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

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.data().len()).sum()
    }

    /// Adds the gradients a tape computed for this store's parameters.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Grads) {
        for (tag, id, g) in tape.param_grads(grads) {
            if tag == self.tag {
                self.params[id.0].grad.add_assign(g);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Checkpoint layout (little endian): magic, u32 version, u32 count, then
    /// per parameter u32 name length, UTF-8 name, u32 rows, u32 cols and
    /// rows·cols f64 values row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.value.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(p.value.cols() as u32).to_le_bytes());
            for x in p.value.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(NnError::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = core::str::from_utf8(r.take(len)?)
                .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
            if store.find(name).is_some() {
                return Err(NnError::Checkpoint(format!("duplicate parameter {name}")));
            }
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).ok_or_else(|| NnError::Checkpoint("shape overflow".into()))?;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| NnError::Checkpoint("shape overflow".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            store.add(name, Tensor::new(rows, cols, data)?);
        }
        if r.pos != bytes.len() {
            return Err(NnError::Checkpoint("trailing bytes".into()));
        }
        Ok(store)
    }

    /// Overwrites values from a checkpoint with identical names and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.params.len() != self.params.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| NnError::Checkpoint("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Adam with bias correction; gradients are zeroed after every step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&self, store: &mut ParamStore) {
        store.steps += 1;
        let t = store.steps as i32;
        let c1 = 1.0 - libm::pow(self.beta1, t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, t as f64);
        for p in &mut store.params {
            if p.trainable {
                let g = p.grad.data();
                let m = p.m.data_mut();
                for (mi, &gi) in m.iter_mut().zip(g) {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                }
                let v = p.v.data_mut();
                for (vi, &gi) in v.iter_mut().zip(g) {
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                }
                let (m, v) = (p.m.data(), p.v.data());
                for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                    let mhat = m[k] / c1;
                    let vhat = v[k] / c2;
                    *w -= self.lr * mhat / (libm::sqrt(vhat) + self.eps);
                }
            }
            p.grad.data_mut().fill(0.0);
        }
    }
}
