use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::codec::{read_file, Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{Elem, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Arc<Vec<f32>>,
}

/// Named float32 tensors in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::dim(format!("{name}: shape {shape:?} vs {} values", data.len())));
        }
        if self.index.contains_key(&name) {
            return Err(Error::Consistency(format!("duplicate parameter {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            shape: shape.to_vec(),
            data: Arc::new(data),
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn num_values(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    /// Mutable access to one tensor's values (copy-on-write if shared).
    pub fn values_mut(&mut self, i: usize) -> &mut Vec<f32> {
        Arc::make_mut(&mut self.entries[i].data)
    }

    /// Fresh gradient-tracking leaves over the current values.
    pub fn leaves(&self) -> Params<f32> {
        self.to_params(true)
    }

    /// Constant (untracked) view, for inference.
    pub fn constants(&self) -> Params<f32> {
        self.to_params(false)
    }

    fn to_params(&self, track: bool) -> Params<f32> {
        let tensors = self
            .entries
            .iter()
            .map(|e| {
                let t = Tensor::from_shared(&e.shape, Arc::clone(&e.data)).expect("validated shape");
                if track {
                    t.requires_grad()
                } else {
                    t
                }
            })
            .collect();
        Params {
            tensors,
            index: self.index.clone(),
        }
    }

    /// Leaves in another precision (used by gradient checks).
    pub fn leaves_as<T: Elem>(&self) -> Params<T> {
        let p = self.constants();
        Params {
            tensors: p.tensors.iter().map(|t| t.cast::<T>().requires_grad()).collect(),
            index: p.index,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer::default();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.len_u32(self.entries.len())?;
        for e in &self.entries {
            w.len_u32(e.name.len())?;
            w.bytes(e.name.as_bytes());
            w.len_u32(e.shape.len())?;
            for &d in &e.shape {
                w.len_u32(d)?;
            }
            w.f32s(e.data.iter().copied());
        }
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let len = r.count(1)?;
            let at = r.offset();
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format {
                    offset: at,
                    msg: "tensor name is not UTF-8".into(),
                })?
                .to_string();
            let rank = r.count(4)?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| r.format("tensor size overflow"))?;
            let data = r.f32s(n)?;
            if store.index.contains_key(&name) {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("duplicate tensor {name}"),
                });
            }
            store.insert(name, &shape, data)?;
        }
        if !r.at_end() {
            return Err(r.format("trailing bytes after last tensor"));
        }
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Writer { buf: self.to_bytes()? }.write_to(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

/// Per-forward view of a [`ParamStore`], looked up by name.
pub struct Params<T: Elem = f32> {
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Elem> Params<T> {
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| Error::Consistency(format!("missing parameter {name}")))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    /// Gradients in store order; untouched parameters get zeros.
    pub fn grads(&self) -> Vec<Vec<T>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![T::zero(); t.len()]))
            .collect()
    }
}

/// He-normal initializer driven by a seeded stream.
pub(crate) struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn he(&mut self, n: usize, fan_in: usize) -> Vec<f32> {
        let std = (2.0 / fan_in.max(1) as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
    }

    pub fn normal(&mut self, n: usize, std: f64) -> Vec<f32> {
        let dist = Normal::new(0.0, std).expect("positive std");
        (0..n).map(|_| dist.sample(&mut self.rng) as f32).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("a.w", &[2, 3], vec![1.0, -2.0, 3.5, 0.0, f32::MIN_POSITIVE, 7.0]).unwrap();
        s.insert("a.b", &[2], vec![0.25, -0.5]).unwrap();
        s.insert("meta.x", &[1], vec![0.2]).unwrap();
        s
    }

    #[test]
    fn checkpoint_round_trip() {
        let s = store();
        let bytes = s.to_bytes().unwrap();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn checkpoint_errors() {
        let bytes = store().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[3] = b'X';
        assert!(matches!(ParamStore::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));
        assert!(matches!(
            ParamStore::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn leaves_share_values_and_collect_grads() {
        let s = store();
        let p = s.leaves();
        let y = p.get("a.b").unwrap().sum();
        y.backward().unwrap();
        let g = p.grads();
        assert_eq!(g[1], vec![1.0, 1.0]);
        assert_eq!(g[0], vec![0.0; 6]);
        assert!(p.get("nope").is_err());
    }
}
