use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use super::checkpoint::TensorMap;
use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A named parameter with its Adam state.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub tensor: Tensor,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub step: u64,
}

impl Parameter {
    fn new(tensor: Tensor) -> Self {
        let n = tensor.numel();
        Self { tensor, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

/// Insertion-ordered collection of named parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterStore {
    params: IndexMap<String, Parameter>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.to_string(), Parameter::new(tensor));
        Ok(())
    }

    /// Fan-in scaled uniform weights in `±sqrt(6 / fan_in)`.
    pub fn insert_kaiming(&mut self, name: &str, shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<()> {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound) as f32).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Tensor::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.tensor)
            .ok_or_else(|| Error::config(format!("unknown parameter `{name}`")))
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Number of scalars in parameters whose name starts with `prefix`.
    pub fn count_scalars(&self, prefix: &str) -> usize {
        self.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, p)| p.tensor.numel()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, grad: &[f32]) -> Result<()> {
        let t = self.get_mut(name)?;
        if t.numel() != grad.len() {
            return Err(Error::config(format!("gradient for `{name}` has wrong length")));
        }
        t.accumulate_grad(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// SHA-256 over names, shapes and values of parameters under `prefix`.
    pub fn content_hash(&self, prefix: &str) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.iter().filter(|(n, _)| n.starts_with(prefix)) {
            h.update(name.as_bytes());
            for d in p.tensor.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.tensor.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Flattens values and Adam state (`.m`, `.v`, `.t`) into a tensor map.
    pub fn to_tensor_map(&self, out: &mut TensorMap) {
        for (name, p) in &self.params {
            let shape = p.tensor.shape();
            let mut value = p.tensor.clone();
            value.zero_grad();
            out.insert(name.clone(), value);
            out.insert(format!("{name}.m"), Tensor::new(shape, p.m.clone()).expect("moment shape"));
            out.insert(format!("{name}.v"), Tensor::new(shape, p.v.clone()).expect("moment shape"));
            out.insert(format!("{name}.t"), Tensor::scalar(p.step as f32));
        }
    }

    /// Rebuilds a store from `map`, taking every entry named in `names`.
    pub fn from_tensor_map(map: &TensorMap, names: &[String]) -> Result<Self> {
        let mut store = Self::new();
        for name in names {
            let fetch = |key: &str| {
                map.get(key).ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))
            };
            let tensor = fetch(name)?.clone();
            let m = fetch(&format!("{name}.m"))?;
            let v = fetch(&format!("{name}.v"))?;
            let t = fetch(&format!("{name}.t"))?;
            if m.shape() != tensor.shape() || v.shape() != tensor.shape() || t.numel() != 1 {
                return Err(Error::Checkpoint(format!("Adam state of `{name}` does not match its shape")));
            }
            store.params.insert(
                name.clone(),
                Parameter { m: m.data().to_vec(), v: v.data().to_vec(), step: t.item() as u64, tensor },
            );
        }
        Ok(store)
    }
}

/// One Adam update with bias correction over every parameter that holds a
/// gradient; parameters without one are left untouched. Gradients are
/// cleared afterwards.
pub fn adam_step(store: &mut ParameterStore, cfg: &AdamConfig) {
    for p in store.params.values_mut() {
        let Some(grad) = p.tensor.grad().map(<[f32]>::to_vec) else { continue };
        p.step += 1;
        let t = p.step as i32;
        let bc1 = 1.0 - (cfg.beta1 as f64).powi(t);
        let bc2 = 1.0 - (cfg.beta2 as f64).powi(t);
        let step_size = (cfg.lr as f64 / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
            data[i] -= step_size * p.m[i] / (p.v[i].sqrt() / bc2_sqrt + cfg.eps);
        }
        p.tensor.zero_grad();
    }
}
