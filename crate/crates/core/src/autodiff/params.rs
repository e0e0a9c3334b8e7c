use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use super::{Tape, Tensor, BN_MOMENTUM};
use crate::error::{Error, Result};

/// A named tensor with its gradient slot and Adam moments. Buffers (batch
/// norm running statistics) are stored the same way with `trainable` unset.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub trainable: bool,
}

impl Param {
    fn new(value: Tensor, trainable: bool) -> Self {
        let n = value.len();
        Self { value, grad: None, m: vec![0.0; n], v: vec![0.0; n], step: 0, trainable }
    }
}

/// Named parameters of one network, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, Param::new(value, true))
    }

    pub fn insert_buffer(&mut self, name: &str, value: Tensor) -> Result<()> {
        self.insert(name, Param::new(value, false))
    }

    pub(crate) fn insert(&mut self, name: &str, param: Param) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidInput(format!("duplicate parameter name {name}")));
        }
        self.entries.insert(name.to_string(), param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.entries.get(name).ok_or_else(|| Error::InvalidState(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        self.entries.get_mut(name).ok_or_else(|| Error::InvalidState(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_weights(&self) -> usize {
        self.entries.values().filter(|p| p.trainable).map(|p| p.value.len()).sum()
    }

    /// Adds the gradients of every tracked parameter on `tape` to the
    /// matching entries. Call after [`Tape::backward`].
    pub fn accumulate_grads(&mut self, tape: &Tape) -> Result<()> {
        for (name, var) in tape.tracked_params() {
            let Some(g) = tape.grad(*var) else { continue };
            let Some(p) = self.entries.get_mut(name) else { continue };
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }
        Ok(())
    }

    /// Drops every entry whose name fails `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.entries.retain(|name, _| keep(name));
    }

    pub fn zero_grads(&mut self) {
        self.entries.values_mut().for_each(|p| p.grad = None);
    }

    /// Folds the batch statistics recorded on `tape` into the running
    /// averages `<name>.running_mean` / `<name>.running_var`.
    pub fn absorb_bn_stats(&mut self, tape: &Tape) -> Result<()> {
        for (name, mean, var) in tape.bn_stats() {
            for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
                let Some(buf) = self.entries.get_mut(&format!("{name}.{suffix}")) else { continue };
                for (r, b) in buf.value.data_mut().iter_mut().zip(batch) {
                    *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
                }
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and values of parameters and buffers.
    /// Optimizer state is not included.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in &self.entries {
            h.update((name.len() as u64).to_le_bytes());
            h.update(name.as_bytes());
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64) -> Self {
        Self { lr, beta1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput(format!("invalid Adam configuration {self:?}")));
        }
        Ok(())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update of every trainable parameter; gradients
/// are cleared afterwards.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    cfg.validate()?;
    if let Some((name, _)) = store.entries.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
        return Err(Error::InvalidState(format!("parameter {name} has no gradient")));
    }
    for p in store.entries.values_mut().filter(|p| p.trainable) {
        let g = p.grad.take().expect("checked above");
        p.step += 1;
        let t = p.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        let w = p.value.data_mut();
        for i in 0..w.len() {
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = p.m[i] / c1;
            let v_hat = p.v[i] / c2;
            w[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
