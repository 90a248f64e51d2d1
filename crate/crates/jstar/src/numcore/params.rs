//! Named parameter storage shared by the optimizer and checkpointing.

use std::collections::HashMap;

use super::tensor::Tensor;
use super::{NumError, Result};

pub type ParamId = usize;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Accumulated gradient; `None` until a backward pass touches it.
    pub grad: Option<Vec<f32>>,
}

/// Ordered collection of named parameter tensors. Registration order is the
/// iteration order everywhere (optimizer, checkpoints, clipping), which keeps
/// training bit-reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    index: HashMap<String, ParamId>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        let id = self.entries.len();
        self.index.insert(name.clone(), id);
        self.entries.push(ParamEntry { name, value, grad: None });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id].value
    }

    pub fn grad(&self, id: ParamId) -> Option<&[f32]> {
        self.entries[id].grad.as_deref()
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &[f32]) {
        let entry = &mut self.entries[id];
        let buf = entry.grad.get_or_insert_with(|| vec![0.0; entry.value.numel()]);
        for (dst, &src) in buf.iter_mut().zip(g) {
            *dst += src;
        }
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad = None;
        }
    }

    /// Global L2 norm over all gradients. Errors if any gradient is missing.
    pub fn grad_norm(&self) -> Result<f64> {
        let mut s = 0.0f64;
        for e in &self.entries {
            let g = e.grad.as_ref().ok_or_else(|| NumError::MissingGrad(e.name.clone()))?;
            for &v in g {
                s += v as f64 * v as f64;
            }
        }
        Ok(s.sqrt())
    }

    /// Scale all gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f32) -> Result<f64> {
        let norm = self.grad_norm()?;
        if norm > max_norm as f64 {
            let scale = (max_norm as f64 / norm) as f32;
            for e in &mut self.entries {
                for v in e.grad.as_mut().unwrap() {
                    *v *= scale;
                }
            }
        }
        Ok(norm)
    }
}
