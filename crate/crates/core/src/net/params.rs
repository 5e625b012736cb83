//! Named parameter store for the encoder-decoder and its heads.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::net::checkpoint::Checkpoint;
use crate::net::Tensor;

/// One named tensor: trainable weights or a non-trainable buffer such as
/// normalization running statistics.
#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

/// Ordered map of named parameter tensors with gradient slots.
///
/// Insertion order is the serialization order, so checkpoints and
/// optimizer state are reproducible.
#[derive(Debug, Clone, Default)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor, trainable: bool) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor: tensor.with_grad(),
            trainable,
        });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.by_name.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name).map(|&i| &self.entries[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let idx = *self.by_name.get(name)?;
        Some(&mut self.entries[idx].tensor)
    }

    /// Values of a known-present entry; panics on a missing name because
    /// that is a model-construction bug, not a runtime condition.
    pub fn values(&self, name: &str) -> &[f64] {
        self.get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"))
            .values()
    }

    /// Add `delta` into the gradient slot of `name`.
    pub fn accumulate_grad(&mut self, name: &str, delta: &[f64]) {
        let tensor = self
            .get_mut(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        let grad = tensor.grad_mut().expect("parameters always carry grads");
        assert_eq!(grad.len(), delta.len(), "gradient shape mismatch for {name}");
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamEntry> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamEntry> {
        self.entries.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.tensor.zero_grad();
        }
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        let idx = *self
            .by_name
            .get(name)
            .unwrap_or_else(|| panic!("no parameter named {name}"));
        self.entries[idx].trainable = trainable;
    }

    /// Total number of trainable scalar values.
    pub fn trainable_values(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.len())
            .sum()
    }

    /// Snapshot every entry (weights and buffers) into a checkpoint.
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            entries: self
                .entries
                .iter()
                .map(|e| (e.name.clone(), Tensor::new(e.tensor.shape().to_vec(), e.tensor.values().to_vec())))
                .collect(),
        }
    }

    /// Load checkpoint entries into matching parameters.
    ///
    /// Every checkpoint entry must exist here with the same shape;
    /// parameters absent from the checkpoint keep their current values
    /// (that is how a fresh task head survives loading a stripped
    /// backbone).
    pub fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        for (name, tensor) in &checkpoint.entries {
            let Some(idx) = self.by_name.get(name).copied() else {
                return Err(Error::PairingMismatch(format!(
                    "checkpoint entry {name} has no matching model parameter"
                )));
            };
            let dst = &mut self.entries[idx].tensor;
            if dst.shape() != tensor.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint entry {name} has shape {:?}, model expects {:?}",
                    tensor.shape(),
                    dst.shape()
                )));
            }
            dst.values_mut().copy_from_slice(tensor.values());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordered_and_unique() {
        let mut p = ModelParams::new();
        p.insert("a.w", Tensor::zeros(vec![2]), true);
        p.insert("b.w", Tensor::zeros(vec![3]), false);
        let names: Vec<_> = p.iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, vec!["a.w", "b.w"]);
        assert_eq!(p.trainable_values(), 2);
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn rejects_duplicates() {
        let mut p = ModelParams::new();
        p.insert("a", Tensor::zeros(vec![1]), true);
        p.insert("a", Tensor::zeros(vec![1]), true);
    }

    #[test]
    fn grad_accumulation() {
        let mut p = ModelParams::new();
        p.insert("a", Tensor::zeros(vec![2]), true);
        p.accumulate_grad("a", &[1.0, 2.0]);
        p.accumulate_grad("a", &[0.5, 0.5]);
        assert_eq!(p.get("a").unwrap().grad().unwrap(), &[1.5, 2.5]);
        p.zero_grads();
        assert_eq!(p.get("a").unwrap().grad().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn checkpoint_round_trip_and_partial_load() {
        let mut p = ModelParams::new();
        p.insert("backbone.w", Tensor::new(vec![2], vec![1.5, -2.5]), true);
        p.insert("head.w", Tensor::new(vec![1], vec![9.0]), true);
        let ckpt = p.to_checkpoint();

        let mut q = ModelParams::new();
        q.insert("backbone.w", Tensor::zeros(vec![2]), true);
        q.insert("head.w", Tensor::new(vec![1], vec![-1.0]), true);
        let partial = Checkpoint {
            entries: vec![ckpt.entries[0].clone()],
        };
        q.load_checkpoint(&partial).unwrap();
        assert_eq!(q.values("backbone.w"), &[1.5, -2.5]);
        assert_eq!(q.values("head.w"), &[-1.0]);
    }

    #[test]
    fn load_rejects_unknown_and_mismatched() {
        let mut p = ModelParams::new();
        p.insert("a", Tensor::zeros(vec![2]), true);
        let unknown = Checkpoint {
            entries: vec![("b".into(), Tensor::zeros(vec![2]))],
        };
        assert!(matches!(
            p.load_checkpoint(&unknown),
            Err(Error::PairingMismatch(_))
        ));
        let badshape = Checkpoint {
            entries: vec![("a".into(), Tensor::zeros(vec![3]))],
        };
        assert!(matches!(
            p.load_checkpoint(&badshape),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
