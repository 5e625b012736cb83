//! Gradient verification against central finite differences.

use crate::cloud::SparseVoxelGrid;
use crate::error::{Error, Result};
use crate::net::{Mode, SparseUnet, Tensor};

/// A differentiable scalar loss over model output probabilities.
///
/// `value` is the independent oracle side (pure evaluations drive the
/// finite differences); `grad` feeds the analytic backward pass.
pub trait ProbLoss {
    fn value(&self, probs: &Tensor) -> f64;
    fn grad(&self, probs: &Tensor) -> Tensor;
}

/// Loss built from a pair of closures.
pub struct FnProbLoss<V, G>
where
    V: Fn(&Tensor) -> f64,
    G: Fn(&Tensor) -> Tensor,
{
    pub value_fn: V,
    pub grad_fn: G,
}

impl<V, G> ProbLoss for FnProbLoss<V, G>
where
    V: Fn(&Tensor) -> f64,
    G: Fn(&Tensor) -> Tensor,
{
    fn value(&self, probs: &Tensor) -> f64 {
        (self.value_fn)(probs)
    }

    fn grad(&self, probs: &Tensor) -> Tensor {
        (self.grad_fn)(probs)
    }
}

/// Which forward path to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardPath {
    Segment,
    Pretrain,
    Classify,
}

fn run_forward(model: &mut SparseUnet, grid: &SparseVoxelGrid, path: ForwardPath, mode: Mode) -> Result<Tensor> {
    match path {
        ForwardPath::Segment => model.forward_segment(grid, mode),
        ForwardPath::Pretrain => model.forward_pretrain(grid, mode),
        ForwardPath::Classify => model.forward_classify(grid, mode),
    }
}

/// Maximum parameter count accepted by [`check_gradients`]; central
/// differences need two forwards per scalar.
pub const MAX_CHECKED_PARAMS: usize = 5000;

/// Compare analytic gradients with central finite differences.
///
/// Returns the maximum over trainable parameters of
/// `|g_analytic - g_fd| / max(1e-8, |g_analytic| + |g_fd|)`. A model
/// with no trainable parameters vacuously scores 0.
pub fn check_gradients(
    model: &mut SparseUnet,
    grid: &SparseVoxelGrid,
    path: ForwardPath,
    loss: &dyn ProbLoss,
    eps: f64,
) -> Result<f64> {
    let n_params = model.params().trainable_values();
    if n_params > MAX_CHECKED_PARAMS {
        return Err(Error::InvalidInput(format!(
            "gradient check is limited to {MAX_CHECKED_PARAMS} parameters, model has {n_params}"
        )));
    }

    model.zero_grads();
    let probs = run_forward(model, grid, path, Mode::Frozen)?;
    let grad_probs = loss.grad(&probs);
    model.backward(&grad_probs)?;
    let analytic: Vec<(String, Vec<f64>)> = model
        .params()
        .iter()
        .filter(|e| e.trainable)
        .map(|e| (e.name.clone(), e.tensor.grad().unwrap().to_vec()))
        .collect();

    let mut max_rel = 0.0f64;
    for (name, grads) in &analytic {
        for i in 0..grads.len() {
            let original = model.params().get(name).unwrap().values()[i];

            model.params_mut().get_mut(name).unwrap().values_mut()[i] = original + eps;
            let plus = loss.value(&run_forward(model, grid, path, Mode::Frozen)?);
            model.params_mut().get_mut(name).unwrap().values_mut()[i] = original - eps;
            let minus = loss.value(&run_forward(model, grid, path, Mode::Frozen)?);
            model.params_mut().get_mut(name).unwrap().values_mut()[i] = original;

            let fd = (plus - minus) / (2.0 * eps);
            let analytic_g = grads[i];
            let rel = (analytic_g - fd).abs() / (analytic_g.abs() + fd.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    // Clear the tape left by the last FD forward.
    model.zero_grads();
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Heads, NetConfig};

    #[test]
    fn zero_trainable_parameters_score_zero() {
        let cfg = NetConfig {
            levels: 1,
            base_channels: 2,
            teacher_classes: 2,
            task_classes: 2,
        };
        let mut model = SparseUnet::new(cfg, Heads::segmentation(), 0).unwrap();
        let names: Vec<String> = model.params().iter().map(|e| e.name.clone()).collect();
        for n in &names {
            model.params_mut().set_trainable(n, false);
        }
        let grid = crate::net::tests::toy_grid(5, 0);
        let loss = FnProbLoss {
            value_fn: |p: &Tensor| p.values().iter().sum(),
            grad_fn: |p: &Tensor| Tensor::filled(p.shape().to_vec(), 1.0),
        };
        let err = check_gradients(&mut model, &grid, ForwardPath::Segment, &loss, 1e-5).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn rejects_oversized_models() {
        let cfg = NetConfig {
            levels: 3,
            base_channels: 16,
            teacher_classes: 8,
            task_classes: 8,
        };
        let mut model = SparseUnet::new(cfg, Heads::segmentation(), 0).unwrap();
        let grid = crate::net::tests::toy_grid(5, 0);
        let loss = FnProbLoss {
            value_fn: |p: &Tensor| p.values().iter().sum(),
            grad_fn: |p: &Tensor| Tensor::filled(p.shape().to_vec(), 1.0),
        };
        assert!(matches!(
            check_gradients(&mut model, &grid, ForwardPath::Segment, &loss, 1e-5),
            Err(Error::InvalidInput(_))
        ));
    }
}
