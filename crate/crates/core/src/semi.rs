//! Semi-supervised objectives: entropy minimization, mean-teacher EMA,
//! consistency regularization, the sigmoid ramp-up schedule, and the
//! combined training step.

use crate::bench::point_cross_entropy;
use crate::cloud::SparseVoxelGrid;
use crate::distill::PROB_CLAMP;
use crate::error::{Error, Result};
use crate::net::optim::Optimizer;
use crate::net::{Mode, SparseUnet, Tensor};

/// Downstream task family; picks the default loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification,
    Segmentation,
}

/// Semi-supervised configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiConfig {
    /// Weight of the entropy-minimization loss on unlabeled data.
    pub entropy_weight: f64,
    /// Weight of the mean-teacher consistency loss (before ramp-up).
    pub consistency_weight: f64,
    /// EMA smoothing for the teacher parameters.
    pub ema_alpha: f64,
    /// Epochs over which the consistency weight ramps up.
    pub rampup_epochs: usize,
    pub task: TaskKind,
}

impl SemiConfig {
    /// Defaults per task: entropy 0.01 for classification, 0.25 for
    /// segmentation; consistency 10; EMA 0.999; 30-epoch ramp-up.
    pub fn for_task(task: TaskKind) -> SemiConfig {
        SemiConfig {
            entropy_weight: match task {
                TaskKind::Classification => 0.01,
                TaskKind::Segmentation => 0.25,
            },
            consistency_weight: 10.0,
            ema_alpha: 0.999,
            rampup_epochs: 30,
            task,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entropy_weight < 0.0 || self.consistency_weight < 0.0 {
            return Err(Error::InvalidInput("loss weights must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::InvalidInput("EMA alpha must be in [0, 1]".into()));
        }
        Ok(())
    }
}

impl Default for SemiConfig {
    fn default() -> Self {
        SemiConfig::for_task(TaskKind::Segmentation)
    }
}

/// Student model plus its exponential-moving-average teacher.
#[derive(Debug, Clone)]
pub struct TeacherStudentPair {
    pub student: SparseUnet,
    pub teacher: SparseUnet,
}

impl TeacherStudentPair {
    /// The teacher starts as an exact copy of the student.
    pub fn new(student: SparseUnet) -> TeacherStudentPair {
        let teacher = student.clone();
        TeacherStudentPair { student, teacher }
    }
}

/// Mean per-row entropy: `(1/N) * sum_i sum_c -p[i,c] * ln(p[i,c])`,
/// with the convention `0 * ln 0 = 0`.
pub fn entropy_loss(probs: &Tensor) -> Result<f64> {
    let (n, c) = probs.dims2();
    if n == 0 {
        return Err(Error::EmptyInput("entropy needs at least one row"));
    }
    for row in 0..n {
        let sum: f64 = probs.row(row).iter().sum();
        if (sum - 1.0).abs() > 1e-5 || probs.row(row).iter().any(|&p| p < -1e-12) {
            return Err(Error::InvalidInput(format!(
                "entropy input row {row} is not a distribution (sum {sum})"
            )));
        }
    }
    let _ = c;
    let mut total = 0.0;
    for &p in probs.values() {
        if p > 0.0 {
            total -= p * p.ln();
        }
    }
    Ok(total / n as f64)
}

/// Gradient of [`entropy_loss`] with respect to the probabilities.
pub fn entropy_loss_grad(probs: &Tensor) -> Tensor {
    let (n, _) = probs.dims2();
    let scale = 1.0 / n as f64;
    let values = probs
        .values()
        .iter()
        .map(|&p| -(p.max(PROB_CLAMP).ln() + 1.0) * scale)
        .collect();
    Tensor::new(probs.shape().to_vec(), values)
}

/// EMA update of the teacher toward the student:
/// `teacher = alpha * teacher + (1 - alpha) * student`, elementwise over
/// every named entry (weights and normalization buffers alike). The
/// student is untouched.
pub fn ema_update(pair: &mut TeacherStudentPair, alpha: f64) -> Result<()> {
    let student = pair.student.params();
    let teacher = pair.teacher.params_mut();
    if student.len() != teacher.len() {
        return Err(Error::PairingMismatch(format!(
            "student has {} entries, teacher has {}",
            student.len(),
            teacher.len()
        )));
    }
    for (s, t) in student.iter().zip(teacher.iter_mut()) {
        if s.name != t.name {
            return Err(Error::PairingMismatch(format!(
                "entry order differs: {} vs {}",
                s.name, t.name
            )));
        }
        if s.tensor.shape() != t.tensor.shape() {
            return Err(Error::ShapeMismatch(format!(
                "entry {} has shape {:?} vs {:?}",
                s.name,
                s.tensor.shape(),
                t.tensor.shape()
            )));
        }
        for (tv, sv) in t.tensor.values_mut().iter_mut().zip(s.tensor.values()) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}

/// Mean squared error between prediction rows:
/// `(1/N) * sum_i ||student_i - teacher_i||^2`. Gradients flow to the
/// student argument only; the teacher is a constant.
pub fn consistency_loss(student: &Tensor, teacher: &Tensor) -> Result<f64> {
    if student.shape() != teacher.shape() {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}",
            student.shape(),
            teacher.shape()
        )));
    }
    let (n, _) = student.dims2();
    let total: f64 = student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(s, t)| (s - t) * (s - t))
        .sum();
    Ok(total / n as f64)
}

/// Gradient of [`consistency_loss`] with respect to the student.
pub fn consistency_loss_grad(student: &Tensor, teacher: &Tensor) -> Tensor {
    let (n, _) = student.dims2();
    let scale = 2.0 / n as f64;
    let values = student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(s, t)| scale * (s - t))
        .collect();
    Tensor::new(student.shape().to_vec(), values)
}

/// Sigmoid-shaped ramp-up factor `exp(-5 * (1 - x)^2)` with
/// `x = min(epoch / rampup_epochs, 1)`. Zero ramp-up epochs mean 1.
pub fn rampup_weight(epoch: usize, rampup_epochs: usize) -> f64 {
    if rampup_epochs == 0 {
        return 1.0;
    }
    let x = (epoch as f64 / rampup_epochs as f64).min(1.0);
    (-5.0 * (1.0 - x) * (1.0 - x)).exp()
}

/// Labeled side of a semi-supervised step: a voxel grid plus the
/// revealed `(point index, class)` supervision.
pub struct LabeledBatch<'a> {
    pub grid: &'a SparseVoxelGrid,
    pub revealed: &'a [(u32, u16)],
}

/// Unlabeled side: just a grid.
pub struct UnlabeledBatch<'a> {
    pub grid: &'a SparseVoxelGrid,
}

/// Loss terms of one combined step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemiStepLosses {
    pub supervised: f64,
    pub entropy: f64,
    pub consistency: f64,
    pub total: f64,
}

/// One semi-supervised optimizer step.
///
/// Total loss: supervised cross-entropy on the labeled batch plus
/// `entropy_weight * entropy` and
/// `consistency_weight * rampup * consistency` on the unlabeled batch,
/// where the consistency target is the EMA teacher's eval-mode
/// prediction. After the student steps, the teacher EMA updates.
pub fn semi_train_step(
    pair: &mut TeacherStudentPair,
    optimizer: &mut Optimizer,
    labeled: &LabeledBatch<'_>,
    unlabeled: &UnlabeledBatch<'_>,
    config: &SemiConfig,
    epoch: usize,
    lr: f64,
) -> Result<SemiStepLosses> {
    config.validate()?;
    if labeled.revealed.is_empty() {
        return Err(Error::Protocol(
            "semi-supervised step needs at least one labeled point".into(),
        ));
    }

    pair.student.zero_grads();

    // Supervised term on the labeled grid.
    let probs_labeled = pair.student.forward_segment(labeled.grid, Mode::Train)?;
    let (supervised, mut d_probs) = point_cross_entropy(
        &probs_labeled,
        &labeled.grid.point_to_voxel,
        labeled.revealed,
    )?;
    pair.student.backward(&d_probs)?;

    // Unlabeled terms share one student forward.
    let probs_unlabeled = pair.student.forward_segment(unlabeled.grid, Mode::Train)?;
    let entropy = entropy_loss(&probs_unlabeled)?;
    let teacher_probs = pair.teacher.forward_segment(unlabeled.grid, Mode::Eval)?;
    let consistency = consistency_loss(&probs_unlabeled, &teacher_probs)?;

    let ramp = rampup_weight(epoch, config.rampup_epochs);
    let consistency_scale = config.consistency_weight * ramp;
    d_probs = entropy_loss_grad(&probs_unlabeled);
    {
        let cons_grad = consistency_loss_grad(&probs_unlabeled, &teacher_probs);
        for (g, cg) in d_probs.values_mut().iter_mut().zip(cons_grad.values()) {
            *g = config.entropy_weight * *g + consistency_scale * cg;
        }
    }
    pair.student.backward(&d_probs)?;

    optimizer.step(pair.student.params_mut(), lr)?;
    ema_update(pair, config.ema_alpha)?;

    let total = supervised + config.entropy_weight * entropy + consistency_scale * consistency;
    Ok(SemiStepLosses {
        supervised,
        entropy,
        consistency,
        total,
    })
}
