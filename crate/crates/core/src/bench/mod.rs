//! Data-efficiency protocols, segmentation metrics, confident
//! pseudo-label selection, the fine-tuning driver, and the procedural
//! synthetic world that makes everything runnable at desk scale.

mod synth;
mod train;
mod world_io;

pub use synth::{
    frame_key, generate_synthetic_world, generate_world, RenderedFrame, Scene, SurfaceBox, World,
    WorldConfig,
};
pub use train::{evaluate, finetune, label_scene, report_csv, report_text, EvalReport, TrainConfig};
pub use world_io::{
    load_world, read_camera_file, read_labels_file, scene_dir_name, scene_dirs, write_labels_file,
    write_world, FrameFiles,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{PointCloud, UNLABELED};
use crate::error::{Error, Result};
use crate::net::Tensor;
use crate::seed;

/// How much supervision a protocol reveals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LabelBudget {
    /// Labeled points per training scene.
    LimitedAnnotations(usize),
    /// Fraction of training scenes that keep their labels.
    LimitedReconstructions(f64),
}

impl LabelBudget {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LabelBudget::LimitedAnnotations(n) if n >= 1 => Ok(()),
            LabelBudget::LimitedReconstructions(f) if f > 0.0 && f <= 1.0 => Ok(()),
            _ => Err(Error::InvalidInput("label budget must be positive".into())),
        }
    }
}

/// A training or evaluation scene: fully labeled ground-truth cloud plus
/// the boolean mask of revealed labels.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub id: u64,
    pub cloud: PointCloud,
    pub mask: Vec<bool>,
}

impl SceneSample {
    /// Wrap a labeled cloud with everything revealed.
    pub fn fully_labeled(id: u64, cloud: PointCloud) -> SceneSample {
        let mask = match &cloud.hard_labels {
            Some(labels) => labels.iter().map(|&l| l != UNLABELED).collect(),
            None => vec![false; cloud.len()],
        };
        SceneSample { id, cloud, mask }
    }

    /// Revealed `(point index, class)` pairs.
    pub fn revealed(&self) -> Vec<(u32, u16)> {
        let Some(labels) = &self.cloud.hard_labels else {
            return Vec::new();
        };
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(i, _)| (i as u32, labels[i] as u16))
            .collect()
    }
}

/// Sample a limited-annotation mask: `min(budget, labeled points)`
/// distinct labeled indices, uniformly, deterministic per
/// `(scene id, seed)`.
pub fn sample_limited_annotations(scene_id: u64, cloud: &PointCloud, n_points: usize, seed_value: u64) -> Vec<bool> {
    let mut candidates: Vec<usize> = match &cloud.hard_labels {
        Some(labels) => labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != UNLABELED)
            .map(|(i, _)| i)
            .collect(),
        None => Vec::new(),
    };
    let k = n_points.min(candidates.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[0x1a, scene_id]));
    // Partial Fisher-Yates: the first k slots become the sample.
    for i in 0..k {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
    }
    let mut mask = vec![false; cloud.len()];
    for &idx in &candidates[..k] {
        mask[idx] = true;
    }
    mask
}

/// Sample a limited-reconstruction scene subset:
/// `max(1, round(fraction * n))` ids without replacement, deterministic.
pub fn sample_limited_reconstructions(scene_ids: &[u64], fraction: f64, seed_value: u64) -> Result<Vec<u64>> {
    if scene_ids.is_empty() {
        return Err(Error::EmptyInput("no scene ids to sample from"));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let k = ((fraction * scene_ids.len() as f64).round() as usize).max(1);
    let k = k.min(scene_ids.len());
    let mut pool: Vec<u64> = scene_ids.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[0x1b]));
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut chosen = pool[..k].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Select the top `ceil(fraction * n_c)` most confident predictions of
/// each argmax class. Ties in the argmax break toward the lower class;
/// confidence ties break toward the lower point index. Returns the
/// selection mask and per-point pseudo-labels (-1 where unselected).
pub fn select_confident_pseudo_labels(preds: &Tensor, fraction: f64) -> (Vec<bool>, Vec<i32>) {
    let (n, c) = preds.dims2();
    let mut by_class: Vec<Vec<(f64, usize)>> = vec![Vec::new(); c];
    for i in 0..n {
        let row = preds.row(i);
        let mut best = 0usize;
        for k in 1..c {
            if row[k] > row[best] {
                best = k;
            }
        }
        by_class[best].push((row[best], i));
    }
    let mut mask = vec![false; n];
    let mut labels = vec![UNLABELED; n];
    for (class, members) in by_class.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let take = (fraction * members.len() as f64).ceil() as usize;
        // Stable by confidence descending keeps lower indices on ties.
        members.sort_by(|a, b| b.0.total_cmp(&a.0));
        for &(_, idx) in members.iter().take(take) {
            mask[idx] = true;
            labels[idx] = class as i32;
        }
    }
    (mask, labels)
}

/// C x C ground-truth-by-prediction counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> ConfusionMatrix {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    /// Add labeled pairs; ground-truth -1 entries are skipped.
    pub fn accumulate(&mut self, gt: &[i32], pred: &[i32]) -> Result<()> {
        if gt.len() != pred.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} ground-truth labels vs {} predictions",
                gt.len(),
                pred.len()
            )));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g == UNLABELED {
                continue;
            }
            if g < 0 || g as usize >= self.classes || p < 0 || p as usize >= self.classes {
                return Err(Error::InvalidInput(format!(
                    "label pair ({g}, {p}) outside [0, {})",
                    self.classes
                )));
            }
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Merge another matrix (parallel accumulation support).
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.classes != other.classes {
            return Err(Error::ShapeMismatch(format!(
                "cannot merge {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Per-class IoU (`None` for classes absent from both ground truth and
/// prediction) and their mean over present classes.
pub fn miou(confusion: &ConfusionMatrix) -> Result<(Vec<Option<f64>>, f64)> {
    let c = confusion.classes;
    let mut per_class = vec![None; c];
    let mut sum = 0.0;
    let mut present = 0usize;
    for k in 0..c {
        let tp = confusion.count(k, k);
        let fp: u64 = (0..c).filter(|&g| g != k).map(|g| confusion.count(g, k)).sum();
        let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| confusion.count(k, p)).sum();
        let denom = tp + fp + fn_;
        if denom == 0 {
            continue;
        }
        let iou = tp as f64 / denom as f64;
        per_class[k] = Some(iou);
        sum += iou;
        present += 1;
    }
    if present == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((per_class, sum / present as f64))
}

/// Fraction of correctly predicted labeled points.
pub fn accuracy(gt: &[i32], pred: &[i32]) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} ground-truth labels vs {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    let mut correct = 0u64;
    let mut total = 0u64;
    for (&g, &p) in gt.iter().zip(pred) {
        if g == UNLABELED {
            continue;
        }
        total += 1;
        if g == p {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyInput("no labeled points to score"));
    }
    Ok(correct as f64 / total as f64)
}

/// Overall accuracy straight from a confusion matrix.
pub fn accuracy_from_confusion(confusion: &ConfusionMatrix) -> Result<f64> {
    let total = confusion.total();
    if total == 0 {
        return Err(Error::EmptyInput("no labeled points to score"));
    }
    let correct: u64 = (0..confusion.classes).map(|k| confusion.count(k, k)).sum();
    Ok(correct as f64 / total as f64)
}

/// Mean of per-shape IoUs over all shape instances.
pub fn instance_miou(shape_mious: &[f64]) -> Result<f64> {
    if shape_mious.is_empty() {
        return Err(Error::EmptyInput("no shapes to average"));
    }
    Ok(shape_mious.iter().sum::<f64>() / shape_mious.len() as f64)
}

/// Mean over categories of the mean shape IoU within each category.
pub fn category_miou(shapes: &[(usize, f64)]) -> Result<f64> {
    if shapes.is_empty() {
        return Err(Error::EmptyInput("no shapes to average"));
    }
    let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = std::collections::BTreeMap::new();
    for &(category, iou) in shapes {
        let slot = sums.entry(category).or_insert((0.0, 0));
        slot.0 += iou;
        slot.1 += 1;
    }
    let total: f64 = sums.values().map(|&(s, n)| s / n as f64).sum();
    Ok(total / sums.len() as f64)
}

/// Mean cross-entropy over revealed points, read off per-voxel
/// probabilities through the point-to-voxel map (nearest devoxelization
/// of the loss). Returns the loss and its gradient with respect to the
/// voxel probabilities.
pub fn point_cross_entropy(
    probs: &Tensor,
    point_to_voxel: &[u32],
    revealed: &[(u32, u16)],
) -> Result<(f64, Tensor)> {
    use crate::distill::PROB_CLAMP;
    let (m, c) = probs.dims2();
    if revealed.is_empty() {
        return Err(Error::Protocol("no labeled points in batch".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0f64; m * c];
    let scale = 1.0 / revealed.len() as f64;
    for &(point, class) in revealed {
        let point = point as usize;
        if point >= point_to_voxel.len() {
            return Err(Error::InvalidInput(format!(
                "revealed point {point} outside cloud of {}",
                point_to_voxel.len()
            )));
        }
        let class = class as usize;
        if class >= c {
            return Err(Error::InvalidInput(format!(
                "label {class} outside [0, {c})"
            )));
        }
        let voxel = point_to_voxel[point] as usize;
        let p = probs.values()[voxel * c + class];
        loss -= p.max(PROB_CLAMP).ln() * scale;
        if p >= PROB_CLAMP {
            grad[voxel * c + class] -= scale / p;
        }
    }
    Ok((loss, Tensor::new(vec![m, c], grad)))
}

/// Argmax class per row, ties toward the lower class index.
pub fn argmax_rows(probs: &Tensor) -> Vec<i32> {
    let (n, c) = probs.dims2();
    (0..n)
        .map(|i| {
            let row = probs.row(i);
            let mut best = 0usize;
            for k in 1..c {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best as i32
        })
        .collect()
}
