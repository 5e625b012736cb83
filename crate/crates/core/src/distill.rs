//! Pre-training by distilling a 2D scene parser into the 3D network.
//!
//! A [`Teacher`] turns an RGB frame into per-pixel soft label
//! distributions. Lifted frames carry those distributions onto points,
//! voxelization aggregates them into per-voxel targets, and the network
//! minimizes the soft cross-entropy against them. Afterwards the
//! pre-training head is stripped and only the backbone moves on to
//! downstream tasks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::{augment, read_slab, voxelize, AugmentParams, PointCloud, SoftLabels, SparseVoxelGrid};
use crate::error::{Error, Result};
use crate::geom::{lift, RgbdFrame};
use crate::net::optim::{poly_lr, Optimizer, OptimizerKind, DEFAULT_POLY_POWER};
use crate::net::{Checkpoint, Mode, SparseUnet, Tensor, PRETRAIN_HEAD_PREFIX};
use crate::seed;

/// Per-pixel soft label distributions for one frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelMap {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub probs: Vec<f64>,
}

impl SoftLabelMap {
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.probs[idx * self.classes..(idx + 1) * self.classes]
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Everything a teacher may look at for one frame.
///
/// `gt_labels` feeds the synthetic oracle; `key` is a stable frame
/// identifier (e.g. `scene_003/frame_1`) used for file lookup and for
/// deterministic per-frame noise.
pub struct TeacherInput<'a> {
    pub rgb: &'a [[f64; 3]],
    pub width: usize,
    pub height: usize,
    pub gt_labels: Option<&'a [u16]>,
    pub key: &'a str,
}

impl<'a> TeacherInput<'a> {
    pub fn from_frame(frame: &'a RgbdFrame, key: &'a str, gt_labels: Option<&'a [u16]>) -> Self {
        TeacherInput {
            rgb: &frame.rgb,
            width: frame.width(),
            height: frame.height(),
            gt_labels,
            key,
        }
    }
}

/// A frame-synchronous, stateless 2D scene parser.
pub trait Teacher {
    fn classes(&self) -> usize;
    fn infer(&self, input: &TeacherInput<'_>) -> Result<SoftLabelMap>;
}

/// Label-image pixels with no surface (invalid depth) use this value;
/// the teacher emits a uniform distribution there and lifting drops them.
pub const NO_LABEL: u16 = u16::MAX;

/// Teacher that reads ground-truth label images and emits softened,
/// optionally corrupted distributions.
///
/// Per pixel: with probability `noise_rate` the label is resampled
/// uniformly; the (possibly corrupted) one-hot is softened with
/// temperature `tau` (softmax of `one_hot / tau`; `tau = 0` keeps the
/// exact one-hot); finally an optional spatial Gaussian blur mixes
/// neighboring distributions.
#[derive(Debug, Clone)]
pub struct SyntheticOracleTeacher {
    pub classes: usize,
    pub noise_rate: f64,
    pub temperature: f64,
    pub blur_sigma: f64,
    pub seed: u64,
}

impl SyntheticOracleTeacher {
    pub fn new(classes: usize, noise_rate: f64, temperature: f64) -> Self {
        SyntheticOracleTeacher {
            classes,
            noise_rate,
            temperature,
            blur_sigma: 0.0,
            seed: 0,
        }
    }

    pub fn with_blur(mut self, sigma: f64) -> Self {
        self.blur_sigma = sigma;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Softened one-hot row: `exp(1/tau) / (exp(1/tau) + (C-1))` at the
    /// labeled class, `1 / (exp(1/tau) + (C-1))` elsewhere.
    fn soft_row(&self, label: usize) -> Vec<f64> {
        let c = self.classes;
        let mut row = vec![0.0; c];
        if self.temperature <= 0.0 {
            row[label] = 1.0;
            return row;
        }
        let hot = (1.0 / self.temperature).exp();
        let denom = hot + (c - 1) as f64;
        for (k, v) in row.iter_mut().enumerate() {
            *v = if k == label { hot / denom } else { 1.0 / denom };
        }
        row
    }
}

impl Teacher for SyntheticOracleTeacher {
    fn classes(&self) -> usize {
        self.classes
    }

    fn infer(&self, input: &TeacherInput<'_>) -> Result<SoftLabelMap> {
        let Some(gt) = input.gt_labels else {
            return Err(Error::InvalidInput(
                "the oracle teacher needs ground-truth label images".into(),
            ));
        };
        let pixels = input.width * input.height;
        if gt.len() != pixels {
            return Err(Error::ShapeMismatch(format!(
                "label image has {} entries for {} pixels",
                gt.len(),
                pixels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[seed::hash_tag(input.key)]));
        let uniform = vec![1.0 / self.classes as f64; self.classes];
        let mut probs = Vec::with_capacity(pixels * self.classes);
        for &raw in gt {
            if raw == NO_LABEL {
                probs.extend_from_slice(&uniform);
                continue;
            }
            let mut label = raw as usize;
            if label >= self.classes {
                return Err(Error::InvalidInput(format!(
                    "label {label} out of range for {} classes",
                    self.classes
                )));
            }
            if self.noise_rate > 0.0 && rng.random_range(0.0..1.0) < self.noise_rate {
                label = rng.random_range(0..self.classes);
            }
            probs.extend_from_slice(&self.soft_row(label));
        }
        let mut map = SoftLabelMap {
            width: input.width,
            height: input.height,
            classes: self.classes,
            probs,
        };
        if self.blur_sigma > 0.0 {
            blur_map(&mut map, self.blur_sigma);
        }
        Ok(map)
    }
}

/// Separable Gaussian blur over the class planes; the kernel is
/// renormalized at the borders so rows stay distributions.
fn blur_map(map: &mut SoftLabelMap, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let (w, h, c) = (map.width as i64, map.height as i64, map.classes);

    let pass = |horizontal: bool, src: &[f64]| -> Vec<f64> {
        let mut dst = vec![0.0f64; src.len()];
        for row in 0..h {
            for col in 0..w {
                let mut acc = vec![0.0f64; c];
                let mut weight = 0.0;
                for (ki, kval) in kernel.iter().enumerate() {
                    let offset = ki as i64 - radius;
                    let (r, cl) = if horizontal {
                        (row, col + offset)
                    } else {
                        (row + offset, col)
                    };
                    if r < 0 || cl < 0 || r >= h || cl >= w {
                        continue;
                    }
                    let base = ((r * w + cl) as usize) * c;
                    for ch in 0..c {
                        acc[ch] += kval * src[base + ch];
                    }
                    weight += kval;
                }
                let base = ((row * w + col) as usize) * c;
                for ch in 0..c {
                    dst[base + ch] = acc[ch] / weight;
                }
            }
        }
        dst
    };

    let horizontal = pass(true, &map.probs);
    map.probs = pass(false, &horizontal);
}

/// Teacher backed by precomputed SLAB files: `<dir>/<key>.slab`.
#[derive(Debug, Clone)]
pub struct FileTeacher {
    pub dir: PathBuf,
    pub classes: usize,
}

impl FileTeacher {
    pub fn new(dir: &Path, classes: usize) -> Self {
        FileTeacher {
            dir: dir.to_path_buf(),
            classes,
        }
    }
}

impl Teacher for FileTeacher {
    fn classes(&self) -> usize {
        self.classes
    }

    fn infer(&self, input: &TeacherInput<'_>) -> Result<SoftLabelMap> {
        let path = self.dir.join(format!("{}.slab", input.key));
        let (rows, classes, probs) = read_slab(&mut std::fs::File::open(&path)?)?;
        if rows != input.width * input.height || classes != self.classes {
            return Err(Error::ShapeMismatch(format!(
                "{} holds {rows}x{classes}, frame needs {}x{}",
                path.display(),
                input.width * input.height,
                self.classes
            )));
        }
        Ok(SoftLabelMap {
            width: input.width,
            height: input.height,
            classes,
            probs,
        })
    }
}

/// Run the teacher on one frame and validate that every pixel is a
/// nonnegative distribution summing to one.
pub fn generate_pseudo_labels(teacher: &dyn Teacher, input: &TeacherInput<'_>) -> Result<SoftLabelMap> {
    let map = teacher.infer(input)?;
    if map.width != input.width || map.height != input.height || map.classes != teacher.classes() {
        return Err(Error::ShapeMismatch(format!(
            "teacher produced {}x{}x{}, expected {}x{}x{}",
            map.width,
            map.height,
            map.classes,
            input.width,
            input.height,
            teacher.classes()
        )));
    }
    for px in 0..map.pixels() {
        let row = map.pixel(px);
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-5 || row.iter().any(|&p| p < -1e-12) {
            return Err(Error::InvalidTeacher { pixel: px, sum });
        }
    }
    Ok(map)
}

/// A voxelized pre-training sample: the grid plus per-voxel soft targets.
#[derive(Debug, Clone)]
pub struct PretrainSample {
    pub grid: SparseVoxelGrid,
    pub targets: Tensor,
}

/// Attach per-pixel soft labels to a lifted cloud via provenance.
pub fn attach_soft_labels(cloud: &mut PointCloud, labels: &SoftLabelMap) -> Result<()> {
    let Some(provenance) = &cloud.provenance else {
        return Err(Error::InvalidInput(
            "cloud has no pixel provenance to look labels up by".into(),
        ));
    };
    let mut values = Vec::with_capacity(cloud.len() * labels.classes);
    for &px in provenance {
        values.extend_from_slice(labels.pixel(px as usize));
    }
    cloud.soft_labels = Some(SoftLabels::new(labels.classes, values));
    Ok(())
}

/// Per-voxel soft targets: the renormalized mean of the member points'
/// distributions.
pub fn voxel_soft_targets(cloud: &PointCloud, grid: &SparseVoxelGrid) -> Result<Tensor> {
    let Some(soft) = &cloud.soft_labels else {
        return Err(Error::InvalidInput("cloud has no soft labels".into()));
    };
    if cloud.len() != grid.num_points() {
        return Err(Error::ShapeMismatch(format!(
            "cloud has {} points, grid was built from {}",
            cloud.len(),
            grid.num_points()
        )));
    }
    let c = soft.classes;
    let m = grid.num_voxels();
    let mut sums = vec![0.0f64; m * c];
    let mut counts = vec![0u32; m];
    for (i, &row) in grid.point_to_voxel.iter().enumerate() {
        let v = row as usize;
        counts[v] += 1;
        for (ch, &p) in soft.row(i).iter().enumerate() {
            sums[v * c + ch] += p;
        }
    }
    for v in 0..m {
        let total: f64 = sums[v * c..(v + 1) * c].iter().sum();
        debug_assert!(counts[v] > 0);
        if total > 0.0 {
            for ch in 0..c {
                sums[v * c + ch] /= total;
            }
        }
    }
    Ok(Tensor::new(vec![m, c], sums))
}

/// Lift a frame, attach its pseudo-labels, and voxelize.
pub fn build_pretrain_sample(frame: &RgbdFrame, labels: &SoftLabelMap, resolution: usize) -> Result<PretrainSample> {
    if labels.width != frame.width() || labels.height != frame.height() {
        return Err(Error::ShapeMismatch(format!(
            "label map is {}x{}, frame is {}x{}",
            labels.width,
            labels.height,
            frame.width(),
            frame.height()
        )));
    }
    let mut cloud = lift(frame)?;
    if cloud.is_empty() {
        return Err(Error::EmptySample);
    }
    attach_soft_labels(&mut cloud, labels)?;
    let grid = voxelize(&cloud, resolution)?;
    let targets = voxel_soft_targets(&cloud, &grid)?;
    Ok(PretrainSample { grid, targets })
}

/// Mean soft cross-entropy between predicted and target distributions:
/// `(1/N) * sum_i sum_c -t[i,c] * ln(max(p[i,c], 1e-12))`.
pub fn soft_cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let (n, _) = pred.dims2();
    let mut total = 0.0;
    for (p, t) in pred.values().iter().zip(target.values()) {
        if *t != 0.0 {
            total -= t * p.max(PROB_CLAMP).ln();
        }
    }
    Ok(total / n as f64)
}

/// Probability clamp inside logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Gradient of [`soft_cross_entropy`] with respect to the predictions.
pub fn soft_cross_entropy_grad(pred: &Tensor, target: &Tensor) -> Tensor {
    let (n, _) = pred.dims2();
    let scale = 1.0 / n as f64;
    let values = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(&p, &t)| if p < PROB_CLAMP { 0.0 } else { -t / p * scale })
        .collect();
    Tensor::new(pred.shape().to_vec(), values)
}

/// Pre-training hyperparameters.
#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub resolution: usize,
    pub augment: Option<AugmentParams>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            optimizer: OptimizerKind::Sgd,
            lr: OptimizerKind::Sgd.default_lr(),
            batch_size: 1,
            resolution: 64,
            augment: Some(AugmentParams::default()),
            seed: 0,
        }
    }
}

/// Minimize the soft cross-entropy of the pre-training head over a
/// dataset of lifted, soft-labeled clouds.
///
/// Each epoch shuffles the dataset, re-augments every cloud, voxelizes,
/// and steps the optimizer under the polynomial schedule. Returns the
/// final checkpoint and the mean loss per epoch.
pub fn pretrain(
    model: &mut SparseUnet,
    dataset: &[PointCloud],
    config: &PretrainConfig,
) -> Result<(Checkpoint, Vec<f64>)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput("pre-training needs at least one sample"));
    }
    for (i, cloud) in dataset.iter().enumerate() {
        let Some(soft) = &cloud.soft_labels else {
            return Err(Error::InvalidInput(format!("dataset cloud {i} has no soft labels")));
        };
        if soft.classes != model.config().teacher_classes {
            return Err(Error::ShapeMismatch(format!(
                "cloud {i} has {} teacher classes, model expects {}",
                soft.classes,
                model.config().teacher_classes
            )));
        }
        if cloud.is_empty() {
            return Err(Error::EmptyInput("pre-training sample is empty"));
        }
    }

    let batch = config.batch_size.max(1);
    let steps_per_epoch = dataset.len().div_ceil(batch);
    let total_steps = config.epochs * steps_per_epoch;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut step = 0usize;
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let order = shuffled_indices(dataset.len(), seed::derive(config.seed, &[0x9a9a, epoch as u64]));
        let mut epoch_loss = 0.0;
        for (group_idx, group) in order.chunks(batch).enumerate() {
            model.zero_grads();
            let mut group_loss = 0.0;
            for (k, &sample_idx) in group.iter().enumerate() {
                let cloud = &dataset[sample_idx];
                let augmented;
                let cloud = if let Some(base) = &config.augment {
                    let params = base.clone().with_seed(seed::derive(
                        config.seed,
                        &[0xa6a6, epoch as u64, sample_idx as u64],
                    ));
                    augmented = augment(cloud, &params);
                    &augmented
                } else {
                    cloud
                };
                let grid = voxelize(cloud, config.resolution)?;
                let targets = voxel_soft_targets(cloud, &grid)?;
                let probs = model.forward_pretrain(&grid, Mode::Train)?;
                let loss = soft_cross_entropy(&probs, &targets)?;
                if !loss.is_finite() {
                    return Err(Error::DivergentLoss {
                        epoch,
                        step: group_idx * batch + k,
                        loss,
                    });
                }
                group_loss += loss;
                let mut grad = soft_cross_entropy_grad(&probs, &targets);
                if group.len() > 1 {
                    let inv = 1.0 / group.len() as f64;
                    for g in grad.values_mut() {
                        *g *= inv;
                    }
                }
                model.backward(&grad)?;
            }
            epoch_loss += group_loss;
            let lr = poly_lr(step, total_steps, config.lr, DEFAULT_POLY_POWER);
            optimizer.step(model.params_mut(), lr)?;
            step += 1;
        }
        epoch_losses.push(epoch_loss / dataset.len() as f64);
    }

    Ok((model.to_checkpoint(), epoch_losses))
}

/// Deterministic Fisher-Yates shuffle of `0..n`.
pub fn shuffled_indices(n: usize, seed_value: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_value);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    order
}

/// Drop the pre-training head from a checkpoint, leaving the backbone
/// bit-identical.
pub fn strip_pretrain_head(checkpoint: &Checkpoint) -> Result<Checkpoint> {
    let kept: Vec<_> = checkpoint
        .entries
        .iter()
        .filter(|(name, _)| !name.starts_with(PRETRAIN_HEAD_PREFIX))
        .cloned()
        .collect();
    if kept.len() == checkpoint.entries.len() {
        return Err(Error::NotAPretrainCheckpoint);
    }
    Ok(Checkpoint { entries: kept })
}

/// Summed per-class probability over every pixel of a dataset.
pub fn pseudo_label_histogram(maps: &[SoftLabelMap]) -> Result<Vec<f64>> {
    let Some(first) = maps.first() else {
        return Err(Error::EmptyInput("histogram needs at least one label map"));
    };
    let classes = first.classes;
    let mut sums = vec![0.0f64; classes];
    for map in maps {
        if map.classes != classes {
            return Err(Error::ShapeMismatch(format!(
                "label maps disagree on class count: {} vs {classes}",
                map.classes
            )));
        }
        for px in 0..map.pixels() {
            for (ch, &p) in map.pixel(px).iter().enumerate() {
                sums[ch] += p;
            }
        }
    }
    Ok(sums)
}

/// CSV rendering of the histogram: `class_id,sum,log10_sum`.
pub fn histogram_csv(sums: &[f64]) -> String {
    let mut out = String::from("class_id,sum,log10_sum\n");
    for (class, &sum) in sums.iter().enumerate() {
        out.push_str(&format!("{class},{sum},{}\n", sum.log10()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{CameraIntrinsics, CameraModel, DepthImage, DepthSemantics};
    use crate::net::{Heads, NetConfig};

    fn tiny_frame(width: usize, height: usize, depths: Vec<f64>) -> RgbdFrame {
        let k = CameraIntrinsics::new(10.0, 10.0, width as f64 / 2.0, height as f64 / 2.0).unwrap();
        RgbdFrame::new(
            vec![[0.5, 0.5, 0.5]; width * height],
            DepthImage::new(width, height, DepthSemantics::ZDepth, depths).unwrap(),
            CameraModel::Perspective(k),
        )
        .unwrap()
    }

    fn labels_of(gt: &[u16], width: usize, height: usize) -> Vec<u16> {
        assert_eq!(gt.len(), width * height);
        gt.to_vec()
    }

    #[test]
    fn oracle_zero_noise_zero_temperature_is_one_hot() {
        let teacher = SyntheticOracleTeacher::new(4, 0.0, 0.0);
        let frame = tiny_frame(2, 1, vec![1.0, 2.0]);
        let gt = labels_of(&[3, 1], 2, 1);
        let input = TeacherInput::from_frame(&frame, "t/0", Some(&gt));
        let map = generate_pseudo_labels(&teacher, &input).unwrap();
        assert_eq!(map.pixel(0), &[0.0, 0.0, 0.0, 1.0]);
        assert_eq!(map.pixel(1), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn temperature_softens_one_hot() {
        // C = 4, tau = 1: e / (e + 3) at the label, 1 / (e + 3) elsewhere.
        let teacher = SyntheticOracleTeacher::new(4, 0.0, 1.0);
        let frame = tiny_frame(1, 1, vec![1.0]);
        let gt = [2u16];
        let map = generate_pseudo_labels(
            &teacher,
            &TeacherInput::from_frame(&frame, "t/1", Some(&gt)),
        )
        .unwrap();
        let hot = std::f64::consts::E / (std::f64::consts::E + 3.0);
        let cold = 1.0 / (std::f64::consts::E + 3.0);
        assert!((map.pixel(0)[2] - hot).abs() < 1e-12);
        assert!((hot - 0.475).abs() < 1e-3);
        for k in [0, 1, 3] {
            assert!((map.pixel(0)[k] - cold).abs() < 1e-12);
            assert!((cold - 0.175).abs() < 1e-3);
        }
    }

    #[test]
    fn full_noise_is_uniform_within_three_sigma() {
        // 10^5 pixels, 4 classes: per-class count ~ Binomial(n, 1/4).
        let (w, h) = (400, 250);
        let n = w * h;
        let teacher = SyntheticOracleTeacher::new(4, 1.0, 0.0).with_seed(123);
        let frame = tiny_frame(w, h, vec![1.0; n]);
        let gt = vec![0u16; n];
        let map = generate_pseudo_labels(
            &teacher,
            &TeacherInput::from_frame(&frame, "t/2", Some(&gt)),
        )
        .unwrap();
        let mut counts = [0usize; 4];
        for px in 0..n {
            let row = map.pixel(px);
            let arg = row.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            counts[arg] += 1;
        }
        let expect = n as f64 / 4.0;
        let sigma = (n as f64 * 0.25 * 0.75).sqrt();
        for (class, &count) in counts.iter().enumerate() {
            assert!(
                (count as f64 - expect).abs() < 3.0 * sigma,
                "class {class}: {count} vs {expect} +- {sigma}"
            );
        }
    }

    #[test]
    fn oracle_is_deterministic_per_frame_key() {
        let teacher = SyntheticOracleTeacher::new(4, 0.5, 0.5).with_seed(7);
        let frame = tiny_frame(4, 4, vec![1.0; 16]);
        let gt = vec![1u16; 16];
        let a = teacher.infer(&TeacherInput::from_frame(&frame, "s/0", Some(&gt))).unwrap();
        let b = teacher.infer(&TeacherInput::from_frame(&frame, "s/0", Some(&gt))).unwrap();
        let c = teacher.infer(&TeacherInput::from_frame(&frame, "s/1", Some(&gt))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn blur_preserves_normalization() {
        let teacher = SyntheticOracleTeacher::new(3, 0.0, 0.5).with_blur(1.0);
        let frame = tiny_frame(6, 5, vec![1.0; 30]);
        let gt: Vec<u16> = (0..30).map(|i| (i % 3) as u16).collect();
        let map = generate_pseudo_labels(
            &teacher,
            &TeacherInput::from_frame(&frame, "t/3", Some(&gt)),
        )
        .unwrap();
        for px in 0..30 {
            let sum: f64 = map.pixel(px).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    struct BadTeacher;
    impl Teacher for BadTeacher {
        fn classes(&self) -> usize {
            2
        }
        fn infer(&self, input: &TeacherInput<'_>) -> Result<SoftLabelMap> {
            Ok(SoftLabelMap {
                width: input.width,
                height: input.height,
                classes: 2,
                probs: vec![0.9; input.width * input.height * 2],
            })
        }
    }

    #[test]
    fn unnormalized_teacher_output_is_rejected() {
        let frame = tiny_frame(2, 1, vec![1.0, 1.0]);
        let err = generate_pseudo_labels(
            &BadTeacher,
            &TeacherInput::from_frame(&frame, "t/4", None),
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidTeacher { .. }));
    }

    #[test]
    fn build_sample_single_pixel() {
        let frame = tiny_frame(1, 1, vec![2.0]);
        let map = SoftLabelMap {
            width: 1,
            height: 1,
            classes: 3,
            probs: vec![0.2, 0.3, 0.5],
        };
        let sample = build_pretrain_sample(&frame, &map, 8).unwrap();
        assert_eq!(sample.grid.num_voxels(), 1);
        assert_eq!(sample.targets.row(0), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn shared_voxel_averages_one_hots() {
        // Two adjacent pixels with nearly equal depth share a voxel at a
        // coarse resolution; their one-hot labels average to (0.5, 0.5).
        let frame = tiny_frame(2, 1, vec![2.0, 2.0]);
        let map = SoftLabelMap {
            width: 2,
            height: 1,
            classes: 2,
            probs: vec![1.0, 0.0, 0.0, 1.0],
        };
        let sample = build_pretrain_sample(&frame, &map, 1).unwrap();
        assert_eq!(sample.grid.num_voxels(), 1);
        assert_eq!(sample.targets.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn no_valid_pixels_is_empty_sample_error() {
        let frame = tiny_frame(2, 1, vec![0.0, -1.0]);
        let map = SoftLabelMap {
            width: 2,
            height: 1,
            classes: 2,
            probs: vec![0.5; 4],
        };
        assert!(matches!(
            build_pretrain_sample(&frame, &map, 4),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn targets_stay_normalized_on_random_frames() {
        let teacher = SyntheticOracleTeacher::new(5, 0.3, 0.7).with_seed(11);
        for fseed in 0..4u64 {
            let (w, h) = (8, 6);
            let mut rng = ChaCha8Rng::seed_from_u64(fseed);
            let depths: Vec<f64> = (0..w * h)
                .map(|_| if rng.random_range(0.0..1.0) < 0.1 { 0.0 } else { rng.random_range(0.5..4.0) })
                .collect();
            let frame = tiny_frame(w, h, depths);
            let gt: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..5) as u16).collect();
            let map = generate_pseudo_labels(
                &teacher,
                &TeacherInput::from_frame(&frame, "rt", Some(&gt)),
            )
            .unwrap();
            let sample = build_pretrain_sample(&frame, &map, 16).unwrap();
            let (m, _) = sample.targets.dims2();
            for v in 0..m {
                let sum: f64 = sample.targets.row(v).iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn soft_ce_worked_values() {
        let one_hot = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]);
        let perfect = Tensor::new(vec![1, 3], vec![0.0, 1.0, 0.0]);
        assert!(soft_cross_entropy(&perfect, &one_hot).unwrap().abs() < 1e-12);

        let uniform = Tensor::new(vec![1, 4], vec![0.25; 4]);
        let ce = soft_cross_entropy(&uniform, &uniform).unwrap();
        assert!((ce - 4.0f64.ln()).abs() < 1e-12);

        let target = Tensor::new(vec![1, 2], vec![1.0, 0.0]);
        let pred = Tensor::new(vec![1, 2], vec![0.5, 0.5]);
        let ce = soft_cross_entropy(&pred, &target).unwrap();
        assert!((ce - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_ce_shape_mismatch() {
        let a = Tensor::zeros(vec![1, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            soft_cross_entropy(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gibbs_inequality_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let draw = |rng: &mut ChaCha8Rng| {
                let mut v: Vec<f64> = (0..c).map(|_| rng.random_range(1e-6..1.0f64)).collect();
                let sum: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= sum);
                v
            };
            let t = Tensor::new(vec![1, c], draw(&mut rng));
            let p = Tensor::new(vec![1, c], draw(&mut rng));
            let ce = soft_cross_entropy(&p, &t).unwrap();
            let entropy = soft_cross_entropy(&t, &t).unwrap();
            assert!(ce >= entropy - 1e-12);
        }
    }

    fn pretrain_dataset_with_temperature(classes: usize, temperature: f64) -> Vec<PointCloud> {
        let teacher = SyntheticOracleTeacher::new(classes, 0.0, temperature);
        let mut out = Vec::new();
        for fseed in 0..3u64 {
            let (w, h) = (6, 5);
            let mut rng = ChaCha8Rng::seed_from_u64(fseed + 50);
            let depths: Vec<f64> = (0..w * h).map(|_| rng.random_range(1.0..4.0)).collect();
            let frame = tiny_frame(w, h, depths);
            let gt: Vec<u16> = (0..w * h).map(|i| ((i / 5) % classes) as u16).collect();
            let map = teacher
                .infer(&TeacherInput::from_frame(&frame, "p", Some(&gt)))
                .unwrap();
            let mut cloud = lift(&frame).unwrap();
            attach_soft_labels(&mut cloud, &map).unwrap();
            out.push(cloud);
        }
        out
    }

    fn pretrain_dataset(classes: usize) -> Vec<PointCloud> {
        pretrain_dataset_with_temperature(classes, 0.5)
    }

    fn small_model() -> SparseUnet {
        let cfg = NetConfig {
            levels: 2,
            base_channels: 4,
            teacher_classes: 4,
            task_classes: 4,
        };
        SparseUnet::new(cfg, Heads::pretrain_only(), 5).unwrap()
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let dataset = pretrain_dataset(4);
        let mut model = small_model();
        let init = model.to_checkpoint();
        let (ckpt, losses) = pretrain(
            &mut model,
            &dataset,
            &PretrainConfig {
                epochs: 0,
                resolution: 8,
                ..PretrainConfig::default()
            },
        )
        .unwrap();
        assert!(losses.is_empty());
        assert_eq!(ckpt.to_bytes(), init.to_bytes());
    }

    #[test]
    fn pretrain_is_deterministic() {
        let dataset = pretrain_dataset(4);
        let cfg = PretrainConfig {
            epochs: 3,
            resolution: 8,
            lr: 0.05,
            ..PretrainConfig::default()
        };
        let mut a = small_model();
        let mut b = small_model();
        let (ca, la) = pretrain(&mut a, &dataset, &cfg).unwrap();
        let (cb, lb) = pretrain(&mut b, &dataset, &cfg).unwrap();
        assert_eq!(ca.to_bytes(), cb.to_bytes());
        assert_eq!(la, lb);
    }

    /// Lattice cloud with one point per voxel, one-hot targets, and
    /// class-correlated colors: zero loss floor, so an overfit run must
    /// drive the loss toward zero.
    fn lattice_cloud(classes: usize, n_per_axis: usize) -> PointCloud {
        let mut positions = Vec::new();
        let mut colors = Vec::new();
        let mut values = Vec::new();
        for x in 0..n_per_axis {
            for y in 0..n_per_axis {
                for z in 0..n_per_axis {
                    let label = (x + 2 * y + 3 * z) % classes;
                    positions.push([x as f64, y as f64, z as f64]);
                    let c = (label as f64 + 0.5) / classes as f64;
                    colors.push([c, 1.0 - c, 0.3 + 0.4 * c]);
                    let mut row = vec![0.0; classes];
                    row[label] = 1.0;
                    values.extend(row);
                }
            }
        }
        PointCloud {
            positions,
            colors,
            hard_labels: None,
            soft_labels: Some(SoftLabels::new(classes, values)),
            provenance: None,
        }
    }

    #[test]
    fn pretrain_overfits_a_single_sample() {
        let dataset = vec![lattice_cloud(4, 5)];
        let mut model = small_model();
        let cfg = PretrainConfig {
            epochs: 150,
            resolution: 5,
            optimizer: OptimizerKind::Adam,
            lr: 0.01,
            augment: None,
            ..PretrainConfig::default()
        };
        let (_, losses) = pretrain(&mut model, &dataset, &cfg).unwrap();
        let initial = losses[0];
        let last = *losses.last().unwrap();
        assert!(
            last < 0.1 * initial,
            "expected overfit: first {initial}, last {last}"
        );
    }

    #[test]
    fn pretrain_never_mutates_the_dataset() {
        let dataset = pretrain_dataset(4);
        let snapshot = dataset.clone();
        let mut model = small_model();
        pretrain(
            &mut model,
            &dataset,
            &PretrainConfig {
                epochs: 2,
                resolution: 8,
                ..PretrainConfig::default()
            },
        )
        .unwrap();
        assert_eq!(dataset, snapshot);
    }

    #[test]
    fn strip_head_keeps_backbone_bits() {
        let dataset = pretrain_dataset(4);
        let mut model = small_model();
        let (ckpt, _) = pretrain(
            &mut model,
            &dataset,
            &PretrainConfig {
                epochs: 1,
                resolution: 8,
                ..PretrainConfig::default()
            },
        )
        .unwrap();
        let stripped = strip_pretrain_head(&ckpt).unwrap();
        let head_entries = ckpt
            .entries
            .iter()
            .filter(|(n, _)| n.starts_with(PRETRAIN_HEAD_PREFIX))
            .count();
        assert_eq!(stripped.entries.len(), ckpt.entries.len() - head_entries);
        assert!(head_entries > 0);
        for (name, tensor) in &stripped.entries {
            assert_eq!(ckpt.get(name).unwrap().values(), tensor.values());
        }
        // Stripping twice is an error: no head left.
        assert!(matches!(
            strip_pretrain_head(&stripped),
            Err(Error::NotAPretrainCheckpoint)
        ));
    }

    #[test]
    fn stripped_checkpoint_loads_into_task_model() {
        let dataset = pretrain_dataset(4);
        let mut model = small_model();
        let (ckpt, _) = pretrain(
            &mut model,
            &dataset,
            &PretrainConfig {
                epochs: 1,
                resolution: 8,
                ..PretrainConfig::default()
            },
        )
        .unwrap();
        let stripped = strip_pretrain_head(&ckpt).unwrap();

        let task_cfg = NetConfig {
            levels: 2,
            base_channels: 4,
            teacher_classes: 4,
            task_classes: 6, // independent of the teacher's class count
        };
        let mut task = SparseUnet::new(task_cfg, Heads::segmentation(), 99).unwrap();
        let fresh_head = task.params().get("head_seg.weight").unwrap().values().to_vec();
        task.load_checkpoint(&stripped).unwrap();
        for (name, tensor) in &stripped.entries {
            assert_eq!(task.params().get(name).unwrap().values(), tensor.values());
        }
        assert_eq!(task.params().get("head_seg.weight").unwrap().values(), &fresh_head[..]);
        assert_eq!(
            task.params().get("head_seg.weight").unwrap().shape(),
            &[4, 6]
        );
    }

    #[test]
    fn histogram_sums_and_csv() {
        let one_pixel = SoftLabelMap {
            width: 1,
            height: 1,
            classes: 3,
            probs: vec![0.0, 1.0, 0.0],
        };
        let sums = pseudo_label_histogram(&[one_pixel.clone()]).unwrap();
        assert_eq!(sums, vec![0.0, 1.0, 0.0]);

        let uniform = SoftLabelMap {
            width: 4,
            height: 2,
            classes: 3,
            probs: vec![1.0 / 3.0; 24],
        };
        let sums = pseudo_label_histogram(&[uniform, one_pixel]).unwrap();
        let total: f64 = sums.iter().sum();
        assert!((total - 9.0).abs() < 1e-6, "sums add up to the pixel count");
        for &s in &sums[..2] {
            assert!(s > 0.0);
        }
        let csv = histogram_csv(&sums);
        assert!(csv.starts_with("class_id,sum,log10_sum\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
