//! Supervised (and optionally semi-supervised) fine-tuning on scenes,
//! plus held-out evaluation and report rendering.

use crate::cloud::{augment, voxelize, AugmentParams, PointCloud};
use crate::distill::shuffled_indices;
use crate::error::{Error, Result};
use crate::net::optim::{poly_lr, Optimizer, OptimizerKind, DEFAULT_POLY_POWER};
use crate::net::{Checkpoint, Mode, SparseUnet};
use crate::seed;
use crate::semi::{semi_train_step, LabeledBatch, SemiConfig, TeacherStudentPair, UnlabeledBatch};

use super::{
    accuracy_from_confusion, miou, point_cross_entropy, sample_limited_annotations,
    sample_limited_reconstructions, ConfusionMatrix, LabelBudget, SceneSample,
};

/// Fine-tuning hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub resolution: usize,
    pub augment: Option<AugmentParams>,
    /// Semi-supervised losses; `None` trains purely supervised.
    pub semi: Option<SemiConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            optimizer: OptimizerKind::Sgd,
            lr: OptimizerKind::Sgd.default_lr(),
            batch_size: 1,
            resolution: 64,
            augment: Some(AugmentParams::default()),
            semi: None,
            seed: 0,
        }
    }
}

/// Evaluation summary over a scene set.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

/// Apply a label budget to fully labeled scenes.
///
/// Limited annotations reveal `n` points per scene; limited
/// reconstructions keep whole scenes and hide all labels of the rest
/// (those scenes remain available as unlabeled data).
pub fn label_scene(scenes: &mut [SceneSample], budget: Option<LabelBudget>, seed_value: u64) -> Result<()> {
    let Some(budget) = budget else {
        return Ok(());
    };
    budget.validate()?;
    match budget {
        LabelBudget::LimitedAnnotations(n) => {
            for scene in scenes.iter_mut() {
                scene.mask = sample_limited_annotations(scene.id, &scene.cloud, n, seed_value);
            }
        }
        LabelBudget::LimitedReconstructions(fraction) => {
            let ids: Vec<u64> = scenes.iter().map(|s| s.id).collect();
            let keep = sample_limited_reconstructions(&ids, fraction, seed_value)?;
            for scene in scenes.iter_mut() {
                if !keep.contains(&scene.id) {
                    scene.mask.fill(false);
                }
            }
        }
    }
    Ok(())
}

/// Evaluate a model on scenes: voxelize (no augmentation), eval-mode
/// forward, argmax per voxel, nearest devoxelization to points, and
/// score against every labeled ground-truth point.
pub fn evaluate(model: &mut SparseUnet, scenes: &[SceneSample], resolution: usize) -> Result<EvalReport> {
    if scenes.is_empty() {
        return Err(Error::EmptyInput("evaluation needs at least one scene"));
    }
    let classes = model.config().task_classes;
    let mut confusion = ConfusionMatrix::new(classes);
    for scene in scenes {
        let Some(gt) = &scene.cloud.hard_labels else {
            return Err(Error::InvalidInput(format!(
                "scene {} has no ground-truth labels to evaluate against",
                scene.id
            )));
        };
        let grid = voxelize(&scene.cloud, resolution)?;
        let probs = model.forward_segment(&grid, Mode::Eval)?;
        let voxel_pred = super::argmax_rows(&probs);
        let point_pred: Vec<i32> = grid
            .point_to_voxel
            .iter()
            .map(|&v| voxel_pred[v as usize])
            .collect();
        confusion.accumulate(gt, &point_pred)?;
    }
    report_from_confusion(confusion)
}

pub(super) fn report_from_confusion(confusion: ConfusionMatrix) -> Result<EvalReport> {
    let (per_class_iou, mean) = miou(&confusion)?;
    let accuracy = accuracy_from_confusion(&confusion)?;
    Ok(EvalReport {
        per_class_iou,
        miou: mean,
        accuracy,
        confusion,
    })
}

/// Fine-tune on the revealed labels of `train` and report on `eval`.
///
/// Supervised cross-entropy is computed on revealed points only, through
/// nearest devoxelization. With a [`SemiConfig`], each step additionally
/// draws an unlabeled scene for the entropy and mean-teacher consistency
/// terms, and the student is what gets evaluated. Zero epochs evaluate
/// the initialization as-is.
pub fn finetune(
    model: &mut SparseUnet,
    train: &[SceneSample],
    eval_scenes: &[SceneSample],
    config: &TrainConfig,
) -> Result<(Checkpoint, EvalReport)> {
    let supervised: Vec<usize> = (0..train.len())
        .filter(|&i| train[i].mask.iter().any(|&m| m))
        .collect();
    let total_revealed: usize = train.iter().map(|s| s.mask.iter().filter(|&&m| m).count()).sum();
    if total_revealed == 0 {
        return Err(Error::Protocol(
            "fine-tuning needs at least one labeled point".into(),
        ));
    }

    match &config.semi {
        None => finetune_supervised(model, train, &supervised, config)?,
        Some(semi_config) => {
            semi_config.validate()?;
            let mut pair = TeacherStudentPair::new(model.clone());
            finetune_semi(&mut pair, train, &supervised, config, semi_config)?;
            *model = pair.student;
        }
    }

    let report = evaluate(model, eval_scenes, config.resolution)?;
    Ok((model.to_checkpoint(), report))
}

fn augmented_cloud(scene: &SceneSample, config: &TrainConfig, tags: &[u64]) -> PointCloud {
    match &config.augment {
        Some(base) => {
            let params = base.clone().with_seed(seed::derive(config.seed, tags));
            augment(&scene.cloud, &params)
        }
        None => scene.cloud.clone(),
    }
}

fn finetune_supervised(
    model: &mut SparseUnet,
    train: &[SceneSample],
    supervised: &[usize],
    config: &TrainConfig,
) -> Result<()> {
    let batch = config.batch_size.max(1);
    let steps_per_epoch = supervised.len().div_ceil(batch);
    let total_steps = config.epochs * steps_per_epoch;
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        let order = shuffled_indices(supervised.len(), seed::derive(config.seed, &[0xf1, epoch as u64]));
        for group in order.chunks(batch) {
            model.zero_grads();
            for &pos in group {
                let scene = &train[supervised[pos]];
                let cloud = augmented_cloud(scene, config, &[0xf2, epoch as u64, scene.id]);
                let grid = voxelize(&cloud, config.resolution)?;
                let revealed = SceneSample {
                    id: scene.id,
                    cloud,
                    mask: scene.mask.clone(),
                }
                .revealed();
                let probs = model.forward_segment(&grid, Mode::Train)?;
                let (loss, mut grad) = point_cross_entropy(&probs, &grid.point_to_voxel, &revealed)?;
                if !loss.is_finite() {
                    return Err(Error::DivergentLoss {
                        epoch,
                        step,
                        loss,
                    });
                }
                if group.len() > 1 {
                    let inv = 1.0 / group.len() as f64;
                    for g in grad.values_mut() {
                        *g *= inv;
                    }
                }
                model.backward(&grad)?;
            }
            let lr = poly_lr(step, total_steps, config.lr, DEFAULT_POLY_POWER);
            optimizer.step(model.params_mut(), lr)?;
            step += 1;
        }
    }
    Ok(())
}

fn finetune_semi(
    pair: &mut TeacherStudentPair,
    train: &[SceneSample],
    supervised: &[usize],
    config: &TrainConfig,
    semi_config: &SemiConfig,
) -> Result<()> {
    use rand::{Rng, SeedableRng};
    let total_steps = config.epochs * supervised.len();
    let mut optimizer = Optimizer::new(config.optimizer);
    let mut step = 0usize;
    let mut sampler = rand_chacha::ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[0xf3]));

    for epoch in 0..config.epochs {
        let order = shuffled_indices(supervised.len(), seed::derive(config.seed, &[0xf1, epoch as u64]));
        for &pos in &order {
            let scene = &train[supervised[pos]];
            let cloud = augmented_cloud(scene, config, &[0xf2, epoch as u64, scene.id]);
            let grid = voxelize(&cloud, config.resolution)?;
            let revealed = SceneSample {
                id: scene.id,
                cloud,
                mask: scene.mask.clone(),
            }
            .revealed();

            // Unlabeled pool: every training scene, labels ignored.
            let pick = sampler.random_range(0..train.len());
            let unlabeled_scene = &train[pick];
            let unlabeled_cloud =
                augmented_cloud(unlabeled_scene, config, &[0xf4, epoch as u64, step as u64]);
            let unlabeled_grid = voxelize(&unlabeled_cloud, config.resolution)?;

            let lr = poly_lr(step, total_steps, config.lr, DEFAULT_POLY_POWER);
            let losses = semi_train_step(
                pair,
                &mut optimizer,
                &LabeledBatch {
                    grid: &grid,
                    revealed: &revealed,
                },
                &UnlabeledBatch {
                    grid: &unlabeled_grid,
                },
                semi_config,
                epoch,
                lr,
            )?;
            if !losses.total.is_finite() {
                return Err(Error::DivergentLoss {
                    epoch,
                    step,
                    loss: losses.total,
                });
            }
            step += 1;
        }
    }
    Ok(())
}

/// CSV rendering: one `metric,value` row per class IoU plus summary rows.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    for (class, iou) in report.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => out.push_str(&format!("iou_class_{class},{v:.6}\n")),
            None => out.push_str(&format!("iou_class_{class},absent\n")),
        }
    }
    out.push_str(&format!("miou,{:.6}\n", report.miou));
    out.push_str(&format!("accuracy,{:.6}\n", report.accuracy));
    out
}

/// Plain-text summary of a report.
pub fn report_text(report: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "mIoU {:.4} | accuracy {:.4} | {} labeled points\n",
        report.miou,
        report.accuracy,
        report.confusion.total()
    ));
    out.push_str("mean is over classes present in ground truth or prediction\n");
    for (class, iou) in report.per_class_iou.iter().enumerate() {
        match iou {
            Some(v) => out.push_str(&format!("  class {class}: IoU {v:.4}\n")),
            None => out.push_str(&format!("  class {class}: absent\n")),
        }
    }
    out
}
