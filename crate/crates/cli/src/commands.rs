//! Subcommand implementations. Every run writes its artifacts plus a
//! `manifest-<command>.txt` config snapshot next to them; re-running a
//! manifest reproduces the artifacts byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use lift3d::bench::{
    evaluate, finetune, frame_key, generate_world, label_scene, load_world, report_csv,
    report_text, scene_dirs, write_world, ConfusionMatrix, LabelBudget, Scene, SceneSample,
};
use lift3d::cloud::{read_ply, write_ply, write_slab, AugmentParams};
use lift3d::distill::{
    generate_pseudo_labels, histogram_csv, pretrain, pseudo_label_histogram, soft_cross_entropy,
    soft_cross_entropy_grad, strip_pretrain_head, FileTeacher, PretrainConfig, SoftLabelMap,
    SyntheticOracleTeacher, Teacher, TeacherInput,
};
use lift3d::net::PRETRAIN_HEAD_PREFIX;
use lift3d::geom::lift;
use lift3d::net::checkpoint::Checkpoint;
use lift3d::net::gradcheck::{check_gradients, FnProbLoss, ForwardPath};
use lift3d::net::{Heads, SparseUnet, Tensor};
use lift3d::seed;

use crate::config::{load_config, save_manifest, BudgetKind, ExperimentConfig};
use crate::{BudgetArgs, CliError, Command, CommonArgs, SemiArgs, WorldArg};

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { common, scenes } => cmd_synth(common, scenes),
        Command::Lift { common, world } => cmd_lift(common, world),
        Command::PseudoLabel { common, world, teacher } => cmd_pseudo_label(common, world, teacher),
        Command::Pretrain { common, world, teacher, epochs } => cmd_pretrain(common, world, teacher, epochs),
        Command::Finetune { common, world, budget, init, epochs } => {
            cmd_finetune(common, world, budget, init, epochs, None)
        }
        Command::Semi { common, world, budget, semi, init, epochs } => {
            cmd_finetune(common, world, budget, init, epochs, Some(semi))
        }
        Command::Eval { common, world, ckpt, pred } => cmd_eval(common, world, ckpt, pred),
        Command::Gradcheck { common } => cmd_gradcheck(common),
        Command::Histogram { common, world } => cmd_histogram(common, world),
    }
}

fn base_config(common: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &common.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed_value) = common.seed {
        config.seed = seed_value;
    }
    config.validate()?;
    Ok(config)
}

fn world_dir(config: &ExperimentConfig, world: &WorldArg) -> Result<PathBuf, CliError> {
    let dir = world.world.clone().unwrap_or_else(|| config.world_dir.clone());
    if !dir.is_dir() {
        return Err(CliError::MissingFile(dir));
    }
    Ok(dir)
}

fn apply_budget_args(config: &mut ExperimentConfig, args: &BudgetArgs) -> Result<(), CliError> {
    if let Some(kind) = &args.budget {
        config.budget = match kind.as_str() {
            "full" => BudgetKind::Full,
            "la" => BudgetKind::LimitedAnnotations,
            "lr" => BudgetKind::LimitedReconstructions,
            other => return Err(CliError::Usage(format!("unknown budget '{other}'"))),
        };
    }
    if let Some(points) = args.budget_points {
        config.budget_points = points;
    }
    if let Some(fraction) = args.budget_fraction {
        config.budget_fraction = fraction;
    }
    Ok(())
}

fn apply_semi_args(config: &mut ExperimentConfig, args: &SemiArgs) -> Result<(), CliError> {
    if let Some(task) = &args.task {
        config.task = match task.as_str() {
            "cls" => lift3d::semi::TaskKind::Classification,
            "seg" => lift3d::semi::TaskKind::Segmentation,
            other => return Err(CliError::Usage(format!("unknown task '{other}'"))),
        };
    }
    if let Some(w) = args.entropy_weight {
        config.set_entropy_weight(w);
    }
    if let Some(w) = args.consistency_weight {
        config.set_consistency_weight(w);
    }
    if let Some(alpha) = args.ema_alpha {
        config.ema_alpha = alpha;
    }
    if let Some(epochs) = args.rampup_epochs {
        config.rampup_epochs = epochs;
    }
    Ok(())
}

/// Build the teacher named by a spec string.
fn make_teacher(spec: &str, classes: usize, seed_value: u64) -> Result<Box<dyn Teacher>, CliError> {
    if let Some(rest) = spec.strip_prefix("oracle:") {
        let fields: Vec<&str> = rest.split(',').collect();
        if fields.len() != 2 && fields.len() != 3 {
            return Err(CliError::Config {
                line: None,
                message: format!("teacher spec '{spec}' wants oracle:<noise>,<temperature>[,<blur>]"),
            });
        }
        let parse = |value: &str, what: &str| -> Result<f64, CliError> {
            value.trim().parse::<f64>().map_err(|_| CliError::Config {
                line: None,
                message: format!("teacher spec '{spec}': cannot parse {what}"),
            })
        };
        let noise = parse(fields[0], "noise rate")?;
        let temperature = parse(fields[1], "temperature")?;
        if !(0.0..=1.0).contains(&noise) || temperature < 0.0 {
            return Err(CliError::Config {
                line: None,
                message: format!("teacher spec '{spec}': noise in [0,1], temperature >= 0"),
            });
        }
        let mut teacher = SyntheticOracleTeacher::new(classes, noise, temperature)
            .with_seed(seed::derive(seed_value, &[seed::hash_tag("teacher")]));
        if fields.len() == 3 {
            let blur = parse(fields[2], "blur sigma")?;
            teacher = teacher.with_blur(blur);
        }
        Ok(Box::new(teacher))
    } else if let Some(dir) = spec.strip_prefix("file:") {
        let path = PathBuf::from(dir);
        if !path.is_dir() {
            return Err(CliError::MissingFile(path));
        }
        Ok(Box::new(FileTeacher::new(&path, classes)))
    } else {
        Err(CliError::Config {
            line: None,
            message: format!("teacher spec '{spec}' must start with oracle: or file:"),
        })
    }
}

/// Scene index ranges: `[0, train)` trains, `[train, train+eval)` holds
/// out; anything beyond is extra pre-training material.
struct Split {
    train: Vec<Scene>,
    eval: Vec<Scene>,
    extra: Vec<Scene>,
}

fn split_world(mut scenes: Vec<Scene>, config: &ExperimentConfig) -> Result<Split, CliError> {
    let need = config.train_scenes + config.eval_scenes;
    if scenes.len() < need {
        return Err(CliError::Config {
            line: None,
            message: format!(
                "world has {} scenes but the split needs {need} (train {} + eval {})",
                scenes.len(),
                config.train_scenes,
                config.eval_scenes
            ),
        });
    }
    let extra = scenes.split_off(need);
    let eval = scenes.split_off(config.train_scenes);
    Ok(Split {
        train: scenes,
        eval,
        extra,
    })
}

fn augment_params(config: &ExperimentConfig) -> Option<AugmentParams> {
    config.augment.then(AugmentParams::default)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_synth(common: CommonArgs, scenes: Option<usize>) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    if let Some(n) = scenes {
        config.scenes = n;
    }
    if let Some(out) = &common.out {
        config.world_dir = out.clone();
    }
    config.validate()?;
    let world = generate_world(&config.world_config());
    let out = config.world_dir.clone();
    write_world(&world, &out)?;
    save_manifest(&config, "synth", &out)?;
    println!(
        "synth: wrote {} scenes to {}",
        world.scenes.len(),
        out.display()
    );
    Ok(())
}

fn cmd_lift(common: CommonArgs, world: WorldArg) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    let scenes = load_world(&dir)?;
    let mut written = 0usize;
    for scene in &scenes {
        let scene_dir = dir.join(lift3d::bench::scene_dir_name(scene.id));
        for (idx, rendered) in scene.frames.iter().enumerate() {
            let cloud = lift(&rendered.frame)?;
            let mut ply = Vec::new();
            write_ply(&mut ply, &cloud)?;
            write_file(&scene_dir.join(format!("frame_{idx}.ply")), &ply)?;
            written += 1;
        }
    }
    save_manifest(&config, "lift", &dir)?;
    println!("lift: wrote {written} frame clouds under {}", dir.display());
    Ok(())
}

fn cmd_pseudo_label(common: CommonArgs, world: WorldArg, teacher_spec: Option<String>) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    if let Some(spec) = teacher_spec {
        config.teacher = spec;
    }
    let teacher = make_teacher(&config.teacher, config.teacher_classes, config.seed)?;
    let scenes = load_world(&dir)?;
    let mut written = 0usize;
    for scene in &scenes {
        let scene_dir = dir.join(lift3d::bench::scene_dir_name(scene.id));
        for (idx, rendered) in scene.frames.iter().enumerate() {
            let key = frame_key(scene.id, idx);
            let input = TeacherInput::from_frame(&rendered.frame, &key, Some(&rendered.labels));
            let map = generate_pseudo_labels(teacher.as_ref(), &input)?;
            let mut slab = Vec::new();
            write_slab(&mut slab, map.pixels(), map.classes, &map.probs)?;
            write_file(&scene_dir.join(format!("frame_{idx}.slab")), &slab)?;
            written += 1;
        }
    }
    save_manifest(&config, "pseudo-label", &dir)?;
    println!(
        "pseudo-label: wrote {written} SLAB maps under {}",
        dir.display()
    );
    Ok(())
}

/// Lift the frames of the given scenes and attach teacher soft labels.
fn pretraining_clouds(
    scenes: &[Scene],
    teacher: &dyn Teacher,
) -> Result<Vec<lift3d::cloud::PointCloud>, CliError> {
    let mut clouds = Vec::new();
    for scene in scenes {
        for (idx, rendered) in scene.frames.iter().enumerate() {
            let key = frame_key(scene.id, idx);
            let input = TeacherInput::from_frame(&rendered.frame, &key, Some(&rendered.labels));
            let map = generate_pseudo_labels(teacher, &input)?;
            let mut cloud = lift(&rendered.frame)?;
            if cloud.is_empty() {
                continue;
            }
            lift3d::distill::attach_soft_labels(&mut cloud, &map)?;
            clouds.push(cloud);
        }
    }
    if clouds.is_empty() {
        return Err(CliError::Runtime(
            "no frames with valid depth to pre-train on".into(),
        ));
    }
    Ok(clouds)
}

fn cmd_pretrain(
    common: CommonArgs,
    world: WorldArg,
    teacher_spec: Option<String>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    if let Some(spec) = teacher_spec {
        config.teacher = spec;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(out) = &common.out {
        config.checkpoint_dir = out.clone();
    }

    let teacher = make_teacher(&config.teacher, config.teacher_classes, config.seed)?;
    let split = split_world(load_world(&dir)?, &config)?;
    // Pre-training sees train and extra scenes; held-out scenes do not
    // contribute frames.
    let mut sources = split.train;
    sources.extend(split.extra);
    let clouds = pretraining_clouds(&sources, teacher.as_ref())?;

    let mut model = SparseUnet::new(
        config.net_config(),
        Heads::pretrain_only(),
        seed::derive(config.seed, &[seed::hash_tag("pretrain-init")]),
    )?;
    let pretrain_config = PretrainConfig {
        epochs: config.epochs,
        optimizer: config.optimizer,
        lr: config.lr(),
        batch_size: config.batch_size,
        resolution: config.voxel_resolution,
        augment: augment_params(&config),
        seed: seed::derive(config.seed, &[seed::hash_tag("pretrain")]),
    };
    let (checkpoint, losses) = pretrain(&mut model, &clouds, &pretrain_config)?;

    let out = config.checkpoint_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    checkpoint.write_to(&out.join("pretrain.ckpt"))?;
    let mut log = String::from("epoch,loss\n");
    for (epoch, loss) in losses.iter().enumerate() {
        log.push_str(&format!("{epoch},{loss}\n"));
    }
    write_file(&out.join("pretrain_log.csv"), log.as_bytes())?;
    save_manifest(&config, "pretrain", &out)?;
    println!(
        "pretrain: {} samples, {} epochs, final loss {} -> {}",
        clouds.len(),
        config.epochs,
        losses.last().copied().unwrap_or(f64::NAN),
        out.join("pretrain.ckpt").display()
    );
    Ok(())
}

fn budget_of(config: &ExperimentConfig) -> Option<LabelBudget> {
    match config.budget {
        BudgetKind::Full => None,
        BudgetKind::LimitedAnnotations => Some(LabelBudget::LimitedAnnotations(config.budget_points)),
        BudgetKind::LimitedReconstructions => {
            Some(LabelBudget::LimitedReconstructions(config.budget_fraction))
        }
    }
}

/// Load an initial checkpoint, stripping a pre-training head if present.
fn load_init_checkpoint(path: &Path, model: &mut SparseUnet) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let mut checkpoint = Checkpoint::read_from(path)?;
    if checkpoint
        .entries
        .iter()
        .any(|(name, _)| name.starts_with(PRETRAIN_HEAD_PREFIX))
    {
        checkpoint = strip_pretrain_head(&checkpoint)?;
    }
    model.load_checkpoint(&checkpoint)?;
    Ok(())
}

fn cmd_finetune(
    common: CommonArgs,
    world: WorldArg,
    budget_args: BudgetArgs,
    init: Option<PathBuf>,
    epochs: Option<usize>,
    semi_args: Option<SemiArgs>,
) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    apply_budget_args(&mut config, &budget_args)?;
    if let Some(args) = &semi_args {
        apply_semi_args(&mut config, args)?;
    }
    if let Some(e) = epochs {
        config.epochs = e;
    }
    if let Some(path) = &init {
        config.init_checkpoint = path.display().to_string();
    }
    if let Some(out) = &common.out {
        config.checkpoint_dir = out.clone();
        config.report_dir = out.clone();
    }
    config.validate()?;
    let command = if semi_args.is_some() { "semi" } else { "finetune" };

    let split = split_world(load_world(&dir)?, &config)?;
    let mut train: Vec<SceneSample> = split.train.iter().map(Scene::to_sample).collect();
    let eval_scenes: Vec<SceneSample> = split.eval.iter().map(Scene::to_sample).collect();
    label_scene(
        &mut train,
        budget_of(&config),
        seed::derive(config.seed, &[seed::hash_tag("budget")]),
    )?;

    let mut model = SparseUnet::new(
        config.net_config(),
        Heads::segmentation(),
        seed::derive(config.seed, &[seed::hash_tag("task-init")]),
    )?;
    if !config.init_checkpoint.is_empty() {
        load_init_checkpoint(&PathBuf::from(&config.init_checkpoint), &mut model)?;
    }

    let train_config = lift3d::bench::TrainConfig {
        epochs: config.epochs,
        optimizer: config.optimizer,
        lr: config.lr(),
        batch_size: config.batch_size,
        resolution: config.voxel_resolution,
        augment: augment_params(&config),
        semi: semi_args.is_some().then(|| config.semi_config()),
        seed: seed::derive(config.seed, &[seed::hash_tag("finetune")]),
    };
    let (checkpoint, report) = finetune(&mut model, &train, &eval_scenes, &train_config)?;

    let out = config.checkpoint_dir.clone();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
    checkpoint.write_to(&out.join("model.ckpt"))?;
    write_file(&out.join("report.csv"), report_csv(&report).as_bytes())?;
    write_file(&out.join("report.txt"), report_text(&report).as_bytes())?;
    save_manifest(&config, command, &out)?;
    println!(
        "{command}: eval mIoU {:.4}, accuracy {:.4} -> {}",
        report.miou,
        report.accuracy,
        out.display()
    );
    Ok(())
}

fn cmd_eval(
    common: CommonArgs,
    world: WorldArg,
    ckpt: Option<PathBuf>,
    pred: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    if let Some(path) = &ckpt {
        config.init_checkpoint = path.display().to_string();
    }
    if let Some(path) = &pred {
        config.predictions_dir = path.display().to_string();
    }
    if let Some(out) = &common.out {
        config.report_dir = out.clone();
    }

    let split = split_world(load_world(&dir)?, &config)?;
    let eval_scenes: Vec<SceneSample> = split.eval.iter().map(Scene::to_sample).collect();

    let report = if !config.predictions_dir.is_empty() {
        evaluate_predictions(&PathBuf::from(&config.predictions_dir), &split.eval, config.task_classes)?
    } else if !config.init_checkpoint.is_empty() {
        let path = PathBuf::from(&config.init_checkpoint);
        if !path.exists() {
            return Err(CliError::MissingFile(path));
        }
        let mut model = SparseUnet::new(
            config.net_config(),
            Heads::segmentation(),
            seed::derive(config.seed, &[seed::hash_tag("task-init")]),
        )?;
        let checkpoint = Checkpoint::read_from(&path)?;
        model.load_checkpoint(&checkpoint)?;
        evaluate(&mut model, &eval_scenes, config.voxel_resolution)?
    } else {
        return Err(CliError::Usage(
            "eval needs --ckpt <checkpoint> or --pred <predictions dir>".into(),
        ));
    };

    let out = config.report_dir.clone();
    write_file(&out.join("report.csv"), report_csv(&report).as_bytes())?;
    write_file(&out.join("report.txt"), report_text(&report).as_bytes())?;
    save_manifest(&config, "eval", &out)?;
    println!("eval: mIoU {:.4}, accuracy {:.4}", report.miou, report.accuracy);
    Ok(())
}

/// Score predicted label clouds (`scene_NNN/cloud.ply`) against the
/// world's ground truth, point by point.
fn evaluate_predictions(
    pred_dir: &Path,
    eval_scenes: &[Scene],
    classes: usize,
) -> Result<lift3d::bench::EvalReport, CliError> {
    if !pred_dir.is_dir() {
        return Err(CliError::MissingFile(pred_dir.to_path_buf()));
    }
    let mut confusion = ConfusionMatrix::new(classes);
    for scene in eval_scenes {
        let path = pred_dir
            .join(lift3d::bench::scene_dir_name(scene.id))
            .join("cloud.ply");
        if !path.exists() {
            return Err(CliError::MissingFile(path));
        }
        let predicted = read_ply(fs::File::open(&path).map_err(|e| {
            CliError::Runtime(format!("cannot open {}: {e}", path.display()))
        })?)?;
        let Some(pred_labels) = &predicted.hard_labels else {
            return Err(CliError::Runtime(format!(
                "{} carries no label property",
                path.display()
            )));
        };
        let Some(gt) = &scene.cloud.hard_labels else {
            return Err(CliError::Runtime(format!(
                "scene {} has no ground-truth labels",
                scene.id
            )));
        };
        if pred_labels.len() != gt.len() {
            return Err(CliError::Runtime(format!(
                "{}: {} predictions for {} points",
                path.display(),
                pred_labels.len(),
                gt.len()
            )));
        }
        confusion
            .accumulate(gt, pred_labels)
            .map_err(CliError::from)?;
    }
    let (per_class_iou, mean) = lift3d::bench::miou(&confusion)?;
    let accuracy = lift3d::bench::accuracy_from_confusion(&confusion)?;
    Ok(lift3d::bench::EvalReport {
        per_class_iou,
        miou: mean,
        accuracy,
        confusion,
    })
}

/// Deterministic unit-interval stream derived from the seed module, so
/// the CLI does not need its own RNG dependency.
fn unit_stream(base: u64) -> impl FnMut() -> f64 {
    let mut counter = 0u64;
    move || {
        counter += 1;
        let bits = seed::derive(base, &[counter]);
        (bits >> 11) as f64 / (1u64 << 53) as f64
    }
}

fn cmd_gradcheck(common: CommonArgs) -> Result<(), CliError> {
    use lift3d::cloud::{voxelize, PointCloud};

    let mut config = base_config(&common)?;
    if let Some(out) = &common.out {
        config.report_dir = out.clone();
    }

    let mut draw = unit_stream(seed::derive(config.seed, &[seed::hash_tag("gradcheck")]));
    let n = 10;
    let cloud = PointCloud {
        positions: (0..n)
            .map(|_| [2.0 * draw(), 2.0 * draw(), 2.0 * draw()])
            .collect(),
        colors: (0..n).map(|_| [draw(), draw(), draw()]).collect(),
        ..PointCloud::default()
    };
    let grid = voxelize(&cloud, 4)?;

    let toy = lift3d::net::NetConfig {
        levels: 2,
        base_channels: 4,
        teacher_classes: 4,
        task_classes: 4,
    };
    let mut model = SparseUnet::new(toy, Heads::segmentation(), config.seed)?;
    let m = grid.num_voxels();
    let classes = 4;
    let mut target = Tensor::new(
        vec![m, classes],
        (0..m * classes).map(|_| 0.05 + 0.95 * draw()).collect(),
    );
    for row in 0..m {
        let sum: f64 = target.row(row).iter().sum();
        for v in target.row_mut(row) {
            *v /= sum;
        }
    }
    let loss = FnProbLoss {
        value_fn: {
            let t = target.clone();
            move |p: &Tensor| soft_cross_entropy(p, &t).unwrap()
        },
        grad_fn: move |p: &Tensor| soft_cross_entropy_grad(p, &target),
    };
    let err = check_gradients(&mut model, &grid, ForwardPath::Segment, &loss, 1e-5)?;
    let line = format!("max relative error: {err:e} (threshold 1e-4)\n");
    print!("{line}");
    if common.out.is_some() {
        let out = config.report_dir.clone();
        write_file(&out.join("gradcheck.txt"), line.as_bytes())?;
        save_manifest(&config, "gradcheck", &out)?;
    }
    if err >= 1e-4 {
        return Err(CliError::Runtime(format!(
            "gradient check failed: max relative error {err:e}"
        )));
    }
    Ok(())
}

fn cmd_histogram(common: CommonArgs, world: WorldArg) -> Result<(), CliError> {
    let mut config = base_config(&common)?;
    let dir = world_dir(&config, &world)?;
    config.world_dir = dir.clone();
    if let Some(out) = &common.out {
        config.report_dir = out.clone();
    }

    let mut maps = Vec::new();
    for (id, scene_dir) in scene_dirs(&dir)? {
        let mut frame_idx = 0usize;
        loop {
            let slab_path = scene_dir.join(format!("frame_{frame_idx}.slab"));
            let ppm_path = scene_dir.join(format!("frame_{frame_idx}.ppm"));
            if !ppm_path.exists() {
                break;
            }
            if !slab_path.exists() {
                return Err(CliError::MissingFile(slab_path));
            }
            let (rows, classes, probs) = lift3d::cloud::read_slab(
                &mut fs::File::open(&slab_path)
                    .map_err(|e| CliError::Runtime(format!("cannot open {}: {e}", slab_path.display())))?,
            )?;
            maps.push(SoftLabelMap {
                width: rows,
                height: 1,
                classes,
                probs,
            });
            frame_idx += 1;
        }
        let _ = id;
    }
    let sums = pseudo_label_histogram(&maps)?;
    let out = config.report_dir.clone();
    write_file(&out.join("histogram.csv"), histogram_csv(&sums).as_bytes())?;
    save_manifest(&config, "histogram", &out)?;
    println!(
        "histogram: {} classes over {} frames -> {}",
        sums.len(),
        maps.len(),
        out.join("histogram.csv").display()
    );
    Ok(())
}
