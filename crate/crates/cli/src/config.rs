//! Experiment configuration: a line-oriented `key = value` format with
//! `#` comments, hard errors on unknown keys, and a manifest writer
//! whose output round-trips through the same parser.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use lift3d::bench::WorldConfig;
use lift3d::net::optim::OptimizerKind;
use lift3d::net::NetConfig;
use lift3d::semi::{SemiConfig, TaskKind};

use crate::CliError;

/// Which label budget a fine-tuning run applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    /// All ground-truth labels revealed.
    Full,
    /// `budget_points` labeled points per training scene.
    LimitedAnnotations,
    /// `budget_fraction` of training scenes keep their labels.
    LimitedReconstructions,
}

/// Everything a run needs, with paper-flavored defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Subcommand that produced this config's manifest (informational).
    pub command: String,
    pub seed: u64,
    pub world_dir: PathBuf,
    pub checkpoint_dir: PathBuf,
    pub report_dir: PathBuf,
    /// Synthetic-world shape.
    pub scenes: usize,
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub points_per_scene: usize,
    pub frame_width: usize,
    pub frame_height: usize,
    pub pano_width: usize,
    pub pano_height: usize,
    pub frames_min: usize,
    pub frames_max: usize,
    /// Network shape.
    pub levels: usize,
    pub base_channels: usize,
    pub teacher_classes: usize,
    pub task_classes: usize,
    /// Optimization.
    pub optimizer: OptimizerKind,
    lr: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    /// Label budget.
    pub budget: BudgetKind,
    pub budget_points: usize,
    pub budget_fraction: f64,
    /// Semi-supervised weights; unset values default by task.
    entropy_weight: Option<f64>,
    consistency_weight: Option<f64>,
    pub ema_alpha: f64,
    pub rampup_epochs: usize,
    pub task: TaskKind,
    /// Teacher spec: `oracle:<noise>,<temperature>[,<blur>]` or `file:<dir>`.
    pub teacher: String,
    pub voxel_resolution: usize,
    pub init_checkpoint: String,
    pub predictions_dir: String,
    pub augment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            command: String::new(),
            seed: 0,
            world_dir: PathBuf::from("world"),
            checkpoint_dir: PathBuf::from("out"),
            report_dir: PathBuf::from("out"),
            scenes: 8,
            train_scenes: 4,
            eval_scenes: 4,
            points_per_scene: 2600,
            frame_width: 40,
            frame_height: 30,
            pano_width: 80,
            pano_height: 40,
            frames_min: 2,
            frames_max: 6,
            levels: 3,
            base_channels: 16,
            teacher_classes: 8,
            task_classes: 8,
            optimizer: OptimizerKind::Sgd,
            lr: None,
            epochs: 30,
            batch_size: 1,
            budget: BudgetKind::Full,
            budget_points: 20,
            budget_fraction: 0.1,
            entropy_weight: None,
            consistency_weight: None,
            ema_alpha: 0.999,
            rampup_epochs: 30,
            task: TaskKind::Segmentation,
            teacher: "oracle:0.1,0.5".to_string(),
            voxel_resolution: 64,
            init_checkpoint: String::new(),
            predictions_dir: String::new(),
            augment: true,
        }
    }
}

impl ExperimentConfig {
    /// Learning rate; defaults by optimizer (SGD 0.05, Adam 0.001).
    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.optimizer.default_lr())
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = Some(lr);
    }

    /// Semi-supervised weights; defaults by task
    /// (classification 0.01/10, segmentation 0.25/10).
    pub fn semi_config(&self) -> SemiConfig {
        let base = SemiConfig::for_task(self.task);
        SemiConfig {
            entropy_weight: self.entropy_weight.unwrap_or(base.entropy_weight),
            consistency_weight: self.consistency_weight.unwrap_or(base.consistency_weight),
            ema_alpha: self.ema_alpha,
            rampup_epochs: self.rampup_epochs,
            task: self.task,
        }
    }

    pub fn set_entropy_weight(&mut self, w: f64) {
        self.entropy_weight = Some(w);
    }

    pub fn set_consistency_weight(&mut self, w: f64) {
        self.consistency_weight = Some(w);
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            levels: self.levels,
            base_channels: self.base_channels,
            teacher_classes: self.teacher_classes,
            task_classes: self.task_classes,
        }
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            scenes: self.scenes,
            classes: self.task_classes,
            points_per_scene: self.points_per_scene,
            perspective_frames: (self.frames_min, self.frames_max),
            perspective_size: (self.frame_width, self.frame_height),
            panorama_size: (self.pano_width, self.pano_height),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| CliError::Config { line: None, message: msg };
        if self.levels < 1 || self.base_channels < 1 {
            return Err(bad("levels and base_channels must be >= 1".into()));
        }
        if self.task_classes < 3 {
            return Err(bad("task_classes must be >= 3 (floor, wall, furniture)".into()));
        }
        if self.teacher_classes < 1 {
            return Err(bad("teacher_classes must be >= 1".into()));
        }
        if self.voxel_resolution < 1 {
            return Err(bad("voxel_resolution must be >= 1".into()));
        }
        if self.frames_min < 1 || self.frames_max < self.frames_min {
            return Err(bad("frames_min..frames_max must be a nonempty range".into()));
        }
        if self.train_scenes + self.eval_scenes > self.scenes {
            return Err(bad(format!(
                "train_scenes + eval_scenes = {} exceeds scenes = {}",
                self.train_scenes + self.eval_scenes,
                self.scenes
            )));
        }
        if self.budget == BudgetKind::LimitedAnnotations && self.budget_points < 1 {
            return Err(bad("budget_points must be >= 1".into()));
        }
        if self.budget == BudgetKind::LimitedReconstructions
            && !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0)
        {
            return Err(bad("budget_fraction must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(bad("ema_alpha must be in [0, 1]".into()));
        }
        if self.entropy_weight.is_some_and(|w| w < 0.0)
            || self.consistency_weight.is_some_and(|w| w < 0.0)
        {
            return Err(bad("loss weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Apply one `key = value` assignment.
    fn assign(&mut self, key: &str, value: &str, line: usize) -> Result<(), CliError> {
        let bad = |message: String| CliError::Config {
            line: Some(line),
            message,
        };
        macro_rules! parse {
            ($ty:ty) => {
                value
                    .parse::<$ty>()
                    .map_err(|_| bad(format!("cannot parse {key} value '{value}'")))?
            };
        }
        match key {
            "command" => self.command = value.to_string(),
            "seed" => self.seed = parse!(u64),
            "world_dir" => self.world_dir = PathBuf::from(value),
            "checkpoint_dir" => self.checkpoint_dir = PathBuf::from(value),
            "report_dir" => self.report_dir = PathBuf::from(value),
            "scenes" => self.scenes = parse!(usize),
            "train_scenes" => self.train_scenes = parse!(usize),
            "eval_scenes" => self.eval_scenes = parse!(usize),
            "points_per_scene" => self.points_per_scene = parse!(usize),
            "frame_width" => self.frame_width = parse!(usize),
            "frame_height" => self.frame_height = parse!(usize),
            "pano_width" => self.pano_width = parse!(usize),
            "pano_height" => self.pano_height = parse!(usize),
            "frames_min" => self.frames_min = parse!(usize),
            "frames_max" => self.frames_max = parse!(usize),
            "levels" => self.levels = parse!(usize),
            "base_channels" => self.base_channels = parse!(usize),
            "teacher_classes" => self.teacher_classes = parse!(usize),
            "task_classes" => self.task_classes = parse!(usize),
            "optimizer" => {
                self.optimizer = match value {
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    other => return Err(bad(format!("unknown optimizer '{other}' (sgd|adam)"))),
                }
            }
            "lr" => self.lr = Some(parse!(f64)),
            "epochs" => self.epochs = parse!(usize),
            "batch_size" => self.batch_size = parse!(usize),
            "budget" => {
                self.budget = match value {
                    "full" => BudgetKind::Full,
                    "la" => BudgetKind::LimitedAnnotations,
                    "lr" => BudgetKind::LimitedReconstructions,
                    other => return Err(bad(format!("unknown budget '{other}' (full|la|lr)"))),
                }
            }
            "budget_points" => self.budget_points = parse!(usize),
            "budget_fraction" => self.budget_fraction = parse!(f64),
            "entropy_weight" => self.entropy_weight = Some(parse!(f64)),
            "consistency_weight" => self.consistency_weight = Some(parse!(f64)),
            "ema_alpha" => self.ema_alpha = parse!(f64),
            "rampup_epochs" => self.rampup_epochs = parse!(usize),
            "task" => {
                self.task = match value {
                    "cls" => TaskKind::Classification,
                    "seg" => TaskKind::Segmentation,
                    other => return Err(bad(format!("unknown task '{other}' (cls|seg)"))),
                }
            }
            "teacher" => self.teacher = value.to_string(),
            "voxel_resolution" => self.voxel_resolution = parse!(usize),
            "init_checkpoint" => self.init_checkpoint = value.to_string(),
            "predictions_dir" => self.predictions_dir = value.to_string(),
            "augment" => {
                self.augment = match value {
                    "on" => true,
                    "off" => false,
                    other => return Err(bad(format!("unknown augment '{other}' (on|off)"))),
                }
            }
            other => {
                return Err(bad(format!("unknown key '{other}'")));
            }
        }
        Ok(())
    }

    /// Parse configuration text. An empty file yields all defaults.
    pub fn parse(text: &str) -> Result<ExperimentConfig, CliError> {
        let mut config = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Config {
                    line: Some(line_no),
                    message: format!("expected 'key = value', found '{line}'"),
                });
            };
            config.assign(key.trim(), value.trim(), line_no)?;
        }
        Ok(config)
    }

    /// Full key = value snapshot with every effective value explicit.
    pub fn to_manifest_string(&self, command: &str) -> String {
        let optimizer = match self.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        let budget = match self.budget {
            BudgetKind::Full => "full",
            BudgetKind::LimitedAnnotations => "la",
            BudgetKind::LimitedReconstructions => "lr",
        };
        let task = match self.task {
            TaskKind::Classification => "cls",
            TaskKind::Segmentation => "seg",
        };
        let semi = self.semi_config();
        let mut out = String::new();
        out.push_str(&format!("# lift3d-{} manifest\n", env!("CARGO_PKG_VERSION")));
        out.push_str(&format!("command = {command}\n"));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str(&format!("world_dir = {}\n", self.world_dir.display()));
        out.push_str(&format!("checkpoint_dir = {}\n", self.checkpoint_dir.display()));
        out.push_str(&format!("report_dir = {}\n", self.report_dir.display()));
        out.push_str(&format!("scenes = {}\n", self.scenes));
        out.push_str(&format!("train_scenes = {}\n", self.train_scenes));
        out.push_str(&format!("eval_scenes = {}\n", self.eval_scenes));
        out.push_str(&format!("points_per_scene = {}\n", self.points_per_scene));
        out.push_str(&format!("frame_width = {}\n", self.frame_width));
        out.push_str(&format!("frame_height = {}\n", self.frame_height));
        out.push_str(&format!("pano_width = {}\n", self.pano_width));
        out.push_str(&format!("pano_height = {}\n", self.pano_height));
        out.push_str(&format!("frames_min = {}\n", self.frames_min));
        out.push_str(&format!("frames_max = {}\n", self.frames_max));
        out.push_str(&format!("levels = {}\n", self.levels));
        out.push_str(&format!("base_channels = {}\n", self.base_channels));
        out.push_str(&format!("teacher_classes = {}\n", self.teacher_classes));
        out.push_str(&format!("task_classes = {}\n", self.task_classes));
        out.push_str(&format!("optimizer = {optimizer}\n"));
        out.push_str(&format!("lr = {}\n", self.lr()));
        out.push_str(&format!("epochs = {}\n", self.epochs));
        out.push_str(&format!("batch_size = {}\n", self.batch_size));
        out.push_str(&format!("budget = {budget}\n"));
        out.push_str(&format!("budget_points = {}\n", self.budget_points));
        out.push_str(&format!("budget_fraction = {}\n", self.budget_fraction));
        out.push_str(&format!("entropy_weight = {}\n", semi.entropy_weight));
        out.push_str(&format!("consistency_weight = {}\n", semi.consistency_weight));
        out.push_str(&format!("ema_alpha = {}\n", self.ema_alpha));
        out.push_str(&format!("rampup_epochs = {}\n", self.rampup_epochs));
        out.push_str(&format!("task = {task}\n"));
        out.push_str(&format!("teacher = {}\n", self.teacher));
        out.push_str(&format!("voxel_resolution = {}\n", self.voxel_resolution));
        out.push_str(&format!("init_checkpoint = {}\n", self.init_checkpoint));
        out.push_str(&format!("predictions_dir = {}\n", self.predictions_dir));
        out.push_str(&format!("augment = {}\n", if self.augment { "on" } else { "off" }));
        out
    }
}

impl fmt::Display for BudgetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BudgetKind::Full => write!(f, "full"),
            BudgetKind::LimitedAnnotations => write!(f, "la"),
            BudgetKind::LimitedReconstructions => write!(f, "lr"),
        }
    }
}

/// Load a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    ExperimentConfig::parse(&text)
}

/// Write `manifest-<command>.txt` next to a run's outputs.
pub fn save_manifest(config: &ExperimentConfig, command: &str, out_dir: &Path) -> Result<PathBuf, CliError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join(format!("manifest-{command}.txt"));
    fs::write(&path, config.to_manifest_string(command))
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let config = ExperimentConfig::parse("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
        assert_eq!(config.lr(), 0.05);
    }

    #[test]
    fn keys_assign_and_comments_are_ignored() {
        let text = "\n# top comment\nema_alpha = 0.999\nseed = 42 # trailing\noptimizer = adam\n";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.semi_config().ema_alpha, 0.999);
        assert_eq!(config.seed, 42);
        assert_eq!(config.optimizer, OptimizerKind::Adam);
        assert_eq!(config.lr(), 0.001, "adam default applies when lr unset");
    }

    #[test]
    fn parse_error_carries_line_number() {
        let err = ExperimentConfig::parse("seed = 1\nlr = banana\n").unwrap_err();
        match err {
            CliError::Config { line, message } => {
                assert_eq!(line, Some(2));
                assert!(message.contains("lr"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_a_hard_error() {
        let err = ExperimentConfig::parse("sede = 1\n").unwrap_err();
        match err {
            CliError::Config { line, message } => {
                assert_eq!(line, Some(1));
                assert!(message.contains("sede"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_round_trips() {
        let mut config = ExperimentConfig::default();
        config.seed = 9;
        config.set_lr(0.025);
        config.budget = BudgetKind::LimitedAnnotations;
        config.teacher = "oracle:0.2,0.7".into();
        config.augment = false;
        let manifest = config.to_manifest_string("finetune");
        let back = ExperimentConfig::parse(&manifest).unwrap();
        assert_eq!(back.command, "finetune");
        assert_eq!(back.seed, 9);
        assert_eq!(back.lr(), 0.025);
        assert_eq!(back.budget, BudgetKind::LimitedAnnotations);
        assert_eq!(back.teacher, "oracle:0.2,0.7");
        assert!(!back.augment);
        // Round-tripping a manifest reproduces the manifest.
        assert_eq!(back.to_manifest_string("finetune"), manifest);
    }

    #[test]
    fn semi_defaults_depend_on_task() {
        let seg = ExperimentConfig::parse("task = seg\n").unwrap();
        assert_eq!(seg.semi_config().entropy_weight, 0.25);
        let cls = ExperimentConfig::parse("task = cls\n").unwrap();
        assert_eq!(cls.semi_config().entropy_weight, 0.01);
        let overridden = ExperimentConfig::parse("task = cls\nentropy_weight = 0.5\n").unwrap();
        assert_eq!(overridden.semi_config().entropy_weight, 0.5);
    }

    #[test]
    fn validation_catches_bad_ranges() {
        let mut config = ExperimentConfig::default();
        config.train_scenes = 10;
        config.eval_scenes = 10;
        config.scenes = 8;
        assert!(config.validate().is_err());

        let mut config = ExperimentConfig::default();
        config.budget = BudgetKind::LimitedReconstructions;
        config.budget_fraction = 1.5;
        assert!(config.validate().is_err());
    }
}
