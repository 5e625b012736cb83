//! Desk-scale sparse-voxel encoder-decoder with reverse-mode gradients.
//!
//! The network is a submanifold-convolution U-Net: each encoder level is
//! conv -> norm -> ReLU followed by 2x max pooling, the decoder mirrors
//! it with nearest upsampling and skip concatenation, and linear heads
//! map features to class distributions. Forward passes record the layer
//! traces needed for an exact backward pass; all math is f64 and fully
//! deterministic.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod plan;
mod tensor;

pub use checkpoint::Checkpoint;
pub use params::{ModelParams, ParamEntry};
pub use tensor::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cloud::SparseVoxelGrid;
use crate::error::{Error, Result};
use layers::{
    concat_cols, conv_backward, conv_forward, global_maxpool, global_maxpool_backward,
    linear_backward, linear_forward, maxpool_backward, maxpool_forward, norm_backward,
    norm_forward_eval, norm_forward_train, relu_backward, relu_forward, softmax_backward_rows,
    softmax_rows, split_cols, upsample_backward, upsample_forward, NormCache, NORM_MOMENTUM,
};
use plan::GridPlan;

/// Input feature width: one color channel triple per voxel.
pub const INPUT_CHANNELS: usize = 3;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Resolution levels of the U-Net.
    pub levels: usize,
    /// Channels at the finest level; doubled per level.
    pub base_channels: usize,
    /// Output width of the pre-training head.
    pub teacher_classes: usize,
    /// Output width of the task heads.
    pub task_classes: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            levels: 3,
            base_channels: 16,
            teacher_classes: 8,
            task_classes: 8,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.base_channels < 1 {
            return Err(Error::InvalidInput(
                "network needs at least 1 level and 1 base channel".into(),
            ));
        }
        if self.teacher_classes < 1 || self.task_classes < 1 {
            return Err(Error::InvalidInput("class counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Channels at a given level.
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

/// Which linear heads a model instance carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Heads {
    pub pretrain: bool,
    pub seg: bool,
    pub cls: bool,
}

impl Heads {
    pub fn pretrain_only() -> Self {
        Heads {
            pretrain: true,
            ..Heads::default()
        }
    }

    pub fn segmentation() -> Self {
        Heads {
            seg: true,
            ..Heads::default()
        }
    }

    pub fn classification() -> Self {
        Heads {
            cls: true,
            ..Heads::default()
        }
    }
}

/// Forward-pass mode.
///
/// `Train` uses batch statistics, updates running statistics, and records
/// a tape. `Frozen` is `Train` without the running-statistics update
/// (used by gradient checking, where repeated forwards must be pure).
/// `Eval` uses running statistics and records nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Frozen,
    Eval,
}

/// Name prefix of the pre-training head's parameters.
pub const PRETRAIN_HEAD_PREFIX: &str = "head_pre.";

struct BlockTrace {
    conv_in: Tensor,
    norm: NormCache,
    relu_in: Tensor,
    /// Pool argmax feeding this encoder level (levels > 0).
    pool_argmax: Option<Vec<u32>>,
}

enum HeadTrace {
    Seg {
        head: &'static str,
        input: Tensor,
        probs: Tensor,
    },
    Cls {
        input_rows: usize,
        pool_argmax: Vec<u32>,
        pooled: Tensor,
        probs: Tensor,
    },
}

struct Tape {
    plan: GridPlan,
    enc: Vec<BlockTrace>,
    dec: Vec<BlockTrace>,
    head: HeadTrace,
}

/// The sparse-voxel encoder-decoder with its named parameters.
#[derive(Debug)]
pub struct SparseUnet {
    config: NetConfig,
    heads: Heads,
    params: ModelParams,
    tape: Option<Tape>,
}

impl Clone for SparseUnet {
    fn clone(&self) -> Self {
        SparseUnet {
            config: self.config,
            heads: self.heads,
            params: self.params.clone(),
            tape: None,
        }
    }
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tape({} levels)", self.plan.levels.len())
    }
}

fn uniform_init(rng: &mut ChaCha8Rng, shape: Vec<usize>, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let len: usize = shape.iter().product();
    let values = (0..len).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape, values)
}

impl SparseUnet {
    /// Build a model with freshly initialized parameters.
    ///
    /// Backbone parameters are created before head parameters, so two
    /// models with the same seed share backbone initialization no matter
    /// which heads they carry.
    pub fn new(config: NetConfig, heads: Heads, seed: u64) -> Result<SparseUnet> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();

        // Conv blocks carry no bias: the normalization that follows
        // subtracts the per-channel mean, so a conv bias would have a
        // structurally zero gradient; the norm shift is the offset.
        let add_block = |params: &mut ModelParams, prefix: String, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng| {
            let fan_in = 27 * c_in;
            let fan_out = 27 * c_out;
            params.insert(
                &format!("{prefix}.conv.weight"),
                uniform_init(rng, vec![27, c_in, c_out], fan_in, fan_out),
                true,
            );
            params.insert(&format!("{prefix}.norm.scale"), Tensor::filled(vec![c_out], 1.0), true);
            params.insert(&format!("{prefix}.norm.shift"), Tensor::zeros(vec![c_out]), true);
            params.insert(
                &format!("{prefix}.norm.running_mean"),
                Tensor::zeros(vec![c_out]),
                false,
            );
            params.insert(
                &format!("{prefix}.norm.running_var"),
                Tensor::filled(vec![c_out], 1.0),
                false,
            );
        };

        for level in 0..config.levels {
            let c_in = if level == 0 {
                INPUT_CHANNELS
            } else {
                config.channels(level - 1)
            };
            add_block(&mut params, format!("enc{level}"), c_in, config.channels(level), &mut rng);
        }
        for level in (0..config.levels.saturating_sub(1)).rev() {
            let c_in = config.channels(level + 1) + config.channels(level);
            add_block(&mut params, format!("dec{level}"), c_in, config.channels(level), &mut rng);
        }

        let feat = config.channels(0);
        let top = config.channels(config.levels - 1);
        if heads.pretrain {
            params.insert(
                "head_pre.weight",
                uniform_init(&mut rng, vec![feat, config.teacher_classes], feat, config.teacher_classes),
                true,
            );
            params.insert("head_pre.bias", Tensor::zeros(vec![config.teacher_classes]), true);
        }
        if heads.seg {
            params.insert(
                "head_seg.weight",
                uniform_init(&mut rng, vec![feat, config.task_classes], feat, config.task_classes),
                true,
            );
            params.insert("head_seg.bias", Tensor::zeros(vec![config.task_classes]), true);
        }
        if heads.cls {
            params.insert(
                "head_cls.weight",
                uniform_init(&mut rng, vec![top, config.task_classes], top, config.task_classes),
                true,
            );
            params.insert("head_cls.bias", Tensor::zeros(vec![config.task_classes]), true);
        }

        Ok(SparseUnet {
            config,
            heads,
            params,
            tape: None,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn heads(&self) -> Heads {
        self.heads
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        self.params.to_checkpoint()
    }

    pub fn load_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        self.params.load_checkpoint(checkpoint)
    }

    /// Conv -> norm -> relu at one level; returns the trace and output.
    fn block_forward(&mut self, prefix: &str, kernel_level: usize, plan: &GridPlan, conv_in: Tensor, pool_argmax: Option<Vec<u32>>, mode: Mode) -> (BlockTrace, Tensor) {
        let weight = format!("{prefix}.conv.weight");
        let c_out = self.params.get(&format!("{prefix}.norm.scale")).expect("norm scale exists").len();
        let conv_out = conv_forward(
            &plan.levels[kernel_level].kernel,
            self.params.values(&weight),
            &vec![0.0; c_out],
            &conv_in,
        );

        let scale = format!("{prefix}.norm.scale");
        let shift = format!("{prefix}.norm.shift");
        let (norm_out, cache) = match mode {
            Mode::Train | Mode::Frozen => {
                let (out, cache, mean, var) = norm_forward_train(
                    &conv_out,
                    self.params.values(&scale),
                    self.params.values(&shift),
                );
                if mode == Mode::Train {
                    let rm = format!("{prefix}.norm.running_mean");
                    let rv = format!("{prefix}.norm.running_var");
                    for (name, batch) in [(rm, mean), (rv, var)] {
                        let buf = self.params.get_mut(&name).expect("norm buffers exist");
                        for (r, b) in buf.values_mut().iter_mut().zip(&batch) {
                            *r = NORM_MOMENTUM * *r + (1.0 - NORM_MOMENTUM) * b;
                        }
                    }
                }
                (out, cache)
            }
            Mode::Eval => {
                let out = norm_forward_eval(
                    &conv_out,
                    self.params.values(&scale),
                    self.params.values(&shift),
                    self.params.values(&format!("{prefix}.norm.running_mean")),
                    self.params.values(&format!("{prefix}.norm.running_var")),
                );
                (
                    out,
                    NormCache {
                        inv_std: Vec::new(),
                        x_hat: Tensor::zeros(vec![0, 0]),
                    },
                )
            }
        };

        let relu_out = relu_forward(&norm_out);
        (
            BlockTrace {
                conv_in,
                norm: cache,
                relu_in: norm_out,
                pool_argmax,
            },
            relu_out,
        )
    }

    /// Encoder sweep; returns traces and per-level relu outputs.
    fn encoder_forward(&mut self, plan: &GridPlan, features: &Tensor, mode: Mode) -> (Vec<BlockTrace>, Vec<Tensor>) {
        let mut traces = Vec::with_capacity(self.config.levels);
        let mut outputs: Vec<Tensor> = Vec::with_capacity(self.config.levels);
        for level in 0..self.config.levels {
            let (conv_in, pool_argmax) = if level == 0 {
                (features.clone(), None)
            } else {
                let child_to_parent = plan.levels[level - 1]
                    .parent
                    .as_ref()
                    .expect("non-top levels have parents");
                let n_parents = plan.levels[level].coords.len();
                let (pooled, argmax) = maxpool_forward(child_to_parent, n_parents, &outputs[level - 1]);
                (pooled, Some(argmax))
            };
            let (trace, out) = self.block_forward(&format!("enc{level}"), level, plan, conv_in, pool_argmax, mode);
            traces.push(trace);
            outputs.push(out);
        }
        (traces, outputs)
    }

    fn head_linear(&self, head: &'static str, input: &Tensor) -> Tensor {
        let logits = linear_forward(
            input,
            self.params.values(&format!("{head}.weight")),
            self.params.values(&format!("{head}.bias")),
        );
        softmax_rows(&logits)
    }

    fn forward_seg_with_head(&mut self, grid: &SparseVoxelGrid, head: &'static str, mode: Mode) -> Result<Tensor> {
        if grid.coords.is_empty() {
            return Err(Error::EmptyInput("forward pass needs a non-empty grid"));
        }
        let (_, f) = grid.features.dims2();
        if f != INPUT_CHANNELS {
            return Err(Error::ShapeMismatch(format!(
                "grid features have {f} channels, expected {INPUT_CHANNELS}"
            )));
        }

        let levels = self.config.levels;
        let plan = GridPlan::new(&grid.coords, levels);
        let (enc, enc_out) = self.encoder_forward(&plan, &grid.features, mode);

        let mut dec = Vec::with_capacity(levels.saturating_sub(1));
        let mut current = enc_out[levels - 1].clone();
        for level in (0..levels.saturating_sub(1)).rev() {
            let child_to_parent = plan.levels[level]
                .parent
                .as_ref()
                .expect("non-top levels have parents");
            let up = upsample_forward(child_to_parent, &current);
            let cat = concat_cols(&up, &enc_out[level]);
            let (trace, out) = self.block_forward(&format!("dec{level}"), level, &plan, cat, None, mode);
            dec.push(trace);
            current = out;
        }

        let probs = self.head_linear(head, &current);
        if mode != Mode::Eval {
            self.tape = Some(Tape {
                plan,
                enc,
                dec,
                head: HeadTrace::Seg {
                    head,
                    input: current,
                    probs: probs.clone(),
                },
            });
        }
        Ok(probs)
    }

    /// Per-voxel class distributions from the task segmentation head.
    pub fn forward_segment(&mut self, grid: &SparseVoxelGrid, mode: Mode) -> Result<Tensor> {
        if !self.heads.seg {
            return Err(Error::MissingHead("segmentation"));
        }
        self.forward_seg_with_head(grid, "head_seg", mode)
    }

    /// Per-voxel class distributions from the pre-training head.
    pub fn forward_pretrain(&mut self, grid: &SparseVoxelGrid, mode: Mode) -> Result<Tensor> {
        if !self.heads.pretrain {
            return Err(Error::MissingHead("pre-training"));
        }
        self.forward_seg_with_head(grid, "head_pre", mode)
    }

    /// Whole-input class distribution: encoder, global max pooling, then
    /// the classification head. The decoder is not used.
    pub fn forward_classify(&mut self, grid: &SparseVoxelGrid, mode: Mode) -> Result<Tensor> {
        if !self.heads.cls {
            return Err(Error::MissingHead("classification"));
        }
        if grid.coords.is_empty() {
            return Err(Error::EmptyInput("forward pass needs a non-empty grid"));
        }
        let levels = self.config.levels;
        let plan = GridPlan::new(&grid.coords, levels);
        let (enc, enc_out) = self.encoder_forward(&plan, &grid.features, mode);
        let top = &enc_out[levels - 1];
        let (pooled_values, pool_argmax) = global_maxpool(top);
        let pooled = Tensor::new(vec![1, pooled_values.len()], pooled_values);
        let probs = self.head_linear("head_cls", &pooled);
        if mode != Mode::Eval {
            self.tape = Some(Tape {
                plan,
                enc,
                dec: Vec::new(),
                head: HeadTrace::Cls {
                    input_rows: top.dims2().0,
                    pool_argmax,
                    pooled,
                    probs: probs.clone(),
                },
            });
        }
        Ok(probs)
    }

    /// Accumulate parameter gradients for the recorded forward pass,
    /// given the loss gradient with respect to the output probabilities.
    pub fn backward(&mut self, grad_probs: &Tensor) -> Result<()> {
        let tape = self.tape.take().ok_or(Error::NoForwardRecorded)?;
        let levels = self.config.levels;

        // Accumulated gradients with respect to each encoder relu output.
        let mut d_enc_out: Vec<Option<Tensor>> = (0..levels).map(|_| None).collect();

        match &tape.head {
            HeadTrace::Seg { head, input, probs } => {
                if grad_probs.shape() != probs.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient shape {:?} does not match output shape {:?}",
                        grad_probs.shape(),
                        probs.shape()
                    )));
                }
                let d_logits = softmax_backward_rows(probs, grad_probs);
                let weight = format!("{head}.weight");
                let (d_feat, dw, db) =
                    linear_backward(input, self.params.values(&weight), &d_logits);
                self.params.accumulate_grad(&weight, &dw);
                self.params.accumulate_grad(&format!("{head}.bias"), &db);

                let mut d_current = d_feat;
                for (idx, trace) in tape.dec.iter().enumerate().rev() {
                    // Traces were pushed coarse-to-fine; idx i sits at
                    // level levels-2-i.
                    let level = levels - 2 - idx;
                    // Grad wrt the conv input, the concat [upsampled | skip].
                    let d_cat = self.block_backward(&format!("dec{level}"), level, &tape.plan, trace, &d_current);
                    let up_cols = self.config.channels(level + 1);
                    let (d_up, d_skip) = split_cols(&d_cat, up_cols);
                    accumulate(&mut d_enc_out[level], d_skip);
                    let child_to_parent = tape.plan.levels[level].parent.as_ref().unwrap();
                    let n_parents = tape.plan.levels[level + 1].coords.len();
                    let d_above = upsample_backward(child_to_parent, n_parents, &d_up);
                    if level + 1 == levels - 1 {
                        accumulate(&mut d_enc_out[levels - 1], d_above);
                    } else {
                        d_current = d_above;
                    }
                }
                if tape.dec.is_empty() {
                    accumulate(&mut d_enc_out[0], d_current);
                }
            }
            HeadTrace::Cls {
                input_rows,
                pool_argmax,
                pooled,
                probs,
            } => {
                if grad_probs.shape() != probs.shape() {
                    return Err(Error::ShapeMismatch(format!(
                        "gradient shape {:?} does not match output shape {:?}",
                        grad_probs.shape(),
                        probs.shape()
                    )));
                }
                let d_logits = softmax_backward_rows(probs, grad_probs);
                let (d_pooled, dw, db) =
                    linear_backward(pooled, self.params.values("head_cls.weight"), &d_logits);
                self.params.accumulate_grad("head_cls.weight", &dw);
                self.params.accumulate_grad("head_cls.bias", &db);
                let d_top = global_maxpool_backward(pool_argmax, *input_rows, d_pooled.values());
                accumulate(&mut d_enc_out[levels - 1], d_top);
            }
        }

        for level in (0..levels).rev() {
            let g = d_enc_out[level]
                .take()
                .expect("every encoder level feeds the loss");
            let d_conv_in = self.block_backward(&format!("enc{level}"), level, &tape.plan, &tape.enc[level], &g);
            if level > 0 {
                let argmax = tape.enc[level]
                    .pool_argmax
                    .as_ref()
                    .expect("pooled levels record argmax");
                let n_children = tape.plan.levels[level - 1].coords.len();
                let d_children = maxpool_backward(argmax, n_children, &d_conv_in);
                accumulate(&mut d_enc_out[level - 1], d_children);
            }
        }
        Ok(())
    }

    /// Relu -> norm -> conv backward for one block; returns the gradient
    /// with respect to the block's conv input.
    fn block_backward(&mut self, prefix: &str, kernel_level: usize, plan: &GridPlan, trace: &BlockTrace, grad_out: &Tensor) -> Tensor {
        let d_relu_in = relu_backward(&trace.relu_in, grad_out);
        let scale = format!("{prefix}.norm.scale");
        let (d_norm_in, d_scale, d_shift) =
            norm_backward(&trace.norm, self.params.values(&scale), &d_relu_in);
        self.params.accumulate_grad(&scale, &d_scale);
        self.params.accumulate_grad(&format!("{prefix}.norm.shift"), &d_shift);

        let weight = format!("{prefix}.conv.weight");
        let (d_conv_in, dw, _db) = conv_backward(
            &plan.levels[kernel_level].kernel,
            self.params.values(&weight),
            &trace.conv_in,
            &d_norm_in,
        );
        self.params.accumulate_grad(&weight, &dw);
        d_conv_in
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        None => *slot = Some(delta),
        Some(existing) => {
            for (a, b) in existing.values_mut().iter_mut().zip(delta.values()) {
                *a += b;
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::cloud::{voxelize, PointCloud};

    pub(crate) fn toy_grid(n: usize, seed: u64) -> SparseVoxelGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cloud = PointCloud {
            positions: (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..2.0),
                        rng.random_range(0.0..2.0),
                        rng.random_range(0.0..2.0),
                    ]
                })
                .collect(),
            colors: (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..1.0),
                    ]
                })
                .collect(),
            ..PointCloud::default()
        };
        voxelize(&cloud, 4).unwrap()
    }

    fn small_config() -> NetConfig {
        NetConfig {
            levels: 2,
            base_channels: 4,
            teacher_classes: 5,
            task_classes: 3,
        }
    }

    #[test]
    fn zero_weights_give_uniform_probs() {
        let grid = toy_grid(20, 1);
        let mut model = SparseUnet::new(small_config(), Heads::segmentation(), 0).unwrap();
        let names: Vec<String> = model.params().iter().map(|e| e.name.clone()).collect();
        for name in names {
            let t = model.params_mut().get_mut(&name).unwrap();
            t.values_mut().fill(0.0);
        }
        // Degenerate scale also zeroes the normalized activations, so the
        // logits are all zero and softmax is uniform.
        let probs = model.forward_segment(&grid, Mode::Frozen).unwrap();
        let (m, c) = probs.dims2();
        assert_eq!(c, 3);
        for row in 0..m {
            for &p in probs.row(row) {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn seg_rows_sum_to_one() {
        let grid = toy_grid(30, 2);
        let mut model = SparseUnet::new(small_config(), Heads::segmentation(), 3).unwrap();
        let probs = model.forward_segment(&grid, Mode::Eval).unwrap();
        let (m, _) = probs.dims2();
        for row in 0..m {
            let sum: f64 = probs.row(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let grid = toy_grid(25, 4);
        let mut a = SparseUnet::new(small_config(), Heads::segmentation(), 7).unwrap();
        let mut b = SparseUnet::new(small_config(), Heads::segmentation(), 7).unwrap();
        let pa = a.forward_segment(&grid, Mode::Train).unwrap();
        let pb = b.forward_segment(&grid, Mode::Train).unwrap();
        assert_eq!(pa.values(), pb.values());
        // Backward too.
        let g = Tensor::filled(pa.shape().to_vec(), 0.37);
        a.zero_grads();
        b.zero_grads();
        a.backward(&g).unwrap();
        b.backward(&g).unwrap();
        for (ea, eb) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(ea.tensor.grad().unwrap(), eb.tensor.grad().unwrap());
        }
    }

    #[test]
    fn backward_without_forward_errors() {
        let mut model = SparseUnet::new(small_config(), Heads::segmentation(), 0).unwrap();
        let g = Tensor::zeros(vec![1, 3]);
        assert!(matches!(model.backward(&g), Err(Error::NoForwardRecorded)));
    }

    #[test]
    fn empty_grid_rejected() {
        let mut model = SparseUnet::new(small_config(), Heads::segmentation(), 0).unwrap();
        let grid = SparseVoxelGrid {
            resolution: 4,
            coords: vec![],
            features: Tensor::zeros(vec![0, 3]),
            point_to_voxel: vec![],
        };
        assert!(matches!(
            model.forward_segment(&grid, Mode::Eval),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn missing_head_rejected() {
        let grid = toy_grid(10, 5);
        let mut model = SparseUnet::new(small_config(), Heads::pretrain_only(), 0).unwrap();
        assert!(matches!(
            model.forward_segment(&grid, Mode::Eval),
            Err(Error::MissingHead("segmentation"))
        ));
        assert!(model.forward_pretrain(&grid, Mode::Eval).is_ok());
    }

    #[test]
    fn classify_distribution_and_duplicate_invariance() {
        let grid = toy_grid(15, 6);
        let mut model = SparseUnet::new(small_config(), Heads::classification(), 9).unwrap();
        let probs = model.forward_classify(&grid, Mode::Eval).unwrap();
        assert_eq!(probs.dims2(), (1, 3));
        let sum: f64 = probs.values().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_voxel_classify_pools_identity() {
        // With one voxel the pooled vector equals that voxel's encoding,
        // so duplicating the voxel's feature row changes nothing.
        let cloud = PointCloud {
            positions: vec![[0.0, 0.0, 0.0]],
            colors: vec![[0.5, 0.5, 0.5]],
            ..PointCloud::default()
        };
        let grid = voxelize(&cloud, 4).unwrap();
        let mut model = SparseUnet::new(small_config(), Heads::classification(), 11).unwrap();
        let p1 = model.forward_classify(&grid, Mode::Eval).unwrap();
        let p2 = model.forward_classify(&grid, Mode::Eval).unwrap();
        assert_eq!(p1.values(), p2.values());
    }

    #[test]
    fn unused_head_gets_zero_grads() {
        let grid = toy_grid(12, 8);
        let mut model = SparseUnet::new(
            small_config(),
            Heads {
                pretrain: true,
                seg: true,
                cls: true,
            },
            13,
        )
        .unwrap();
        model.zero_grads();
        let probs = model.forward_segment(&grid, Mode::Frozen).unwrap();
        // Per-row gradient concentrated on class 0 (a constant gradient
        // over a probability row sits in softmax's null space).
        let mut g = Tensor::zeros(probs.shape().to_vec());
        for row in 0..probs.dims2().0 {
            g.row_mut(row)[0] = 1.0;
        }
        model.backward(&g).unwrap();
        for name in ["head_pre.weight", "head_pre.bias", "head_cls.weight", "head_cls.bias"] {
            let grad = model.params().get(name).unwrap().grad().unwrap();
            assert!(grad.iter().all(|&v| v == 0.0), "{name} should be untouched");
        }
        let seg_grad = model.params().get("head_seg.weight").unwrap().grad().unwrap();
        assert!(seg_grad.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn same_seed_shares_backbone_init_across_head_sets() {
        let a = SparseUnet::new(small_config(), Heads::pretrain_only(), 21).unwrap();
        let b = SparseUnet::new(small_config(), Heads::segmentation(), 21).unwrap();
        for (ea, eb) in a
            .params()
            .iter()
            .filter(|e| !e.name.starts_with("head_"))
            .zip(b.params().iter().filter(|e| !e.name.starts_with("head_")))
        {
            assert_eq!(ea.name, eb.name);
            assert_eq!(ea.tensor.values(), eb.tensor.values());
        }
    }

    #[test]
    fn submanifold_occupancy_is_preserved() {
        // Output rows == input voxel count at the finest level for any
        // depth, which is what per-voxel heads rely on.
        for levels in 1..=3 {
            let grid = toy_grid(40, 100 + levels as u64);
            let cfg = NetConfig {
                levels,
                base_channels: 2,
                teacher_classes: 2,
                task_classes: 2,
            };
            let mut model = SparseUnet::new(cfg, Heads::segmentation(), 0).unwrap();
            let probs = model.forward_segment(&grid, Mode::Eval).unwrap();
            assert_eq!(probs.dims2().0, grid.num_voxels());
        }
    }
}
