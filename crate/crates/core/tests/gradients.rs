//! Finite-difference verification of every layer's backward pass and of
//! the composed model.

use lift3d::cloud::{voxelize, PointCloud};
use lift3d::distill::{soft_cross_entropy, soft_cross_entropy_grad};
use lift3d::net::gradcheck::{check_gradients, FnProbLoss, ForwardPath};
use lift3d::net::layers::{
    concat_cols, conv_backward, conv_forward, global_maxpool, global_maxpool_backward,
    linear_backward, linear_forward, maxpool_backward, maxpool_forward, norm_backward,
    norm_forward_train, relu_backward, relu_forward, softmax_backward_rows, softmax_rows,
    split_cols, upsample_backward, upsample_forward,
};
use lift3d::net::plan::GridPlan;
use lift3d::net::{Heads, Mode, NetConfig, SparseUnet, Tensor};
use lift3d::semi::{consistency_loss, consistency_loss_grad, entropy_loss, entropy_loss_grad};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random_values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn toy_grid(n_points: usize, seed: u64) -> lift3d::cloud::SparseVoxelGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cloud = PointCloud {
        positions: (0..n_points)
            .map(|_| {
                [
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..2.0),
                    rng.random_range(0.0..2.0),
                ]
            })
            .collect(),
        colors: (0..n_points)
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

/// FD-check a scalar function of a parameter vector against an analytic
/// gradient, component by component.
fn fd_against<F>(params: &mut [f64], analytic: &[f64], mut f: F) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let mut worst = 0.0f64;
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + EPS;
        let plus = f(params);
        params[i] = orig - EPS;
        let minus = f(params);
        params[i] = orig;
        let fd = (plus - minus) / (2.0 * EPS);
        worst = worst.max(rel_err(analytic[i], fd));
    }
    worst
}

/// A generic downstream scalar so layer outputs reduce to one number:
/// weighted sum with fixed pseudo-random weights.
fn probe_loss(out: &Tensor, probe: &[f64]) -> f64 {
    out.values().iter().zip(probe).map(|(v, p)| v * p).sum()
}

fn probe_grad(shape: &[usize], probe: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), probe.to_vec())
}

#[test]
fn conv_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = toy_grid(12, 1);
    let plan = GridPlan::new(&grid.coords, 1);
    let kernel = &plan.levels[0].kernel;
    let m = grid.coords.len();
    let (c_in, c_out) = (3, 4);

    let mut weight = random_values(&mut rng, 27 * c_in * c_out);
    let mut bias = random_values(&mut rng, c_out);
    let input = Tensor::new(vec![m, c_in], random_values(&mut rng, m * c_in));
    let probe = random_values(&mut rng, m * c_out);

    let out = conv_forward(kernel, &weight, &bias, &input);
    let (d_in, d_w, d_b) = conv_backward(kernel, &weight, &input, &probe_grad(out.shape(), &probe));

    let w_err = fd_against(&mut weight, &d_w, |w| {
        probe_loss(&conv_forward(kernel, w, &bias, &input), &probe)
    });
    assert!(w_err < TOL, "conv weight gradient err {w_err}");

    let b_err = fd_against(&mut bias, &d_b, |b| {
        probe_loss(&conv_forward(kernel, &weight, b, &input), &probe)
    });
    assert!(b_err < TOL, "conv bias gradient err {b_err}");

    let mut x = input.values().to_vec();
    let x_err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![m, c_in], vals.to_vec());
        probe_loss(&conv_forward(kernel, &weight, &bias, &t), &probe)
    });
    assert!(x_err < TOL, "conv input gradient err {x_err}");
}

#[test]
fn norm_layer_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, c) = (9, 5);
    let mut scale = random_values(&mut rng, c);
    let mut shift = random_values(&mut rng, c);
    let input = Tensor::new(vec![m, c], random_values(&mut rng, m * c));
    let probe = random_values(&mut rng, m * c);

    let (out, cache, _, _) = norm_forward_train(&input, &scale, &shift);
    let (d_in, d_scale, d_shift) = norm_backward(&cache, &scale, &probe_grad(out.shape(), &probe));

    let s_err = fd_against(&mut scale, &d_scale, |s| {
        probe_loss(&norm_forward_train(&input, s, &shift).0, &probe)
    });
    assert!(s_err < TOL, "norm scale gradient err {s_err}");

    let sh_err = fd_against(&mut shift, &d_shift, |sh| {
        probe_loss(&norm_forward_train(&input, &scale, sh).0, &probe)
    });
    assert!(sh_err < TOL, "norm shift gradient err {sh_err}");

    let mut x = input.values().to_vec();
    let x_err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![m, c], vals.to_vec());
        probe_loss(&norm_forward_train(&t, &scale, &shift).0, &probe)
    });
    assert!(x_err < TOL, "norm input gradient err {x_err}");
}

#[test]
fn relu_and_linear_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, c_in, c_out) = (7, 4, 3);
    let input = Tensor::new(vec![m, c_in], random_values(&mut rng, m * c_in));
    let probe_relu = random_values(&mut rng, m * c_in);

    let out = relu_forward(&input);
    let d_in = relu_backward(&input, &probe_grad(out.shape(), &probe_relu));
    let mut x = input.values().to_vec();
    let err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![m, c_in], vals.to_vec());
        probe_loss(&relu_forward(&t), &probe_relu)
    });
    assert!(err < TOL, "relu gradient err {err}");

    let mut weight = random_values(&mut rng, c_in * c_out);
    let mut bias = random_values(&mut rng, c_out);
    let probe = random_values(&mut rng, m * c_out);
    let out = linear_forward(&input, &weight, &bias);
    let (d_in, d_w, d_b) = linear_backward(&input, &weight, &probe_grad(out.shape(), &probe));

    let w_err = fd_against(&mut weight, &d_w, |w| {
        probe_loss(&linear_forward(&input, w, &bias), &probe)
    });
    assert!(w_err < TOL, "linear weight gradient err {w_err}");
    let b_err = fd_against(&mut bias, &d_b, |b| {
        probe_loss(&linear_forward(&input, &weight, b), &probe)
    });
    assert!(b_err < TOL, "linear bias gradient err {b_err}");
    let mut x = input.values().to_vec();
    let x_err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![m, c_in], vals.to_vec());
        probe_loss(&linear_forward(&t, &weight, &bias), &probe)
    });
    assert!(x_err < TOL, "linear input gradient err {x_err}");
}

#[test]
fn pool_upsample_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let child_to_parent: Vec<u32> = vec![0, 0, 1, 2, 2, 2];
    let n_children = child_to_parent.len();
    let n_parents = 3;
    let c = 4;

    let input = Tensor::new(vec![n_children, c], random_values(&mut rng, n_children * c));
    let probe = random_values(&mut rng, n_parents * c);
    let (out, argmax) = maxpool_forward(&child_to_parent, n_parents, &input);
    let d_in = maxpool_backward(&argmax, n_children, &probe_grad(out.shape(), &probe));
    let mut x = input.values().to_vec();
    let err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![n_children, c], vals.to_vec());
        probe_loss(&maxpool_forward(&child_to_parent, n_parents, &t).0, &probe)
    });
    assert!(err < TOL, "maxpool gradient err {err}");

    let parents = Tensor::new(vec![n_parents, c], random_values(&mut rng, n_parents * c));
    let probe_up = random_values(&mut rng, n_children * c);
    let up = upsample_forward(&child_to_parent, &parents);
    let d_parent = upsample_backward(&child_to_parent, n_parents, &probe_grad(up.shape(), &probe_up));
    let mut p = parents.values().to_vec();
    let err = fd_against(&mut p, d_parent.values(), |vals| {
        let t = Tensor::new(vec![n_parents, c], vals.to_vec());
        probe_loss(&upsample_forward(&child_to_parent, &t), &probe_up)
    });
    assert!(err < TOL, "upsample gradient err {err}");

    // Concat/split are index moves; verify they are mutual inverses.
    let a = Tensor::new(vec![2, 3], random_values(&mut rng, 6));
    let b = Tensor::new(vec![2, 2], random_values(&mut rng, 4));
    let cat = concat_cols(&a, &b);
    let (ga, gb) = split_cols(&cat, 3);
    assert_eq!(ga.values(), a.values());
    assert_eq!(gb.values(), b.values());
}

#[test]
fn global_maxpool_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (m, c) = (6, 4);
    let input = Tensor::new(vec![m, c], random_values(&mut rng, m * c));
    let probe = random_values(&mut rng, c);
    let (pooled, argmax) = global_maxpool(&input);
    let _ = pooled;
    let d_in = global_maxpool_backward(&argmax, m, &probe);
    let mut x = input.values().to_vec();
    let err = fd_against(&mut x, d_in.values(), |vals| {
        let t = Tensor::new(vec![m, c], vals.to_vec());
        global_maxpool(&t).0.iter().zip(&probe).map(|(v, p)| v * p).sum()
    });
    assert!(err < TOL, "global maxpool gradient err {err}");
}

#[test]
fn softmax_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (m, c) = (5, 4);
    let logits = Tensor::new(vec![m, c], random_values(&mut rng, m * c));
    let target_raw: Vec<f64> = (0..m * c).map(|_| rng.random_range(0.01..1.0)).collect();
    let mut target = Tensor::new(vec![m, c], target_raw);
    for row in 0..m {
        let sum: f64 = target.row(row).iter().sum();
        for v in target.row_mut(row) {
            *v /= sum;
        }
    }

    // d loss / d logits via softmax_backward(softCE grad).
    let probs = softmax_rows(&logits);
    let d_probs = soft_cross_entropy_grad(&probs, &target);
    let d_logits = softmax_backward_rows(&probs, &d_probs);

    let mut x = logits.values().to_vec();
    let err = fd_against(&mut x, d_logits.values(), |vals| {
        let t = Tensor::new(vec![m, c], vals.to_vec());
        soft_cross_entropy(&softmax_rows(&t), &target).unwrap()
    });
    assert!(err < TOL, "softmax + soft CE gradient err {err}");

    // Entropy and consistency follow the same path.
    let d_probs = entropy_loss_grad(&probs);
    let d_logits = softmax_backward_rows(&probs, &d_probs);
    let err = fd_against(&mut x, d_logits.values(), |vals| {
        let t = Tensor::new(vec![m, c], vals.to_vec());
        entropy_loss(&softmax_rows(&t)).unwrap()
    });
    assert!(err < TOL, "softmax + entropy gradient err {err}");

    let reference = softmax_rows(&Tensor::new(vec![m, c], random_values(&mut rng, m * c)));
    let d_probs = consistency_loss_grad(&probs, &reference);
    let d_logits = softmax_backward_rows(&probs, &d_probs);
    let err = fd_against(&mut x, d_logits.values(), |vals| {
        let t = Tensor::new(vec![m, c], vals.to_vec());
        consistency_loss(&softmax_rows(&t), &reference).unwrap()
    });
    assert!(err < TOL, "softmax + consistency gradient err {err}");
}

fn soft_ce_loss_for(target: Tensor) -> impl lift3d::net::gradcheck::ProbLoss {
    FnProbLoss {
        value_fn: {
            let t = target.clone();
            move |p: &Tensor| soft_cross_entropy(p, &t).unwrap()
        },
        grad_fn: move |p: &Tensor| soft_cross_entropy_grad(p, &target),
    }
}

fn uniform_target(m: usize, c: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tensor::new(
        vec![m, c],
        (0..m * c).map(|_| rng.random_range(0.05..1.0)).collect(),
    );
    for row in 0..m {
        let sum: f64 = t.row(row).iter().sum();
        for v in t.row_mut(row) {
            *v /= sum;
        }
    }
    t
}

#[test]
fn linear_softmax_ce_model_gradcheck() {
    // Smallest composed configuration: one level, minimal channels.
    let cfg = NetConfig {
        levels: 1,
        base_channels: 2,
        teacher_classes: 3,
        task_classes: 3,
    };
    let grid = toy_grid(3, 10);
    let mut model = SparseUnet::new(cfg, Heads::segmentation(), 0).unwrap();
    let m = grid.num_voxels();
    let loss = soft_ce_loss_for(uniform_target(m, 3, 11));
    let err = check_gradients(&mut model, &grid, ForwardPath::Segment, &loss, EPS).unwrap();
    assert!(err < 1e-6, "tiny linear model gradient err {err}");
}

#[test]
fn full_unet_gradcheck_on_ten_voxels() {
    let cfg = NetConfig {
        levels: 2,
        base_channels: 4,
        teacher_classes: 4,
        task_classes: 4,
    };
    let grid = toy_grid(10, 12);
    assert!(grid.num_voxels() <= 10);
    let mut model = SparseUnet::new(cfg, Heads::segmentation(), 1).unwrap();
    let loss = soft_ce_loss_for(uniform_target(grid.num_voxels(), 4, 13));
    let err = check_gradients(&mut model, &grid, ForwardPath::Segment, &loss, EPS).unwrap();
    assert!(err < TOL, "full U-Net gradient err {err}");
}

#[test]
fn pretrain_head_gradcheck() {
    let cfg = NetConfig {
        levels: 2,
        base_channels: 3,
        teacher_classes: 5,
        task_classes: 2,
    };
    let grid = toy_grid(8, 14);
    let mut model = SparseUnet::new(cfg, Heads::pretrain_only(), 2).unwrap();
    let loss = soft_ce_loss_for(uniform_target(grid.num_voxels(), 5, 15));
    let err = check_gradients(&mut model, &grid, ForwardPath::Pretrain, &loss, EPS).unwrap();
    assert!(err < TOL, "pretrain head gradient err {err}");
}

#[test]
fn classifier_gradcheck() {
    let cfg = NetConfig {
        levels: 2,
        base_channels: 3,
        teacher_classes: 2,
        task_classes: 4,
    };
    let grid = toy_grid(9, 16);
    let mut model = SparseUnet::new(cfg, Heads::classification(), 3).unwrap();
    let loss = soft_ce_loss_for(uniform_target(1, 4, 17));
    let err = check_gradients(&mut model, &grid, ForwardPath::Classify, &loss, EPS).unwrap();
    assert!(err < TOL, "classifier gradient err {err}");
}

#[test]
fn constant_loss_has_zero_gradients() {
    let cfg = NetConfig {
        levels: 2,
        base_channels: 3,
        teacher_classes: 3,
        task_classes: 3,
    };
    let grid = toy_grid(6, 18);
    let mut model = SparseUnet::new(cfg, Heads::segmentation(), 4).unwrap();
    model.zero_grads();
    let probs = model.forward_segment(&grid, Mode::Frozen).unwrap();
    // d(constant)/d(probs) = 0 everywhere.
    let zero = Tensor::zeros(probs.shape().to_vec());
    model.backward(&zero).unwrap();
    for entry in model.params().iter() {
        assert!(entry.tensor.grad().unwrap().iter().all(|&g| g == 0.0));
    }
}
