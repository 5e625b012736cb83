//! Layer primitives: submanifold convolution, per-channel normalization,
//! ReLU, linear maps, max pooling, nearest upsampling, and softmax.
//!
//! Each primitive has an explicit backward so the composed model can be
//! checked against central finite differences.

use crate::net::plan::KernelMap;
use crate::net::Tensor;

pub const NORM_EPS: f64 = 1e-5;
/// Running-statistics momentum: `run = momentum * run + (1 - momentum) * batch`.
pub const NORM_MOMENTUM: f64 = 0.9;

/// Submanifold sparse convolution: output sites equal input sites and
/// each occupied voxel accumulates its occupied kernel neighbors.
///
/// `weight` is laid out `[27, c_in, c_out]` in kernel-offset order.
pub fn conv_forward(kernel: &KernelMap, weight: &[f64], bias: &[f64], input: &Tensor) -> Tensor {
    let (m, c_in) = input.dims2();
    let c_out = bias.len();
    debug_assert_eq!(weight.len(), 27 * c_in * c_out);

    let mut out = Vec::with_capacity(m * c_out);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    let x = input.values();
    for (o, pairs) in kernel.iter().enumerate() {
        let w_o = &weight[o * c_in * c_out..(o + 1) * c_in * c_out];
        for &(src, dst) in pairs {
            let row_in = &x[src as usize * c_in..(src as usize + 1) * c_in];
            let row_out = &mut out[dst as usize * c_out..(dst as usize + 1) * c_out];
            for (ci, &a) in row_in.iter().enumerate() {
                let w_row = &w_o[ci * c_out..(ci + 1) * c_out];
                for (co, w) in w_row.iter().enumerate() {
                    row_out[co] += a * w;
                }
            }
        }
    }
    Tensor::new(vec![m, c_out], out)
}

/// Gradients of [`conv_forward`] with respect to input, weight, and bias.
pub fn conv_backward(
    kernel: &KernelMap,
    weight: &[f64],
    input: &Tensor,
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (m, c_in) = input.dims2();
    let (m_out, c_out) = grad_out.dims2();
    debug_assert_eq!(m, m_out);

    let x = input.values();
    let g = grad_out.values();
    let mut d_input = vec![0.0f64; m * c_in];
    let mut d_weight = vec![0.0f64; weight.len()];
    let mut d_bias = vec![0.0f64; c_out];

    for row in 0..m {
        let g_row = &g[row * c_out..(row + 1) * c_out];
        for (co, gv) in g_row.iter().enumerate() {
            d_bias[co] += gv;
        }
    }
    for (o, pairs) in kernel.iter().enumerate() {
        let w_o = &weight[o * c_in * c_out..(o + 1) * c_in * c_out];
        let dw_o = &mut d_weight[o * c_in * c_out..(o + 1) * c_in * c_out];
        for &(src, dst) in pairs {
            let row_in = &x[src as usize * c_in..(src as usize + 1) * c_in];
            let g_row = &g[dst as usize * c_out..(dst as usize + 1) * c_out];
            let d_row = &mut d_input[src as usize * c_in..(src as usize + 1) * c_in];
            for ci in 0..c_in {
                let w_row = &w_o[ci * c_out..(ci + 1) * c_out];
                let dw_row = &mut dw_o[ci * c_out..(ci + 1) * c_out];
                let a = row_in[ci];
                let mut acc = 0.0;
                for co in 0..c_out {
                    acc += g_row[co] * w_row[co];
                    dw_row[co] += a * g_row[co];
                }
                d_row[ci] += acc;
            }
        }
    }
    (Tensor::new(vec![m, c_in], d_input), d_weight, d_bias)
}

/// Cached statistics from a training-mode normalization forward.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub inv_std: Vec<f64>,
    pub x_hat: Tensor,
}

/// Per-channel standardization over occupied voxels with learned scale
/// and shift (training mode: batch statistics, biased variance).
pub fn norm_forward_train(input: &Tensor, scale: &[f64], shift: &[f64]) -> (Tensor, NormCache, Vec<f64>, Vec<f64>) {
    let (m, c) = input.dims2();
    debug_assert!(m > 0);
    let x = input.values();
    let mf = m as f64;

    let mut mean = vec![0.0f64; c];
    for row in 0..m {
        for ch in 0..c {
            mean[ch] += x[row * c + ch];
        }
    }
    for v in &mut mean {
        *v /= mf;
    }
    let mut var = vec![0.0f64; c];
    for row in 0..m {
        for ch in 0..c {
            let d = x[row * c + ch] - mean[ch];
            var[ch] += d * d;
        }
    }
    for v in &mut var {
        *v /= mf;
    }

    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
    let mut x_hat = vec![0.0f64; m * c];
    let mut out = vec![0.0f64; m * c];
    for row in 0..m {
        for ch in 0..c {
            let h = (x[row * c + ch] - mean[ch]) * inv_std[ch];
            x_hat[row * c + ch] = h;
            out[row * c + ch] = scale[ch] * h + shift[ch];
        }
    }
    (
        Tensor::new(vec![m, c], out),
        NormCache {
            inv_std,
            x_hat: Tensor::new(vec![m, c], x_hat),
        },
        mean,
        var,
    )
}

/// Evaluation-mode normalization using running statistics.
pub fn norm_forward_eval(
    input: &Tensor,
    scale: &[f64],
    shift: &[f64],
    running_mean: &[f64],
    running_var: &[f64],
) -> Tensor {
    let (m, c) = input.dims2();
    let x = input.values();
    let mut out = vec![0.0f64; m * c];
    for ch in 0..c {
        let inv = 1.0 / (running_var[ch] + NORM_EPS).sqrt();
        for row in 0..m {
            out[row * c + ch] = scale[ch] * (x[row * c + ch] - running_mean[ch]) * inv + shift[ch];
        }
    }
    Tensor::new(vec![m, c], out)
}

/// Gradients of training-mode normalization.
pub fn norm_backward(
    cache: &NormCache,
    scale: &[f64],
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (m, c) = grad_out.dims2();
    let g = grad_out.values();
    let xh = cache.x_hat.values();
    let mf = m as f64;

    let mut d_scale = vec![0.0f64; c];
    let mut d_shift = vec![0.0f64; c];
    let mut sum_dxhat = vec![0.0f64; c];
    let mut sum_dxhat_xhat = vec![0.0f64; c];
    for row in 0..m {
        for ch in 0..c {
            let gv = g[row * c + ch];
            let h = xh[row * c + ch];
            d_scale[ch] += gv * h;
            d_shift[ch] += gv;
            let dxh = gv * scale[ch];
            sum_dxhat[ch] += dxh;
            sum_dxhat_xhat[ch] += dxh * h;
        }
    }

    let mut d_input = vec![0.0f64; m * c];
    for row in 0..m {
        for ch in 0..c {
            let dxh = g[row * c + ch] * scale[ch];
            let h = xh[row * c + ch];
            d_input[row * c + ch] = cache.inv_std[ch] / mf
                * (mf * dxh - sum_dxhat[ch] - h * sum_dxhat_xhat[ch]);
        }
    }
    (Tensor::new(vec![m, c], d_input), d_scale, d_shift)
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut d = grad_out.clone();
    for (dv, &x) in d.values_mut().iter_mut().zip(input.values()) {
        if x <= 0.0 {
            *dv = 0.0;
        }
    }
    d
}

/// Row-vector linear map: `out = input * weight + bias`, weight `[c_in, c_out]`.
pub fn linear_forward(input: &Tensor, weight: &[f64], bias: &[f64]) -> Tensor {
    let (m, c_in) = input.dims2();
    let c_out = bias.len();
    let x = input.values();
    let mut out = Vec::with_capacity(m * c_out);
    for _ in 0..m {
        out.extend_from_slice(bias);
    }
    for row in 0..m {
        let x_row = &x[row * c_in..(row + 1) * c_in];
        let o_row = &mut out[row * c_out..(row + 1) * c_out];
        for (ci, &a) in x_row.iter().enumerate() {
            let w_row = &weight[ci * c_out..(ci + 1) * c_out];
            for (co, w) in w_row.iter().enumerate() {
                o_row[co] += a * w;
            }
        }
    }
    Tensor::new(vec![m, c_out], out)
}

pub fn linear_backward(
    input: &Tensor,
    weight: &[f64],
    grad_out: &Tensor,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (m, c_in) = input.dims2();
    let (_, c_out) = grad_out.dims2();
    let x = input.values();
    let g = grad_out.values();
    let mut d_input = vec![0.0f64; m * c_in];
    let mut d_weight = vec![0.0f64; c_in * c_out];
    let mut d_bias = vec![0.0f64; c_out];
    for row in 0..m {
        let x_row = &x[row * c_in..(row + 1) * c_in];
        let g_row = &g[row * c_out..(row + 1) * c_out];
        for (co, gv) in g_row.iter().enumerate() {
            d_bias[co] += gv;
        }
        let d_row = &mut d_input[row * c_in..(row + 1) * c_in];
        for ci in 0..c_in {
            let w_row = &weight[ci * c_out..(ci + 1) * c_out];
            let dw_row = &mut d_weight[ci * c_out..(ci + 1) * c_out];
            let a = x_row[ci];
            let mut acc = 0.0;
            for co in 0..c_out {
                acc += g_row[co] * w_row[co];
                dw_row[co] += a * g_row[co];
            }
            d_row[ci] += acc;
        }
    }
    (Tensor::new(vec![m, c_in], d_input), d_weight, d_bias)
}

/// Per-channel max over the children of each parent voxel.
///
/// Returns the pooled tensor and, per (parent, channel), the child row
/// the maximum came from (ties resolve to the lowest child row).
pub fn maxpool_forward(child_to_parent: &[u32], n_parents: usize, input: &Tensor) -> (Tensor, Vec<u32>) {
    let (m, c) = input.dims2();
    debug_assert_eq!(m, child_to_parent.len());
    let x = input.values();
    let mut out = vec![f64::NEG_INFINITY; n_parents * c];
    let mut argmax = vec![u32::MAX; n_parents * c];
    for child in 0..m {
        let parent = child_to_parent[child] as usize;
        for ch in 0..c {
            let v = x[child * c + ch];
            if v > out[parent * c + ch] {
                out[parent * c + ch] = v;
                argmax[parent * c + ch] = child as u32;
            }
        }
    }
    (Tensor::new(vec![n_parents, c], out), argmax)
}

pub fn maxpool_backward(argmax: &[u32], n_children: usize, grad_out: &Tensor) -> Tensor {
    let (p, c) = grad_out.dims2();
    let g = grad_out.values();
    let mut d = vec![0.0f64; n_children * c];
    for parent in 0..p {
        for ch in 0..c {
            let child = argmax[parent * c + ch] as usize;
            d[child * c + ch] += g[parent * c + ch];
        }
    }
    Tensor::new(vec![n_children, c], d)
}

/// Copy each parent's value down to its children.
pub fn upsample_forward(child_to_parent: &[u32], parent_values: &Tensor) -> Tensor {
    let (_, c) = parent_values.dims2();
    let mut out = Vec::with_capacity(child_to_parent.len() * c);
    for &parent in child_to_parent {
        out.extend_from_slice(parent_values.row(parent as usize));
    }
    Tensor::new(vec![child_to_parent.len(), c], out)
}

pub fn upsample_backward(child_to_parent: &[u32], n_parents: usize, grad_out: &Tensor) -> Tensor {
    let (m, c) = grad_out.dims2();
    debug_assert_eq!(m, child_to_parent.len());
    let g = grad_out.values();
    let mut d = vec![0.0f64; n_parents * c];
    for (child, &parent) in child_to_parent.iter().enumerate() {
        for ch in 0..c {
            d[parent as usize * c + ch] += g[child * c + ch];
        }
    }
    Tensor::new(vec![n_parents, c], d)
}

/// Column-wise concatenation of two row-aligned tensors.
pub fn concat_cols(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, ca) = a.dims2();
    let (mb, cb) = b.dims2();
    debug_assert_eq!(m, mb);
    let mut out = Vec::with_capacity(m * (ca + cb));
    for row in 0..m {
        out.extend_from_slice(a.row(row));
        out.extend_from_slice(b.row(row));
    }
    Tensor::new(vec![m, ca + cb], out)
}

pub fn split_cols(grad: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (m, c) = grad.dims2();
    let cb = c - ca;
    let mut left = Vec::with_capacity(m * ca);
    let mut right = Vec::with_capacity(m * cb);
    for row in 0..m {
        let r = grad.row(row);
        left.extend_from_slice(&r[..ca]);
        right.extend_from_slice(&r[ca..]);
    }
    (Tensor::new(vec![m, ca], left), Tensor::new(vec![m, cb], right))
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let (m, c) = logits.dims2();
    let x = logits.values();
    let mut out = vec![0.0f64; m * c];
    for row in 0..m {
        let r = &x[row * c..(row + 1) * c];
        let max = r.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for ch in 0..c {
            let e = (r[ch] - max).exp();
            out[row * c + ch] = e;
            sum += e;
        }
        for ch in 0..c {
            out[row * c + ch] /= sum;
        }
    }
    Tensor::new(vec![m, c], out)
}

/// Pull a gradient with respect to probabilities back through softmax.
pub fn softmax_backward_rows(probs: &Tensor, grad_probs: &Tensor) -> Tensor {
    let (m, c) = probs.dims2();
    let p = probs.values();
    let g = grad_probs.values();
    let mut out = vec![0.0f64; m * c];
    for row in 0..m {
        let mut dot = 0.0;
        for ch in 0..c {
            dot += g[row * c + ch] * p[row * c + ch];
        }
        for ch in 0..c {
            out[row * c + ch] = p[row * c + ch] * (g[row * c + ch] - dot);
        }
    }
    Tensor::new(vec![m, c], out)
}

/// Global max pooling over rows; returns the pooled vector and the row
/// index each channel's maximum came from.
pub fn global_maxpool(input: &Tensor) -> (Vec<f64>, Vec<u32>) {
    let (m, c) = input.dims2();
    let x = input.values();
    let mut out = vec![f64::NEG_INFINITY; c];
    let mut argmax = vec![0u32; c];
    for row in 0..m {
        for ch in 0..c {
            let v = x[row * c + ch];
            if v > out[ch] {
                out[ch] = v;
                argmax[ch] = row as u32;
            }
        }
    }
    (out, argmax)
}

pub fn global_maxpool_backward(argmax: &[u32], n_rows: usize, grad_out: &[f64]) -> Tensor {
    let c = grad_out.len();
    let mut d = vec![0.0f64; n_rows * c];
    for ch in 0..c {
        d[argmax[ch] as usize * c + ch] += grad_out[ch];
    }
    Tensor::new(vec![n_rows, c], d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::plan::{GridPlan, KERNEL_OFFSETS};

    #[test]
    fn conv_center_identity() {
        let plan = GridPlan::new(&[[1, 1, 1]], 1);
        let mut weight = vec![0.0; 27 * 2 * 2];
        // Center offset = identity matrix.
        let base = 13 * 4;
        weight[base] = 1.0;
        weight[base + 3] = 1.0;
        let input = Tensor::new(vec![1, 2], vec![0.5, -0.75]);
        let out = conv_forward(&plan.levels[0].kernel, &weight, &[0.0, 0.0], &input);
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn conv_reads_positive_x_neighbor() {
        let plan = GridPlan::new(&[[0, 0, 0], [1, 0, 0]], 1);
        let mut weight = vec![0.0; 27 * 1 * 1];
        let idx = KERNEL_OFFSETS.iter().position(|o| *o == [1, 0, 0]).unwrap();
        weight[idx] = 2.0;
        let input = Tensor::new(vec![2, 1], vec![3.0, 5.0]);
        let out = conv_forward(&plan.levels[0].kernel, &weight, &[0.25], &input);
        // Voxel 0 sees its +x neighbor (value 5), voxel 1 has none.
        assert_eq!(out.values(), &[0.25 + 2.0 * 5.0, 0.25]);
    }

    #[test]
    fn softmax_rows_normalize_and_shift_invariant() {
        let logits = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]);
        let p = softmax_rows(&logits);
        for row in 0..2 {
            let sum: f64 = p.row(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        let shifted = Tensor::new(
            vec![2, 3],
            logits.values().iter().map(|v| v + 123.5).collect(),
        );
        let q = softmax_rows(&shifted);
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn maxpool_takes_channelwise_max() {
        let input = Tensor::new(vec![2, 2], vec![1.0, 4.0, 3.0, 2.0]);
        let (out, argmax) = maxpool_forward(&[0, 0], 1, &input);
        assert_eq!(out.values(), &[3.0, 4.0]);
        assert_eq!(argmax, vec![1, 0]);
    }

    #[test]
    fn upsample_copies_parent_rows() {
        let parents = Tensor::new(vec![2, 1], vec![7.0, 9.0]);
        let out = upsample_forward(&[0, 1, 1], &parents);
        assert_eq!(out.values(), &[7.0, 9.0, 9.0]);
    }

    #[test]
    fn linear_sum_loss_weight_grad_is_input_broadcast() {
        // loss = sum(out) => d_weight[ci][co] = sum over rows of x[row][ci].
        let input = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let weight = vec![0.1, 0.2, 0.3, 0.4];
        let grad_out = Tensor::new(vec![2, 2], vec![1.0; 4]);
        let (_, dw, db) = linear_backward(&input, &weight, &grad_out);
        assert_eq!(dw, vec![4.0, 4.0, 6.0, 6.0]);
        assert_eq!(db, vec![2.0, 2.0]);
    }
}
