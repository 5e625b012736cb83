//! Point-cloud data augmentation.
//!
//! Stages run in a fixed order: rotation about the gravity (z) axis,
//! uniform scaling, elastic distortion, color contrast, color jitter.
//! A stage whose parameters describe the identity is skipped outright,
//! so a fully degenerate configuration returns the input bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::PointCloud;

/// Augmentation configuration. Ranges are inclusive-exclusive uniform
/// draws except where degenerate (`lo == hi` means "use that value").
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    /// Rotation angle range about +z, radians.
    pub rotation: (f64, f64),
    /// Uniform scale factor range; must be positive.
    pub scale: (f64, f64),
    /// Lattice cells along the longest bounding-box axis for the elastic
    /// displacement field.
    pub elastic_granularity: usize,
    /// Elastic displacement magnitude as a fraction of the bounding-box
    /// diagonal; 0 disables the stage.
    pub elastic_magnitude: f64,
    /// Contrast gain is drawn from `U(1 - contrast, 1 + contrast)`.
    pub contrast: f64,
    /// Per-point Gaussian color noise stddev.
    pub color_jitter: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            rotation: (-std::f64::consts::PI, std::f64::consts::PI),
            scale: (0.9, 1.1),
            elastic_granularity: 4,
            elastic_magnitude: 0.0,
            contrast: 0.2,
            color_jitter: 0.02,
            seed: 0,
        }
    }
}

impl AugmentParams {
    /// A configuration in which every stage is the identity.
    pub fn identity(seed: u64) -> Self {
        AugmentParams {
            rotation: (0.0, 0.0),
            scale: (1.0, 1.0),
            elastic_granularity: 4,
            elastic_magnitude: 0.0,
            contrast: 0.0,
            color_jitter: 0.0,
            seed,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) {
        assert!(
            self.scale.0 > 0.0 && self.scale.1 >= self.scale.0,
            "scale range must be positive and ordered"
        );
        assert!(self.rotation.1 >= self.rotation.0, "rotation range must be ordered");
        assert!(self.elastic_magnitude >= 0.0, "elastic magnitude must be >= 0");
        assert!(self.contrast >= 0.0, "contrast must be >= 0");
        assert!(self.color_jitter >= 0.0, "color jitter must be >= 0");
        assert!(self.elastic_granularity >= 1, "granularity must be >= 1");
    }
}

fn draw_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Apply the augmentation pipeline. Labels and provenance pass through
/// unchanged; the result is deterministic in `(cloud, params)`.
pub fn augment(cloud: &PointCloud, params: &AugmentParams) -> PointCloud {
    params.validate();
    let mut out = cloud.clone();
    if out.is_empty() {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let rotate = params.rotation != (0.0, 0.0);
    let rescale = params.scale != (1.0, 1.0);
    if rotate || rescale {
        let angle = if rotate {
            draw_uniform(&mut rng, params.rotation.0, params.rotation.1)
        } else {
            0.0
        };
        let factor = if rescale {
            draw_uniform(&mut rng, params.scale.0, params.scale.1)
        } else {
            1.0
        };
        let center = centroid(&out.positions);
        let (sin, cos) = angle.sin_cos();
        for p in &mut out.positions {
            let x = p[0] - center[0];
            let y = p[1] - center[1];
            let z = p[2] - center[2];
            let (rx, ry) = if rotate {
                (x * cos - y * sin, x * sin + y * cos)
            } else {
                (x, y)
            };
            p[0] = center[0] + factor * rx;
            p[1] = center[1] + factor * ry;
            p[2] = center[2] + factor * z;
        }
    }

    if params.elastic_magnitude > 0.0 {
        elastic_distort(
            &mut out.positions,
            params.elastic_granularity,
            params.elastic_magnitude,
            &mut rng,
        );
    }

    if params.contrast > 0.0 {
        let gain = draw_uniform(&mut rng, 1.0 - params.contrast, 1.0 + params.contrast);
        for c in &mut out.colors {
            for ch in c.iter_mut() {
                *ch = (0.5 + gain * (*ch - 0.5)).clamp(0.0, 1.0);
            }
        }
    }

    if params.color_jitter > 0.0 {
        for c in &mut out.colors {
            for ch in c.iter_mut() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                *ch = (*ch + params.color_jitter * noise).clamp(0.0, 1.0);
            }
        }
    }

    out
}

fn centroid(points: &[[f64; 3]]) -> [f64; 3] {
    let mut c = [0.0f64; 3];
    for p in points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let n = points.len() as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Displace points by a smoothed random field sampled on a coarse
/// lattice and trilinearly interpolated.
fn elastic_distort(positions: &mut [[f64; 3]], granularity: usize, magnitude: f64, rng: &mut ChaCha8Rng) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions.iter() {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    let longest = extent.iter().cloned().fold(0.0, f64::max);
    if longest <= 0.0 {
        return;
    }
    let diagonal = extent.iter().map(|e| e * e).sum::<f64>().sqrt();
    let spacing = longest / granularity as f64;

    // Lattice node counts per axis (at least two nodes to interpolate).
    let nodes: Vec<usize> = (0..3)
        .map(|a| ((extent[a] / spacing).ceil() as usize + 2).max(2))
        .collect();
    let total = nodes[0] * nodes[1] * nodes[2];
    let mut field = vec![[0.0f64; 3]; total];
    for offset in field.iter_mut() {
        for axis in offset.iter_mut() {
            *axis = StandardNormal.sample(rng);
        }
    }

    // Box-blur the field a few times as a cheap Gaussian approximation.
    let index = |x: usize, y: usize, z: usize| (x * nodes[1] + y) * nodes[2] + z;
    for _ in 0..3 {
        let src = field.clone();
        for x in 0..nodes[0] {
            for y in 0..nodes[1] {
                for z in 0..nodes[2] {
                    let mut acc = [0.0f64; 3];
                    let mut count = 0.0;
                    for (dx, dy, dz) in [
                        (0i64, 0i64, 0i64),
                        (-1, 0, 0),
                        (1, 0, 0),
                        (0, -1, 0),
                        (0, 1, 0),
                        (0, 0, -1),
                        (0, 0, 1),
                    ] {
                        let nx = x as i64 + dx;
                        let ny = y as i64 + dy;
                        let nz = z as i64 + dz;
                        if nx < 0 || ny < 0 || nz < 0
                            || nx >= nodes[0] as i64
                            || ny >= nodes[1] as i64
                            || nz >= nodes[2] as i64
                        {
                            continue;
                        }
                        let v = src[index(nx as usize, ny as usize, nz as usize)];
                        for a in 0..3 {
                            acc[a] += v[a];
                        }
                        count += 1.0;
                    }
                    field[index(x, y, z)] = [acc[0] / count, acc[1] / count, acc[2] / count];
                }
            }
        }
    }

    let amplitude = magnitude * diagonal;
    for p in positions.iter_mut() {
        // Lattice coordinates with a half-cell margin.
        let mut l = [0.0f64; 3];
        for a in 0..3 {
            l[a] = ((p[a] - lo[a]) / spacing + 0.5).clamp(0.0, nodes[a] as f64 - 1.0 - 1e-9);
        }
        let base = [l[0].floor() as usize, l[1].floor() as usize, l[2].floor() as usize];
        let frac = [l[0] - base[0] as f64, l[1] - base[1] as f64, l[2] - base[2] as f64];
        let mut disp = [0.0f64; 3];
        for corner in 0..8 {
            let dx = corner >> 2 & 1;
            let dy = corner >> 1 & 1;
            let dz = corner & 1;
            let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
            let node = field[index(
                (base[0] + dx).min(nodes[0] - 1),
                (base[1] + dy).min(nodes[1] - 1),
                (base[2] + dz).min(nodes[2] - 1),
            )];
            for a in 0..3 {
                disp[a] += w * node[a];
            }
        }
        for a in 0..3 {
            p[a] += amplitude * disp[a];
        }
    }
}
