//! Procedural synthetic worlds: rooms of axis-aligned colored boxes,
//! surface-sampled labeled point clouds, and ray-cast RGB-D frames
//! (perspective and panoramic) with ground-truth label images.
//!
//! Rendering and sampling quantize exactly like the on-disk formats
//! (f32 positions and depths, 8-bit colors), so a world loaded back
//! from disk equals the one in memory.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cloud::PointCloud;
use crate::distill::NO_LABEL;
use crate::geom::{pixel_to_uv, panoramic_point, CameraIntrinsics, CameraModel, DepthImage, DepthSemantics, RgbdFrame};
use crate::seed;

use super::SceneSample;

/// Knobs of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub seed: u64,
    pub scenes: usize,
    /// Semantic classes; 0 = floor, 1 = wall/ceiling, 2.. = furniture.
    pub classes: usize,
    pub points_per_scene: usize,
    /// Inclusive range of perspective frames per scene (one panoramic
    /// frame is always added).
    pub perspective_frames: (usize, usize),
    pub perspective_size: (usize, usize),
    pub panorama_size: (usize, usize),
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            scenes: 8,
            classes: 8,
            points_per_scene: 2600,
            perspective_frames: (2, 6),
            perspective_size: (40, 30),
            panorama_size: (80, 40),
        }
    }
}

/// An axis-aligned colored box tied to a class.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub class: u16,
    pub color: [f64; 3],
}

/// A rendered frame plus its ground truth and ray-cast hit records
/// (camera-frame points, used by geometric oracles; not persisted).
#[derive(Debug, Clone)]
pub struct RenderedFrame {
    pub frame: RgbdFrame,
    pub labels: Vec<u16>,
    pub hits: Vec<Option<[f64; 3]>>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: u64,
    pub cloud: PointCloud,
    pub frames: Vec<RenderedFrame>,
    pub boxes: Vec<SurfaceBox>,
}

impl Scene {
    pub fn to_sample(&self) -> SceneSample {
        SceneSample::fully_labeled(self.id, self.cloud.clone())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub scenes: Vec<Scene>,
}

/// Stable per-frame key, also the SLAB file stem: `scene_007/frame_2`.
pub fn frame_key(scene_id: u64, frame_idx: usize) -> String {
    format!("scene_{scene_id:03}/frame_{frame_idx}")
}

/// Generate a world with default rendering sizes.
pub fn generate_synthetic_world(seed: u64, n_scenes: usize, classes: usize) -> World {
    generate_world(&WorldConfig {
        seed,
        scenes: n_scenes,
        classes,
        ..WorldConfig::default()
    })
}

/// Base color and size range of each furniture archetype. Colors
/// deliberately cluster into a wood family, a wall family, and a floor
/// family, so shape and context, not color alone, separate the classes.
// Size ranges are pairwise separable within each color family, so shape
// determines the class even where colors collide.
const ARCHETYPES: [([f64; 3], [(f64, f64); 3]); 6] = [
    // table: wood brown, broad and mid-height
    ([0.54, 0.39, 0.25], [(1.1, 1.6), (0.8, 1.2), (0.60, 0.78)]),
    // chair: the same wood brown, small footprint
    ([0.54, 0.39, 0.25], [(0.45, 0.65), (0.45, 0.65), (0.78, 1.05)]),
    // cabinet: wall-beige, tall and deep
    ([0.80, 0.76, 0.68], [(0.35, 0.60), (0.9, 1.6), (1.5, 2.0)]),
    // sofa: the wood family, long but taller than a table
    ([0.48, 0.35, 0.28], [(1.5, 2.1), (0.72, 1.0), (0.95, 1.2)]),
    // lamp: wall-beige family, thin column
    ([0.78, 0.72, 0.60], [(0.22, 0.38), (0.22, 0.38), (1.0, 1.4)]),
    // bed: floor-gray family, broad low slab
    ([0.36, 0.37, 0.41], [(1.6, 2.1), (1.3, 1.8), (0.35, 0.55)]),
];

const FLOOR_COLOR: [f64; 3] = [0.36, 0.36, 0.36];
const WALL_COLOR: [f64; 3] = [0.82, 0.78, 0.70];
const SHELL_THICKNESS: f64 = 0.1;

/// One sampleable rectangle of a box surface.
struct SurfaceRect {
    origin: [f64; 3],
    edge_u: [f64; 3],
    edge_v: [f64; 3],
    class: u16,
    color: [f64; 3],
    area: f64,
}

fn rect(origin: [f64; 3], edge_u: [f64; 3], edge_v: [f64; 3], class: u16, color: [f64; 3]) -> SurfaceRect {
    let norm = |e: &[f64; 3]| (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt();
    SurfaceRect {
        origin,
        edge_u,
        edge_v,
        class,
        color,
        area: norm(&edge_u) * norm(&edge_v),
    }
}

pub fn generate_world(config: &WorldConfig) -> World {
    assert!(config.classes >= 3, "need floor, wall, and at least one furniture class");
    let mut scenes = Vec::with_capacity(config.scenes);
    for id in 0..config.scenes as u64 {
        scenes.push(generate_scene(config, id));
    }
    World {
        config: config.clone(),
        scenes,
    }
}

fn jittered(rng: &mut ChaCha8Rng, base: [f64; 3], spread: f64) -> [f64; 3] {
    let mut c = base;
    for ch in c.iter_mut() {
        *ch = (*ch + rng.random_range(-spread..spread)).clamp(0.02, 0.98);
    }
    c
}

fn generate_scene(config: &WorldConfig, id: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[0x5ce, id]));

    let room_x = rng.random_range(4.0..6.5);
    let room_y = rng.random_range(4.0..6.5);
    let room_z = rng.random_range(2.5..3.2);
    let t = SHELL_THICKNESS;

    let mut boxes = Vec::new();
    let floor_color = jittered(&mut rng, FLOOR_COLOR, 0.04);
    let wall_color = jittered(&mut rng, WALL_COLOR, 0.04);
    // Shell slabs span the extended footprint so the room is closed.
    boxes.push(SurfaceBox {
        min: [-t, -t, -t],
        max: [room_x + t, room_y + t, 0.0],
        class: 0,
        color: floor_color,
    });
    boxes.push(SurfaceBox {
        min: [-t, -t, room_z],
        max: [room_x + t, room_y + t, room_z + t],
        class: 1,
        color: wall_color,
    });
    for (min, max) in [
        ([-t, -t, -t], [0.0, room_y + t, room_z + t]),
        ([room_x, -t, -t], [room_x + t, room_y + t, room_z + t]),
        ([-t, -t, -t], [room_x + t, 0.0, room_z + t]),
        ([-t, room_y, -t], [room_x + t, room_y + t, room_z + t]),
    ] {
        boxes.push(SurfaceBox {
            min,
            max,
            class: 1,
            color: wall_color,
        });
    }

    let furniture_classes = config.classes - 2;
    let n_furniture = rng.random_range(5..=9);
    for item in 0..n_furniture {
        let class = 2 + (item % furniture_classes);
        let (base_color, size_ranges) = ARCHETYPES[(class - 2) % ARCHETYPES.len()];
        let sx = rng.random_range(size_ranges[0].0..size_ranges[0].1);
        let sy = rng.random_range(size_ranges[1].0..size_ranges[1].1);
        let sz = rng.random_range(size_ranges[2].0..size_ranges[2].1);
        let margin = 0.3;
        let x = rng.random_range(margin..(room_x - margin - sx).max(margin + 0.01));
        let y = rng.random_range(margin..(room_y - margin - sy).max(margin + 0.01));
        boxes.push(SurfaceBox {
            min: [x, y, 0.0],
            max: [x + sx, y + sy, sz.min(room_z - 0.2)],
            class: class as u16,
            // Wide per-instance spread: color points at the class family
            // but does not identify the class on its own.
            color: jittered(&mut rng, base_color, 0.16),
        });
    }

    let rects = surface_rects(&boxes, room_x, room_y, room_z);
    let cloud = sample_cloud(&rects, config.points_per_scene, &mut rng);

    let mut frames = Vec::new();
    let n_persp = rng.random_range(config.perspective_frames.0..=config.perspective_frames.1);
    for _ in 0..n_persp {
        frames.push(render_perspective(config, &boxes, room_x, room_y, room_z, &mut rng));
    }
    frames.push(render_panorama(config, &boxes, room_x, room_y, room_z, &mut rng));

    Scene {
        id,
        cloud,
        frames,
        boxes,
    }
}

/// Visible-surface rectangles: inward shell faces plus all furniture
/// faces except the bottom.
fn surface_rects(boxes: &[SurfaceBox], room_x: f64, room_y: f64, room_z: f64) -> Vec<SurfaceRect> {
    let mut rects = Vec::new();
    let floor = &boxes[0];
    let ceiling = &boxes[1];
    let walls = &boxes[2..6];
    rects.push(rect([0.0, 0.0, 0.0], [room_x, 0.0, 0.0], [0.0, room_y, 0.0], floor.class, floor.color));
    rects.push(rect(
        [0.0, 0.0, room_z],
        [room_x, 0.0, 0.0],
        [0.0, room_y, 0.0],
        ceiling.class,
        ceiling.color,
    ));
    rects.push(rect([0.0, 0.0, 0.0], [0.0, room_y, 0.0], [0.0, 0.0, room_z], walls[0].class, walls[0].color));
    rects.push(rect([room_x, 0.0, 0.0], [0.0, room_y, 0.0], [0.0, 0.0, room_z], walls[1].class, walls[1].color));
    rects.push(rect([0.0, 0.0, 0.0], [room_x, 0.0, 0.0], [0.0, 0.0, room_z], walls[2].class, walls[2].color));
    rects.push(rect([0.0, room_y, 0.0], [room_x, 0.0, 0.0], [0.0, 0.0, room_z], walls[3].class, walls[3].color));

    for b in &boxes[6..] {
        let [x0, y0, z0] = b.min;
        let [x1, y1, z1] = b.max;
        let dx = [x1 - x0, 0.0, 0.0];
        let dy = [0.0, y1 - y0, 0.0];
        let dz = [0.0, 0.0, z1 - z0];
        rects.push(rect([x0, y0, z1], dx, dy, b.class, b.color)); // top
        rects.push(rect([x0, y0, z0], dx, dz, b.class, b.color)); // y = y0 side
        rects.push(rect([x0, y1, z0], dx, dz, b.class, b.color)); // y = y1 side
        rects.push(rect([x0, y0, z0], dy, dz, b.class, b.color)); // x = x0 side
        rects.push(rect([x1, y0, z0], dy, dz, b.class, b.color)); // x = x1 side
    }
    rects
}

fn sample_cloud(rects: &[SurfaceRect], n_points: usize, rng: &mut ChaCha8Rng) -> PointCloud {
    let mut cumulative = Vec::with_capacity(rects.len());
    let mut total = 0.0;
    for r in rects {
        total += r.area;
        cumulative.push(total);
    }

    let mut positions = Vec::with_capacity(n_points);
    let mut colors = Vec::with_capacity(n_points);
    let mut labels = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let pick = rng.random_range(0.0..total);
        let idx = cumulative.partition_point(|&c| c <= pick).min(rects.len() - 1);
        let r = &rects[idx];
        let a = rng.random_range(0.0..1.0);
        let b = rng.random_range(0.0..1.0);
        let mut p = [0.0f64; 3];
        for axis in 0..3 {
            p[axis] = r.origin[axis] + a * r.edge_u[axis] + b * r.edge_v[axis];
            // Quantize like the PLY float properties.
            p[axis] = p[axis] as f32 as f64;
        }
        let mut c = r.color;
        for ch in c.iter_mut() {
            let noise: f64 = StandardNormal.sample(rng);
            *ch = (*ch + 0.06 * noise).clamp(0.0, 1.0);
            *ch = quantize_color(*ch);
        }
        positions.push(p);
        colors.push(c);
        labels.push(r.class as i32);
    }
    PointCloud {
        positions,
        colors,
        hard_labels: Some(labels),
        soft_labels: None,
        provenance: None,
    }
}

fn quantize_color(c: f64) -> f64 {
    (c.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Nearest box hit along `origin + t * dir`, `t > eps`.
fn cast_ray(boxes: &[SurfaceBox], origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, usize)> {
    const EPS: f64 = 1e-9;
    let mut best: Option<(f64, usize)> = None;
    for (idx, b) in boxes.iter().enumerate() {
        let mut t_enter = f64::NEG_INFINITY;
        let mut t_exit = f64::INFINITY;
        let mut miss = false;
        for axis in 0..3 {
            if dir[axis].abs() < 1e-12 {
                if origin[axis] < b.min[axis] || origin[axis] > b.max[axis] {
                    miss = true;
                    break;
                }
                continue;
            }
            let inv = 1.0 / dir[axis];
            let mut t0 = (b.min[axis] - origin[axis]) * inv;
            let mut t1 = (b.max[axis] - origin[axis]) * inv;
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            t_enter = t_enter.max(t0);
            t_exit = t_exit.min(t1);
        }
        if miss || t_enter > t_exit || t_enter <= EPS {
            continue;
        }
        if best.map_or(true, |(t, _)| t_enter < t) {
            best = Some((t_enter, idx));
        }
    }
    best
}

/// A camera position in free space (not inside any furniture box).
fn free_position(boxes: &[SurfaceBox], room: [f64; 3], height: (f64, f64), rng: &mut ChaCha8Rng) -> [f64; 3] {
    for _ in 0..64 {
        let p = [
            rng.random_range(0.5..room[0] - 0.5),
            rng.random_range(0.5..room[1] - 0.5),
            rng.random_range(height.0..height.1),
        ];
        let inside = boxes[6..].iter().any(|b| {
            (0..3).all(|a| p[a] > b.min[a] - 0.05 && p[a] < b.max[a] + 0.05)
        });
        if !inside {
            return p;
        }
    }
    // Fall back to the room center just under the ceiling.
    [room[0] / 2.0, room[1] / 2.0, room[2] - 0.4]
}

fn render_perspective(
    config: &WorldConfig,
    boxes: &[SurfaceBox],
    room_x: f64,
    room_y: f64,
    room_z: f64,
    rng: &mut ChaCha8Rng,
) -> RenderedFrame {
    let (width, height) = config.perspective_size;
    let position = free_position(boxes, [room_x, room_y, room_z], (1.2, 1.9), rng);
    let yaw = rng.random_range(0.0..std::f64::consts::TAU);
    let pitch: f64 = rng.random_range(-0.15..0.40);
    let hfov: f64 = rng.random_range(1.0..1.5); // ~57..86 degrees
    let fx = (width as f64 / 2.0) / (hfov / 2.0).tan();
    let fy = fx;
    let cx = (width as f64 - 1.0) / 2.0;
    let cy = (height as f64 - 1.0) / 2.0;
    let intrinsics = CameraIntrinsics::new(fx, fy, cx, cy).expect("generated intrinsics are valid");

    let (sin_yaw, cos_yaw) = yaw.sin_cos();
    let (sin_pitch, cos_pitch) = pitch.sin_cos();
    let forward = [cos_pitch * cos_yaw, cos_pitch * sin_yaw, -sin_pitch];
    let right = [sin_yaw, -cos_yaw, 0.0];
    let down = [-sin_pitch * cos_yaw, -sin_pitch * sin_yaw, -cos_pitch];

    let pixels = width * height;
    let mut rgb = vec![[0.0f64; 3]; pixels];
    let mut depth = vec![0.0f64; pixels];
    let mut labels = vec![NO_LABEL; pixels];
    let mut hits = vec![None; pixels];
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            let du = (col as f64 - cx) / fx;
            let dv = (row as f64 - cy) / fy;
            let dir = [
                du * right[0] + dv * down[0] + forward[0],
                du * right[1] + dv * down[1] + forward[1],
                du * right[2] + dv * down[2] + forward[2],
            ];
            let Some((t, hit_box)) = cast_ray(boxes, position, dir) else {
                continue;
            };
            // The forward component of the unnormalized direction is 1,
            // so `t` is exactly the camera-frame z depth.
            depth[idx] = t as f32 as f64;
            labels[idx] = boxes[hit_box].class;
            hits[idx] = Some([du * t, dv * t, t]);
            rgb[idx] = shaded_color(boxes[hit_box].color, rng);
        }
    }

    RenderedFrame {
        frame: RgbdFrame::new(
            rgb,
            DepthImage::new(width, height, DepthSemantics::ZDepth, depth).expect("sized above"),
            CameraModel::Perspective(intrinsics),
        )
        .expect("rgb sized above"),
        labels,
        hits,
    }
}

fn render_panorama(
    config: &WorldConfig,
    boxes: &[SurfaceBox],
    room_x: f64,
    room_y: f64,
    room_z: f64,
    rng: &mut ChaCha8Rng,
) -> RenderedFrame {
    let (width, height) = config.panorama_size;
    let position = free_position(boxes, [room_x, room_y, room_z], (1.3, 1.8), rng);
    let pixels = width * height;
    let mut rgb = vec![[0.0f64; 3]; pixels];
    let mut depth = vec![0.0f64; pixels];
    let mut labels = vec![NO_LABEL; pixels];
    let mut hits = vec![None; pixels];
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            let (u, v) = pixel_to_uv(row, col, width, height).expect("pixel in range");
            let dir = panoramic_point(u, v, 1.0);
            let Some((t, hit_box)) = cast_ray(boxes, position, dir) else {
                continue;
            };
            // `dir` is unit length, so `t` is the ray distance.
            depth[idx] = t as f32 as f64;
            labels[idx] = boxes[hit_box].class;
            hits[idx] = Some([dir[0] * t, dir[1] * t, dir[2] * t]);
            rgb[idx] = shaded_color(boxes[hit_box].color, rng);
        }
    }

    RenderedFrame {
        frame: RgbdFrame::new(
            rgb,
            DepthImage::new(width, height, DepthSemantics::RayDistance, depth).expect("sized above"),
            CameraModel::Panoramic,
        )
        .expect("rgb sized above"),
        labels,
        hits,
    }
}

/// Pixel color: box color plus sensor-style noise, quantized like PPM.
fn shaded_color(base: [f64; 3], rng: &mut ChaCha8Rng) -> [f64; 3] {
    let mut c = base;
    for ch in c.iter_mut() {
        let noise: f64 = StandardNormal.sample(rng);
        *ch = quantize_color(*ch + 0.04 * noise);
    }
    c
}
