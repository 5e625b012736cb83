//! On-disk layout of a synthetic world.
//!
//! Each scene is a directory `scene_NNN/` holding `cloud.ply`, and per
//! frame `frame_K.ppm`, `frame_K.ldep`, `frame_K.labels` (little-endian
//! u16 per pixel, row-major, 0xFFFF = no surface), and `camera_K.txt`
//! (`fx fy cx cy` or the word `panoramic`).

use std::fs;
use std::path::{Path, PathBuf};

use crate::cloud::{read_ply, write_ply};
use crate::error::{Error, Result};
use crate::geom::{
    read_ldep_file, read_ppm, write_ldep_file, write_ppm, CameraIntrinsics, CameraModel, RgbdFrame,
};

use super::synth::{RenderedFrame, Scene, World};

/// Paths of one frame's files inside a scene directory.
#[derive(Debug, Clone)]
pub struct FrameFiles {
    pub ppm: PathBuf,
    pub ldep: PathBuf,
    pub labels: PathBuf,
    pub camera: PathBuf,
}

impl FrameFiles {
    pub fn new(scene_dir: &Path, frame_idx: usize) -> FrameFiles {
        FrameFiles {
            ppm: scene_dir.join(format!("frame_{frame_idx}.ppm")),
            ldep: scene_dir.join(format!("frame_{frame_idx}.ldep")),
            labels: scene_dir.join(format!("frame_{frame_idx}.labels")),
            camera: scene_dir.join(format!("camera_{frame_idx}.txt")),
        }
    }
}

pub fn scene_dir_name(id: u64) -> String {
    format!("scene_{id:03}")
}

/// Write every scene of a world under `dir`.
pub fn write_world(world: &World, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for scene in &world.scenes {
        let scene_dir = dir.join(scene_dir_name(scene.id));
        fs::create_dir_all(&scene_dir)?;
        let mut ply = Vec::new();
        write_ply(&mut ply, &scene.cloud)?;
        fs::write(scene_dir.join("cloud.ply"), ply)?;
        for (idx, rendered) in scene.frames.iter().enumerate() {
            let files = FrameFiles::new(&scene_dir, idx);
            let mut ppm = Vec::new();
            write_ppm(
                &mut ppm,
                rendered.frame.width(),
                rendered.frame.height(),
                &rendered.frame.rgb,
            )?;
            fs::write(&files.ppm, ppm)?;
            write_ldep_file(&files.ldep, &rendered.frame.depth)?;
            write_labels_file(&files.labels, &rendered.labels)?;
            fs::write(&files.camera, camera_file_contents(&rendered.frame.camera))?;
        }
    }
    Ok(())
}

pub fn camera_file_contents(camera: &CameraModel) -> String {
    match camera {
        CameraModel::Perspective(k) => format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy),
        CameraModel::Panoramic => "panoramic\n".to_string(),
    }
}

pub fn write_labels_file(path: &Path, labels: &[u16]) -> Result<()> {
    let mut bytes = Vec::with_capacity(labels.len() * 2);
    for &l in labels {
        bytes.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_labels_file(path: &Path, pixels: usize) -> Result<Vec<u16>> {
    let bytes = fs::read(path)?;
    if bytes.len() != pixels * 2 {
        return Err(Error::Format {
            format: "labels",
            reason: format!(
                "{} holds {} bytes, expected {} for {pixels} pixels",
                path.display(),
                bytes.len(),
                pixels * 2
            ),
        });
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn read_camera_file(path: &Path) -> Result<CameraModel> {
    let text = fs::read_to_string(path)?;
    let trimmed = text.trim();
    if trimmed == "panoramic" {
        return Ok(CameraModel::Panoramic);
    }
    let values: Vec<f64> = trimmed
        .split_whitespace()
        .map(|v| v.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Format {
            format: "camera",
            reason: format!("{}: expected four numbers or 'panoramic'", path.display()),
        })?;
    if values.len() != 4 {
        return Err(Error::Format {
            format: "camera",
            reason: format!("{}: expected four numbers", path.display()),
        });
    }
    Ok(CameraModel::Perspective(CameraIntrinsics::new(
        values[0], values[1], values[2], values[3],
    )?))
}

/// Scene directories under `dir`, ordered by id.
pub fn scene_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if let Some(id_str) = name.strip_prefix("scene_") {
            if let Ok(id) = id_str.parse::<u64>() {
                found.push((id, entry.path()));
            }
        }
    }
    found.sort_by_key(|(id, _)| *id);
    if found.is_empty() {
        return Err(Error::EmptyInput("no scene directories found"));
    }
    Ok(found)
}

fn read_frame(scene_dir: &Path, frame_idx: usize) -> Result<RenderedFrame> {
    let files = FrameFiles::new(scene_dir, frame_idx);
    let (width, height, rgb) = read_ppm(&mut fs::File::open(&files.ppm)?)?;
    let depth = read_ldep_file(&files.ldep)?;
    if depth.width != width || depth.height != height {
        return Err(Error::ShapeMismatch(format!(
            "{}: rgb is {width}x{height} but depth is {}x{}",
            scene_dir.display(),
            depth.width,
            depth.height
        )));
    }
    let labels = read_labels_file(&files.labels, width * height)?;
    let camera = read_camera_file(&files.camera)?;
    let pixels = width * height;
    Ok(RenderedFrame {
        frame: RgbdFrame::new(rgb, depth, camera)?,
        labels,
        hits: vec![None; pixels],
    })
}

/// Load a world written by [`write_world`]. Ray-cast hit records are not
/// persisted, so loaded frames carry none.
pub fn load_world(dir: &Path) -> Result<Vec<Scene>> {
    let mut scenes = Vec::new();
    for (id, scene_dir) in scene_dirs(dir)? {
        let cloud = read_ply(fs::File::open(scene_dir.join("cloud.ply"))?)?;
        let mut frames = Vec::new();
        let mut frame_idx = 0;
        loop {
            let files = FrameFiles::new(&scene_dir, frame_idx);
            if !files.ppm.exists() {
                break;
            }
            frames.push(read_frame(&scene_dir, frame_idx)?);
            frame_idx += 1;
        }
        if frames.is_empty() {
            return Err(Error::EmptyInput("scene directory has no frames"));
        }
        scenes.push(Scene {
            id,
            cloud,
            frames,
            boxes: Vec::new(),
        });
    }
    Ok(scenes)
}
