//! Camera models and 2D -> 3D lifting.
//!
//! Perspective frames store z-depth and lift through the inverse
//! intrinsics; panoramic (equirectangular) frames store ray distance and
//! lift through azimuth/elevation angles. Both produce one point per
//! valid depth pixel, in the camera frame, with colors and source-pixel
//! provenance attached.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Pinhole intrinsics in pixel units.
///
/// Continuous image coordinates put pixel centers at integer positions,
/// so lifting pixel `(col, row)` uses `u = col`, `v = row` directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<CameraIntrinsics> {
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "invalid intrinsics: fx={fx} fy={fy} cx={cx} cy={cy}"
            )));
        }
        Ok(CameraIntrinsics { fx, fy, cx, cy })
    }

    /// Lift a continuous image coordinate and z-depth to a 3D point:
    /// the depth times the inverse intrinsics applied to `(u, v, 1)`.
    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> [f64; 3] {
        [
            depth * (u - self.cx) / self.fx,
            depth * (v - self.cy) / self.fy,
            depth,
        ]
    }

    /// Project a camera-frame point to `(u, v, depth)`.
    pub fn project(&self, point: [f64; 3]) -> Result<(f64, f64, f64)> {
        let [x, y, z] = point;
        if z <= 0.0 {
            return Err(Error::BehindCamera { z });
        }
        Ok((self.fx * x / z + self.cx, self.fy * y / z + self.cy, z))
    }
}

/// What a depth sample means.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthSemantics {
    /// Perspective z-value.
    ZDepth,
    /// Panoramic distance from the camera to the observed point.
    RayDistance,
}

/// Row-major depth image. Samples that are non-finite or `<= 0` are
/// invalid (sensor holes) and are skipped by the lifting operations.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub semantics: DepthSemantics,
    pub values: Vec<f64>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, semantics: DepthSemantics, values: Vec<f64>) -> Result<DepthImage> {
        if values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} depth image needs {} samples, got {}",
                width,
                height,
                width * height,
                values.len()
            )));
        }
        Ok(DepthImage {
            width,
            height,
            semantics,
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// Is a depth sample usable?
pub fn depth_is_valid(d: f64) -> bool {
    d.is_finite() && d > 0.0
}

/// The camera a frame was captured with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CameraModel {
    Perspective(CameraIntrinsics),
    Panoramic,
}

impl CameraModel {
    fn name(&self) -> &'static str {
        match self {
            CameraModel::Perspective(_) => "perspective",
            CameraModel::Panoramic => "panoramic",
        }
    }
}

/// An RGB image, its depth image, and the camera model.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    /// Row-major colors in `[0, 1]`.
    pub rgb: Vec<[f64; 3]>,
    pub depth: DepthImage,
    pub camera: CameraModel,
}

impl RgbdFrame {
    pub fn new(rgb: Vec<[f64; 3]>, depth: DepthImage, camera: CameraModel) -> Result<RgbdFrame> {
        if rgb.len() != depth.width * depth.height {
            return Err(Error::ShapeMismatch(format!(
                "rgb has {} pixels, depth is {}x{}",
                rgb.len(),
                depth.width,
                depth.height
            )));
        }
        Ok(RgbdFrame { rgb, depth, camera })
    }

    pub fn width(&self) -> usize {
        self.depth.width
    }

    pub fn height(&self) -> usize {
        self.depth.height
    }
}

/// Angles of a panoramic pixel center: azimuth `u` in `[-pi, pi]`,
/// elevation `v` in `[-pi/2, pi/2]`.
pub fn pixel_to_uv(row: usize, col: usize, width: usize, height: usize) -> Result<(f64, f64)> {
    if row >= height || col >= width {
        return Err(Error::PixelOutOfRange {
            row,
            col,
            width,
            height,
        });
    }
    let u = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * (col as f64 + 0.5) / width as f64;
    let v = -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (row as f64 + 0.5) / height as f64;
    Ok((u, v))
}

/// Panoramic lifting of continuous angles and ray distance.
pub fn panoramic_point(u: f64, v: f64, distance: f64) -> [f64; 3] {
    [
        distance * v.cos() * u.cos(),
        distance * v.cos() * u.sin(),
        -distance * v.sin(),
    ]
}

/// Lift a perspective frame: one point per valid depth pixel at
/// `depth * K^-1 * (col, row, 1)`, with the pixel's color and index.
pub fn lift_perspective(frame: &RgbdFrame) -> Result<PointCloud> {
    let CameraModel::Perspective(intrinsics) = frame.camera else {
        return Err(Error::WrongCamera {
            expected: "perspective",
            got: frame.camera.name(),
        });
    };
    if frame.depth.semantics != DepthSemantics::ZDepth {
        return Err(Error::InvalidInput(
            "perspective lifting needs z-depth semantics".into(),
        ));
    }
    lift_with(frame, |row, col, d| {
        Ok(intrinsics.unproject(col as f64, row as f64, d))
    })
}

/// Lift a panoramic frame through pixel-center angles.
pub fn lift_panoramic(frame: &RgbdFrame) -> Result<PointCloud> {
    if frame.camera != CameraModel::Panoramic {
        return Err(Error::WrongCamera {
            expected: "panoramic",
            got: frame.camera.name(),
        });
    }
    if frame.depth.semantics != DepthSemantics::RayDistance {
        return Err(Error::InvalidInput(
            "panoramic lifting needs ray-distance semantics".into(),
        ));
    }
    let (width, height) = (frame.width(), frame.height());
    lift_with(frame, |row, col, d| {
        let (u, v) = pixel_to_uv(row, col, width, height)?;
        Ok(panoramic_point(u, v, d))
    })
}

/// Lift a frame with whichever camera model it carries.
pub fn lift(frame: &RgbdFrame) -> Result<PointCloud> {
    match frame.camera {
        CameraModel::Perspective(_) => lift_perspective(frame),
        CameraModel::Panoramic => lift_panoramic(frame),
    }
}

fn lift_with<F>(frame: &RgbdFrame, mut point_of: F) -> Result<PointCloud>
where
    F: FnMut(usize, usize, f64) -> Result<[f64; 3]>,
{
    let (width, height) = (frame.width(), frame.height());
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut provenance = Vec::new();
    for row in 0..height {
        for col in 0..width {
            let idx = row * width + col;
            let d = frame.depth.values[idx];
            if !depth_is_valid(d) {
                continue;
            }
            positions.push(point_of(row, col, d)?);
            colors.push(frame.rgb[idx]);
            provenance.push(idx as u32);
        }
    }
    Ok(PointCloud {
        positions,
        colors,
        hard_labels: None,
        soft_labels: None,
        provenance: Some(provenance),
    })
}

/// Project a camera-frame point back to `(u, v, depth)`; the inverse of
/// perspective lifting on valid pixels.
pub fn project_perspective(point: [f64; 3], intrinsics: &CameraIntrinsics) -> Result<(f64, f64, f64)> {
    intrinsics.project(point)
}

// --- LDEP depth format -------------------------------------------------
//
// Magic "LDEP", little-endian u32 width, u32 height, u8 semantics
// (0 = z-depth, 1 = ray distance), then width*height f32 samples in
// row-major order.

const LDEP_MAGIC: &[u8; 4] = b"LDEP";

pub fn write_ldep<W: Write>(writer: &mut W, depth: &DepthImage) -> Result<()> {
    writer.write_all(LDEP_MAGIC)?;
    writer.write_all(&(depth.width as u32).to_le_bytes())?;
    writer.write_all(&(depth.height as u32).to_le_bytes())?;
    writer.write_all(&[match depth.semantics {
        DepthSemantics::ZDepth => 0u8,
        DepthSemantics::RayDistance => 1u8,
    }])?;
    for &v in &depth.values {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_ldep<R: Read>(reader: &mut R) -> Result<DepthImage> {
    let bad = |reason: &str| Error::Format {
        format: "LDEP",
        reason: reason.to_string(),
    };
    let mut header = [0u8; 13];
    reader.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[0..4] != LDEP_MAGIC {
        return Err(bad("missing LDEP magic"));
    }
    let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let semantics = match header[12] {
        0 => DepthSemantics::ZDepth,
        1 => DepthSemantics::RayDistance,
        other => return Err(bad(&format!("unknown semantics byte {other}"))),
    };
    let mut raw = vec![0u8; width * height * 4];
    reader.read_exact(&mut raw).map_err(|_| bad("truncated samples"))?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    DepthImage::new(width, height, semantics, values)
}

pub fn write_ldep_file(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut buf = Vec::new();
    write_ldep(&mut buf, depth)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_ldep_file(path: &Path) -> Result<DepthImage> {
    read_ldep(&mut fs::File::open(path)?)
}

// --- Binary PPM (P6) ---------------------------------------------------

pub fn write_ppm<W: Write>(writer: &mut W, width: usize, height: usize, rgb: &[[f64; 3]]) -> Result<()> {
    if rgb.len() != width * height {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} image needs {} pixels, got {}",
            width,
            height,
            width * height,
            rgb.len()
        )));
    }
    writer.write_all(format!("P6\n{width} {height}\n255\n").as_bytes())?;
    let mut bytes = Vec::with_capacity(rgb.len() * 3);
    for px in rgb {
        for &c in px {
            bytes.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    writer.write_all(&bytes)?;
    Ok(())
}

pub fn read_ppm<R: Read>(reader: &mut R) -> Result<(usize, usize, Vec<[f64; 3]>)> {
    let bad = |reason: &str| Error::Format {
        format: "PPM",
        reason: reason.to_string(),
    };
    let mut data = Vec::new();
    reader.read_to_end(&mut data)?;
    if data.len() < 2 || &data[0..2] != b"P6" {
        return Err(bad("not a binary PPM (P6)"));
    }
    // Header: three whitespace-separated fields after the magic.
    let mut at = 2usize;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        while at < data.len() && data[at].is_ascii_whitespace() {
            at += 1;
        }
        if at < data.len() && data[at] == b'#' {
            while at < data.len() && data[at] != b'\n' {
                at += 1;
            }
            while at < data.len() && data[at].is_ascii_whitespace() {
                at += 1;
            }
        }
        let start = at;
        while at < data.len() && data[at].is_ascii_digit() {
            at += 1;
        }
        if start == at {
            return Err(bad("malformed header"));
        }
        *field = std::str::from_utf8(&data[start..at])
            .unwrap()
            .parse()
            .map_err(|_| bad("malformed header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    at += 1; // single whitespace after maxval
    let need = width * height * 3;
    if data.len() < at + need {
        return Err(bad("truncated pixel data"));
    }
    let rgb = data[at..at + need]
        .chunks_exact(3)
        .map(|c| {
            [
                f64::from(c[0]) / 255.0,
                f64::from(c[1]) / 255.0,
                f64::from(c[2]) / 255.0,
            ]
        })
        .collect();
    Ok((width, height, rgb))
}
