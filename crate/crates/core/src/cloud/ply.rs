//! Point-cloud persistence: an ASCII PLY subset and the SLAB sidecar.
//!
//! PLY files carry `vertex` elements with float x/y/z, uchar red/green/
//! blue, and an optional int label. Soft labels travel separately in a
//! binary SLAB file: magic "SLAB", u32 row count, u32 class count, then
//! row-major little-endian f32 probabilities.

use std::io::{BufRead, BufReader, Read, Write};

use crate::cloud::{PointCloud, SoftLabels};
use crate::error::{Error, Result};

/// Write a cloud as ASCII PLY. The label property is present exactly
/// when the cloud carries hard labels; unlabeled points write -1.
pub fn write_ply<W: Write>(writer: &mut W, cloud: &PointCloud) -> Result<()> {
    let n = cloud.len();
    let with_labels = cloud.hard_labels.is_some();
    write!(
        writer,
        "ply\nformat ascii 1.0\nelement vertex {n}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n"
    )?;
    if with_labels {
        writeln!(writer, "property int label")?;
    }
    writeln!(writer, "end_header")?;
    for i in 0..n {
        let p = cloud.positions[i];
        let c = cloud.colors[i];
        let quant = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        write!(
            writer,
            "{} {} {} {} {} {}",
            p[0] as f32, p[1] as f32, p[2] as f32, quant(c[0]), quant(c[1]), quant(c[2])
        )?;
        if let Some(labels) = &cloud.hard_labels {
            write!(writer, " {}", labels[i])?;
        }
        writeln!(writer)?;
    }
    Ok(())
}

/// Read the PLY subset produced by [`write_ply`].
pub fn read_ply<R: Read>(reader: R) -> Result<PointCloud> {
    let bad = |reason: String| Error::Format {
        format: "PLY",
        reason,
    };
    let mut lines = BufReader::new(reader).lines();
    let mut next_line = || -> Result<String> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| bad("unexpected end of file".into()))
    };

    if next_line()?.trim() != "ply" {
        return Err(bad("missing ply magic".into()));
    }
    if next_line()?.trim() != "format ascii 1.0" {
        return Err(bad("only ascii 1.0 is supported".into()));
    }

    let mut count: Option<usize> = None;
    let mut properties: Vec<String> = Vec::new();
    loop {
        let line = next_line()?;
        let line = line.trim();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("element ") {
            let mut it = rest.split_whitespace();
            let kind = it.next().unwrap_or("");
            if kind != "vertex" {
                return Err(bad(format!("unsupported element {kind}")));
            }
            count = Some(
                it.next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad("bad vertex count".into()))?,
            );
        } else if let Some(rest) = line.strip_prefix("property ") {
            let name = rest
                .split_whitespace()
                .nth(1)
                .ok_or_else(|| bad("bad property line".into()))?;
            properties.push(name.to_string());
        } else if line.starts_with("comment") || line.is_empty() {
            continue;
        } else {
            return Err(bad(format!("unexpected header line: {line}")));
        }
    }

    let expected = ["x", "y", "z", "red", "green", "blue"];
    let with_labels = match properties.len() {
        6 => false,
        7 if properties[6] == "label" => true,
        _ => {
            return Err(bad(format!(
                "unsupported property list {properties:?}"
            )))
        }
    };
    for (have, want) in properties.iter().zip(expected.iter()) {
        if have != want {
            return Err(bad(format!("expected property {want}, found {have}")));
        }
    }

    let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
    let mut cloud = PointCloud::default();
    if with_labels {
        cloud.hard_labels = Some(Vec::with_capacity(count));
    }
    for i in 0..count {
        let line = next_line().map_err(|_| bad(format!("missing vertex {i}")))?;
        let mut it = line.split_whitespace();
        // Positions are float (f32) properties; parse at that width so
        // the written shortest representation round-trips exactly.
        let mut f = |what: &str| -> Result<f64> {
            it.next()
                .and_then(|v| v.parse::<f32>().ok())
                .map(f64::from)
                .ok_or_else(|| bad(format!("vertex {i}: bad {what}")))
        };
        let x = f("x")?;
        let y = f("y")?;
        let z = f("z")?;
        let r = f("red")?;
        let g = f("green")?;
        let b = f("blue")?;
        cloud.positions.push([x, y, z]);
        cloud.colors.push([r / 255.0, g / 255.0, b / 255.0]);
        if with_labels {
            let label = it
                .next()
                .and_then(|v| v.parse::<i32>().ok())
                .ok_or_else(|| bad(format!("vertex {i}: bad label")))?;
            cloud.hard_labels.as_mut().unwrap().push(label);
        }
    }
    Ok(cloud)
}

const SLAB_MAGIC: &[u8; 4] = b"SLAB";

/// Write `rows x classes` probabilities as a SLAB blob.
pub fn write_slab<W: Write>(writer: &mut W, rows: usize, classes: usize, values: &[f64]) -> Result<()> {
    if values.len() != rows * classes {
        return Err(Error::ShapeMismatch(format!(
            "SLAB wants {} values for {rows}x{classes}, got {}",
            rows * classes,
            values.len()
        )));
    }
    writer.write_all(SLAB_MAGIC)?;
    writer.write_all(&(rows as u32).to_le_bytes())?;
    writer.write_all(&(classes as u32).to_le_bytes())?;
    for &v in values {
        writer.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Read a SLAB blob back as `(rows, classes, values)`.
pub fn read_slab<R: Read>(reader: &mut R) -> Result<(usize, usize, Vec<f64>)> {
    let bad = |reason: &str| Error::Format {
        format: "SLAB",
        reason: reason.to_string(),
    };
    let mut header = [0u8; 12];
    reader.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
    if &header[0..4] != SLAB_MAGIC {
        return Err(bad("missing SLAB magic"));
    }
    let rows = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
    let classes = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
    let mut raw = vec![0u8; rows * classes * 4];
    reader.read_exact(&mut raw).map_err(|_| bad("truncated values"))?;
    let values = raw
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok((rows, classes, values))
}

/// Attach SLAB contents to a cloud as soft labels.
pub fn soft_labels_from_slab(rows: usize, classes: usize, values: Vec<f64>, cloud_len: usize) -> Result<SoftLabels> {
    if rows != cloud_len {
        return Err(Error::ShapeMismatch(format!(
            "SLAB has {rows} rows for a cloud of {cloud_len} points"
        )));
    }
    Ok(SoftLabels::new(classes, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_cloud(labels: bool) -> PointCloud {
        PointCloud {
            positions: vec![[0.5, -1.25, 3.0], [2.0, 0.0, -0.125]],
            colors: vec![[0.0, 0.5, 1.0], [1.0, 0.25, 0.0]],
            hard_labels: labels.then(|| vec![3, -1]),
            soft_labels: None,
            provenance: None,
        }
    }

    #[test]
    fn ply_round_trip_with_labels() {
        let cloud = sample_cloud(true);
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud).unwrap();
        let back = read_ply(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.hard_labels, cloud.hard_labels);
        for (a, b) in cloud.positions.iter().zip(&back.positions) {
            for axis in 0..3 {
                assert!((a[axis] - b[axis]).abs() < 1e-6);
            }
        }
        for (a, b) in cloud.colors.iter().zip(&back.colors) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
    }

    #[test]
    fn ply_round_trip_without_labels() {
        let cloud = sample_cloud(false);
        let mut buf = Vec::new();
        write_ply(&mut buf, &cloud).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(!text.contains("label"));
        let back = read_ply(buf.as_slice()).unwrap();
        assert!(back.hard_labels.is_none());
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn ply_rejects_malformed_headers() {
        assert!(read_ply(&b"ply\nformat binary 1.0\n"[..]).is_err());
        assert!(read_ply(&b"obj\n"[..]).is_err());
        let missing_vertex = b"ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n0 0 0 1 2 3\n";
        assert!(read_ply(&missing_vertex[..]).is_err());
    }

    #[test]
    fn slab_round_trip() {
        let values = vec![0.5, 0.5, 0.125, 0.875];
        let mut buf = Vec::new();
        write_slab(&mut buf, 2, 2, &values).unwrap();
        let (rows, classes, back) = read_slab(&mut buf.as_slice()).unwrap();
        assert_eq!((rows, classes), (2, 2));
        assert_eq!(back, values); // these values are exact in f32
    }

    #[test]
    fn slab_shape_checks() {
        let mut buf = Vec::new();
        assert!(matches!(
            write_slab(&mut buf, 2, 3, &[0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(matches!(
            soft_labels_from_slab(4, 2, vec![0.0; 8], 5),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
