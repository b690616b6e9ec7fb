//! Point-cloud files.
//!
//! * Text: one point per line, `x y z [intensity]`, `#` starts a comment.
//!   A leading `# frame: <id>` comment carries the frame id.
//! * Binary: `b"PCB1"`, little-endian `u32` count, then `count × 3` or
//!   `count × 4` little-endian `f32`. The stride is implied by the payload
//!   length; in 4-wide files a NaN intensity means "absent".

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Point3, PointCloud, RigidTransform};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PCB1";

pub fn to_text(cloud: &PointCloud) -> String {
    let mut s = String::new();
    if !cloud.frame_id.is_empty() {
        s.push_str(&format!("# frame: {}\n", cloud.frame_id));
    }
    for p in &cloud.points {
        match p.intensity {
            Some(i) => s.push_str(&format!("{} {} {} {}\n", p.x, p.y, p.z, i)),
            None => s.push_str(&format!("{} {} {}\n", p.x, p.y, p.z)),
        }
    }
    s
}

pub fn from_text(text: &str) -> Result<PointCloud> {
    let mut cloud = PointCloud::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(id) = comment.trim().strip_prefix("frame:") {
                cloud.frame_id = id.trim().to_string();
            }
            continue;
        }
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::format("point text", format!("line {}: {e}", lineno + 1)))?;
        let p = match vals.as_slice() {
            [x, y, z] => Point3::new(*x, *y, *z),
            [x, y, z, i] => Point3::with_intensity(*x, *y, *z, *i),
            _ => {
                return Err(Error::format(
                    "point text",
                    format!("line {}: expected 3 or 4 fields, got {}", lineno + 1, vals.len()),
                ))
            }
        };
        if !p.is_finite() {
            return Err(Error::format("point text", format!("line {}: non-finite coordinate", lineno + 1)));
        }
        cloud.points.push(p);
    }
    Ok(cloud)
}

pub fn to_binary(cloud: &PointCloud) -> Vec<u8> {
    let wide = cloud.points.iter().any(|p| p.intensity.is_some());
    let stride = if wide { 4 } else { 3 };
    let mut out = Vec::with_capacity(8 + cloud.len() * stride * 4);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(cloud.len() as u32).to_le_bytes());
    for p in &cloud.points {
        for v in [p.x, p.y, p.z] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if wide {
            let i = p.intensity.map_or(f32::NAN, |i| i as f32);
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    out
}

pub fn from_binary(bytes: &[u8]) -> Result<PointCloud> {
    if bytes.len() < 8 || &bytes[..4] != BINARY_MAGIC {
        return Err(Error::format("binary point cloud", "missing PCB1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let payload = &bytes[8..];
    if count == 0 {
        return if payload.is_empty() {
            Ok(PointCloud::default())
        } else {
            Err(Error::format("binary point cloud", "trailing bytes after empty cloud"))
        };
    }
    let stride = match payload.len().checked_div(count * 4) {
        Some(s @ (3 | 4)) if payload.len() == count * s * 4 => s,
        _ => {
            return Err(Error::format(
                "binary point cloud",
                format!("{} payload bytes do not hold {count} points", payload.len()),
            ))
        }
    };
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let points = floats
        .chunks_exact(stride)
        .map(|c| {
            let mut p = Point3::new(c[0] as f64, c[1] as f64, c[2] as f64);
            if stride == 4 && !c[3].is_nan() {
                p.intensity = Some(c[3] as f64);
            }
            p
        })
        .collect();
    Ok(PointCloud::new(points))
}

/// Reads a cloud, picking the format from the file contents.
pub fn read(path: &Path) -> Result<PointCloud> {
    let load = || -> Result<PointCloud> {
        let bytes = fs::read(path)?;
        if bytes.starts_with(BINARY_MAGIC) {
            from_binary(&bytes)
        } else {
            let text = String::from_utf8(bytes).map_err(|e| Error::format("point text", e.to_string()))?;
            from_text(&text)
        }
    };
    load().map_err(|e| e.at(path))
}

pub fn write_text(path: &Path, cloud: &PointCloud) -> Result<()> {
    fs::write(path, to_text(cloud)).map_err(|e| Error::from(e).at(path))
}

pub fn write_binary(path: &Path, cloud: &PointCloud) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::from(e).at(path))?;
    f.write_all(&to_binary(cloud)).map_err(|e| Error::from(e).at(path))
}

/// Writes binary for a `.pcb` extension and text otherwise.
pub fn write(path: &Path, cloud: &PointCloud) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("pcb") => write_binary(path, cloud),
        _ => write_text(path, cloud),
    }
}

/// One pose per line as the 12 row-major values of `[R | t]`.
pub fn poses_to_text(poses: &[RigidTransform]) -> String {
    let mut s = String::new();
    for pose in poses {
        let v = pose.to_row_major().map(|x| x.to_string());
        s.push_str(&v.join(" "));
        s.push('\n');
    }
    s
}

pub fn poses_from_text(text: &str) -> Result<Vec<RigidTransform>> {
    let mut poses = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |d: String| Error::format("pose text", format!("line {}: {d}", lineno + 1));
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| bad(format!("{e}")))?;
        let arr: [f64; 12] = vals
            .try_into()
            .map_err(|v: Vec<f64>| bad(format!("expected 12 values, got {}", v.len())))?;
        let t = RigidTransform::from_row_major(&arr);
        if RigidTransform::new(t.rotation, t.translation).is_none() {
            return Err(bad("rotation is not orthonormal".into()));
        }
        poses.push(t);
    }
    Ok(poses)
}

pub fn read_poses(path: &Path) -> Result<Vec<RigidTransform>> {
    let load = || -> Result<Vec<RigidTransform>> { poses_from_text(&fs::read_to_string(path)?) };
    load().map_err(|e| e.at(path))
}

pub fn write_poses(path: &Path, poses: &[RigidTransform]) -> Result<()> {
    fs::write(path, poses_to_text(poses)).map_err(|e| Error::from(e).at(path))
}
