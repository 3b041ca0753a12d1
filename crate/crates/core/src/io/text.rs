//! Line-oriented text formats: poses, intrinsics and correspondence lists.
//! Blank lines and lines starting with `#` are ignored unless noted.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix4, Vector3};

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Pose};
use crate::matching::{Correspondence, CorrespondenceSet};

pub const CORRESPONDENCE_HEADER: &str = "# xmodreg-corr v1";

/// Non-comment lines with their starting byte offset.
fn data_lines<'a>(bytes: &'a [u8], format: &'static str) -> Result<Vec<(usize, &'a str)>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(format, e.valid_up_to() as u64, "not UTF-8"))?;
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        if !body.is_empty() && !body.starts_with('#') {
            out.push((offset, body));
        }
        offset += line.len();
    }
    Ok(out)
}

fn numbers<T: std::str::FromStr>(
    line: &str,
    offset: usize,
    want: usize,
    format: &'static str,
) -> Result<Vec<T>> {
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.len() != want {
        return Err(Error::format(
            format,
            offset as u64,
            format!("expected {want} values, found {}", words.len()),
        ));
    }
    words
        .iter()
        .map(|w| {
            w.parse()
                .map_err(|_| Error::format(format, offset as u64, format!("`{w}` is not a valid number")))
        })
        .collect()
}

fn finite(values: &[f64], offset: usize, format: &'static str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::format(format, offset as u64, "non-finite value"));
    }
    Ok(())
}

/// Four rows of a homogeneous 4x4 matrix.
pub fn decode_pose(bytes: &[u8]) -> Result<Pose> {
    const F: &str = "pose";
    let lines = data_lines(bytes, F)?;
    if lines.len() != 4 {
        let at = lines.get(4).map_or(bytes.len(), |l| l.0);
        return Err(Error::format(F, at as u64, format!("expected 4 matrix rows, found {}", lines.len())));
    }
    let mut m = Matrix4::zeros();
    for (r, (offset, line)) in lines.iter().enumerate() {
        let row: Vec<f64> = numbers(line, *offset, 4, F)?;
        finite(&row, *offset, F)?;
        for (c, v) in row.into_iter().enumerate() {
            m[(r, c)] = v;
        }
    }
    Pose::from_homogeneous(&m).map_err(|e| Error::format(F, lines[0].0 as u64, e.to_string()))
}

/// Rust's float `Display` is the shortest string that parses back to the
/// same value, so poses round-trip exactly.
pub fn encode_pose(pose: &Pose) -> String {
    let m = pose.to_homogeneous();
    let mut s = String::new();
    for r in 0..4 {
        let row: Vec<String> = (0..4).map(|c| format!("{}", m[(r, c)])).collect();
        let _ = writeln!(s, "{}", row.join(" "));
    }
    s
}

/// One line: `fx fy cx cy width height`.
pub fn decode_intrinsics(bytes: &[u8]) -> Result<CameraIntrinsics> {
    const F: &str = "intrinsics";
    let lines = data_lines(bytes, F)?;
    let [(offset, line)] = lines[..] else {
        return Err(Error::format(F, 0, format!("expected one line, found {}", lines.len())));
    };
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.len() != 6 {
        return Err(Error::format(F, offset as u64, format!("expected 6 values, found {}", words.len())));
    }
    let f: Vec<f64> = numbers(&words[..4].join(" "), offset, 4, F)?;
    let size: Vec<usize> = numbers(&words[4..].join(" "), offset, 2, F)?;
    CameraIntrinsics::new(f[0], f[1], f[2], f[3], size[0], size[1])
        .map_err(|e| Error::format(F, offset as u64, e.to_string()))
}

pub fn encode_intrinsics(k: &CameraIntrinsics) -> String {
    format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

/// Header line, optional `# counts n_image n_depth`, then one line per
/// correspondence: `u v u' v' qx qy qz distance`.
pub fn decode_correspondences(bytes: &[u8]) -> Result<CorrespondenceSet> {
    const F: &str = "correspondences";
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(F, e.valid_up_to() as u64, "not UTF-8"))?;
    if text.lines().next().map(str::trim) != Some(CORRESPONDENCE_HEADER) {
        return Err(Error::format(F, 0, format!("missing `{CORRESPONDENCE_HEADER}` header")));
    }
    let mut counts = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if let Some(rest) = line.trim().strip_prefix("# counts") {
            let c: Vec<usize> = numbers(rest, offset, 2, F)?;
            counts = Some((c[0], c[1]));
        }
        offset += line.len();
    }
    let mut pairs = Vec::new();
    for (offset, line) in data_lines(bytes, F)? {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.len() != 8 {
            return Err(Error::format(F, offset as u64, format!("expected 8 values, found {}", words.len())));
        }
        let px: Vec<usize> = numbers(&words[..4].join(" "), offset, 4, F)?;
        let rest: Vec<f64> = numbers(&words[4..].join(" "), offset, 4, F)?;
        finite(&rest, offset, F)?;
        if rest[3] < 0.0 {
            return Err(Error::format(F, offset as u64, "negative descriptor distance"));
        }
        pairs.push(Correspondence {
            image_px: (px[0], px[1]),
            depth_px: (px[2], px[3]),
            q: Vector3::new(rest[0], rest[1], rest[2]),
            distance: rest[3],
        });
    }
    let (n_image, n_depth) = counts.unwrap_or((pairs.len(), pairs.len()));
    if pairs.len() > n_image.min(n_depth) {
        return Err(Error::format(
            F,
            0,
            format!("{} correspondences exceed descriptor counts ({n_image}, {n_depth})", pairs.len()),
        ));
    }
    Ok(CorrespondenceSet { pairs, n_image, n_depth })
}

pub fn encode_correspondences(set: &CorrespondenceSet) -> String {
    let mut s = format!("{CORRESPONDENCE_HEADER}\n# counts {} {}\n", set.n_image, set.n_depth);
    for c in &set.pairs {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            c.image_px.0, c.image_px.1, c.depth_px.0, c.depth_px.1, c.q.x, c.q.y, c.q.z, c.distance
        );
    }
    s
}

pub fn read_pose(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    decode_pose(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_pose(path: impl AsRef<Path>, pose: &Pose) -> Result<()> {
    write_bytes(path.as_ref(), encode_pose(pose).as_bytes())
}

pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    let path = path.as_ref();
    decode_intrinsics(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &CameraIntrinsics) -> Result<()> {
    write_bytes(path.as_ref(), encode_intrinsics(k).as_bytes())
}

pub fn read_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceSet> {
    let path = path.as_ref();
    decode_correspondences(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_correspondences(path: impl AsRef<Path>, set: &CorrespondenceSet) -> Result<()> {
    write_bytes(path.as_ref(), encode_correspondences(set).as_bytes())
}
