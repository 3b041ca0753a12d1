use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;

use super::{read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

/// Vertices plus optional per-vertex features from properties `f0..f{n-1}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub cloud: PointCloud,
    pub feature_dim: usize,
    /// Row-major, `feature_dim` values per vertex.
    pub features: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }

    fn range(self) -> (f64, f64) {
        match self {
            Scalar::I8 => (i8::MIN as f64, i8::MAX as f64),
            Scalar::U8 => (0.0, u8::MAX as f64),
            Scalar::I16 => (i16::MIN as f64, i16::MAX as f64),
            Scalar::U16 => (0.0, u16::MAX as f64),
            Scalar::I32 => (i32::MIN as f64, i32::MAX as f64),
            Scalar::U32 => (0.0, u32::MAX as f64),
            Scalar::F32 | Scalar::F64 => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body: usize,
}

fn err(offset: usize, message: impl Into<String>) -> Error {
    Error::format("PLY", offset as u64, message)
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut first = true;
    loop {
        let rest = &bytes[pos..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(err(pos, "header is not terminated by end_header"));
        };
        let raw = &rest[..nl];
        let line = std::str::from_utf8(raw)
            .map_err(|_| err(pos, "header line is not UTF-8"))?
            .trim_end_matches('\r');
        let start = pos;
        pos += nl + 1;
        let mut words = line.split_whitespace();
        let key = words.next().unwrap_or("");
        if first {
            if line != "ply" {
                return Err(err(0, "missing `ply` signature"));
            }
            first = false;
            continue;
        }
        match key {
            "format" => {
                let kind = words.next().unwrap_or("");
                let version = words.next().unwrap_or("");
                if version != "1.0" {
                    return Err(err(start, format!("unsupported PLY version `{version}`")));
                }
                encoding = Some(match kind {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => return Err(err(start, format!("unsupported format `{other}`"))),
                });
            }
            "comment" | "obj_info" | "" => {}
            "element" => {
                let name = words.next().ok_or_else(|| err(start, "element without a name"))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| err(start, "element count is not a non-negative integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err(start, "property before any element"))?;
                let ty = words.next().unwrap_or("");
                let prop = if ty == "list" {
                    let count = words.next().and_then(Scalar::parse);
                    let item = words.next().and_then(Scalar::parse);
                    match (count, item, words.next()) {
                        (Some(count), Some(item), Some(_)) if !count.is_float() => Property::List { count, item },
                        _ => return Err(err(start, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| err(start, format!("unknown property type `{ty}`")))?;
                    let name = words.next().ok_or_else(|| err(start, "property without a name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.props.push(prop);
            }
            "end_header" => break,
            other => return Err(err(start, format!("unexpected header keyword `{other}`"))),
        }
        if words.next().is_some() && !matches!(key, "comment" | "obj_info" | "property") {
            return Err(err(start, "trailing tokens on header line"));
        }
    }
    let encoding = encoding.ok_or_else(|| err(0, "header has no format line"))?;
    Ok(Header {
        encoding,
        elements,
        body: pos,
    })
}

/// Where x, y, z and the feature columns live among the vertex properties.
struct VertexLayout {
    xyz: [usize; 3],
    features: Vec<usize>,
}

fn vertex_layout(el: &Element, header_offset: usize) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.props.iter().position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    let mut xyz = [0; 3];
    for (k, axis) in ["x", "y", "z"].iter().enumerate() {
        let i = find(axis).ok_or_else(|| err(header_offset, format!("vertex has no `{axis}` property")))?;
        if let Property::Scalar { ty, .. } = &el.props[i] {
            if !ty.is_float() {
                return Err(err(header_offset, format!("vertex `{axis}` is not a float property")));
            }
        }
        xyz[k] = i;
    }
    let mut features = Vec::new();
    while let Some(i) = find(&format!("f{}", features.len())) {
        if let Property::Scalar { ty, .. } = &el.props[i] {
            if !ty.is_float() {
                return Err(err(header_offset, format!("feature f{} is not a float property", features.len())));
            }
        }
        features.push(i);
    }
    Ok(VertexLayout { xyz, features })
}

/// Source of property values for either encoding.
trait Values {
    fn scalar(&mut self, ty: Scalar) -> Result<f64>;
    fn offset(&self) -> usize;
}

struct Binary<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Values for Binary<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.bytes.len() - self.pos < n {
            return Err(err(self.pos, "truncated binary payload"));
        }
        let v = ty.decode(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

struct Ascii<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Values for Ascii<'_> {
    fn scalar(&mut self, ty: Scalar) -> Result<f64> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(err(start, "truncated ASCII payload"));
        }
        let token = std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| err(start, "value is not ASCII"))?;
        let v = if ty.is_float() {
            let v: f64 = token.parse().map_err(|_| err(start, format!("`{token}` is not a number")))?;
            if ty == Scalar::F32 {
                v as f32 as f64
            } else {
                v
            }
        } else {
            let v: i64 = token
                .parse()
                .map_err(|_| err(start, format!("`{token}` is not an integer")))?;
            v as f64
        };
        let (lo, hi) = ty.range();
        if v < lo || v > hi {
            return Err(err(start, format!("`{token}` is out of range for {ty:?}")));
        }
        Ok(v)
    }

    fn offset(&self) -> usize {
        self.pos
    }
}

/// Smallest number of payload bytes one element row can occupy.
fn min_row_bytes(el: &Element, encoding: PlyEncoding) -> usize {
    el.props
        .iter()
        .map(|p| match (encoding, p) {
            (PlyEncoding::Ascii, _) => 2,
            (PlyEncoding::BinaryLittleEndian, Property::Scalar { ty, .. }) => ty.size(),
            (PlyEncoding::BinaryLittleEndian, Property::List { count, .. }) => count.size(),
        })
        .sum::<usize>()
        .max(1)
}

fn read_elements(header: &Header, src: &mut dyn Values, total: usize) -> Result<PlyData> {
    let vertex = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| err(0, "no vertex element"))?;
    let layout = vertex_layout(&header.elements[vertex], 0)?;
    let mut points = Vec::new();
    let mut features = Vec::new();
    for (ei, el) in header.elements.iter().enumerate() {
        // Reject counts the remaining bytes cannot possibly hold before
        // reserving anything.
        let left = total - src.offset();
        if el.props.is_empty() && el.count > 0 {
            return Err(err(src.offset(), format!("element `{}` has rows but no properties", el.name)));
        }
        if el.count.saturating_mul(min_row_bytes(el, header.encoding)) > left + 1 {
            return Err(err(
                src.offset(),
                format!("element `{}` claims {} rows, payload too short", el.name, el.count),
            ));
        }
        if ei == vertex {
            points.reserve(el.count);
            features.reserve(el.count * layout.features.len());
        }
        let mut row = vec![0.0f64; el.props.len()];
        for _ in 0..el.count {
            for (pi, p) in el.props.iter().enumerate() {
                match p {
                    Property::Scalar { ty, .. } => row[pi] = src.scalar(*ty)?,
                    Property::List { count, item } => {
                        let at = src.offset();
                        let n = src.scalar(*count)?;
                        if n < 0.0 {
                            return Err(err(at, "negative list length"));
                        }
                        for _ in 0..n as usize {
                            src.scalar(*item)?;
                        }
                    }
                }
            }
            if ei == vertex {
                let at = src.offset();
                let p = Vector3::new(row[layout.xyz[0]], row[layout.xyz[1]], row[layout.xyz[2]]);
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(err(at, format!("vertex {} has non-finite coordinates", points.len())));
                }
                points.push(p);
                for &fi in &layout.features {
                    let v = row[fi] as f32;
                    if !v.is_finite() {
                        return Err(err(at, format!("vertex {} has a non-finite feature", points.len() - 1)));
                    }
                    features.push(v);
                }
            }
        }
    }
    Ok(PlyData {
        cloud: PointCloud::from(points),
        feature_dim: layout.features.len(),
        features,
    })
}

pub fn decode_ply(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body..];
    let shift = |e: Error| match e {
        Error::Format { format, offset, message } => Error::Format {
            format,
            offset: offset + header.body as u64,
            message,
        },
        other => other,
    };
    match header.encoding {
        PlyEncoding::BinaryLittleEndian => {
            let mut src = Binary { bytes: body, pos: 0 };
            let data = read_elements(&header, &mut src, body.len()).map_err(shift)?;
            if src.pos != body.len() {
                return Err(shift(err(src.pos, format!("{} trailing bytes", body.len() - src.pos))));
            }
            Ok(data)
        }
        PlyEncoding::Ascii => {
            let mut src = Ascii { bytes: body, pos: 0 };
            let data = read_elements(&header, &mut src, body.len()).map_err(shift)?;
            if let Some(extra) = body[src.pos..].iter().position(|b| !b.is_ascii_whitespace()) {
                return Err(shift(err(src.pos + extra, "trailing data after last element")));
            }
            Ok(data)
        }
    }
}

/// Coordinates are written as `double` so binary round trips are exact;
/// features as `float`.
pub fn encode_ply(data: &PlyData, encoding: PlyEncoding) -> Result<Vec<u8>> {
    let n = data.cloud.len();
    if data.features.len() != n * data.feature_dim {
        return Err(Error::invalid(format!(
            "{n} vertices x {} features needs {} values, got {}",
            data.feature_dim,
            n * data.feature_dim,
            data.features.len()
        )));
    }
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    let _ = writeln!(header, "element vertex {n}");
    for axis in ["x", "y", "z"] {
        let _ = writeln!(header, "property double {axis}");
    }
    for i in 0..data.feature_dim {
        let _ = writeln!(header, "property float f{i}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    let rows = data.cloud.points.iter().enumerate();
    match encoding {
        PlyEncoding::BinaryLittleEndian => {
            out.reserve(n * (24 + 4 * data.feature_dim));
            for (i, p) in rows {
                for v in p.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for v in &data.features[i * data.feature_dim..(i + 1) * data.feature_dim] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        PlyEncoding::Ascii => {
            let mut s = String::new();
            for (i, p) in rows {
                let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
                for v in &data.features[i * data.feature_dim..(i + 1) * data.feature_dim] {
                    let _ = write!(s, " {v}");
                }
                s.push('\n');
            }
            out.extend_from_slice(s.as_bytes());
        }
    }
    Ok(out)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PlyData> {
    let path = path.as_ref();
    decode_ply(&read_bytes(path)?).map_err(|e| e.at(path))
}

pub fn write_ply(path: impl AsRef<Path>, data: &PlyData, encoding: PlyEncoding) -> Result<()> {
    write_bytes(path.as_ref(), &encode_ply(data, encoding)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::fuzz;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_data(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> PlyData {
        PlyData {
            cloud: PointCloud::from(
                (0..n)
                    .map(|_| Vector3::from_fn(|_, _| rng.random_range(-100.0..100.0)))
                    .collect::<Vec<_>>(),
            ),
            feature_dim: dim,
            features: (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        }
    }

    #[test]
    fn three_point_ascii_fixture() {
        let text = b"ply\nformat ascii 1.0\ncomment fixture\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nend_header\n0 0 0 255\n1.5 -2 3 0\n0.25 0.5 0.75 7\n";
        let d = decode_ply(text).unwrap();
        assert_eq!(
            d.cloud.points,
            vec![Vector3::new(0.0, 0.0, 0.0), Vector3::new(1.5, -2.0, 3.0), Vector3::new(0.25, 0.5, 0.75)]
        );
        assert_eq!(d.feature_dim, 0);
    }

    #[test]
    fn empty_element() {
        let text = b"ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        assert!(decode_ply(text).unwrap().cloud.is_empty());
    }

    #[test]
    fn binary_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = random_data(&mut rng, 10_000, 0);
        let back = decode_ply(&encode_ply(&d, PlyEncoding::BinaryLittleEndian).unwrap()).unwrap();
        for (a, b) in d.cloud.points.iter().zip(&back.cloud.points) {
            for k in 0..3 {
                assert_eq!(a[k].to_bits(), b[k].to_bits());
            }
        }
    }

    #[test]
    fn features_round_trip_both_encodings() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_data(&mut rng, 50, 8);
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            assert_eq!(decode_ply(&encode_ply(&d, enc).unwrap()).unwrap(), d);
        }
    }

    #[test]
    fn faces_are_skipped() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 3\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(decode_ply(text).unwrap().cloud.len(), 3);
        let mut bin = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n".to_vec();
        for v in [1.0f32, 2.0, 3.0] {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        bin.push(1);
        bin.extend_from_slice(&0i32.to_le_bytes());
        assert_eq!(decode_ply(&bin).unwrap().cloud.points, vec![Vector3::new(1.0, 2.0, 3.0)]);
    }

    #[test]
    fn malformed_inputs_report_offsets() {
        let no_magic = b"plx\nformat ascii 1.0\nend_header\n";
        assert!(matches!(decode_ply(no_magic), Err(Error::Format { offset: 0, .. })));

        let int_coords = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty int x\nproperty int y\nproperty int z\nend_header\n1 2 3\n";
        assert!(matches!(decode_ply(int_coords), Err(Error::Format { .. })));

        let header = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
        let mut truncated = header.to_vec();
        truncated.extend_from_slice(&[0u8; 20]);
        match decode_ply(&truncated) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset as usize, header.len()),
            other => panic!("expected format error, got {other:?}"),
        }

        let bad_token = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 abc 3\n";
        let at = bad_token.len() - 6;
        assert!(matches!(decode_ply(bad_token), Err(Error::Format { offset, .. }) if offset as usize == at));

        let unterminated = b"ply\nformat ascii 1.0\nelement vertex 1\n";
        assert!(decode_ply(unterminated).is_err());
        let big_endian = b"ply\nformat binary_big_endian 1.0\nend_header\n";
        assert!(decode_ply(big_endian).is_err());
    }

    #[test]
    fn fuzzed_inputs_fail_cleanly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_data(&mut rng, 5, 2);
        for (seed, enc) in [(4, PlyEncoding::BinaryLittleEndian), (5, PlyEncoding::Ascii)] {
            fuzz::corrupt(&encode_ply(&d, enc).unwrap(), 1000, seed, decode_ply);
        }
    }
}
