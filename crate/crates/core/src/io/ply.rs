//! Labeled point clouds as PLY, vertex properties
//! `float x y z, uchar red green blue, uchar label, float confidence`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Point3;

use super::IoError;
use crate::imaging::ClassId;
use crate::semantics::LabeledPoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyEncoding {
    Ascii,
    #[default]
    BinaryLittleEndian,
}

impl FromStr for PlyEncoding {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ascii" => Ok(PlyEncoding::Ascii),
            "binary" | "binary_little_endian" => Ok(PlyEncoding::BinaryLittleEndian),
            other => Err(format!("unknown PLY encoding '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyCloud {
    pub points: Vec<LabeledPoint>,
    /// Header comment lines without the `comment ` prefix.
    pub comments: Vec<String>,
    /// False when the file had no `label` property; labels are then 0.
    pub has_labels: bool,
    /// False when the file had no `confidence` property; confidences are then 0.
    pub has_confidence: bool,
}

impl PlyCloud {
    pub fn new(points: Vec<LabeledPoint>, comments: Vec<String>) -> Self {
        Self { points, comments, has_labels: true, has_confidence: true }
    }
}

const PROPERTIES: [(&str, &str); 8] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("uchar", "label"),
    ("float", "confidence"),
];

/// Serialize a cloud. Coordinates and confidences are stored as 32-bit floats.
pub fn encode_ply(cloud: &PlyCloud, encoding: PlyEncoding) -> Vec<u8> {
    let mut header = String::from("ply\n");
    header.push_str(match encoding {
        PlyEncoding::Ascii => "format ascii 1.0\n",
        PlyEncoding::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    for c in &cloud.comments {
        let _ = writeln!(header, "comment {}", c.replace(['\n', '\r'], " "));
    }
    let _ = writeln!(header, "element vertex {}", cloud.points.len());
    for (ty, name) in PROPERTIES {
        let _ = writeln!(header, "property {ty} {name}");
    }
    header.push_str("end_header\n");
    let mut out = header.into_bytes();
    match encoding {
        PlyEncoding::Ascii => {
            let mut body = String::new();
            for p in &cloud.points {
                let _ = writeln!(
                    body,
                    "{} {} {} {} {} {} {} {}",
                    p.position.x as f32,
                    p.position.y as f32,
                    p.position.z as f32,
                    p.color[0],
                    p.color[1],
                    p.color[2],
                    p.label.0,
                    p.confidence as f32
                );
            }
            out.extend_from_slice(body.as_bytes());
        }
        PlyEncoding::BinaryLittleEndian => {
            out.reserve(cloud.points.len() * 20);
            for p in &cloud.points {
                for v in [p.position.x, p.position.y, p.position.z] {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                }
                out.extend_from_slice(&p.color);
                out.push(p.label.0);
                out.extend_from_slice(&(p.confidence as f32).to_le_bytes());
            }
        }
    }
    out
}

pub fn write_ply(cloud: &PlyCloud, path: &Path, encoding: PlyEncoding) -> Result<(), IoError> {
    std::fs::write(path, encode_ply(cloud, encoding)).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn read_ply(path: &Path) -> Result<PlyCloud, IoError> {
    let bytes = std::fs::read(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })?;
    decode_ply(&bytes)
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

    fn decode(self, b: &[u8], big_endian: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().unwrap();
                (if big_endian { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }

    fn parse_text(self, s: &str) -> Option<f64> {
        match self {
            Scalar::F32 => s.parse::<f32>().ok().map(f64::from),
            Scalar::F64 => s.parse::<f64>().ok(),
            _ => s.parse::<i64>().ok().map(|v| v as f64),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    Binary { big_endian: bool },
}

struct Header {
    format: Format,
    comments: Vec<String>,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_err(offset: usize, reason: impl Into<String>) -> IoError {
    IoError::Ply { offset, reason: reason.into() }
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut offset = 0;
    let next_line = |offset: &mut usize| -> Result<(usize, String), IoError> {
        let start = *offset;
        let rest = &bytes[start..];
        let Some(nl) = rest.iter().position(|&b| b == b'\n') else {
            return Err(parse_err(start, "header ends before 'end_header'"));
        };
        *offset = start + nl + 1;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| parse_err(start, "header is not text"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };
    let (_, magic) = next_line(&mut offset)?;
    if magic != "ply" {
        return Err(parse_err(0, "missing 'ply' magic"));
    }
    let mut format = None;
    let mut comments = Vec::new();
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (at, line) = next_line(&mut offset)?;
        let f: Vec<&str> = line.split_whitespace().collect();
        match f.first().copied() {
            Some("end_header") => break,
            Some("format") => {
                format = Some(match (f.get(1).copied(), f.get(2).copied()) {
                    (Some("ascii"), Some("1.0")) => Format::Ascii,
                    (Some("binary_little_endian"), Some("1.0")) => Format::Binary { big_endian: false },
                    (Some("binary_big_endian"), Some("1.0")) => Format::Binary { big_endian: true },
                    _ => return Err(parse_err(at, format!("unsupported format line '{line}'"))),
                });
            }
            Some("comment") => {
                let text = line.trim_start().strip_prefix("comment").unwrap_or("");
                comments.push(text.strip_prefix(' ').unwrap_or(text).to_string());
            }
            Some("obj_info") | None => {}
            Some("element") => {
                let (Some(name), Some(count)) = (f.get(1), f.get(2).and_then(|c| c.parse::<usize>().ok())) else {
                    return Err(parse_err(at, format!("bad element line '{line}'")));
                };
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let Some(el) = elements.last_mut() else {
                    return Err(parse_err(at, "property before any element"));
                };
                let prop = match f.as_slice() {
                    [_, "list", c, i, name] => match (Scalar::parse(c), Scalar::parse(i)) {
                        (Some(count), Some(item)) => Property::List { name: name.to_string(), count, item },
                        _ => return Err(parse_err(at, format!("bad list property '{line}'"))),
                    },
                    [_, ty, name] => match Scalar::parse(ty) {
                        Some(ty) => Property::Scalar { name: name.to_string(), ty },
                        None => return Err(parse_err(at, format!("unknown property type '{ty}'"))),
                    },
                    _ => return Err(parse_err(at, format!("bad property line '{line}'"))),
                };
                el.properties.push(prop);
            }
            Some(other) => return Err(parse_err(at, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(0, "missing format line"))?;
    Ok(Header { format, comments, elements, body_offset: offset })
}

/// Reads scalar values of the body in declaration order.
trait ValueSource {
    fn next(&mut self, ty: Scalar) -> Result<f64, IoError>;
}

struct BinarySource<'a> {
    bytes: &'a [u8],
    pos: usize,
    big_endian: bool,
}

impl ValueSource for BinarySource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, IoError> {
        let end = self.pos + ty.size();
        if end > self.bytes.len() {
            return Err(parse_err(self.bytes.len(), "payload truncated"));
        }
        let v = ty.decode(&self.bytes[self.pos..end], self.big_endian);
        self.pos = end;
        Ok(v)
    }
}

struct AsciiSource<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueSource for AsciiSource<'_> {
    fn next(&mut self, ty: Scalar) -> Result<f64, IoError> {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == self.bytes.len() {
            return Err(parse_err(self.pos, "payload truncated"));
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let tok =
            std::str::from_utf8(&self.bytes[start..self.pos]).map_err(|_| parse_err(start, "non-text payload"))?;
        ty.parse_text(tok).ok_or_else(|| parse_err(start, format!("bad {ty:?} value '{tok}'")))
    }
}

#[derive(Clone, Copy)]
enum Slot {
    X,
    Y,
    Z,
    R,
    G,
    B,
    Label,
    Confidence,
    Ignored,
}

/// Parse PLY bytes. Only the `vertex` element is kept; unknown vertex
/// properties are skipped with a warning.
pub fn decode_ply(bytes: &[u8]) -> Result<PlyCloud, IoError> {
    let header = parse_header(bytes)?;
    let mut source: Box<dyn ValueSource> = match header.format {
        Format::Ascii => Box::new(AsciiSource { bytes, pos: header.body_offset }),
        Format::Binary { big_endian } => Box::new(BinarySource { bytes, pos: header.body_offset, big_endian }),
    };
    let mut cloud = PlyCloud { comments: header.comments, ..PlyCloud::default() };
    let mut seen_vertex = false;
    for el in &header.elements {
        if el.name != "vertex" || seen_vertex {
            for _ in 0..el.count {
                for p in &el.properties {
                    skip_property(source.as_mut(), p)?;
                }
            }
            continue;
        }
        seen_vertex = true;
        let mut slots = Vec::with_capacity(el.properties.len());
        let mut ignored = BTreeSet::new();
        for p in &el.properties {
            let slot = match p {
                Property::Scalar { name, .. } => match name.as_str() {
                    "x" => Slot::X,
                    "y" => Slot::Y,
                    "z" => Slot::Z,
                    "red" => Slot::R,
                    "green" => Slot::G,
                    "blue" => Slot::B,
                    "label" => Slot::Label,
                    "confidence" => Slot::Confidence,
                    other => {
                        ignored.insert(other.to_string());
                        Slot::Ignored
                    }
                },
                Property::List { name, .. } => {
                    ignored.insert(name.clone());
                    Slot::Ignored
                }
            };
            slots.push(slot);
        }
        let has = |want: &str| el.properties.iter().any(|p| matches!(p, Property::Scalar { name, .. } if name == want));
        for axis in ["x", "y", "z"] {
            if !has(axis) {
                return Err(parse_err(0, format!("vertex element lacks property '{axis}'")));
            }
        }
        if !ignored.is_empty() {
            log::warn!("ignoring vertex properties: {}", ignored.into_iter().collect::<Vec<_>>().join(", "));
        }
        cloud.has_labels = has("label");
        cloud.has_confidence = has("confidence");
        cloud.points.reserve(el.count.min(1 << 24));
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            let mut rgb = [0u8; 3];
            let mut label = 0u8;
            let mut confidence = 0.0;
            for (p, slot) in el.properties.iter().zip(&slots) {
                let Property::Scalar { ty, .. } = p else {
                    skip_property(source.as_mut(), p)?;
                    continue;
                };
                let v = source.next(*ty)?;
                match slot {
                    Slot::X => xyz[0] = v,
                    Slot::Y => xyz[1] = v,
                    Slot::Z => xyz[2] = v,
                    Slot::R => rgb[0] = v.clamp(0.0, 255.0) as u8,
                    Slot::G => rgb[1] = v.clamp(0.0, 255.0) as u8,
                    Slot::B => rgb[2] = v.clamp(0.0, 255.0) as u8,
                    Slot::Label => label = v.clamp(0.0, 255.0) as u8,
                    Slot::Confidence => confidence = v,
                    Slot::Ignored => {}
                }
            }
            cloud.points.push(LabeledPoint {
                position: Point3::new(xyz[0], xyz[1], xyz[2]),
                color: rgb,
                label: ClassId(label),
                confidence,
                views: 0,
                track_id: None,
            });
        }
    }
    if !seen_vertex {
        return Err(parse_err(0, "no vertex element"));
    }
    Ok(cloud)
}

fn skip_property(source: &mut dyn ValueSource, p: &Property) -> Result<(), IoError> {
    match p {
        Property::Scalar { ty, .. } => {
            source.next(*ty)?;
        }
        Property::List { count, item, .. } => {
            let n = source.next(*count)?;
            for _ in 0..n.max(0.0) as usize {
                source.next(*item)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, z: f64, color: [u8; 3], label: u8, confidence: f64) -> LabeledPoint {
        LabeledPoint {
            position: Point3::new(x, y, z),
            color,
            label: ClassId(label),
            confidence,
            views: 0,
            track_id: None,
        }
    }

    #[test]
    fn empty_cloud_is_valid() {
        for enc in [PlyEncoding::Ascii, PlyEncoding::BinaryLittleEndian] {
            let bytes = encode_ply(&PlyCloud::new(Vec::new(), Vec::new()), enc);
            let text = String::from_utf8_lossy(&bytes);
            assert!(text.contains("element vertex 0\n"));
            let back = decode_ply(&bytes).unwrap();
            assert!(back.points.is_empty() && back.has_labels && back.has_confidence);
        }
    }

    #[test]
    fn single_point_layout() {
        let cloud = PlyCloud::new(vec![pt(1.0, 2.0, 3.0, [255; 3], 3, 1.0)], vec!["tool test".into()]);
        let bytes = encode_ply(&cloud, PlyEncoding::BinaryLittleEndian);
        let text = String::from_utf8_lossy(&bytes);
        let expected_header = "ply\nformat binary_little_endian 1.0\ncomment tool test\nelement vertex 1\n\
            property float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\n\
            property uchar blue\nproperty uchar label\nproperty float confidence\nend_header\n";
        assert!(text.starts_with(expected_header));
        let payload = &bytes[expected_header.len()..];
        assert_eq!(payload.len(), 20);
        let f = |k: usize| f32::from_le_bytes(payload[k..k + 4].try_into().unwrap());
        assert_eq!((f(0), f(4), f(8)), (1.0, 2.0, 3.0));
        assert_eq!(&payload[12..16], &[255, 255, 255, 3]);
        assert_eq!(f(16), 1.0);
        assert_eq!(decode_ply(&bytes).unwrap(), cloud);
    }

    #[test]
    fn ascii_round_trip() {
        let cloud = PlyCloud::new(
            vec![pt(-1.5, 0.1f32 as f64, 1e-7f32 as f64, [1, 2, 3], 0, (1.0f32 / 3.0) as f64)],
            vec!["a".into(), "".into()],
        );
        let bytes = encode_ply(&cloud, PlyEncoding::Ascii);
        let back = decode_ply(&bytes).unwrap();
        assert_eq!(back, cloud);
        assert_eq!(encode_ply(&back, PlyEncoding::Ascii), bytes);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let cloud = PlyCloud::new((0..5).map(|k| pt(k as f64, 0.0, 0.0, [0; 3], 1, 1.0)).collect(), Vec::new());
        let bytes = encode_ply(&cloud, PlyEncoding::BinaryLittleEndian);
        let lied = String::from_utf8_lossy(&bytes).replacen("element vertex 5", "element vertex 10", 1);
        let lied = [&lied.as_bytes()[..lied.find("end_header\n").unwrap() + 11], &bytes[bytes.len() - 100..]].concat();
        match decode_ply(&lied) {
            Err(IoError::Ply { offset, reason }) => {
                assert_eq!(offset, lied.len());
                assert!(reason.contains("truncated"));
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
        let ascii = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        assert!(matches!(decode_ply(ascii.as_bytes()), Err(IoError::Ply { .. })));
    }

    #[test]
    fn degraded_and_extra_properties() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty float y\nproperty float z\n\
            property uchar red\nproperty uchar green\nproperty uchar blue\nproperty float nx\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n\
            1 2 3 10 20 30 0.5\n4 5 6 7 8 9 0.25\n3 0 1 1\n";
        let c = decode_ply(text.as_bytes()).unwrap();
        assert!(!c.has_labels && !c.has_confidence);
        assert_eq!(c.points.len(), 2);
        assert_eq!(c.points[1].color, [7, 8, 9]);
        assert_eq!(c.points[0].label, ClassId(0));
    }

    #[test]
    fn malformed_header() {
        assert!(matches!(decode_ply(b"plx\n"), Err(IoError::Ply { offset: 0, .. })));
        let bad = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n";
        assert!(matches!(decode_ply(bad), Err(IoError::Ply { offset: 38, .. })));
        assert!(matches!(decode_ply(b"ply\nformat ascii 1.0\n"), Err(IoError::Ply { .. })));
    }
}
