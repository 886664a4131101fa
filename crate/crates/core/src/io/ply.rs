//! Minimal PLY reader/writer for intensity point clouds.
//!
//! Reads `ascii` and `binary_little_endian` files with arbitrary scalar and
//! list properties; only the `vertex` element is interpreted. Writes
//! `x y z intensity` as float32, plus `intensity_eq` as uchar when every
//! point carries an equalized value.

use super::cloud::{MapPoint, PointCloud, PointId};
use super::IoError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Property {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn header_err(msg: impl Into<String>) -> IoError {
    IoError::MalformedHeader(msg.into())
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| header_err("no end_header line"))?;
    let body_offset = bytes[end..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|p| end + p + 1)
        .unwrap_or(bytes.len());
    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| header_err("header is not ASCII"))?;

    let mut lines = text.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(header_err("missing 'ply' magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                format = Some(match *fmt {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(header_err(format!("unsupported format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| header_err(format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, name] => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before element"))?;
                let count = Scalar::parse(count).ok_or_else(|| header_err(format!("bad type '{count}'")))?;
                let item = Scalar::parse(item).ok_or_else(|| header_err(format!("bad type '{item}'")))?;
                elem.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| header_err("property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| header_err(format!("bad type '{ty}'")))?;
                elem.props.push(Property {
                    name: name.to_string(),
                    kind: PropKind::Scalar(ty),
                });
            }
            _ => return Err(header_err(format!("unrecognized line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| header_err("missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset,
    })
}

/// Streams element rows as `f64` scalar values; list properties are skipped.
struct RowReader<'a> {
    format: PlyFormat,
    body: &'a [u8],
    pos: usize,
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> RowReader<'a> {
    fn new(format: PlyFormat, body: &'a [u8]) -> Result<Self, IoError> {
        let text = match format {
            PlyFormat::Ascii => {
                std::str::from_utf8(body).map_err(|_| IoError::Malformed("ascii body is not UTF-8".into()))?
            }
            PlyFormat::BinaryLittleEndian => "",
        };
        Ok(RowReader {
            format,
            body,
            pos: 0,
            tokens: text.split_ascii_whitespace(),
        })
    }

    fn scalar(&mut self, ty: Scalar) -> Result<f64, IoError> {
        match self.format {
            PlyFormat::Ascii => {
                let tok = self
                    .tokens
                    .next()
                    .ok_or_else(|| IoError::Malformed("unexpected end of data".into()))?;
                tok.parse::<f64>()
                    .map_err(|_| IoError::Malformed(format!("bad number '{tok}'")))
            }
            PlyFormat::BinaryLittleEndian => {
                let n = ty.size();
                let slice = self
                    .body
                    .get(self.pos..self.pos + n)
                    .ok_or_else(|| IoError::Malformed("unexpected end of data".into()))?;
                self.pos += n;
                Ok(ty.read_le(slice))
            }
        }
    }

    fn row(&mut self, elem: &Element, out: &mut Vec<f64>) -> Result<(), IoError> {
        out.clear();
        for prop in &elem.props {
            match prop.kind {
                PropKind::Scalar(ty) => out.push(self.scalar(ty)?),
                PropKind::List { count, item } => {
                    let n = self.scalar(count)?;
                    if !(n >= 0.0) {
                        return Err(IoError::Malformed("negative list length".into()));
                    }
                    for _ in 0..n as usize {
                        self.scalar(item)?;
                    }
                    out.push(f64::NAN);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_cloud(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let header = parse_header(bytes)?;
    let vertex = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| header_err("no vertex element"))?;
    let find = |name: &str| {
        header.elements[vertex].props.iter().position(|p| {
            p.name == name && matches!(p.kind, PropKind::Scalar(_))
        })
    };
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(header_err("vertex element lacks x/y/z")),
    };
    let ii = find("intensity").ok_or(IoError::MissingIntensity)?;
    let ieq = find("intensity_eq");

    let mut reader = RowReader::new(header.format, &bytes[header.body_offset..])?;
    let mut row = Vec::new();
    let mut points = Vec::new();
    for (e, elem) in header.elements.iter().enumerate() {
        if e == vertex {
            points.reserve(elem.count);
        }
        for r in 0..elem.count {
            reader.row(elem, &mut row)?;
            if e == vertex {
                let intensity_eq = match ieq {
                    Some(k) => {
                        let v = row[k];
                        if !(0.0..=255.0).contains(&v) {
                            return Err(IoError::Malformed(format!("intensity_eq {v} out of range")));
                        }
                        Some(v as u8)
                    }
                    None => None,
                };
                points.push(MapPoint {
                    id: r as PointId,
                    xyz: [row[ix] as f32, row[iy] as f32, row[iz] as f32],
                    intensity_raw: row[ii] as f32,
                    intensity_eq,
                });
            }
        }
    }
    let cloud = PointCloud { points };
    cloud.validate()?;
    Ok(cloud)
}

pub(crate) fn encode_cloud(cloud: &PointCloud, format: PlyFormat) -> Vec<u8> {
    let with_eq = !cloud.is_empty() && cloud.points.iter().all(|p| p.intensity_eq.is_some());
    let mut out = String::from("ply\n");
    out.push_str(match format {
        PlyFormat::Ascii => "format ascii 1.0\n",
        PlyFormat::BinaryLittleEndian => "format binary_little_endian 1.0\n",
    });
    out.push_str(&format!("element vertex {}\n", cloud.len()));
    for name in ["x", "y", "z", "intensity"] {
        out.push_str(&format!("property float {name}\n"));
    }
    if with_eq {
        out.push_str("property uchar intensity_eq\n");
    }
    out.push_str("end_header\n");

    let mut bytes = out.into_bytes();
    match format {
        PlyFormat::Ascii => {
            let mut body = String::new();
            for p in &cloud.points {
                body.push_str(&format!("{} {} {} {}", p.xyz[0], p.xyz[1], p.xyz[2], p.intensity_raw));
                if with_eq {
                    body.push_str(&format!(" {}", p.intensity_eq.unwrap_or(0)));
                }
                body.push('\n');
            }
            bytes.extend_from_slice(body.as_bytes());
        }
        PlyFormat::BinaryLittleEndian => {
            bytes.reserve(cloud.len() * 17);
            for p in &cloud.points {
                for v in p.xyz.iter().chain(std::iter::once(&p.intensity_raw)) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                if with_eq {
                    bytes.push(p.intensity_eq.unwrap_or(0));
                }
            }
        }
    }
    bytes
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascii_three_points() {
        let src = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float x\n\
                   property float y\nproperty float z\nproperty float intensity\nend_header\n\
                   0 0 0 0.1\n1 0 0 0.5\n0 1 0 0.9\n";
        let cloud = parse_cloud(src.as_bytes()).unwrap();
        assert_eq!(cloud.len(), 3);
        let ids: Vec<_> = cloud.points.iter().map(|p| p.id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
        assert_eq!(cloud.points[1].intensity_raw, 0.5);
        assert!(cloud.points.iter().all(|p| p.intensity_eq.is_none()));
    }

    #[test]
    fn empty_vertex_element() {
        let src = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nproperty float x\n\
                   property float y\nproperty float z\nproperty float intensity\nend_header\n";
        assert!(parse_cloud(src.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn missing_intensity_is_reported() {
        let src = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
                   property float z\nend_header\n0 0 0\n";
        let err = parse_cloud(src.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("missing intensity"), "{err}");
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(parse_cloud(b"plx\nend_header\n"), Err(IoError::MalformedHeader(_))));
        assert!(matches!(
            parse_cloud(b"ply\nformat binary_big_endian 1.0\nend_header\n"),
            Err(IoError::MalformedHeader(_))
        ));
        assert!(matches!(parse_cloud(b"ply\nformat ascii 1.0\n"), Err(IoError::MalformedHeader(_))));
    }

    #[test]
    fn skips_extra_properties_and_face_lists() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\n\
            property float y\nproperty float z\nproperty uchar red\nproperty float intensity\n\
            element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for (x, i) in [(1.5f64, 2.0f32), (-3.0, 0.25)] {
            bytes.extend_from_slice(&x.to_le_bytes());
            bytes.extend_from_slice(&7.0f32.to_le_bytes());
            bytes.extend_from_slice(&8.0f32.to_le_bytes());
            bytes.push(200);
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        bytes.push(3);
        for v in [0i32, 1, 0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let cloud = parse_cloud(&bytes).unwrap();
        assert_eq!(cloud.points[1].xyz, [-3.0, 7.0, 8.0]);
        assert_eq!(cloud.points[1].intensity_raw, 0.25);
    }

    #[test]
    fn truncated_binary_body() {
        let src = "ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\n\
                   property float y\nproperty float z\nproperty float intensity\nend_header\n\0\0";
        assert!(matches!(parse_cloud(src.as_bytes()), Err(IoError::Malformed(_))));
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        prop::collection::vec(
            (
                prop::array::uniform3(-1e4f32..1e4),
                0f32..1e3,
                prop::option::of(any::<u8>()),
            ),
            0..40,
        )
        .prop_map(|rows| {
            let all_eq = rows.iter().all(|r| r.2.is_some());
            PointCloud {
                points: rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (xyz, inten, eq))| MapPoint {
                        id: i as PointId,
                        xyz,
                        intensity_raw: inten,
                        intensity_eq: if all_eq { eq } else { None },
                    })
                    .collect(),
            }
        })
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(cloud in arb_cloud(), ascii in any::<bool>()) {
            let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let back = parse_cloud(&encode_cloud(&cloud, fmt)).unwrap();
            prop_assert_eq!(back, cloud);
        }
    }
}
