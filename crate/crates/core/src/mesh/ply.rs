//! Minimal PLY reader/writer: ASCII and binary little-endian, vertex
//! positions and faces only. Other properties and elements are skipped.

use std::io::Write;

use super::MeshError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: ScalarType },
    List { name: String, count: ScalarType, item: ScalarType },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

/// Raw geometry extracted from a PLY file.
#[derive(Debug, Clone, PartialEq)]
pub struct PlyData {
    pub vertices: Vec<[f64; 3]>,
    /// Polygons as read; triangulated by the caller.
    pub faces: Vec<Vec<u32>>,
}

fn parse_err(msg: impl Into<String>) -> MeshError {
    MeshError::Parse(msg.into())
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, MeshError> {
    if !(bytes.starts_with(b"ply\n") || bytes.starts_with(b"ply\r\n")) {
        return Err(MeshError::UnsupportedFormat("missing 'ply' magic".into()));
    }
    let end_marker = b"end_header";
    let pos = bytes
        .windows(end_marker.len())
        .position(|w| w == end_marker)
        .ok_or_else(|| parse_err("header has no end_header line"))?;
    let mut body_offset = pos + end_marker.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let header = std::str::from_utf8(&bytes[..pos]).map_err(|_| parse_err("header is not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for (lineno, line) in header.lines().enumerate().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match toks.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(MeshError::UnsupportedFormat(format!("PLY format '{other}'")))
                    }
                    None => return Err(parse_err("format line without a format")),
                });
            }
            Some("element") => {
                let (name, count) = match toks.as_slice() {
                    [_, name, count] => (name.to_string(), count.parse::<usize>()),
                    _ => return Err(parse_err(format!("line {}: malformed element line", lineno + 1))),
                };
                let count = count.map_err(|_| {
                    parse_err(format!("line {}: bad count for element '{name}'", lineno + 1))
                })?;
                elements.push(Element { name, count, properties: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property declared before any element"))?;
                let ty = |s: &str| {
                    ScalarType::parse(s)
                        .ok_or_else(|| parse_err(format!("unknown property type '{s}'")))
                };
                let prop = match toks.as_slice() {
                    [_, "list", c, i, name] => {
                        Property::List { name: name.to_string(), count: ty(c)?, item: ty(i)? }
                    }
                    [_, t, name] => Property::Scalar { name: name.to_string(), ty: ty(t)? },
                    _ => return Err(parse_err(format!("line {}: malformed property", lineno + 1))),
                };
                el.properties.push(prop);
            }
            Some(other) => return Err(parse_err(format!("unknown header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err("header has no format line"))?;
    Ok(Header { format, elements, body_offset })
}

/// Value source abstracting over ASCII tokens and binary bytes.
trait ValueReader {
    fn read(&mut self, ty: ScalarType) -> Option<f64>;
}

struct AsciiReader<'a> {
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl ValueReader for AsciiReader<'_> {
    fn read(&mut self, _ty: ScalarType) -> Option<f64> {
        self.tokens.next()?.parse::<f64>().ok()
    }
}

struct BinaryReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl ValueReader for BinaryReader<'_> {
    fn read(&mut self, ty: ScalarType) -> Option<f64> {
        let n = ty.size();
        let b = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(match ty {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b.try_into().ok()?) as f64,
            ScalarType::U32 => u32::from_le_bytes(b.try_into().ok()?) as f64,
            ScalarType::F32 => f32::from_le_bytes(b.try_into().ok()?) as f64,
            ScalarType::F64 => f64::from_le_bytes(b.try_into().ok()?),
        })
    }
}

fn read_body(header: &Header, reader: &mut dyn ValueReader) -> Result<PlyData, MeshError> {
    let mut data = PlyData { vertices: Vec::new(), faces: Vec::new() };
    let mut saw_vertex = false;
    for el in &header.elements {
        let truncated = |i: usize| {
            parse_err(format!(
                "truncated body: element '{}' ends after {} of {} entries",
                el.name, i, el.count
            ))
        };
        let is_vertex = el.name == "vertex";
        let is_face = el.name == "face";
        let xyz = if is_vertex {
            saw_vertex = true;
            let idx = |axis: &str| {
                el.properties.iter().position(|p| p.name() == axis && matches!(p, Property::Scalar { .. }))
                    .ok_or_else(|| parse_err(format!("vertex element lacks property '{axis}'")))
            };
            Some([idx("x")?, idx("y")?, idx("z")?])
        } else {
            None
        };
        let face_prop = if is_face {
            Some(
                el.properties
                    .iter()
                    .position(|p| {
                        matches!(p, Property::List { .. })
                            && (p.name() == "vertex_indices" || p.name() == "vertex_index")
                    })
                    .ok_or_else(|| parse_err("face element lacks a vertex_indices list"))?,
            )
        } else {
            None
        };
        for i in 0..el.count {
            let mut v = [0.0; 3];
            for (pi, prop) in el.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let val = reader.read(*ty).ok_or_else(|| truncated(i))?;
                        if let Some(xyz) = xyz {
                            if let Some(axis) = xyz.iter().position(|&k| k == pi) {
                                v[axis] = val;
                            }
                        }
                    }
                    Property::List { count, item, .. } => {
                        let n = reader.read(*count).ok_or_else(|| truncated(i))?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(parse_err(format!("bad list length in element '{}'", el.name)));
                        }
                        let mut items = Vec::with_capacity(n as usize);
                        for _ in 0..n as usize {
                            items.push(reader.read(*item).ok_or_else(|| truncated(i))?);
                        }
                        if face_prop == Some(pi) {
                            let idx = items
                                .iter()
                                .map(|&x| {
                                    if x < 0.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
                                        Err(parse_err(format!("face {i} has invalid index {x}")))
                                    } else {
                                        Ok(x as u32)
                                    }
                                })
                                .collect::<Result<Vec<_>, _>>()?;
                            data.faces.push(idx);
                        }
                    }
                }
            }
            if is_vertex {
                data.vertices.push(v);
            }
        }
    }
    if !saw_vertex {
        return Err(parse_err("no 'vertex' element declared"));
    }
    Ok(data)
}

/// Parses PLY bytes.
pub fn parse_ply(bytes: &[u8]) -> Result<PlyData, MeshError> {
    let header = parse_header(bytes)?;
    let body = &bytes[header.body_offset..];
    match header.format {
        PlyFormat::Ascii => {
            let text = std::str::from_utf8(body).map_err(|_| parse_err("ASCII body is not UTF-8"))?;
            read_body(&header, &mut AsciiReader { tokens: text.split_ascii_whitespace() })
        }
        PlyFormat::BinaryLittleEndian => {
            read_body(&header, &mut BinaryReader { bytes: body, pos: 0 })
        }
    }
}

/// Serializes positions (as `double`) and triangles.
pub fn encode_ply(vertices: &[[f64; 3]], triangles: &[[u32; 3]], format: PlyFormat) -> Vec<u8> {
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
        vertices.len(),
        triangles.len()
    )
    .expect("write to Vec");
    match format {
        PlyFormat::Ascii => {
            for v in vertices {
                writeln!(out, "{} {} {}", v[0], v[1], v[2]).expect("write to Vec");
            }
            for t in triangles {
                writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).expect("write to Vec");
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in vertices {
                for c in v {
                    out.extend_from_slice(&c.to_le_bytes());
                }
            }
            for t in triangles {
                out.push(3u8);
                for i in t {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
    }
    out
}
