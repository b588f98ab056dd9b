//! PLY point clouds: `ascii 1.0` and `binary_little_endian 1.0` in, ASCII out.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Location, ParseErrorKind, Result};
use crate::geometry::Point3;
use crate::voxel_graph::PointCloud;

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

    fn decode(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
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
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the first payload byte.
    body_start: usize,
    /// Number of header lines, for ASCII line numbers.
    lines: usize,
}

fn parse_header(path: &Path, data: &[u8]) -> Result<Header> {
    let herr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Line(line),
        kind: ParseErrorKind::Header(msg),
    };
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(end) = data[pos..].iter().position(|&b| b == b'\n') else {
            return Err(herr(line_no + 1, "missing end_header".into()));
        };
        let raw = &data[pos..pos + end];
        pos += end + 1;
        line_no += 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| herr(line_no, "header is not valid UTF-8".into()))?
            .trim_end_matches('\r');
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if tokens != ["ply"] {
                return Err(herr(1, "file does not start with \"ply\"".into()));
            }
            continue;
        }
        match tokens.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, version] => {
                if *version != "1.0" {
                    return Err(herr(line_no, format!("unsupported version {version}")));
                }
                format = Some(match *fmt {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLe,
                    other => {
                        return Err(Error::UnsupportedFormat {
                            path: path.to_path_buf(),
                            format: other.to_string(),
                        })
                    }
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| herr(line_no, format!("bad element count {count:?}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let (Some(count), Some(item)) = (Scalar::parse(count), Scalar::parse(item)) else {
                    return Err(herr(line_no, format!("bad list types in {line:?}")));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| herr(line_no, "property before any element".into()))?
                    .properties
                    .push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty).ok_or_else(|| herr(line_no, format!("unknown type {ty:?}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| herr(line_no, "property before any element".into()))?
                    .properties
                    .push(Property::Scalar {
                        name: name.to_string(),
                        ty,
                    });
            }
            ["end_header"] => break,
            _ => return Err(herr(line_no, format!("unrecognized line {line:?}"))),
        }
    }
    let format = format.ok_or_else(|| herr(line_no, "missing format line".into()))?;
    Ok(Header {
        format,
        elements,
        body_start: pos,
        lines: line_no,
    })
}

/// Positions of x, y, z within the vertex element's properties.
fn xyz_slots(path: &Path, vertex: &Element) -> Result<[usize; 3]> {
    let mut slots = [usize::MAX; 3];
    for (k, prop) in vertex.properties.iter().enumerate() {
        if let Property::Scalar { name, ty } = prop {
            let axis = match name.as_str() {
                "x" => 0,
                "y" => 1,
                "z" => 2,
                _ => continue,
            };
            if !matches!(ty, Scalar::F32 | Scalar::F64) {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    location: Location::Line(0),
                    kind: ParseErrorKind::Header(format!("vertex property {name} must be float or double")),
                });
            }
            slots[axis] = k;
        }
    }
    if slots.contains(&usize::MAX) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(0),
            kind: ParseErrorKind::Header("vertex element lacks x, y or z".into()),
        });
    }
    Ok(slots)
}

fn read_binary(path: &Path, data: &[u8], header: &Header) -> Result<Vec<Point3>> {
    let mut pos = header.body_start;
    let truncated = |at: usize| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Byte(at as u64),
        kind: ParseErrorKind::Truncated,
    };
    let take = |n: usize, pos: &mut usize| -> Result<&[u8]> {
        let end = pos.checked_add(n).filter(|&e| e <= data.len()).ok_or_else(|| truncated(*pos))?;
        let s = &data[*pos..end];
        *pos = end;
        Ok(s)
    };
    let mut points = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let slots = if is_vertex { Some(xyz_slots(path, element)?) } else { None };
        if is_vertex {
            points.reserve(element.count);
        }
        for _ in 0..element.count {
            let mut xyz = [0.0; 3];
            for (k, prop) in element.properties.iter().enumerate() {
                match prop {
                    Property::Scalar { ty, .. } => {
                        let v = ty.decode(take(ty.size(), &mut pos)?);
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&slot| slot == k)) {
                            xyz[axis] = v;
                        }
                    }
                    Property::List { count, item } => {
                        let at = pos;
                        let n = count.decode(take(count.size(), &mut pos)?);
                        if !(n >= 0.0) {
                            return Err(Error::Parse {
                                path: path.to_path_buf(),
                                location: Location::Byte(at as u64),
                                kind: ParseErrorKind::InvalidNumber(n.to_string()),
                            });
                        }
                        take(n as usize * item.size(), &mut pos)?;
                    }
                }
            }
            if is_vertex {
                points.push(Point3::from(xyz));
            }
        }
        if is_vertex {
            // Later elements carry nothing we need.
            break;
        }
    }
    Ok(points)
}

fn read_ascii(path: &Path, data: &[u8], header: &Header) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(&data[header.body_start..]).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        location: Location::Byte((header.body_start + e.valid_up_to()) as u64),
        kind: ParseErrorKind::InvalidNumber("non-UTF-8 payload".into()),
    })?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (header.lines + i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let mut points = Vec::new();
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let slots = if is_vertex { Some(xyz_slots(path, element)?) } else { None };
        for _ in 0..element.count {
            let Some((line_no, line)) = lines.next() else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    location: Location::Line(header.lines + text.lines().count() + 1),
                    kind: ParseErrorKind::Truncated,
                });
            };
            let perr = |kind| Error::Parse {
                path: path.to_path_buf(),
                location: Location::Line(line_no),
                kind,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let mut cursor = 0;
            let mut xyz = [0.0; 3];
            for (k, prop) in element.properties.iter().enumerate() {
                let tok = *tokens.get(cursor).ok_or_else(|| {
                    perr(ParseErrorKind::WrongArity {
                        expected: cursor + 1,
                        found: tokens.len(),
                    })
                })?;
                cursor += 1;
                let value: f64 = tok
                    .parse()
                    .map_err(|_| perr(ParseErrorKind::InvalidNumber(tok.to_string())))?;
                match prop {
                    Property::Scalar { .. } => {
                        if let Some(axis) = slots.and_then(|s| s.iter().position(|&slot| slot == k)) {
                            xyz[axis] = value;
                        }
                    }
                    Property::List { .. } => {
                        if !(value >= 0.0 && value.fract() == 0.0) {
                            return Err(perr(ParseErrorKind::InvalidNumber(tok.to_string())));
                        }
                        cursor += value as usize;
                    }
                }
            }
            if cursor != tokens.len() {
                return Err(perr(ParseErrorKind::WrongArity {
                    expected: cursor,
                    found: tokens.len(),
                }));
            }
            if is_vertex {
                points.push(Point3::from(xyz));
            }
        }
        if is_vertex {
            break;
        }
    }
    Ok(points)
}

/// Reads the `x`, `y`, `z` properties of the `vertex` element.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(path, &data)
}

/// [`read_ply`] on an in-memory file; `path` only labels errors.
pub fn parse_ply(path: &Path, data: &[u8]) -> Result<PointCloud> {
    let header = parse_header(path, data)?;
    if !header.elements.iter().any(|e| e.name == "vertex") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            location: Location::Line(header.lines),
            kind: ParseErrorKind::Header("no vertex element".into()),
        });
    }
    let points = match header.format {
        Format::Ascii => read_ascii(path, data, &header)?,
        Format::BinaryLe => read_binary(path, data, &header)?,
    };
    let cloud = PointCloud::new(points);
    cloud.validate()?;
    Ok(cloud)
}

/// ASCII PLY text with `double` coordinates at 17 significant digits.
pub fn format_ply(cloud: &PointCloud) -> Result<String> {
    cloud.validate()?;
    let mut out = String::with_capacity(80 + cloud.len() * 72);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in cloud.iter() {
        writeln!(out, "{:.16e} {:.16e} {:.16e}", p.x, p.y, p.z).unwrap();
    }
    Ok(out)
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let text = format_ply(cloud)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
