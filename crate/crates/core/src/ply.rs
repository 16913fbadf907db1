//! PLY reader/writer for [`PointCloud`].
//!
//! Recognized vertex properties: `x y z` (required), `hx hy hz`,
//! `nx ny nz`, `reflectance`. Any other vertex property is carried in
//! [`PointCloud::extras`] and written back with its original type.
//! Non-vertex elements are skipped with a warning. The frame tag travels as
//! a `comment frame <world|normalized>` header line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;

use crate::cloud::{ExtraProperty, Frame, PointCloud, ScalarKind};
use crate::error::{Error, Result};
use crate::geom::{Point3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub encoding: Encoding,
    /// Scalar type for coordinates, heads and normals.
    pub coord_kind: ScalarKind,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            encoding: Encoding::BinaryLittleEndian,
            coord_kind: ScalarKind::F32,
        }
    }
}

fn kind_name(kind: ScalarKind) -> &'static str {
    match kind {
        ScalarKind::I8 => "char",
        ScalarKind::U8 => "uchar",
        ScalarKind::I16 => "short",
        ScalarKind::U16 => "ushort",
        ScalarKind::I32 => "int",
        ScalarKind::U32 => "uint",
        ScalarKind::F32 => "float",
        ScalarKind::F64 => "double",
    }
}

fn parse_kind(name: &str) -> Result<ScalarKind> {
    Ok(match name {
        "char" | "int8" => ScalarKind::I8,
        "uchar" | "uint8" => ScalarKind::U8,
        "short" | "int16" => ScalarKind::I16,
        "ushort" | "uint16" => ScalarKind::U16,
        "int" | "int32" => ScalarKind::I32,
        "uint" | "uint32" => ScalarKind::U32,
        "float" | "float32" => ScalarKind::F32,
        "double" | "float64" => ScalarKind::F64,
        other => return Err(Error::format(format!("unknown PLY scalar type {other:?}"))),
    })
}

fn write_scalar(out: &mut impl Write, kind: ScalarKind, v: f64, enc: Encoding) -> Result<()> {
    match enc {
        Encoding::Ascii => match kind {
            ScalarKind::F32 => write!(out, "{}", v as f32)?,
            ScalarKind::F64 => write!(out, "{v}")?,
            _ => write!(out, "{}", v as i64)?,
        },
        Encoding::BinaryLittleEndian => match kind {
            ScalarKind::I8 => out.write_all(&(v as i8).to_le_bytes())?,
            ScalarKind::U8 => out.write_all(&(v as u8).to_le_bytes())?,
            ScalarKind::I16 => out.write_all(&(v as i16).to_le_bytes())?,
            ScalarKind::U16 => out.write_all(&(v as u16).to_le_bytes())?,
            ScalarKind::I32 => out.write_all(&(v as i32).to_le_bytes())?,
            ScalarKind::U32 => out.write_all(&(v as u32).to_le_bytes())?,
            ScalarKind::F32 => out.write_all(&(v as f32).to_le_bytes())?,
            ScalarKind::F64 => out.write_all(&v.to_le_bytes())?,
        },
    }
    Ok(())
}

fn read_binary(input: &mut (impl Read + ?Sized), kind: ScalarKind) -> Result<f64> {
    let mut buf = [0u8; 8];
    let n = kind.size();
    input.read_exact(&mut buf[..n])?;
    Ok(match kind {
        ScalarKind::I8 => i8::from_le_bytes([buf[0]]) as f64,
        ScalarKind::U8 => buf[0] as f64,
        ScalarKind::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
        ScalarKind::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
        ScalarKind::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        ScalarKind::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        ScalarKind::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
        ScalarKind::F64 => f64::from_le_bytes(buf),
    })
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, opts: WriteOptions) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_ply_to(&mut out, cloud, opts)?;
    out.flush()?;
    Ok(())
}

pub fn write_ply_to(out: &mut impl Write, cloud: &PointCloud, opts: WriteOptions) -> Result<()> {
    cloud.validate()?;
    let ck = opts.coord_kind;
    let mut columns: Vec<(&str, ScalarKind)> = vec![("x", ck), ("y", ck), ("z", ck)];
    if cloud.heads.is_some() {
        columns.extend([("hx", ck), ("hy", ck), ("hz", ck)]);
    }
    if cloud.normals.is_some() {
        columns.extend([("nx", ck), ("ny", ck), ("nz", ck)]);
    }
    if cloud.reflectance.is_some() {
        columns.push(("reflectance", ScalarKind::F32));
    }
    for e in &cloud.extras {
        columns.push((e.name.as_str(), e.kind));
    }

    writeln!(out, "ply")?;
    match opts.encoding {
        Encoding::Ascii => writeln!(out, "format ascii 1.0")?,
        Encoding::BinaryLittleEndian => writeln!(out, "format binary_little_endian 1.0")?,
    }
    writeln!(out, "comment frame {}", cloud.frame.as_str())?;
    writeln!(out, "element vertex {}", cloud.len())?;
    for (name, kind) in &columns {
        writeln!(out, "property {} {}", kind_name(*kind), name)?;
    }
    writeln!(out, "end_header")?;

    let mut row = Vec::with_capacity(columns.len());
    for i in 0..cloud.len() {
        row.clear();
        let p = cloud.points[i];
        row.extend([p.x, p.y, p.z]);
        if let Some(h) = &cloud.heads {
            row.extend([h[i].x, h[i].y, h[i].z]);
        }
        if let Some(n) = &cloud.normals {
            row.extend([n[i].x, n[i].y, n[i].z]);
        }
        if let Some(r) = &cloud.reflectance {
            row.push(r[i]);
        }
        for e in &cloud.extras {
            row.push(e.values[i]);
        }
        for (j, (v, (_, kind))) in row.iter().zip(&columns).enumerate() {
            if opts.encoding == Encoding::Ascii && j > 0 {
                out.write_all(b" ")?;
            }
            write_scalar(out, *kind, *v, opts.encoding)?;
        }
        if opts.encoding == Encoding::Ascii {
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}

#[derive(Debug)]
enum PropertyDef {
    Scalar { name: String, kind: ScalarKind },
    List { count: ScalarKind, item: ScalarKind },
}

#[derive(Debug)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<PropertyDef>,
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let mut input = BufReader::new(File::open(path)?);
    read_ply_from(&mut input)
}

pub fn read_ply_from(input: &mut impl BufRead) -> Result<PointCloud> {
    let mut line = String::new();
    let next_line = |input: &mut dyn BufRead, line: &mut String| -> Result<()> {
        line.clear();
        if input.read_line(line)? == 0 {
            return Err(Error::format("unexpected end of PLY header"));
        }
        Ok(())
    };
    next_line(input, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::format("missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut frame = Frame::World;
    let mut elements: Vec<ElementDef> = Vec::new();
    loop {
        next_line(input, &mut line)?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "ascii", _] => encoding = Some(Encoding::Ascii),
            ["format", "binary_little_endian", _] => encoding = Some(Encoding::BinaryLittleEndian),
            ["format", other, _] => {
                return Err(Error::format(format!("unsupported PLY encoding {other}")))
            }
            ["comment", "frame", f] => {
                frame = Frame::parse(f)
                    .ok_or_else(|| Error::format(format!("unknown frame tag {f:?}")))?
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(ElementDef {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::format(format!("bad element count {count:?}")))?,
                properties: Vec::new(),
            }),
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property before element"))?;
                el.properties.push(PropertyDef::List {
                    count: parse_kind(count)?,
                    item: parse_kind(item)?,
                });
            }
            ["property", kind, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::format("property before element"))?;
                el.properties.push(PropertyDef::Scalar {
                    name: name.to_string(),
                    kind: parse_kind(kind)?,
                });
            }
            ["end_header"] => break,
            _ => return Err(Error::format(format!("bad PLY header line {:?}", line.trim_end()))),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format("missing PLY format line"))?;

    let mut ascii_tokens: Vec<String> = Vec::new();
    let mut ascii_pos = 0usize;
    if encoding == Encoding::Ascii {
        let mut rest = String::new();
        input.read_to_string(&mut rest)?;
        ascii_tokens = rest.split_whitespace().map(str::to_owned).collect();
    }
    let mut read_value = |input: &mut dyn BufRead, kind: ScalarKind| -> Result<f64> {
        match encoding {
            Encoding::BinaryLittleEndian => read_binary(input, kind),
            Encoding::Ascii => {
                let tok = ascii_tokens
                    .get(ascii_pos)
                    .ok_or_else(|| Error::format("PLY body ended early"))?;
                ascii_pos += 1;
                tok.parse::<f64>()
                    .map_err(|_| Error::format(format!("bad PLY value {tok:?}")))
            }
        }
    };

    let mut cloud = None;
    for el in &elements {
        if el.name != "vertex" {
            warn!("skipping PLY element {:?} ({} entries)", el.name, el.count);
            for _ in 0..el.count {
                for prop in &el.properties {
                    match prop {
                        PropertyDef::Scalar { kind, .. } => {
                            read_value(input, *kind)?;
                        }
                        PropertyDef::List { count, item } => {
                            let n = read_value(input, *count)? as usize;
                            for _ in 0..n {
                                read_value(input, *item)?;
                            }
                        }
                    }
                }
            }
            continue;
        }
        let mut columns: Vec<(String, ScalarKind, Vec<f64>)> = Vec::new();
        for prop in &el.properties {
            match prop {
                PropertyDef::Scalar { name, kind } => {
                    columns.push((name.clone(), *kind, Vec::with_capacity(el.count)))
                }
                PropertyDef::List { .. } => {
                    return Err(Error::format("list properties on vertices are not supported"))
                }
            }
        }
        for _ in 0..el.count {
            for col in columns.iter_mut() {
                let v = read_value(input, col.1)?;
                col.2.push(v);
            }
        }
        cloud = Some(assemble(columns, frame)?);
    }
    cloud.ok_or_else(|| Error::format("PLY has no vertex element"))
}

fn assemble(mut columns: Vec<(String, ScalarKind, Vec<f64>)>, frame: Frame) -> Result<PointCloud> {
    fn take(columns: &mut Vec<(String, ScalarKind, Vec<f64>)>, names: [&str; 3]) -> Option<[Vec<f64>; 3]> {
        let pos: Vec<usize> = names
            .iter()
            .filter_map(|n| columns.iter().position(|c| c.0 == *n))
            .collect();
        if pos.len() != 3 {
            return None;
        }
        let mut out: [Vec<f64>; 3] = Default::default();
        for (slot, name) in names.iter().enumerate() {
            let i = columns.iter().position(|c| c.0 == *name).unwrap();
            out[slot] = columns.remove(i).2;
        }
        Some(out)
    }
    let [x, y, z] = take(&mut columns, ["x", "y", "z"])
        .ok_or_else(|| Error::format("PLY vertex element lacks x/y/z"))?;
    let points: Vec<Point3> = (0..x.len()).map(|i| Point3::new(x[i], y[i], z[i])).collect();
    let heads = take(&mut columns, ["hx", "hy", "hz"])
        .map(|[a, b, c]| (0..a.len()).map(|i| Point3::new(a[i], b[i], c[i])).collect());
    let normals = take(&mut columns, ["nx", "ny", "nz"])
        .map(|[a, b, c]| (0..a.len()).map(|i| Vec3::new(a[i], b[i], c[i])).collect());
    let reflectance = columns
        .iter()
        .position(|c| c.0 == "reflectance")
        .map(|i| columns.remove(i).2);
    let extras = columns
        .into_iter()
        .map(|(name, kind, values)| ExtraProperty { name, kind, values })
        .collect();
    Ok(PointCloud {
        points,
        heads,
        normals,
        reflectance,
        extras,
        frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn sample() -> PointCloud {
        let pts = vec![Point3::new(1.5, -2.25, 0.125), Point3::new(3.0, 4.0, 5.0)];
        let heads = vec![Point3::new(0.0, 0.0, 2.75), Point3::new(1.0, 0.0, 2.75)];
        let mut c = PointCloud::with_heads(pts, heads);
        c.normals = Some(vec![Vec3::z(), Vec3::x()]);
        c.reflectance = Some(vec![0.5, 0.25]);
        c.extras.push(ExtraProperty {
            name: "label".into(),
            kind: ScalarKind::U8,
            values: vec![3.0, 7.0],
        });
        c
    }

    fn round_trip(c: &PointCloud, enc: Encoding) -> PointCloud {
        let mut buf = Vec::new();
        write_ply_to(
            &mut buf,
            c,
            WriteOptions {
                encoding: enc,
                coord_kind: ScalarKind::F32,
            },
        )
        .unwrap();
        read_ply_from(&mut Cursor::new(buf)).unwrap()
    }

    #[test]
    fn binary_round_trip_preserves_everything() {
        let c = sample();
        assert_eq!(round_trip(&c, Encoding::BinaryLittleEndian), c);
    }

    #[test]
    fn ascii_round_trip_preserves_everything() {
        let mut c = sample();
        c.frame = Frame::Normalized;
        assert_eq!(round_trip(&c, Encoding::Ascii), c);
    }

    #[test]
    fn skips_face_elements() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\n\
                    element face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 1 1\n3 0 1 0\n";
        let c = read_ply_from(&mut Cursor::new(text.as_bytes())).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.points[1], Point3::new(1.0, 1.0, 1.0));
    }

    #[test]
    fn truncated_binary_body_errors() {
        let mut buf = Vec::new();
        write_ply_to(&mut buf, &sample(), WriteOptions::default()).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_ply_from(&mut Cursor::new(buf)).is_err());
    }

    #[test]
    fn missing_xyz_is_a_format_error() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nend_header\n0\n";
        assert!(matches!(read_ply_from(&mut Cursor::new(text.as_bytes())), Err(Error::Format(_))));
    }
}
