//! Binary little-endian 3DGS PLY files.
//!
//! The loader accepts any property order and any scalar property type, and
//! skips unknown properties and fixed-size foreign elements. The writer emits
//! the conventional layout: `x y z nx ny nz f_dc_* f_rest_* opacity scale_*
//! rot_*`, plus a `uchar object` mask column when the object is a strict
//! subset of the set.

use std::fs;
use std::path::Path;

use nalgebra::{Quaternion, Vector3};

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian, GaussianSet, SH_COEFFS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().expect("8 bytes")),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, Scalar)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|p| p.1.size()).sum()
    }

    fn offset_of(&self, name: &str) -> Option<(usize, Scalar)> {
        let mut off = 0;
        for (n, s) in &self.properties {
            if n == name {
                return Some((off, *s));
            }
            off += s.size();
        }
        None
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize)> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::MalformedPly("missing end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::MalformedPly("header is not valid UTF-8".into()))?;
    let mut lines = header.lines().map(str::trim);
    if lines.next() != Some("ply") {
        return Err(Error::MalformedPly("missing `ply` magic line".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut format_seen = false;
    for line in lines {
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                let fmt = tok.next().unwrap_or("");
                if fmt != "binary_little_endian" {
                    return Err(Error::UnsupportedFormat(fmt.to_string()));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = tok.next().unwrap_or("").to_string();
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::MalformedPly(format!("bad element line `{line}`")))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let ty = tok.next().unwrap_or("");
                if ty == "list" {
                    return Err(Error::UnsupportedFormat("list properties".into()));
                }
                let scalar = Scalar::parse(ty)
                    .ok_or_else(|| Error::MalformedPly(format!("unknown property type `{ty}`")))?;
                let name = tok
                    .next()
                    .ok_or_else(|| Error::MalformedPly(format!("bad property line `{line}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::MalformedPly("property before element".into()))?
                    .properties
                    .push((name.to_string(), scalar));
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => {
                return Err(Error::MalformedPly(format!(
                    "unexpected header keyword `{other}`"
                )))
            }
        }
    }
    if !format_seen {
        return Err(Error::MalformedPly("missing format line".into()));
    }
    Ok((elements, end + END.len()))
}

/// Parse a 3DGS PLY from memory. The whole object is selected unless the file
/// carries an `object` mask column.
pub fn parse_ply(bytes: &[u8]) -> Result<GaussianSet> {
    let (elements, mut offset) = parse_header(bytes)?;
    let mut vertex = None;
    for el in &elements {
        if el.name == "vertex" {
            vertex = Some(el);
            break;
        }
        offset += el.count * el.stride();
    }
    let vertex = vertex.ok_or_else(|| Error::MissingProperty("element vertex".into()))?;

    let required = |name: &str| {
        vertex
            .offset_of(name)
            .ok_or_else(|| Error::MissingProperty(name.to_string()))
    };
    let pos = [required("x")?, required("y")?, required("z")?];
    let dc = [
        required("f_dc_0")?,
        required("f_dc_1")?,
        required("f_dc_2")?,
    ];
    let opacity = required("opacity")?;
    let scale = [
        required("scale_0")?,
        required("scale_1")?,
        required("scale_2")?,
    ];
    let rot = [
        required("rot_0")?,
        required("rot_1")?,
        required("rot_2")?,
        required("rot_3")?,
    ];
    let rest: Vec<Option<(usize, Scalar)>> = (0..SH_COEFFS - 3)
        .map(|i| vertex.offset_of(&format!("f_rest_{i}")))
        .collect();
    let object = vertex.offset_of("object");

    let stride = vertex.stride();
    let needed = vertex.count * stride;
    let payload = bytes.get(offset..offset + needed).ok_or_else(|| {
        Error::MalformedPly(format!(
            "truncated payload: need {needed} bytes for {} vertices, have {}",
            vertex.count,
            bytes.len().saturating_sub(offset)
        ))
    })?;

    let mut gaussians = Vec::with_capacity(vertex.count);
    let mut mask = Vec::new();
    for (i, rec) in payload.chunks_exact(stride).enumerate() {
        let get = |(off, s): (usize, Scalar)| s.read(&rec[off..]);
        let mut sh = [0.0f32; SH_COEFFS];
        for c in 0..3 {
            sh[c] = get(dc[c]) as f32;
        }
        for (k, slot) in rest.iter().enumerate() {
            if let Some(p) = slot {
                sh[3 + k] = get(*p) as f32;
            }
        }
        gaussians.push(Gaussian {
            center: Vector3::new(get(pos[0]), get(pos[1]), get(pos[2])),
            rotation: Quaternion::new(get(rot[0]), get(rot[1]), get(rot[2]), get(rot[3])),
            log_scale: Vector3::new(get(scale[0]), get(scale[1]), get(scale[2])),
            opacity_logit: get(opacity),
            sh,
        });
        match object {
            Some(p) if get(p) != 0.0 => mask.push(i),
            Some(_) => {}
            None => mask.push(i),
        }
    }
    Ok(GaussianSet {
        gaussians,
        object_mask: mask,
    })
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<GaussianSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Serialize a set in the conventional layout.
pub fn encode_ply(set: &GaussianSet) -> Vec<u8> {
    let with_mask = set.object_mask.len() != set.len();
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", set.len()));
    let mut props: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    props.extend((0..3).map(|i| format!("f_dc_{i}")));
    props.extend((0..SH_COEFFS - 3).map(|i| format!("f_rest_{i}")));
    props.push("opacity".into());
    props.extend((0..3).map(|i| format!("scale_{i}")));
    props.extend((0..4).map(|i| format!("rot_{i}")));
    for p in &props {
        header.push_str(&format!("property float {p}\n"));
    }
    if with_mask {
        header.push_str("property uchar object\n");
    }
    header.push_str("end_header\n");

    let stride = props.len() * 4 + usize::from(with_mask);
    let mut out = Vec::with_capacity(header.len() + set.len() * stride);
    out.extend_from_slice(header.as_bytes());
    let mut in_object = vec![false; set.len()];
    for &i in &set.object_mask {
        in_object[i] = true;
    }
    let put = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&(v as f32).to_le_bytes());
    for (g, &obj) in set.gaussians.iter().zip(&in_object) {
        for v in g.center.iter() {
            put(&mut out, *v);
        }
        for _ in 0..3 {
            put(&mut out, 0.0);
        }
        for c in g.sh.iter() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        put(&mut out, g.opacity_logit);
        for v in g.log_scale.iter() {
            put(&mut out, *v);
        }
        for v in [g.rotation.w, g.rotation.i, g.rotation.j, g.rotation.k] {
            put(&mut out, v);
        }
        if with_mask {
            out.push(u8::from(obj));
        }
    }
    out
}

pub fn save_ply(set: &GaussianSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ply(set)).map_err(|e| Error::io(path, e))
}
