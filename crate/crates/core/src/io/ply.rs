//! Binary little-endian PLY for triangle meshes with optional uchar RGB.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geomath::{TriMesh, Vec3};

pub fn write_ply(mesh: &TriMesh, w: &mut impl Write) -> Result<()> {
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header += &format!("element vertex {}\n", mesh.vertices.len());
    header += "property float x\nproperty float y\nproperty float z\n";
    if mesh.colors.is_some() {
        header += "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    header += &format!("element face {}\n", mesh.triangles.len());
    header += "property list uchar int vertex_indices\nend_header\n";
    let mut buf = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in [v.x, v.y, v.z] {
            buf.extend_from_slice(&(c as f32).to_le_bytes());
        }
        if let Some(colors) = &mesh.colors {
            for c in colors[i].iter() {
                buf.push((c.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for &i in t {
            buf.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_ply(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    write_ply(mesh, &mut out)?;
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "uchar" | "uint8" => Scalar::U8,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Format(format!("unsupported PLY type {other}"))),
        })
    }

    fn read(self, r: &mut impl Read) -> Result<f64> {
        Ok(match self {
            Scalar::U8 => {
                let mut b = [0u8; 1];
                r.read_exact(&mut b)?;
                b[0] as f64
            }
            Scalar::I32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                i32::from_le_bytes(b) as f64
            }
            Scalar::U32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                u32::from_le_bytes(b) as f64
            }
            Scalar::F32 => {
                let mut b = [0u8; 4];
                r.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            }
            Scalar::F64 => {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            }
        })
    }
}

/// Reads vertices (x, y, z and optional red/green/blue) and triangle faces.
pub fn read_ply(r: impl Read) -> Result<TriMesh> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("PLY header ended early".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut r)? != "ply" {
        return Err(Error::Format("missing ply magic".into()));
    }
    let mut n_vert = 0usize;
    let mut n_face = 0usize;
    let mut vprops: Vec<(String, Scalar)> = Vec::new();
    let mut face_types: Option<(Scalar, Scalar)> = None;
    let mut current = String::new();
    loop {
        let l = next_line(&mut r)?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        match parts.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "binary_little_endian" {
                    return Err(Error::Format(format!("unsupported PLY format {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| Error::Format("bad element count".into()))?;
                current = name.to_string();
                match *name {
                    "vertex" => n_vert = count,
                    "face" => n_face = count,
                    other => return Err(Error::Format(format!("unsupported PLY element {other}"))),
                }
            }
            ["property", "list", ct, it, _] if current == "face" => {
                face_types = Some((Scalar::parse(ct)?, Scalar::parse(it)?));
            }
            ["property", ty, name] if current == "vertex" => {
                vprops.push((name.to_string(), Scalar::parse(ty)?));
            }
            ["end_header"] => break,
            _ => return Err(Error::Format(format!("unexpected PLY header line: {l}"))),
        }
    }
    let has_color = vprops.iter().any(|(n, _)| n == "red");
    let mut vertices = Vec::with_capacity(n_vert);
    let mut colors = Vec::new();
    for _ in 0..n_vert {
        let mut p = Vec3::zeros();
        let mut c = Vec3::zeros();
        for (name, ty) in &vprops {
            let v = ty.read(&mut r)?;
            match name.as_str() {
                "x" => p.x = v,
                "y" => p.y = v,
                "z" => p.z = v,
                "red" => c.x = v / 255.0,
                "green" => c.y = v / 255.0,
                "blue" => c.z = v / 255.0,
                _ => {}
            }
        }
        vertices.push(p);
        if has_color {
            colors.push(c);
        }
    }
    let mut triangles = Vec::with_capacity(n_face);
    if n_face > 0 {
        let (ct, it) = face_types.ok_or_else(|| Error::Format("face element without index list".into()))?;
        for _ in 0..n_face {
            let k = ct.read(&mut r)? as usize;
            if k != 3 {
                return Err(Error::Format(format!("only triangles are supported, got a {k}-gon")));
            }
            let mut t = [0u32; 3];
            for slot in &mut t {
                *slot = it.read(&mut r)? as u32;
            }
            triangles.push(t);
        }
    }
    let mut mesh = TriMesh::new(vertices, triangles)?;
    if has_color {
        mesh.colors = Some(colors);
    }
    Ok(mesh)
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<TriMesh> {
    read_ply(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geomath::uv_sphere;

    #[test]
    fn round_trip_with_colors() {
        let mut m = uv_sphere(Vec3::new(0.1, 0.2, 0.3), 0.25, 6, 8);
        m.normals = None;
        m.colors = Some(m.vertices.iter().map(|v| (v.map(|c| c.abs()) * 2.0).map(|c| c.min(1.0))).collect());
        let mut bytes = Vec::new();
        write_ply(&m, &mut bytes).unwrap();
        let back = read_ply(bytes.as_slice()).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() < 1e-6);
        }
        for (a, b) in back.colors.unwrap().iter().zip(m.colors.as_ref().unwrap()) {
            assert!((a - b).norm() < 1.0 / 255.0);
        }
    }

    #[test]
    fn header_is_binary_little_endian() {
        let m = uv_sphere(Vec3::zeros(), 1.0, 3, 4);
        let mut bytes = Vec::new();
        write_ply(&m, &mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes[..120]);
        assert!(text.starts_with("ply\nformat binary_little_endian 1.0\n"));
        assert!(read_ply(&b"ply\nformat ascii 1.0\nend_header\n"[..]).is_err());
    }
}
