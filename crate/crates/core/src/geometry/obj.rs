//! Minimal Wavefront OBJ reader/writer for single-material UV-mapped meshes.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::math::Vec3;

use super::mesh::{compute_vertex_normals, TriangleMesh};
use super::GeometryError;

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text)
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Corner {
    v: usize,
    vt: Option<usize>,
    vn: Option<usize>,
}

fn resolve(idx: &str, count: usize, line: usize) -> Result<usize, GeometryError> {
    let i: i64 = idx
        .parse()
        .map_err(|_| GeometryError::Parse { line, msg: format!("bad index `{idx}`") })?;
    let r = if i < 0 { count as i64 + i } else { i - 1 };
    if r < 0 || r as usize >= count {
        return Err(GeometryError::Parse { line, msg: format!("index {i} out of range") });
    }
    Ok(r as usize)
}

fn floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N], GeometryError> {
    if parts.len() < N {
        return Err(GeometryError::Parse { line, msg: format!("expected {N} components") });
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| GeometryError::Parse { line, msg: format!("bad number `{p}`") })?;
    }
    Ok(out)
}

/// Parses OBJ text. Vertices are unified per distinct `v/vt/vn` corner,
/// polygons are fan-triangulated, and normals are computed by area-weighted
/// averaging when the file does not provide them for every corner.
pub fn parse_obj(text: &str) -> Result<TriangleMesh, GeometryError> {
    let mut v = Vec::new();
    let mut vt = Vec::new();
    let mut vn = Vec::new();
    let mut materials: Vec<String> = Vec::new();
    let mut corners: Vec<Corner> = Vec::new();
    let mut corner_ids: HashMap<Corner, u32> = HashMap::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => v.push(Vec3::from_array(floats::<3>(&rest, line)?)),
            "vt" => vt.push(floats::<2>(&rest, line)?),
            "vn" => vn.push(Vec3::from_array(floats::<3>(&rest, line)?)),
            "usemtl" => {
                let name = rest.join(" ");
                if !materials.contains(&name) {
                    materials.push(name);
                }
            }
            "f" => {
                if rest.len() < 3 {
                    return Err(GeometryError::Parse { line, msg: "face with fewer than 3 corners".into() });
                }
                let mut poly = Vec::with_capacity(rest.len());
                for c in &rest {
                    let mut it = c.split('/');
                    let vi = resolve(it.next().unwrap_or(""), v.len(), line)?;
                    let ti = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, vt.len(), line)?),
                        _ => None,
                    };
                    let ni = match it.next() {
                        Some(s) if !s.is_empty() => Some(resolve(s, vn.len(), line)?),
                        _ => None,
                    };
                    let corner = Corner { v: vi, vt: ti, vn: ni };
                    let id = *corner_ids.entry(corner).or_insert_with(|| {
                        corners.push(corner);
                        (corners.len() - 1) as u32
                    });
                    poly.push(id);
                }
                for k in 1..poly.len() - 1 {
                    faces.push([poly[0], poly[k], poly[k + 1]]);
                }
            }
            _ => {}
        }
    }

    if materials.len() > 1 {
        return Err(GeometryError::MultipleMaterials);
    }
    if faces.is_empty() {
        return Err(GeometryError::Empty);
    }
    if vt.is_empty() || corners.iter().any(|c| c.vt.is_none()) {
        return Err(GeometryError::MissingUvs);
    }

    let positions: Vec<Vec3> = corners.iter().map(|c| v[c.v]).collect();
    let uvs: Vec<[f64; 2]> = corners.iter().map(|c| vt[c.vt.unwrap()]).collect();
    let normals = if corners.iter().all(|c| c.vn.is_some()) {
        corners.iter().map(|c| vn[c.vn.unwrap()].normalized()).collect()
    } else {
        compute_vertex_normals(&positions, &faces)
    };
    let mesh = TriangleMesh { positions, normals, uvs, faces };
    mesh.validate()?;
    Ok(mesh)
}

/// Serializes a mesh with `v`, `vt`, `vn` and `f` records.
pub fn write_obj(mesh: &TriangleMesh) -> String {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    for uv in &mesh.uvs {
        let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
    }
    for n in &mesh.normals {
        let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
    }
    for f in &mesh.faces {
        let [a, b, c] = f.map(|i| i + 1);
        let _ = writeln!(s, "f {a}/{a}/{a} {b}/{b}/{b} {c}/{c}/{c}");
    }
    s
}
