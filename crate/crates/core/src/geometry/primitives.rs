//! Procedural meshes used by the apparatus scene, tests and demos.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::math::Vec3;

use super::mesh::TriangleMesh;

/// Geodesic sphere from a subdivided icosahedron. Normals are radial and UVs
/// follow an equirectangular parameterization without seam splitting.
pub fn icosphere(subdivisions: u32, radius: f64) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *mid.entry(key).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalized());
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let uvs = verts
        .iter()
        .map(|d| {
            let u = (d.x.atan2(d.z) / (2.0 * PI)).rem_euclid(1.0);
            let v = 0.5 + d.y.clamp(-1.0, 1.0).asin() / PI;
            [u, v]
        })
        .collect();
    TriangleMesh {
        positions: verts.iter().map(|&d| d * radius).collect(),
        normals: verts,
        uvs,
        faces,
    }
}

/// Axis-aligned cube spanning `[-0.5, 0.5]^3` with 24 vertices and a 3x2
/// UV atlas; each face occupies an inset cell of the atlas.
pub fn uv_cube() -> TriangleMesh {
    // (normal, u axis, v axis)
    let sides = [
        (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0), Vec3::Y),
        (Vec3::new(-1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0), Vec3::Y),
        (Vec3::new(0.0, 1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, -1.0)),
        (Vec3::new(0.0, -1.0, 0.0), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 1.0)),
        (Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0), Vec3::Y),
        (Vec3::new(0.0, 0.0, -1.0), Vec3::new(-1.0, 0.0, 0.0), Vec3::Y),
    ];
    let inset = 1.0 / 32.0;
    let mut mesh = TriangleMesh { positions: vec![], normals: vec![], uvs: vec![], faces: vec![] };
    for (i, (n, u, v)) in sides.iter().enumerate() {
        let (col, row) = ((i % 3) as f64, (i / 3) as f64);
        let base = mesh.positions.len() as u32;
        for (su, sv) in [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)] {
            mesh.positions.push((*n + *u * su + *v * sv) * 0.5);
            mesh.normals.push(*n);
            let cu = (col + inset + (1.0 - 2.0 * inset) * (su + 1.0) / 2.0) / 3.0;
            let cv = (row + inset + (1.0 - 2.0 * inset) * (sv + 1.0) / 2.0) / 2.0;
            mesh.uvs.push([cu, cv]);
        }
        mesh.faces.push([base, base + 1, base + 2]);
        mesh.faces.push([base, base + 2, base + 3]);
    }
    mesh
}

/// Single triangle in the `z = 0` plane facing `+z`, UVs `(0,0), (1,0), (0,1)`.
pub fn unit_triangle() -> TriangleMesh {
    TriangleMesh {
        positions: vec![Vec3::new(-0.25, -0.25, 0.0), Vec3::new(0.25, -0.25, 0.0), Vec3::new(-0.25, 0.25, 0.0)],
        normals: vec![Vec3::new(0.0, 0.0, 1.0); 3],
        uvs: vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
        faces: vec![[0, 1, 2]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(0, 1.0).vertex_count(), 12);
        assert_eq!(icosphere(2, 1.0).vertex_count(), 162);
        assert_eq!(icosphere(2, 1.0).face_count(), 320);
        icosphere(3, 0.5).validate().unwrap();
    }

    #[test]
    fn cube_faces_wind_outward() {
        let m = uv_cube();
        m.validate().unwrap();
        for f in 0..m.face_count() {
            let n = m.face_normal_weighted(f);
            let c = m.triangle(f).iter().fold(Vec3::ZERO, |a, &p| a + p) / 3.0;
            assert!(n.dot(c) > 0.0);
        }
    }
}
