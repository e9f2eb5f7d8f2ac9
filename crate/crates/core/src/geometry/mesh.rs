use crate::math::Vec3;

use super::GeometryError;

/// Radius of the bounding sphere meshes are normalized into.
pub const NORMALIZED_RADIUS: f64 = 0.5;

/// Indexed triangle mesh with per-vertex normals and UVs.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub faces: Vec<[u32; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, computing area-weighted vertex normals.
    pub fn from_positions_uvs(
        positions: Vec<Vec3>,
        uvs: Vec<[f64; 2]>,
        faces: Vec<[u32; 3]>,
    ) -> Result<Self, GeometryError> {
        let normals = compute_vertex_normals(&positions, &faces);
        let mesh = Self { positions, normals, uvs, faces };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.positions.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Checks the structural invariants that hold for every mesh (index
    /// bounds, attribute counts, UV range); normalization is not checked.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let n = self.positions.len();
        if n == 0 || self.faces.is_empty() {
            return Err(GeometryError::Empty);
        }
        if self.normals.len() != n {
            return Err(GeometryError::Parse { line: 0, msg: "normal count differs from vertex count".into() });
        }
        if self.uvs.len() != n {
            return Err(GeometryError::MissingUvs);
        }
        for (fi, f) in self.faces.iter().enumerate() {
            for &i in f {
                if i as usize >= n {
                    return Err(GeometryError::IndexOutOfRange { face: fi, index: i as usize, count: n });
                }
            }
        }
        for uv in &self.uvs {
            if !(0.0..=1.0).contains(&uv[0]) || !(0.0..=1.0).contains(&uv[1]) {
                return Err(GeometryError::UvOutOfRange(uv[0], uv[1]));
            }
        }
        Ok(())
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::splat(f64::INFINITY);
        let mut hi = Vec3::splat(f64::NEG_INFINITY);
        for &p in &self.positions {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        (lo, hi)
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.positions.iter().map(|p| p.length()).fold(0.0, f64::max)
    }

    /// Height of the supporting floor plane: the lowest vertex.
    pub fn floor_height(&self) -> f64 {
        self.positions.iter().map(|p| p.y).fold(f64::INFINITY, f64::min)
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let f = self.faces[face];
        [self.positions[f[0] as usize], self.positions[f[1] as usize], self.positions[f[2] as usize]]
    }

    /// Geometric (unnormalized) face normal, `2 * area * n`.
    pub fn face_normal_weighted(&self, face: usize) -> Vec3 {
        let [a, b, c] = self.triangle(face);
        (b - a).cross(c - a)
    }
}

/// Per-vertex normals by area-weighted averaging of incident face normals.
/// Vertices sharing a position (UV seams) receive the same normal.
pub fn compute_vertex_normals(positions: &[Vec3], faces: &[[u32; 3]]) -> Vec<Vec3> {
    // Weld by exact position so seams do not produce shading discontinuities.
    let mut weld: std::collections::HashMap<[u64; 3], usize> = std::collections::HashMap::new();
    let slot: Vec<usize> = positions
        .iter()
        .map(|p| {
            let key = [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            let next = weld.len();
            *weld.entry(key).or_insert(next)
        })
        .collect();
    let mut acc = vec![Vec3::ZERO; weld.len()];
    for f in faces {
        let [a, b, c] = f.map(|i| positions[i as usize]);
        let n = (b - a).cross(c - a);
        for &i in f {
            acc[slot[i as usize]] += n;
        }
    }
    slot.iter()
        .map(|&s| {
            let n = acc[s];
            if n.length_squared() > 0.0 {
                n.normalized()
            } else {
                Vec3::Y
            }
        })
        .collect()
}

/// Translates the bounding-box center to the origin and scales uniformly so
/// the farthest vertex lies at [`NORMALIZED_RADIUS`].
pub fn normalize_mesh(mesh: &TriangleMesh) -> Result<TriangleMesh, GeometryError> {
    if mesh.positions.is_empty() {
        return Err(GeometryError::Empty);
    }
    let (lo, hi) = mesh.bounds();
    let center = (lo + hi) * 0.5;
    let max_norm = mesh.positions.iter().map(|&p| (p - center).length()).fold(0.0, f64::max);
    if !(max_norm > 0.0) {
        return Err(GeometryError::ZeroExtent);
    }
    let scale = NORMALIZED_RADIUS / max_norm;
    let mut out = mesh.clone();
    for p in out.positions.iter_mut() {
        *p = (*p - center) * scale;
    }
    Ok(out)
}
