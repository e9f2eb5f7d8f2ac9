use rayon::prelude::*;

use crate::geometry::TriangleMesh;
use crate::math::Vec3;

use super::{ChannelBounds, NeuralTexture, TextureError, Workspace, PBR_CHANNELS};

/// Barycentric slack so texels on a shared edge land in both neighbors.
const EDGE_EPS: f64 = 1e-12;
/// Interior margin used to tell genuine overlaps from shared edges.
const OVERLAP_EPS: f64 = 1e-9;

/// Texture-space grid of surface positions. Row 0 is the top of the image
/// (`v = 1`); texel `(i, j)` has its center at `((j + 0.5) / W, 1 - (i + 0.5) / H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct UvPositionMap {
    pub width: usize,
    pub height: usize,
    pub positions: Vec<Vec3>,
    pub valid: Vec<bool>,
    /// Texels strictly inside more than one UV triangle.
    pub overlaps: usize,
}

impl UvPositionMap {
    pub fn texel_uv(width: usize, height: usize, i: usize, j: usize) -> [f64; 2] {
        [(j as f64 + 0.5) / width as f64, 1.0 - (i as f64 + 0.5) / height as f64]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn coverage(&self) -> f64 {
        self.valid_count() as f64 / self.valid.len() as f64
    }
}

fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l0 = ((b[1] - c[1]) * (p[0] - c[0]) + (c[0] - b[0]) * (p[1] - c[1])) / det;
    let l1 = ((c[1] - a[1]) * (p[0] - c[0]) + (a[0] - c[0]) * (p[1] - c[1])) / det;
    Some([l0, l1, 1.0 - l0 - l1])
}

/// Rasterizes every face into texture space at texel centers. Overlapping
/// islands keep the last face written and are reported through a warning
/// and [`UvPositionMap::overlaps`].
pub fn rasterize_uv_positions(mesh: &TriangleMesh, height: usize, width: usize) -> Result<UvPositionMap, TextureError> {
    if width == 0 || height == 0 {
        return Err(TextureError::Shape("texture map must be at least 1x1".into()));
    }
    let n = width * height;
    let mut positions = vec![Vec3::ZERO; n];
    let mut valid = vec![false; n];
    let mut strict = vec![false; n];
    let mut overlapped = vec![false; n];
    for face in &mesh.faces {
        let uv = face.map(|k| mesh.uvs[k as usize]);
        let p = face.map(|k| mesh.positions[k as usize]);
        let (umin, umax) = (uv[0][0].min(uv[1][0]).min(uv[2][0]), uv[0][0].max(uv[1][0]).max(uv[2][0]));
        let (vmin, vmax) = (uv[0][1].min(uv[1][1]).min(uv[2][1]), uv[0][1].max(uv[1][1]).max(uv[2][1]));
        let j0 = ((umin * width as f64 - 0.5).floor().max(0.0)) as usize;
        let j1 = ((umax * width as f64 - 0.5).ceil().max(0.0) as usize).min(width - 1);
        let i0 = (((1.0 - vmax) * height as f64 - 0.5).floor().max(0.0)) as usize;
        let i1 = ((((1.0 - vmin) * height as f64 - 0.5).ceil()).max(0.0) as usize).min(height - 1);
        for i in i0..=i1 {
            for j in j0..=j1 {
                let t = UvPositionMap::texel_uv(width, height, i, j);
                let Some(l) = barycentric(t, uv[0], uv[1], uv[2]) else { continue };
                let m = l[0].min(l[1]).min(l[2]);
                if m < -EDGE_EPS {
                    continue;
                }
                let k = i * width + j;
                let inside = m > OVERLAP_EPS;
                if inside && strict[k] {
                    overlapped[k] = true;
                }
                positions[k] = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                valid[k] = true;
                strict[k] |= inside;
            }
        }
    }
    let overlaps = overlapped.iter().filter(|o| **o).count();
    if overlaps > 0 {
        log::warn!("{} ({overlaps} texels, last writer wins)", TextureError::UvOverlap);
    }
    Ok(UvPositionMap { width, height, positions, valid, overlaps })
}

/// Baked `H x W x 5` PBR texture. Row 0 is the top (`v = 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct TextureMap {
    pub width: usize,
    pub height: usize,
    pub texels: Vec<[f64; PBR_CHANNELS]>,
    pub bounds: ChannelBounds,
}

impl TextureMap {
    pub fn new(width: usize, height: usize, texels: Vec<[f64; PBR_CHANNELS]>, bounds: ChannelBounds) -> Result<Self, TextureError> {
        if width == 0 || height == 0 || texels.len() != width * height {
            return Err(TextureError::Shape(format!("{} texels for a {width}x{height} map", texels.len())));
        }
        let map = Self { width, height, texels, bounds };
        if !map.texels.iter().all(|t| bounds.contains(t)) {
            return Err(TextureError::InvalidBounds("texel outside channel bounds".into()));
        }
        Ok(map)
    }

    pub fn constant(width: usize, height: usize, value: [f64; PBR_CHANNELS], bounds: ChannelBounds) -> Result<Self, TextureError> {
        Self::new(width, height, vec![value; width * height], bounds)
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        bounds: ChannelBounds,
        f: impl Fn(f64, f64) -> [f64; PBR_CHANNELS],
    ) -> Result<Self, TextureError> {
        let mut texels = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                let [u, v] = UvPositionMap::texel_uv(width, height, i, j);
                texels.push(bounds.clamp(f(u, v)));
            }
        }
        Self::new(width, height, texels, bounds)
    }

    pub fn texel(&self, i: usize, j: usize) -> [f64; PBR_CHANNELS] {
        self.texels[i * self.width + j]
    }

    /// Nearest-texel lookup; `uv` is clamped to the unit square.
    pub fn sample(&self, uv: [f64; 2]) -> [f64; PBR_CHANNELS] {
        let u = if uv[0].is_finite() { uv[0].clamp(0.0, 1.0) } else { 0.0 };
        let v = if uv[1].is_finite() { uv[1].clamp(0.0, 1.0) } else { 0.0 };
        let j = ((u * self.width as f64) as usize).min(self.width - 1);
        let i = (((1.0 - v) * self.height as f64) as usize).min(self.height - 1);
        self.texel(i, j)
    }
}

/// Evaluates the texture at every covered texel and dilates the result into
/// uncovered texels.
pub fn bake_texture_map(tex: &NeuralTexture, uvpos: &UvPositionMap) -> Result<TextureMap, TextureError> {
    if uvpos.valid_count() == 0 {
        return Err(TextureError::EmptyCoverage);
    }
    let mut texels: Vec<[f64; PBR_CHANNELS]> = uvpos
        .positions
        .par_iter()
        .zip(&uvpos.valid)
        .map_init(Workspace::default, |ws, (&p, &ok)| if ok { tex.evaluate_into(p, ws).to_array() } else { [0.0; PBR_CHANNELS] })
        .collect();
    nearest_valid_fill(&mut texels, &uvpos.valid, uvpos.width, uvpos.height);
    TextureMap::new(uvpos.width, uvpos.height, texels, tex.config().bounds)
}

/// Lower envelope of parabolas (Felzenszwalb-Huttenlocher), returning for
/// each sample the index of the source minimizing `(q - p)^2 + f[p]`.
fn envelope_argmin(f: &[f64], out: &mut [usize]) {
    let n = f.len();
    let sources: Vec<usize> = (0..n).filter(|&q| f[q].is_finite()).collect();
    if sources.is_empty() {
        out.iter_mut().for_each(|o| *o = usize::MAX);
        return;
    }
    // v[k] owns the interval starting at z[k].
    let mut v: Vec<usize> = vec![sources[0]];
    let mut z: Vec<f64> = vec![f64::NEG_INFINITY];
    let intersect = |p: usize, q: usize| -> f64 {
        let (pf, qf) = (p as f64, q as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * (qf - pf))
    };
    for &q in &sources[1..] {
        let mut s = intersect(*v.last().unwrap(), q);
        while s <= *z.last().unwrap() {
            v.pop();
            z.pop();
            s = intersect(*v.last().unwrap(), q);
        }
        v.push(q);
        z.push(s);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < z.len() && z[k + 1] < q as f64 {
            k += 1;
        }
        *o = v[k];
    }
}

/// Replaces every invalid entry with the value of the Euclidean-nearest
/// valid entry (exact distance transform with feature propagation).
pub fn nearest_valid_fill<T: Copy>(values: &mut [T], valid: &[bool], width: usize, height: usize) {
    assert_eq!(values.len(), width * height);
    assert_eq!(valid.len(), width * height);
    if valid.iter().all(|v| *v) || !valid.iter().any(|v| *v) {
        return;
    }
    // Pass 1: nearest valid row per column.
    let mut col_src = vec![usize::MAX; width * height];
    let mut f = vec![0.0; height];
    let mut arg = vec![0usize; height];
    for j in 0..width {
        for i in 0..height {
            f[i] = if valid[i * width + j] { 0.0 } else { f64::INFINITY };
        }
        envelope_argmin(&f, &mut arg);
        for i in 0..height {
            col_src[i * width + j] = arg[i];
        }
    }
    // Pass 2: along each row, with squared column distances as offsets.
    let mut g = vec![0.0; width];
    let mut garg = vec![0usize; width];
    let src: Vec<T> = values.to_vec();
    for i in 0..height {
        for j in 0..width {
            let r = col_src[i * width + j];
            g[j] = if r == usize::MAX { f64::INFINITY } else { ((r as f64) - i as f64).powi(2) };
        }
        envelope_argmin(&g, &mut garg);
        for j in 0..width {
            if !valid[i * width + j] {
                let jj = garg[j];
                let ii = col_src[i * width + jj];
                values[i * width + j] = src[ii * width + jj];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::{unit_triangle, uv_cube};
    use crate::neural_texture::NeuralTextureConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_triangle_half_plane() {
        let m = rasterize_uv_positions(&unit_triangle(), 2, 2).unwrap();
        // Lower-left texel (row 1, col 0) covered, upper-right (row 0, col 1) not.
        assert!(m.valid[2]);
        assert!(!m.valid[1]);
        assert_eq!(m.overlaps, 0);
    }

    #[test]
    fn centroid_texel_maps_to_position_centroid() {
        let mut mesh = unit_triangle();
        mesh.positions = vec![Vec3::new(-0.3, 0.1, 0.2), Vec3::new(0.25, -0.2, 0.0), Vec3::new(0.05, 0.3, -0.35)];
        mesh.uvs = vec![[0.2, 0.3], [0.8, 0.3], [0.5, 0.9]];
        let c = (mesh.positions[0] + mesh.positions[1] + mesh.positions[2]) / 3.0;
        let map = rasterize_uv_positions(&mesh, 1, 1).unwrap();
        assert!(map.valid[0]);
        assert!((map.positions[0] - c).length() < 1e-12);
    }

    #[test]
    fn overlap_is_reported() {
        let mut mesh = unit_triangle();
        let n = mesh.positions.len() as u32;
        mesh.positions.extend(mesh.positions.clone());
        mesh.normals.extend(mesh.normals.clone());
        mesh.uvs.extend(mesh.uvs.clone());
        mesh.faces.push([n, n + 1, n + 2]);
        let m = rasterize_uv_positions(&mesh, 8, 8).unwrap();
        assert!(m.overlaps > 0);
    }

    #[test]
    fn shared_edges_are_not_overlaps() {
        let m = rasterize_uv_positions(&uv_cube(), 64, 64).unwrap();
        assert_eq!(m.overlaps, 0);
    }

    fn brute_nearest(valid: &[bool], w: usize, i: usize, j: usize) -> f64 {
        let mut best = f64::INFINITY;
        for (k, &ok) in valid.iter().enumerate() {
            if ok {
                let (ii, jj) = ((k / w) as f64, (k % w) as f64);
                best = best.min((ii - i as f64).powi(2) + (jj - j as f64).powi(2));
            }
        }
        best
    }

    #[test]
    fn fill_matches_brute_force_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..20 {
            let (w, h) = (rng.gen_range(1..24), rng.gen_range(1..24));
            let p = if trial % 2 == 0 { 0.05 } else { 0.5 };
            let valid: Vec<bool> = (0..w * h).map(|_| rng.gen_bool(p)).collect();
            if !valid.iter().any(|v| *v) {
                continue;
            }
            let mut idx: Vec<usize> = (0..w * h).collect();
            nearest_valid_fill(&mut idx, &valid, w, h);
            for k in 0..w * h {
                let src = idx[k];
                assert!(valid[src]);
                let (i, j) = (k / w, k % w);
                let d = ((src / w) as f64 - i as f64).powi(2) + ((src % w) as f64 - j as f64).powi(2);
                assert_eq!(d, brute_nearest(&valid, w, i, j), "trial {trial} texel {k}");
            }
        }
    }

    #[test]
    fn isolated_hole_takes_a_neighbor_value() {
        let (w, h) = (3, 3);
        let mut values: Vec<f64> = (0..9).map(|k| k as f64).collect();
        let mut valid = vec![true; 9];
        valid[4] = false;
        values[4] = -1.0;
        nearest_valid_fill(&mut values, &valid, w, h);
        assert!([1.0, 3.0, 5.0, 7.0].contains(&values[4]));
    }

    #[test]
    fn bake_equals_direct_evaluation() {
        let cfg = NeuralTextureConfig::default();
        let tex = NeuralTexture::new(cfg, 11).unwrap();
        let mut tex = tex;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in tex.params_mut() {
            *p = rng.gen_range(-0.5..0.5);
        }
        let uvpos = rasterize_uv_positions(&uv_cube(), 32, 32).unwrap();
        let baked = bake_texture_map(&tex, &uvpos).unwrap();
        for k in 0..uvpos.positions.len() {
            if uvpos.valid[k] {
                let direct = tex.evaluate(uvpos.positions[k]).to_array();
                assert_eq!(baked.texels[k], direct);
                let (i, j) = (k / 32, k % 32);
                assert_eq!(baked.sample(UvPositionMap::texel_uv(32, 32, i, j)), direct);
            }
        }
    }

    #[test]
    fn empty_coverage_is_an_error() {
        let uvpos = UvPositionMap { width: 2, height: 2, positions: vec![Vec3::ZERO; 4], valid: vec![false; 4], overlaps: 0 };
        let tex = NeuralTexture::zeros(NeuralTextureConfig::default()).unwrap();
        assert!(matches!(bake_texture_map(&tex, &uvpos), Err(TextureError::EmptyCoverage)));
    }
}
