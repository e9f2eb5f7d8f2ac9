use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::equirect::direction_to_bin;
use super::{EnvironmentMap, LightingError};
use crate::image::{GrayImage, RgbImage};
use crate::math::{intensity, Rgb, Vec3};

/// Pinhole model of the photograph the scene image came from. The camera
/// sits at the origin looking down `-Z` (tilted by `pitch_deg`, positive
/// upward); the environment map is expressed in this frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub vertical_fov_deg: f64,
    pub pitch_deg: f64,
}

impl Default for SceneCamera {
    fn default() -> Self {
        Self { vertical_fov_deg: 60.0, pitch_deg: 0.0 }
    }
}

impl SceneCamera {
    /// Lifts pixel center `(x, y)` of a `width x height` image with z-depth
    /// `depth` to a 3D point.
    pub fn unproject(&self, x: f64, y: f64, width: usize, height: usize, depth: f64) -> Vec3 {
        let tan = (0.5 * self.vertical_fov_deg.to_radians()).tan();
        let aspect = width as f64 / height as f64;
        let sx = (2.0 * x / width as f64 - 1.0) * tan * aspect;
        let sy = (1.0 - 2.0 * y / height as f64) * tan;
        let p = Vec3::new(sx * depth, sy * depth, -depth);
        let (s, c) = self.pitch_deg.to_radians().sin_cos();
        // Rotation about +X; positive pitch raises the forward axis.
        Vec3::new(p.x, c * p.y - s * p.z, s * p.y + c * p.z)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndoorOptions {
    pub camera: SceneCamera,
    pub env_height: usize,
    pub env_width: usize,
    /// Minimum bright-component size as a fraction of all bins.
    pub min_region_area: f64,
    /// Intensity at or above which a bin counts as bright when pruning.
    pub bright_threshold: f64,
    pub diffusion_iterations: usize,
}

impl Default for IndoorOptions {
    fn default() -> Self {
        Self {
            camera: SceneCamera::default(),
            env_height: super::DEFAULT_ENV_HEIGHT,
            env_width: super::DEFAULT_ENV_WIDTH,
            min_region_area: 0.001,
            bright_threshold: 0.8,
            diffusion_iterations: 64,
        }
    }
}

#[derive(Clone, Debug)]
pub struct IndoorLdr {
    pub env: EnvironmentMap,
    /// Distance from the anchor per bin; `+inf` where nothing was seen.
    pub depth: Vec<f64>,
    /// Bins that received at least one splat.
    pub written: Vec<bool>,
    /// Bins filled from their neighbors (holes and pruned bright spots).
    pub filled: Vec<bool>,
}

/// Running mean that stays bit-exact when every sample is equal.
#[derive(Clone, Copy, Default)]
struct Mean {
    n: u32,
    rgb: Rgb,
    depth: f64,
}

impl Mean {
    fn add(&mut self, c: Rgb, d: f64) {
        self.n += 1;
        let k = self.n as f64;
        for a in 0..3 {
            self.rgb[a] += (c[a] - self.rgb[a]) / k;
        }
        self.depth += (d - self.depth) / k;
    }
}

fn neighbors8(i: usize, j: usize, h: usize, w: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(move |di| (-1i64..=1).map(move |dj| (di, dj)))
        .filter(|&(di, dj)| di != 0 || dj != 0)
        .filter_map(move |(di, dj)| {
            let ii = i as i64 + di;
            if ii < 0 || ii >= h as i64 {
                return None;
            }
            let jj = (j as i64 + dj).rem_euclid(w as i64);
            Some((ii as usize, jj as usize))
        })
}

/// Morphological closing with a 3x3 element, wrapping in azimuth.
fn close(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let dilated: Vec<bool> =
        (0..h * w).map(|b| mask[b] || neighbors8(b / w, b % w, h, w).any(|(i, j)| mask[i * w + j])).collect();
    (0..h * w).map(|b| dilated[b] && neighbors8(b / w, b % w, h, w).all(|(i, j)| dilated[i * w + j])).collect()
}

/// Fills `todo` bins from known neighbors: breadth-first seeding with the
/// neighbor mean, then diffusion steps `v += mean(n - v)`. Constant
/// neighborhoods are reproduced exactly.
fn diffuse_fill(values: &mut [Mean], known: &[bool], todo: &[bool], h: usize, w: usize, iterations: usize) -> Vec<bool> {
    let mut have: Vec<bool> = known.to_vec();
    let mut queue: VecDeque<usize> = (0..h * w)
        .filter(|&b| todo[b] && !have[b] && neighbors8(b / w, b % w, h, w).any(|(i, j)| have[i * w + j]))
        .collect();
    let mut queued: Vec<bool> = vec![false; h * w];
    for &b in &queue {
        queued[b] = true;
    }
    while let Some(b) = queue.pop_front() {
        let mut m = Mean::default();
        for (i, j) in neighbors8(b / w, b % w, h, w) {
            let k = i * w + j;
            if have[k] {
                m.add(values[k].rgb, values[k].depth);
            }
        }
        values[b] = Mean { n: 1, ..m };
        have[b] = true;
        for (i, j) in neighbors8(b / w, b % w, h, w) {
            let k = i * w + j;
            if todo[k] && !have[k] && !queued[k] {
                queued[k] = true;
                queue.push_back(k);
            }
        }
    }
    let targets: Vec<usize> = (0..h * w).filter(|&b| todo[b] && have[b]).collect();
    for _ in 0..iterations {
        let next: Vec<(usize, Mean)> = targets
            .iter()
            .map(|&b| {
                let mut d = Mean::default();
                let v = values[b];
                for (i, j) in neighbors8(b / w, b % w, h, w) {
                    let k = i * w + j;
                    if have[k] {
                        let n = values[k];
                        d.add([n.rgb[0] - v.rgb[0], n.rgb[1] - v.rgb[1], n.rgb[2] - v.rgb[2]], n.depth - v.depth);
                    }
                }
                let rgb = [v.rgb[0] + d.rgb[0], v.rgb[1] + d.rgb[1], v.rgb[2] + d.rgb[2]];
                (b, Mean { n: 1, rgb, depth: v.depth + d.depth })
            })
            .collect();
        for (b, m) in next {
            values[b] = m;
        }
    }
    have
}

/// 8-connected components (wrapping in azimuth) of `mask`.
fn components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut k = 0;
        while k < comp.len() {
            let b = comp[k];
            k += 1;
            for (i, j) in neighbors8(b / w, b % w, h, w) {
                let n = i * w + j;
                if mask[n] && !seen[n] {
                    seen[n] = true;
                    comp.push(n);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Builds an LDR lat-long map by lifting every scene pixel with its depth,
/// re-centering on the lifted anchor pixel and splatting into the nearest
/// bin. Enclosed holes are diffused from their neighbors, small bright
/// specks are removed and refilled, and bins never seen take the scene's
/// mean linear color.
pub fn indoor_ldr(scene: &RgbImage, depth: &GrayImage, anchor: (usize, usize), opts: &IndoorOptions) -> Result<IndoorLdr, LightingError> {
    let (sw, sh) = scene.dimensions();
    if depth.dimensions() != (sw, sh) {
        return Err(LightingError::Shape("scene and depth differ in size".into()));
    }
    let (h, w) = (opts.env_height, opts.env_width);
    if h == 0 || w == 0 || sw == 0 || sh == 0 {
        return Err(LightingError::Shape("empty scene or map".into()));
    }
    let (ax, ay) = anchor;
    if ax >= sw || ay >= sh {
        return Err(LightingError::AnchorNotCovered);
    }
    let ad = depth.get(ax, ay);
    if !(ad.is_finite() && ad > 0.0) {
        return Err(LightingError::AnchorNotCovered);
    }
    let cam = &opts.camera;
    let origin = cam.unproject(ax as f64 + 0.5, ay as f64 + 0.5, sw, sh, ad);

    let linear = scene.to_linear();
    let mut scene_mean = Mean::default();
    let mut bins = vec![Mean::default(); h * w];
    for y in 0..sh {
        for x in 0..sw {
            let c = linear.get(x, y);
            scene_mean.add(c, 0.0);
            let d = depth.get(x, y);
            if !(d.is_finite() && d > 0.0) {
                continue;
            }
            let q = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, sw, sh, d) - origin;
            let len = q.length();
            if len == 0.0 {
                continue;
            }
            let (i, j) = direction_to_bin(q, h, w);
            bins[i * w + j].add(c, len);
        }
    }
    let written: Vec<bool> = bins.iter().map(|m| m.n > 0).collect();

    // Small bright specks are dropped before hole filling so they cannot
    // bleed into the holes around them.
    let min_area = ((opts.min_region_area * (h * w) as f64).ceil() as usize).max(1);
    let bright: Vec<bool> = (0..h * w).map(|b| written[b] && intensity(bins[b].rgb) >= opts.bright_threshold).collect();
    let mut pruned = vec![false; h * w];
    for comp in components(&bright, h, w) {
        if comp.len() < min_area {
            for b in comp {
                pruned[b] = true;
            }
        }
    }
    let known: Vec<bool> = (0..h * w).map(|b| written[b] && !pruned[b]).collect();
    let closed = close(&written, h, w);
    let todo: Vec<bool> = (0..h * w).map(|b| closed[b] && !known[b]).collect();
    let have = diffuse_fill(&mut bins, &known, &todo, h, w, opts.diffusion_iterations);

    let mut ldr = Vec::with_capacity(h * w);
    let mut env_depth = Vec::with_capacity(h * w);
    let mut filled = Vec::with_capacity(h * w);
    for b in 0..h * w {
        if have[b] {
            ldr.push(bins[b].rgb.map(|v| v.max(0.0)));
            env_depth.push(bins[b].depth);
        } else {
            ldr.push(scene_mean.rgb);
            env_depth.push(f64::INFINITY);
        }
        filled.push(todo[b] && have[b]);
    }
    let env = EnvironmentMap::from_ldr(w, h, ldr)?;
    Ok(IndoorLdr { env, depth: env_depth, written, filled })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lighting::equirect::{angles, bin_center};
    use crate::image::srgb_to_linear;
    use std::f64::consts::{PI, TAU};

    fn opts(h: usize, w: usize) -> IndoorOptions {
        IndoorOptions { env_height: h, env_width: w, ..Default::default() }
    }

    #[test]
    fn constant_scene_gives_constant_map() {
        let c = [0.3, 0.55, 0.8];
        let scene = RgbImage::filled(48, 32, c);
        let depth = GrayImage::from_fn(48, 32, |x, y| 1.0 + 0.05 * x as f64 + 0.02 * y as f64);
        let out = indoor_ldr(&scene, &depth, (24, 16), &opts(64, 128)).unwrap();
        let lin = c.map(srgb_to_linear);
        assert!(out.env.ldr.iter().all(|v| *v == lin));
        assert!(out.written.iter().any(|w| *w) && out.written.iter().any(|w| !*w));
    }

    #[test]
    fn unseen_bins_equal_scene_mean() {
        let scene = RgbImage::from_fn(16, 16, |x, _| if x < 8 { [0.2; 3] } else { [0.6; 3] });
        let depth = GrayImage::filled(16, 16, 2.0);
        let out = indoor_ldr(&scene, &depth, (8, 8), &opts(32, 64)).unwrap();
        let mean = scene.to_linear().mean();
        for b in 0..out.env.ldr.len() {
            if out.depth[b].is_infinite() {
                for a in 0..3 {
                    assert!((out.env.ldr[b][a] - mean[a]).abs() < 1e-15);
                }
            }
        }
    }

    /// Closed-form oracle: each splatted pixel's direction from the anchor
    /// lands in the bin whose center is within one bin of it.
    #[test]
    fn splat_directions_round_trip() {
        let (sw, sh) = (33, 33);
        let depth = GrayImage::from_fn(sw, sh, |x, y| if (x, y) == (16, 16) { 1.0 } else { 3.0 });
        let scene = RgbImage::filled(sw, sh, [0.5; 3]);
        let (h, w) = (64, 128);
        let o = opts(h, w);
        let out = indoor_ldr(&scene, &depth, (16, 16), &o).unwrap();
        let cam = o.camera;
        let origin = cam.unproject(16.5, 16.5, sw, sh, 1.0);
        let bin_w = PI / h as f64;
        for y in 0..sh {
            for x in 0..sw {
                if (x, y) == (16, 16) {
                    continue;
                }
                let q = cam.unproject(x as f64 + 0.5, y as f64 + 0.5, sw, sh, 3.0) - origin;
                let (i, j) = direction_to_bin(q, h, w);
                assert!(out.written[i * w + j]);
                let c = bin_center(i, j, h, w);
                let ang = q.normalized().dot(c).clamp(-1.0, 1.0).acos();
                assert!(ang < bin_w, "angle {ang}");
            }
        }
        // The pixel right behind the anchor maps to azimuth 0 near the horizon.
        let q = cam.unproject(16.5, 16.5, sw, sh, 3.0) - origin;
        let (el, az) = angles(q);
        assert!(el.abs() < 1e-12 && (az.min(TAU - az)) < 1e-12);
    }

    #[test]
    fn isolated_bright_speck_is_removed() {
        // Dim scene with one bright pixel; a single-bin component under a
        // min-area of 4 bins gets refilled from its neighbors.
        let (sw, sh) = (16, 16);
        let scene = RgbImage::from_fn(sw, sh, |x, y| if (x, y) == (12, 5) { [1.0; 3] } else { [0.2; 3] });
        let depth = GrayImage::from_fn(sw, sh, |x, y| if (x, y) == (8, 8) { 1.0 } else { 2.0 });
        let (h, w) = (64, 128);
        let o = IndoorOptions { min_region_area: 4.0 / (h * w) as f64, ..opts(h, w) };
        let out = indoor_ldr(&scene, &depth, (8, 8), &o).unwrap();
        for v in &out.env.ldr {
            assert!(intensity(*v) < 0.8, "{v:?}");
        }
        assert!((0..h * w).any(|b| out.written[b] && out.filled[b]));
        // Without pruning the speck survives.
        let keep = IndoorOptions { min_region_area: 0.0, ..o };
        let out = indoor_ldr(&scene, &depth, (8, 8), &keep).unwrap();
        assert!(out.env.ldr.iter().any(|v| intensity(*v) >= 0.8));
    }

    #[test]
    fn anchor_without_depth_is_an_error() {
        let scene = RgbImage::filled(4, 4, [0.5; 3]);
        let mut depth = GrayImage::filled(4, 4, 1.0);
        depth.set(1, 1, f64::NAN);
        let e = indoor_ldr(&scene, &depth, (1, 1), &opts(8, 16)).unwrap_err();
        assert_eq!(e.to_string(), "anchor not covered by depth");
        assert!(indoor_ldr(&scene, &depth, (9, 1), &opts(8, 16)).is_err());
    }
}
