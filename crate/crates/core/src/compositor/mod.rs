//! Shadow mattes from the floor pass, and alpha compositing of the object
//! render into the scene image.

use serde::{Deserialize, Serialize};

use crate::image::{linear_to_srgb, srgb_to_linear, GrayImage, RgbImage};
use crate::math::{intensity, Rgb};
use crate::renderer::RenderOutput;

mod view;

pub use view::{crop_around, global_view, interpolated_crop, object_scene_bounds, pull_back_gradient, Crop, GlobalView};

/// Fraction of the maximum floor intensity separating shadowed from lit
/// floor pixels.
pub const DEFAULT_SHADOW_THRESHOLD: f64 = 0.8;

#[derive(Debug, thiserror::Error)]
pub enum CompositeError {
    #[error("no lit reference region")]
    NoLitRegion,
    #[error("object out of frame")]
    OutOfFrame,
    #[error("invalid placement: {0}")]
    InvalidPlacement(String),
    #[error("dimension mismatch: {0}")]
    Shape(String),
}

/// Where the object goes in the scene image: `position` is the pixel where
/// the bottom center of the object's silhouette lands, `size` the height of
/// the silhouette in scene pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub position: [f64; 2],
    pub size: f64,
    /// Elevation of the render view, degrees.
    pub elevation: f64,
}

impl Placement {
    pub fn validate(&self, width: usize, height: usize) -> Result<(), CompositeError> {
        let [x, y] = self.position;
        if !(self.size > 0.0) || !self.size.is_finite() {
            return Err(CompositeError::InvalidPlacement("size must be positive".into()));
        }
        if !(0.0..width as f64).contains(&x) || !(0.0..height as f64).contains(&y) {
            return Err(CompositeError::InvalidPlacement(format!("position ({x}, {y}) outside the {width}x{height} scene")));
        }
        Ok(())
    }
}

/// Per-pixel opacity of a black shadow layer, in render-frame coordinates.
/// Values are rounded to `f32` precision, the precision mattes are stored
/// at.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowMatte {
    pub opacity: GrayImage,
}

/// Splits floor pixels at `threshold * max` intensity into shadowed and lit
/// regions and turns each shadowed pixel's intensity, relative to the mean
/// lit intensity, into black-layer opacity `1 - I / mean_lit`.
///
/// Pixels with zero `floor_alpha` (the floor is not visible there) get zero
/// opacity and are excluded from the statistics.
pub fn extract_shadow_matte(
    floor: &RgbImage,
    floor_alpha: Option<&GrayImage>,
    threshold: f64,
) -> Result<ShadowMatte, CompositeError> {
    if let Some(a) = floor_alpha {
        if !a.same_shape(floor) {
            return Err(CompositeError::Shape("floor alpha does not match the floor pass".into()));
        }
    }
    let visible = |i: usize| floor_alpha.map_or(true, |a| a.pixels()[i] > 0.0);
    let values: Vec<f64> = floor.pixels().iter().map(|&p| intensity(p)).collect();
    let max = (0..values.len()).filter(|&i| visible(i)).map(|i| values[i]).fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(CompositeError::NoLitRegion);
    }
    let cut = threshold * max;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, &v) in values.iter().enumerate() {
        if visible(i) && v >= cut {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CompositeError::NoLitRegion);
    }
    let lit_mean = sum / n as f64;
    // norm([1, 1, 1]) / lit_mean rescales lit floor to the norm of white;
    // opacity is one minus the rescaled intensity relative to white.
    let white = 3f64.sqrt();
    let scale = white / lit_mean;
    let opacity = values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !visible(i) || v >= cut {
                return 0.0;
            }
            (1.0 - scale * v / white).clamp(0.0, 1.0) as f32 as f64
        })
        .collect();
    Ok(ShadowMatte { opacity: GrayImage::from_pixels(floor.width(), floor.height(), opacity) })
}

/// Screen-space bounding box `[x0, y0, x1, y1)` of pixels with nonzero alpha.
pub fn alpha_bounds(alpha: &GrayImage) -> Option<[usize; 4]> {
    let mut b: Option<[usize; 4]> = None;
    for y in 0..alpha.height() {
        for x in 0..alpha.width() {
            if alpha.get(x, y) > 0.0 {
                let e = b.get_or_insert([x, y, x + 1, y + 1]);
                e[0] = e[0].min(x);
                e[1] = e[1].min(y);
                e[2] = e[2].max(x + 1);
                e[3] = e[3].max(y + 1);
            }
        }
    }
    b
}

/// Similarity transform from render-frame to scene coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    pub scale: f64,
    /// Render-frame point mapped onto `Placement::position`.
    pub anchor: [f64; 2],
    pub position: [f64; 2],
}

impl FrameTransform {
    pub fn for_render(alpha: &GrayImage, place: &Placement) -> Result<Self, CompositeError> {
        let [x0, y0, x1, y1] = alpha_bounds(alpha).ok_or(CompositeError::OutOfFrame)?;
        let anchor = [(x0 + x1) as f64 / 2.0, y1 as f64];
        Ok(Self { scale: place.size / (y1 - y0) as f64, anchor, position: place.position })
    }

    pub fn to_scene(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.position[0] + self.scale * (p[0] - self.anchor[0]),
            self.position[1] + self.scale * (p[1] - self.anchor[1]),
        ]
    }

    pub fn to_render(&self, q: [f64; 2]) -> [f64; 2] {
        [
            self.anchor[0] + (q[0] - self.position[0]) / self.scale,
            self.anchor[1] + (q[1] - self.position[1]) / self.scale,
        ]
    }
}

/// Bilinear lookup at continuous coordinate `(x, y)` (pixel centers at
/// half-integers); zero outside the image.
fn bilinear<const N: usize>(w: usize, h: usize, get: impl Fn(usize, usize) -> [f64; N], x: f64, y: f64) -> [f64; N] {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let mut out = [0.0; N];
    for (dy, wy) in [(0.0, 1.0 - ty), (1.0, ty)] {
        for (dx, wx) in [(0.0, 1.0 - tx), (1.0, tx)] {
            let (xi, yi) = (x0 + dx, y0 + dy);
            let wgt = wx * wy;
            if wgt == 0.0 || xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
                continue;
            }
            let v = get(xi as usize, yi as usize);
            for k in 0..N {
                out[k] += wgt * v[k];
            }
        }
    }
    out
}

/// Composites the object render and its shadow into an sRGB scene image.
///
/// The shadow is applied first as a black layer with the matte's opacity,
/// then the premultiplied object radiance is blended over it, all in linear
/// RGB. Pixels outside the transformed render frame are copied unchanged.
pub fn composite(
    scene: &RgbImage,
    obj: &RenderOutput,
    matte: Option<&ShadowMatte>,
    place: &Placement,
) -> Result<RgbImage, CompositeError> {
    let (sw, sh) = scene.dimensions();
    place.validate(sw, sh)?;
    let res = obj.resolution();
    if let Some(m) = matte {
        if m.opacity.width() != res || m.opacity.height() != res {
            return Err(CompositeError::Shape("matte does not match the render".into()));
        }
    }
    let tf = FrameTransform::for_render(&obj.alpha, place)?;
    let [ox0, oy0, ox1, oy1] = alpha_bounds(&obj.alpha).expect("checked above");
    let a = tf.to_scene([ox0 as f64, oy0 as f64]);
    let b = tf.to_scene([ox1 as f64, oy1 as f64]);
    if b[0] <= 0.0 || b[1] <= 0.0 || a[0] >= sw as f64 || a[1] >= sh as f64 {
        return Err(CompositeError::OutOfFrame);
    }

    let lo = tf.to_scene([0.0, 0.0]);
    let hi = tf.to_scene([res as f64, res as f64]);
    let xs = (lo[0].floor().max(0.0) as usize)..(hi[0].ceil().min(sw as f64).max(0.0) as usize);
    let ys = (lo[1].floor().max(0.0) as usize)..(hi[1].ceil().min(sh as f64).max(0.0) as usize);

    let rad = |x: usize, y: usize| -> [f64; 4] {
        let p = obj.radiance.get(x, y);
        [p[0], p[1], p[2], obj.alpha.get(x, y)]
    };
    let mut out = scene.clone();
    for y in ys {
        for x in xs.clone() {
            let [rx, ry] = tf.to_render([x as f64 + 0.5, y as f64 + 0.5]);
            let [r, g, bl, alpha] = bilinear(res, res, rad, rx, ry);
            let op = matte.map_or(0.0, |m| bilinear(res, res, |u, v| [m.opacity.get(u, v)], rx, ry)[0]);
            if alpha <= 0.0 && op <= 0.0 {
                continue;
            }
            let bg: Rgb = scene.get(x, y).map(srgb_to_linear);
            let obj_rgb = [r, g, bl];
            let mut v = [0.0; 3];
            for c in 0..3 {
                let shadowed = bg[c] * (1.0 - op);
                v[c] = obj_rgb[c] + (1.0 - alpha) * shadowed;
            }
            out.set(x, y, v.map(linear_to_srgb));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Image;

    fn floor_with(values: &[f64]) -> RgbImage {
        // Gray pixels with L2 intensity equal to the given values.
        let k = 1.0 / 3f64.sqrt();
        RgbImage::from_fn(values.len(), 1, |x, _| [values[x] * k; 3])
    }

    #[test]
    fn matte_opacity_law() {
        // Lit region {1.0, 0.9, 0.95} has mean 0.95.
        let floor = floor_with(&[1.0, 0.9, 0.95, 0.475, 0.0, 0.95 * 0.3]);
        let m = extract_shadow_matte(&floor, None, 0.8).unwrap();
        let o = m.opacity.pixels();
        assert_eq!(&o[..3], &[0.0, 0.0, 0.0]);
        assert!((o[3] - 0.5).abs() < 1e-6);
        assert_eq!(o[4], 1.0);
        assert!((o[5] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn matte_is_scale_invariant() {
        let floor = floor_with(&[1.0, 0.93, 0.81, 0.5, 0.31, 0.02, 0.0, 0.77]);
        let base = extract_shadow_matte(&floor, None, 0.8).unwrap();
        for s in [0.5, 2.0, 1024.0, 3.7, 0.013, 17.0] {
            let m = extract_shadow_matte(&floor.scaled(s), None, 0.8).unwrap();
            assert_eq!(m, base, "s = {s}");
        }
    }

    #[test]
    fn black_floor_has_no_lit_region() {
        let floor = floor_with(&[0.0, 0.0]);
        assert_eq!(extract_shadow_matte(&floor, None, 0.8).unwrap_err().to_string(), "no lit reference region");
    }

    #[test]
    fn invisible_floor_pixels_are_ignored() {
        let floor = floor_with(&[1.0, 50.0, 0.5]);
        let alpha = GrayImage::from_pixels(3, 1, vec![1.0, 0.0, 1.0]);
        let m = extract_shadow_matte(&floor, Some(&alpha), 0.8).unwrap();
        assert_eq!(m.opacity.pixels(), &[0.0, 0.0, 0.5]);
    }

    fn render_of(res: usize, alpha: f64, rgb: Rgb) -> RenderOutput {
        RenderOutput {
            radiance: RgbImage::filled(res, res, rgb.map(|c| c * alpha)),
            alpha: GrayImage::filled(res, res, alpha),
            normal_buffer: Image::filled(res, res, [0.0; 3]),
            view_dot_normal: GrayImage::filled(res, res, 0.0),
            floor_radiance: None,
            floor_alpha: None,
        }
    }

    fn scene(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [(x % 7) as f64 / 7.0, (y % 5) as f64 / 5.0, 0.25])
    }

    #[test]
    fn opaque_object_replaces_pixels() {
        let s = scene(20, 16);
        let mut obj = render_of(8, 1.0, [0.3, 0.6, 0.9]);
        // Make the silhouette a sub-rectangle so that the anchor is well defined.
        for y in 0..8 {
            for x in 0..8 {
                if !(2..6).contains(&x) || !(1..7).contains(&y) {
                    obj.alpha.set(x, y, 0.0);
                    obj.radiance.set(x, y, [0.0; 3]);
                }
            }
        }
        let place = Placement { position: [10.0, 12.0], size: 6.0, elevation: 0.0 };
        let out = composite(&s, &obj, None, &place).unwrap();
        // Silhouette [2,6)x[1,7) maps to [8,12)x[6,12) at scale 1.
        for y in 0..16 {
            for x in 0..20 {
                if (8..12).contains(&x) && (6..12).contains(&y) {
                    assert_eq!(out.get(x, y), [0.3, 0.6, 0.9].map(linear_to_srgb));
                } else {
                    assert_eq!(out.get(x, y), s.get(x, y));
                }
            }
        }
    }

    #[test]
    fn transparent_layer_is_identity() {
        let s = scene(12, 9);
        let mut obj = render_of(6, 0.0, [1.0; 3]);
        obj.alpha.set(3, 3, 1e-300);
        let matte = ShadowMatte { opacity: GrayImage::filled(6, 6, 0.0) };
        let place = Placement { position: [6.0, 6.0], size: 3.0, elevation: 0.0 };
        let out = composite(&s, &obj, Some(&matte), &place).unwrap();
        for (a, b) in out.pixels().iter().zip(s.pixels()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn half_opacity_shadow_halves_linear_value() {
        let s = scene(10, 10);
        let mut obj = render_of(10, 0.0, [0.0; 3]);
        obj.alpha.set(9, 9, 1.0);
        let matte = ShadowMatte { opacity: GrayImage::filled(10, 10, 0.5) };
        let place = Placement { position: [9.5, 9.999], size: 1.0, elevation: 0.0 };
        let out = composite(&s, &obj, Some(&matte), &place).unwrap();
        for (x, y) in [(2, 3), (5, 1), (0, 8)] {
            for c in 0..3 {
                let want = 0.5 * srgb_to_linear(s.get(x, y)[c]);
                assert!((srgb_to_linear(out.get(x, y)[c]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn object_outside_the_frame_is_an_error() {
        let s = scene(10, 10);
        let obj = render_of(10, 1.0, [1.0; 3]);
        let place = Placement { position: [0.0, 0.0], size: 10.0, elevation: 0.0 };
        assert_eq!(composite(&s, &obj, None, &place).unwrap_err().to_string(), "object out of frame");
        let empty = render_of(10, 0.0, [1.0; 3]);
        let place = Placement { position: [5.0, 5.0], size: 10.0, elevation: 0.0 };
        assert!(matches!(composite(&s, &empty, None, &place), Err(CompositeError::OutOfFrame)));
    }
}
