//! Linear-space global views: the object composited into a crop of the
//! scene, and the adjoint that carries image-space gradients back to the
//! render frame.

use serde::{Deserialize, Serialize};

use super::{alpha_bounds, CompositeError, FrameTransform, Placement, ShadowMatte};
use crate::image::{GrayImage, RgbImage};

/// Pixel rectangle `[x0, x0 + width) × [y0, y0 + height)` of the scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Crop {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Crop {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, width, height }
    }

    /// Whether the continuous box `[x0, y0, x1, y1]` lies inside.
    pub fn contains(&self, b: [f64; 4]) -> bool {
        b[0] >= self.x0 as f64
            && b[1] >= self.y0 as f64
            && b[2] <= (self.x0 + self.width) as f64
            && b[3] <= (self.y0 + self.height) as f64
    }

    /// Integer crop covering `[x0, y0, x1, y1]`, clamped to the scene.
    fn covering(b: [f64; 4], sw: usize, sh: usize) -> Self {
        let x0 = b[0].floor().clamp(0.0, sw as f64 - 1.0) as usize;
        let y0 = b[1].floor().clamp(0.0, sh as f64 - 1.0) as usize;
        let x1 = (b[2].ceil().clamp(0.0, sw as f64) as usize).max(x0 + 1);
        let y1 = (b[3].ceil().clamp(0.0, sh as f64) as usize).max(y0 + 1);
        Self { x0, y0, width: x1 - x0, height: y1 - y0 }
    }
}

/// Scene-space bounding box of the object's silhouette.
pub fn object_scene_bounds(alpha: &GrayImage, place: &Placement) -> Result<[f64; 4], CompositeError> {
    let tf = FrameTransform::for_render(alpha, place)?;
    let [x0, y0, x1, y1] = alpha_bounds(alpha).ok_or(CompositeError::OutOfFrame)?;
    let a = tf.to_scene([x0 as f64, y0 as f64]);
    let b = tf.to_scene([x1 as f64, y1 as f64]);
    Ok([a[0], a[1], b[0], b[1]])
}

/// Square crop of side `scale · max(bbox side)` around the object box,
/// shifted by `offset ∈ [0,1]²` within the slack and kept inside the scene
/// where possible. The object box is always contained.
pub fn crop_around(bbox: [f64; 4], scale: f64, offset: [f64; 2], sw: usize, sh: usize) -> Crop {
    let bw = bbox[2] - bbox[0];
    let bh = bbox[3] - bbox[1];
    let side = scale.max(1.0) * bw.max(bh);
    let place = |lo: f64, hi: f64, t: f64, limit: f64| {
        let side = side.min(limit).max(hi - lo);
        let min_start = (hi - side).max(0.0);
        let max_start = lo.min(limit - side).max(min_start);
        let start = lerp(min_start, max_start, t);
        (start, start + side)
    };
    let (x0, x1) = place(bbox[0], bbox[2], offset[0], sw as f64);
    let (y0, y1) = place(bbox[1], bbox[3], offset[1], sh as f64);
    let c = Crop::covering([x0.min(bbox[0]), y0.min(bbox[1]), x1.max(bbox[2]), y1.max(bbox[3])], sw, sh);
    debug_assert!(c.contains(clamp_box(bbox, sw, sh)));
    c
}

/// Crop interpolated between the object box (`t = 0`) and the full scene
/// (`t = 1`).
pub fn interpolated_crop(bbox: [f64; 4], t: f64, sw: usize, sh: usize) -> Crop {
    let b = clamp_box(bbox, sw, sh);
    Crop::covering(
        [lerp(b[0], 0.0, t), lerp(b[1], 0.0, t), lerp(b[2], sw as f64, t), lerp(b[3], sh as f64, t)],
        sw,
        sh,
    )
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn clamp_box(b: [f64; 4], sw: usize, sh: usize) -> [f64; 4] {
    [
        b[0].clamp(0.0, sw as f64),
        b[1].clamp(0.0, sh as f64),
        b[2].clamp(0.0, sw as f64),
        b[3].clamp(0.0, sh as f64),
    ]
}

/// Bilinear taps at `(x, y)` with pixel centers at half-integers; taps
/// outside the image are dropped.
fn taps(w: usize, h: usize, x: f64, y: f64) -> impl Iterator<Item = (usize, usize, f64)> {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    [(0.0, 0.0, (1.0 - tx) * (1.0 - ty)), (1.0, 0.0, tx * (1.0 - ty)), (0.0, 1.0, (1.0 - tx) * ty), (1.0, 1.0, tx * ty)]
        .into_iter()
        .filter_map(move |(dx, dy, wgt)| {
            let (xi, yi) = (x0 + dx, y0 + dy);
            (wgt != 0.0 && xi >= 0.0 && yi >= 0.0 && xi < w as f64 && yi < h as f64).then_some((xi as usize, yi as usize, wgt))
        })
}

/// Object composited into a scene crop, in linear RGB.
#[derive(Clone, Debug)]
pub struct GlobalView {
    pub image: RgbImage,
    /// Resampled object coverage; the inpainting region.
    pub mask: GrayImage,
    pub crop: Crop,
    pub transform: FrameTransform,
    pub render_resolution: usize,
}

/// Same blend as [`super::composite`] (shadow layer, then premultiplied
/// object), evaluated on a linear scene over one crop.
pub fn global_view(
    scene_linear: &RgbImage,
    radiance: &RgbImage,
    alpha: &GrayImage,
    matte: Option<&ShadowMatte>,
    place: &Placement,
    crop: Crop,
) -> Result<GlobalView, CompositeError> {
    let (sw, sh) = scene_linear.dimensions();
    place.validate(sw, sh)?;
    if crop.width == 0 || crop.height == 0 || crop.x0 + crop.width > sw || crop.y0 + crop.height > sh {
        return Err(CompositeError::InvalidPlacement(format!("crop {crop:?} outside the {sw}x{sh} scene")));
    }
    let res = radiance.width();
    if !radiance.same_shape(alpha) || radiance.height() != res {
        return Err(CompositeError::Shape("render buffers must be square and equal in size".into()));
    }
    let tf = FrameTransform::for_render(alpha, place)?;
    let mut image = RgbImage::filled(crop.width, crop.height, [0.0; 3]);
    let mut mask = GrayImage::filled(crop.width, crop.height, 0.0);
    for y in 0..crop.height {
        for x in 0..crop.width {
            let (qx, qy) = (crop.x0 + x, crop.y0 + y);
            let [rx, ry] = tf.to_render([qx as f64 + 0.5, qy as f64 + 0.5]);
            let (mut obj, mut a, mut op) = ([0.0; 3], 0.0, 0.0);
            for (u, v, w) in taps(res, res, rx, ry) {
                let p = radiance.get(u, v);
                for c in 0..3 {
                    obj[c] += w * p[c];
                }
                a += w * alpha.get(u, v);
                if let Some(m) = matte {
                    op += w * m.opacity.get(u, v);
                }
            }
            let bg = scene_linear.get(qx, qy);
            image.set(x, y, [0, 1, 2].map(|c| obj[c] + (1.0 - a) * bg[c] * (1.0 - op)));
            mask.set(x, y, a);
        }
    }
    Ok(GlobalView { image, mask, crop, transform: tf, render_resolution: res })
}

/// Gradient with respect to the premultiplied render radiance, given the
/// gradient with respect to the global view image.
pub fn pull_back_gradient(view: &GlobalView, grad: &RgbImage) -> Result<RgbImage, CompositeError> {
    if !grad.same_shape(&view.image) {
        return Err(CompositeError::Shape("gradient does not match the global view".into()));
    }
    let res = view.render_resolution;
    let mut out = RgbImage::filled(res, res, [0.0; 3]);
    for y in 0..view.crop.height {
        for x in 0..view.crop.width {
            let g = grad.get(x, y);
            let q = [(view.crop.x0 + x) as f64 + 0.5, (view.crop.y0 + y) as f64 + 0.5];
            let [rx, ry] = view.transform.to_render(q);
            for (u, v, w) in taps(res, res, rx, ry) {
                let mut p = out.get(u, v);
                for c in 0..3 {
                    p[c] += w * g[c];
                }
                out.set(u, v, p);
            }
        }
    }
    Ok(out)
}
