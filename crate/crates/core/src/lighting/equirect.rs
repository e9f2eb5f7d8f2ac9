//! Lat-long mapping. Row 0 is the zenith, column 0 is azimuth 0, which
//! points along `-Z`; azimuth grows toward `+X`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::math::Vec3;

/// Unit direction for elevation/azimuth in radians.
pub fn direction(elevation: f64, azimuth: f64) -> Vec3 {
    let (se, ce) = elevation.sin_cos();
    let (sa, ca) = azimuth.sin_cos();
    Vec3::new(ce * sa, se, -ce * ca)
}

/// `(elevation, azimuth)` with azimuth wrapped into `[0, 2π)`.
pub fn angles(d: Vec3) -> (f64, f64) {
    let d = d.normalized();
    let el = d.y.clamp(-1.0, 1.0).asin();
    let mut az = d.x.atan2(-d.z);
    if az < 0.0 {
        az += TAU;
    }
    if az >= TAU {
        az -= TAU;
    }
    (el, az)
}

/// Continuous `(row, column)` coordinates in units of bins.
pub fn direction_to_pixel(d: Vec3, height: usize, width: usize) -> (f64, f64) {
    let (el, az) = angles(d);
    ((FRAC_PI_2 - el) / PI * height as f64, az / TAU * width as f64)
}

pub fn direction_to_bin(d: Vec3, height: usize, width: usize) -> (usize, usize) {
    let (r, c) = direction_to_pixel(d, height, width);
    let i = (r.floor().max(0.0) as usize).min(height - 1);
    let j = (c.floor().max(0.0) as usize) % width;
    (i, j)
}

pub fn bin_center(i: usize, j: usize, height: usize, width: usize) -> Vec3 {
    let el = FRAC_PI_2 - (i as f64 + 0.5) / height as f64 * PI;
    let az = (j as f64 + 0.5) / width as f64 * TAU;
    direction(el, az)
}

/// `sin(elevation)` at the top and bottom edge of row `i`.
pub fn row_sin_bounds(i: usize, height: usize) -> (f64, f64) {
    let top = FRAC_PI_2 - i as f64 / height as f64 * PI;
    let bottom = FRAC_PI_2 - (i + 1) as f64 / height as f64 * PI;
    (top.sin(), bottom.sin())
}

/// Solid angle of any bin in row `i`.
pub fn bin_solid_angle(i: usize, height: usize, width: usize) -> f64 {
    let (top, bottom) = row_sin_bounds(i, height);
    TAU / width as f64 * (top - bottom)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axes() {
        assert!((direction(0.0, 0.0) - Vec3::new(0.0, 0.0, -1.0)).length() < 1e-15);
        assert!((direction(0.0, FRAC_PI_2) - Vec3::new(1.0, 0.0, 0.0)).length() < 1e-15);
        assert!((direction(FRAC_PI_2, 1.0) - Vec3::new(0.0, 1.0, 0.0)).length() < 1e-15);
    }

    #[test]
    fn solid_angles_cover_the_sphere() {
        let (h, w) = (64, 128);
        let total: f64 = (0..h).map(|i| bin_solid_angle(i, h, w) * w as f64).sum();
        assert!((total - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn angles_invert_direction() {
        for k in 0..50 {
            let el = -1.4 + 0.056 * k as f64;
            let az = 0.12 * k as f64;
            let (e2, a2) = angles(direction(el, az));
            assert!((e2 - el).abs() < 1e-12 && (a2 - az).abs() < 1e-12);
        }
    }
}
