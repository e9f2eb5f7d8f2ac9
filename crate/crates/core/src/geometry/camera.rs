//! Orbit camera around the normalized object.
//!
//! Conventions: right-handed, `+Y` up. A camera at azimuth 0 and elevation 0
//! sits on `+Z` and looks toward `-Z`; azimuth rotates counter-clockwise
//! seen from above (toward `+X`), positive elevation looks down on the object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::Vec3;

use super::mesh::NORMALIZED_RADIUS;
use super::GeometryError;

pub const DEFAULT_CAMERA_DISTANCE: f64 = 2.0;
/// FOV multiplier range for texture adaptation views.
pub const DEFAULT_FOV_MULTIPLIER_RANGE: (f64, f64) = (1.0, 1.21);

/// How the FOV multiplier is turned into an angle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FovForm {
    /// Full field of view `2 atan(r * lambda / d)`: the object's bounding
    /// sphere, scaled by lambda, exactly fills the frame.
    #[default]
    HalfAngle,
    /// `tanh(r * lambda / d)` taken literally as the full field of view.
    PaperLiteral,
}

impl std::str::FromStr for FovForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "half-angle" | "atan" => Ok(FovForm::HalfAngle),
            "paper-literal" => Ok(FovForm::PaperLiteral),
            other => Err(format!("unknown fov form `{other}` (expected half-angle or paper-literal)")),
        }
    }
}

/// Full field of view in radians for FOV multiplier `lambda`, bounding radius
/// `r` and camera distance `d`.
pub fn fov_from_multiplier(lambda: f64, r: f64, d: f64, form: FovForm) -> f64 {
    let x = r * lambda / d;
    match form {
        FovForm::HalfAngle => 2.0 * x.atan(),
        FovForm::PaperLiteral => x.tanh(),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    /// Degrees in `[0, 360)`.
    pub azimuth: f64,
    /// Degrees.
    pub elevation: f64,
    pub distance: f64,
    pub fov_multiplier: f64,
    pub look_at: Vec3,
    #[serde(default)]
    pub fov_form: FovForm,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            azimuth: 0.0,
            elevation: 0.0,
            distance: DEFAULT_CAMERA_DISTANCE,
            fov_multiplier: 1.0,
            look_at: Vec3::ZERO,
            fov_form: FovForm::HalfAngle,
        }
    }
}

impl Camera {
    pub fn orbit(azimuth: f64, elevation: f64, fov_multiplier: f64) -> Self {
        Self { azimuth: azimuth.rem_euclid(360.0), elevation, fov_multiplier, ..Self::default() }
    }

    /// Full vertical (and horizontal; frames are square) field of view.
    pub fn fov(&self) -> f64 {
        fov_from_multiplier(self.fov_multiplier, NORMALIZED_RADIUS, self.distance, self.fov_form)
    }

    pub fn position(&self) -> Vec3 {
        let (a, e) = (self.azimuth.to_radians(), self.elevation.to_radians());
        self.look_at + Vec3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos()) * self.distance
    }

    /// `(right, up, forward)` unit vectors.
    pub fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.position()).normalized();
        let a = self.azimuth.to_radians();
        let right = Vec3::new(a.cos(), 0.0, -a.sin());
        let up = right.cross(forward);
        (right, up, forward)
    }

    /// Primary ray through continuous pixel coordinate `(px, py)` of a
    /// `resolution x resolution` frame; `py` grows downward.
    pub fn generate_ray(&self, px: f64, py: f64, resolution: usize) -> Ray {
        let (right, up, forward) = self.basis();
        let tan = (0.5 * self.fov()).tan();
        let r = resolution as f64;
        let sx = (2.0 * px / r - 1.0) * tan;
        let sy = (1.0 - 2.0 * py / r) * tan;
        Ray { origin: self.position(), dir: (forward + right * sx + up * sy).normalized() }
    }

    /// Continuous pixel coordinate of a world point, or `None` behind the camera.
    pub fn project(&self, p: Vec3, resolution: usize) -> Option<(f64, f64)> {
        let (right, up, forward) = self.basis();
        let v = p - self.position();
        let z = v.dot(forward);
        if z <= 0.0 {
            return None;
        }
        let tan = (0.5 * self.fov()).tan();
        let x = v.dot(right) / (z * tan);
        let y = v.dot(up) / (z * tan);
        let r = resolution as f64;
        Some(((x + 1.0) * 0.5 * r, (1.0 - y) * 0.5 * r))
    }

    /// Camera-to-world matrix, row-major, OpenGL-style axes (camera looks
    /// down its local `-Z`).
    pub fn extrinsic(&self) -> [f64; 16] {
        let (r, u, f) = self.basis();
        let p = self.position();
        [r.x, u.x, -f.x, p.x, r.y, u.y, -f.y, p.y, r.z, u.z, -f.z, p.z, 0.0, 0.0, 0.0, 1.0]
    }
}

/// Multi-view camera sampling around the object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSampling {
    pub count: usize,
    /// Degrees; one is drawn uniformly per view.
    pub elevations: Vec<f64>,
    pub fov_multiplier_range: (f64, f64),
    pub distance: f64,
    pub seed: u64,
    /// Half-width of the uniform azimuth jitter, degrees.
    pub azimuth_jitter: f64,
    /// Half-width of the uniform elevation jitter, degrees.
    pub elevation_jitter: f64,
    pub fov_form: FovForm,
}

impl Default for CameraSampling {
    fn default() -> Self {
        Self {
            count: 24,
            elevations: vec![30.0],
            fov_multiplier_range: DEFAULT_FOV_MULTIPLIER_RANGE,
            distance: DEFAULT_CAMERA_DISTANCE,
            seed: 0,
            azimuth_jitter: 2.5,
            elevation_jitter: 0.0,
            fov_form: FovForm::HalfAngle,
        }
    }
}

impl CameraSampling {
    /// Azimuths evenly spaced over `[0, 360)` with seeded uniform jitter.
    pub fn sample(&self) -> Result<Vec<Camera>, GeometryError> {
        if self.elevations.is_empty() {
            return Err(GeometryError::NoElevations);
        }
        if self.count == 0 {
            return Err(GeometryError::InvalidSampling("camera count must be at least 1".into()));
        }
        let (lo, hi) = self.fov_multiplier_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(GeometryError::InvalidSampling(format!("bad FOV multiplier range [{lo}, {hi}]")));
        }
        if self.distance <= NORMALIZED_RADIUS {
            return Err(GeometryError::InvalidSampling("camera inside the bounding sphere".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let step = 360.0 / self.count as f64;
        let cams = (0..self.count)
            .map(|i| {
                let jitter = if self.azimuth_jitter > 0.0 {
                    rng.gen_range(-self.azimuth_jitter..=self.azimuth_jitter)
                } else {
                    0.0
                };
                let mut elevation = self.elevations[rng.gen_range(0..self.elevations.len())];
                if self.elevation_jitter > 0.0 {
                    elevation += rng.gen_range(-self.elevation_jitter..=self.elevation_jitter);
                }
                let fov_multiplier = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                Camera {
                    azimuth: (i as f64 * step + jitter).rem_euclid(360.0),
                    elevation,
                    distance: self.distance,
                    fov_multiplier,
                    look_at: Vec3::ZERO,
                    fov_form: self.fov_form,
                }
            })
            .collect();
        Ok(cams)
    }
}

/// Convenience wrapper around [`CameraSampling::sample`] with default jitter.
pub fn sample_cameras(
    count: usize,
    elevations: &[f64],
    fov_multiplier_range: (f64, f64),
    seed: u64,
) -> Result<Vec<Camera>, GeometryError> {
    CameraSampling {
        count,
        elevations: elevations.to_vec(),
        fov_multiplier_range,
        seed,
        ..CameraSampling::default()
    }
    .sample()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fov_examples() {
        let f = |l| fov_from_multiplier(l, 0.5, 2.0, FovForm::HalfAngle);
        assert!((f(1.0) - 0.489957).abs() < 1e-6);
        assert_eq!(f(0.0), 0.0);
        assert!((f(1.65) - 2.0 * 0.4125f64.atan()).abs() < 1e-15);
        assert!((f(1.65) - 0.782471).abs() < 1e-6);
        assert!((fov_from_multiplier(1.0, 0.5, 2.0, FovForm::PaperLiteral) - 0.25f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn fov_is_monotone_and_bounded() {
        let mut prev = -1.0;
        for i in 0..2000 {
            let l = i as f64 * 0.05;
            let f = fov_from_multiplier(l, 0.5, 2.0, FovForm::HalfAngle);
            assert!(f > prev && f < std::f64::consts::PI);
            prev = f;
        }
    }

    #[test]
    fn evenly_spaced_without_jitter() {
        let cams = CameraSampling {
            count: 4,
            elevations: vec![30.0],
            fov_multiplier_range: (1.0, 1.0),
            azimuth_jitter: 0.0,
            seed: 7,
            ..Default::default()
        }
        .sample()
        .unwrap();
        let az: Vec<f64> = cams.iter().map(|c| c.azimuth).collect();
        assert_eq!(az, vec![0.0, 90.0, 180.0, 270.0]);
        assert!(cams.iter().all(|c| c.elevation == 30.0 && c.fov_multiplier == 1.0));
    }

    #[test]
    fn sampling_is_deterministic_and_in_range() {
        let a = sample_cameras(24, &[20.0, 30.0, 45.0], (1.0, 1.21), 3).unwrap();
        let b = sample_cameras(24, &[20.0, 30.0, 45.0], (1.0, 1.21), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| (1.0..=1.21).contains(&c.fov_multiplier)));
        assert!(a.iter().all(|c| (0.0..360.0).contains(&c.azimuth)));
        assert_eq!(sample_cameras(4, &[], (1.0, 1.0), 0).unwrap_err().to_string(), "no elevations");
    }

    #[test]
    fn azimuth_histogram_is_uniform() {
        let n = 10_000;
        let cams = sample_cameras(n, &[30.0], (1.0, 1.21), 11).unwrap();
        let bins = 36;
        let mut hist = vec![0usize; bins];
        for c in &cams {
            hist[((c.azimuth / 360.0) * bins as f64) as usize % bins] += 1;
        }
        let p = 1.0 / bins as f64;
        let mean = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for h in hist {
            assert!((h as f64 - mean).abs() <= 3.0 * sigma, "{h} vs {mean}");
        }
    }

    #[test]
    fn default_camera_looks_down_negative_z() {
        let c = Camera::default();
        let (r, u, f) = c.basis();
        assert!((f - Vec3::new(0.0, 0.0, -1.0)).length() < 1e-12);
        assert!((r - Vec3::new(1.0, 0.0, 0.0)).length() < 1e-12);
        assert!((u - Vec3::Y).length() < 1e-12);
        let ray = c.generate_ray(32.0, 32.0, 64);
        assert!((ray.dir - f).length() < 1e-12);
    }

    #[test]
    fn projection_inverts_ray_generation() {
        let c = Camera::orbit(37.0, 25.0, 1.2);
        let ray = c.generate_ray(10.5, 50.25, 64);
        let (x, y) = c.project(ray.at(1.7), 64).unwrap();
        assert!((x - 10.5).abs() < 1e-9 && (y - 50.25).abs() < 1e-9);
    }
}
