use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::equirect::{bin_center, direction};
use super::EnvironmentMap;
use crate::math::Vec3;

/// Single isotropic spherical-Gaussian light over a constant background.
/// `c_x`, `c_y` are equirect coordinates of the lobe center: `c_x = 0.25`
/// is azimuth 0, `c_y = 0` the zenith.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgParams {
    pub c_x: f64,
    pub c_y: f64,
    pub c_r: f64,
    pub c_v: f64,
    pub b_v: f64,
}

/// Default ambient lighting. With `c_r = 0` the lobe has no extent, so the
/// map is the constant background.
pub const AMBIENT_SG: SgParams = SgParams { c_x: 0.25, c_y: 0.0, c_r: 0.0, c_v: 1.0, b_v: 1.0 };

impl SgParams {
    pub fn to_array(self) -> [f64; 5] {
        [self.c_x, self.c_y, self.c_r, self.c_v, self.b_v]
    }

    pub fn center(&self) -> Vec3 {
        direction(FRAC_PI_2 - self.c_y * PI, (self.c_x - 0.25) * TAU)
    }

    pub fn value(&self, d: Vec3) -> f64 {
        if self.c_r <= 0.0 {
            return self.b_v;
        }
        self.b_v + self.c_v * ((d.dot(self.center()) - 1.0) / self.c_r).exp()
    }
}

pub fn synthesize_sg_envmap(params: SgParams, height: usize, width: usize) -> EnvironmentMap {
    let mut ldr = Vec::with_capacity(width * height);
    for i in 0..height {
        for j in 0..width {
            let v = params.value(bin_center(i, j, height, width)).max(0.0);
            ldr.push([v; 3]);
        }
    }
    EnvironmentMap::from_ldr(width, height, ldr).expect("spherical Gaussian map is finite")
}
