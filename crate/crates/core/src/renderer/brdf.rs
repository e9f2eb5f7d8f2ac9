use std::f64::consts::PI;

use crate::math::{Real, Vec3};
use crate::neural_texture::PbrSample;

/// Reflectance at normal incidence for dielectrics.
const F0_DIELECTRIC: f64 = 0.04;

/// Lambertian diffuse plus an isotropic GGX lobe with Smith
/// height-correlated visibility and Schlick Fresnel.
///
/// `pbr` is `[kd.r, kd.g, kd.b, roughness, metalness]`. Returns zero when
/// either direction is below the hemisphere of `n`. With `lambert_only` the
/// specular lobe is dropped.
pub fn eval_brdf_generic<R: Real>(pbr: &[R; 5], n: Vec3, wi: Vec3, wo: Vec3, lambert_only: bool) -> [R; 3] {
    let zero = R::constant(0.0);
    let nl = n.dot(wi);
    let nv = n.dot(wo);
    if nl <= 0.0 || nv <= 0.0 {
        return [zero; 3];
    }
    let km = pbr[4];
    let one_minus_km = R::constant(1.0) - km;
    let mut out = [zero; 3];
    for c in 0..3 {
        out[c] = pbr[c] * one_minus_km / PI;
    }
    if lambert_only {
        return out;
    }

    let h = (wi + wo).normalized();
    let nh = n.dot(h).max(0.0);
    let vh = wo.dot(h).max(0.0);
    let alpha = pbr[3] * pbr[3];
    let a2 = alpha * alpha;
    let d_den = a2 * (nh * nh) - (nh * nh) + 1.0;
    let d = a2 / (d_den * d_den * PI);
    let one_minus_a2 = R::constant(1.0) - a2;
    let lv = (one_minus_a2 * (nv * nv) + a2).sqrt() * nl;
    let ll = (one_minus_a2 * (nl * nl) + a2).sqrt() * nv;
    let vis = R::constant(0.5) / (lv + ll);
    let fw = (1.0 - vh).powi(5);
    let dv = d * vis;
    for c in 0..3 {
        let f0 = R::lerp(R::constant(F0_DIELECTRIC), pbr[c], km);
        let fresnel = f0 + (R::constant(1.0) - f0) * fw;
        out[c] = out[c] + dv * fresnel;
    }
    out
}

/// [`eval_brdf_generic`] on plain floats.
pub fn eval_brdf(sample: &PbrSample, n: Vec3, wi: Vec3, wo: Vec3, lambert_only: bool) -> [f64; 3] {
    eval_brdf_generic(&sample.to_array(), n, wi, wo, lambert_only)
}

/// GGX normal distribution `D(h)` for roughness `kr` (`alpha = kr^2`).
pub fn ggx_distribution(kr: f64, nh: f64) -> f64 {
    let a2 = kr.powi(4);
    let den = nh * nh * (a2 - 1.0) + 1.0;
    a2 / (PI * den * den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{orthonormal_basis, Dual};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_upper(rng: &mut ChaCha8Rng, n: Vec3) -> Vec3 {
        let (t, b) = orthonormal_basis(n);
        loop {
            let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0));
            let l = v.length();
            if l > 1e-3 && l <= 1.0 && v.z > 1e-3 {
                let v = v / l;
                return t * v.x + b * v.y + n * v.z;
            }
        }
    }

    #[test]
    fn lambertian_value() {
        let s = PbrSample { kd: [0.9; 3], roughness: 0.5, metalness: 0.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Vec3::new(0.3, 0.9, -0.1).normalized();
        for _ in 0..100 {
            let (wi, wo) = (random_upper(&mut rng, n), random_upper(&mut rng, n));
            let f = eval_brdf(&s, n, wi, wo, true);
            for c in f {
                assert!((c - 0.9 / PI).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn distribution_peak() {
        for kr in [0.08, 0.3, 0.7, 1.0] {
            let alpha: f64 = kr * kr;
            assert!((ggx_distribution(kr, 1.0) - 1.0 / (PI * alpha * alpha)).abs() < 1e-9 / (alpha * alpha));
        }
        // The full BRDF at the mirror configuration isolates D * V * F.
        let n = Vec3::Y;
        let s = PbrSample { kd: [0.0; 3], roughness: 0.5, metalness: 0.0 };
        let f = eval_brdf(&s, n, n, n, false);
        let a2: f64 = 0.5f64.powi(4);
        let vis = 0.5 / (2.0 * (1.0f64).sqrt());
        let want = 1.0 / (PI * a2) * vis * F0_DIELECTRIC;
        assert!((f[0] - want).abs() < 1e-12, "{} vs {want}", f[0]);
    }

    #[test]
    fn reciprocity_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let n = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalized();
            let s = PbrSample {
                kd: [rng.gen(), rng.gen(), rng.gen()],
                roughness: rng.gen_range(0.08..1.0),
                metalness: rng.gen(),
            };
            let (wi, wo) = (random_upper(&mut rng, n), random_upper(&mut rng, n));
            let a = eval_brdf(&s, n, wi, wo, false);
            let b = eval_brdf(&s, n, wo, wi, false);
            for c in 0..3 {
                assert!(a[c] >= 0.0);
                assert!((a[c] - b[c]).abs() <= 1e-7 * a[c].max(1.0), "{} vs {}", a[c], b[c]);
            }
        }
    }

    #[test]
    fn below_hemisphere_is_zero() {
        let s = PbrSample { kd: [0.5; 3], roughness: 0.4, metalness: 0.3 };
        let n = Vec3::Y;
        let up = Vec3::new(0.0, 1.0, 0.0);
        let down = Vec3::new(0.1, -1.0, 0.0).normalized();
        assert_eq!(eval_brdf(&s, n, down, up, false), [0.0; 3]);
        assert_eq!(eval_brdf(&s, n, up, down, false), [0.0; 3]);
    }

    #[test]
    fn dual_derivatives_match_finite_differences() {
        let n = Vec3::new(0.1, 1.0, 0.2).normalized();
        let wi = Vec3::new(0.5, 0.7, 0.1).normalized();
        let wo = Vec3::new(-0.3, 0.8, 0.4).normalized();
        let base = [0.3, 0.6, 0.8, 0.45, 0.35];
        let duals: [Dual<5>; 5] = std::array::from_fn(|k| Dual::variable(base[k], k));
        let f = eval_brdf_generic(&duals, n, wi, wo, false);
        let h = 1e-6;
        for k in 0..5 {
            let (mut p, mut m) = (base, base);
            p[k] += h;
            m[k] -= h;
            let fp = eval_brdf_generic(&p, n, wi, wo, false);
            let fm = eval_brdf_generic(&m, n, wi, wo, false);
            for c in 0..3 {
                let fd = (fp[c] - fm[c]) / (2.0 * h);
                assert!((fd - f[c].eps[k]).abs() < 1e-6 * (1.0 + fd.abs()), "k={k} c={c}: {fd} vs {}", f[c].eps[k]);
            }
        }
    }
}
