use std::f64::consts::{PI, TAU};

use crate::lighting::equirect::{bin_solid_angle, direction_to_bin, row_sin_bounds};
use crate::lighting::EnvironmentMap;
use crate::math::{luminance, orthonormal_basis, Vec3};

use super::RenderError;

/// Piecewise-constant importance sampler over environment bins, with bin
/// probability proportional to `luminance * solid angle` and a uniform
/// solid-angle draw inside the chosen bin.
///
/// Built from the unscaled LDR values, so the sample sequence does not
/// depend on light scales or exposure.
#[derive(Clone, Debug)]
pub struct EnvSampler {
    width: usize,
    height: usize,
    cdf: Vec<f64>,
    /// Per-bin density with respect to solid angle.
    density: Vec<f64>,
}

impl EnvSampler {
    pub fn new(env: &EnvironmentMap) -> Result<Self, RenderError> {
        let (h, w) = (env.height, env.width);
        let mut weights = Vec::with_capacity(w * h);
        for i in 0..h {
            let omega = bin_solid_angle(i, h, w);
            for j in 0..w {
                weights.push(luminance(env.ldr[i * w + j]) * omega);
            }
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(RenderError::ZeroEnergy);
        }
        let mut cdf = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for wgt in &weights {
            acc += wgt;
            cdf.push(acc / total);
        }
        *cdf.last_mut().unwrap() = 1.0;
        let mut density = Vec::with_capacity(weights.len());
        for i in 0..h {
            let omega = bin_solid_angle(i, h, w);
            for j in 0..w {
                density.push(weights[i * w + j] / (total * omega));
            }
        }
        Ok(Self { width: w, height: h, cdf, density })
    }

    /// Draws a direction; returns it with its density and the bin it was
    /// drawn from.
    pub fn sample(&self, u: [f64; 2]) -> (Vec3, f64, usize) {
        let n = self.cdf.len();
        let bin = self.cdf.partition_point(|&c| c <= u[0]).min(n - 1);
        let lo = if bin == 0 { 0.0 } else { self.cdf[bin - 1] };
        let span = self.cdf[bin] - lo;
        let v = if span > 0.0 { ((u[0] - lo) / span).clamp(0.0, 1.0) } else { 0.5 };
        let (i, j) = (bin / self.width, bin % self.width);
        let (top, bottom) = row_sin_bounds(i, self.height);
        let s = (bottom + (top - bottom) * v).clamp(-1.0, 1.0);
        let c = (1.0 - s * s).max(0.0).sqrt();
        let az = (j as f64 + u[1]) / self.width as f64 * TAU;
        let d = Vec3::new(c * az.sin(), s, -c * az.cos());
        (d, self.density[bin], bin)
    }

    pub fn pdf(&self, d: Vec3) -> f64 {
        let (i, j) = direction_to_bin(d, self.height, self.width);
        self.density[i * self.width + j]
    }

    pub fn bin_density(&self, bin: usize) -> f64 {
        self.density[bin]
    }
}

/// One environment draw with its density; fails for an all-black map.
pub fn sample_envmap(env: &EnvironmentMap, u: [f64; 2]) -> Result<(Vec3, f64), RenderError> {
    let (d, pdf, _) = EnvSampler::new(env)?.sample(u);
    Ok((d, pdf))
}

/// Cosine-weighted hemisphere direction around `n`.
pub fn sample_cosine_hemisphere(n: Vec3, u: [f64; 2]) -> Vec3 {
    let r = u[0].sqrt();
    let phi = TAU * u[1];
    let z = (1.0 - u[0]).max(0.0).sqrt();
    let (t, b) = orthonormal_basis(n);
    t * (r * phi.cos()) + b * (r * phi.sin()) + n * z
}

pub fn cosine_hemisphere_pdf(n: Vec3, d: Vec3) -> f64 {
    n.dot(d).max(0.0) / PI
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Solid angle of a bin from polar-angle edges, independent of the
    /// elevation-sine form used by the sampler.
    fn oracle_solid_angle(i: usize, h: usize, w: usize) -> f64 {
        let t0 = i as f64 / h as f64 * PI;
        let t1 = (i + 1) as f64 / h as f64 * PI;
        (t0.cos() - t1.cos()) * TAU / w as f64
    }

    #[test]
    fn uniform_map_has_uniform_density() {
        let env = EnvironmentMap::constant(16, 8, [0.7; 3]);
        let s = EnvSampler::new(&env).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let (d, pdf, _) = s.sample([rng.gen(), rng.gen()]);
            assert!((pdf - 1.0 / (4.0 * PI)).abs() < 1e-6);
            assert!((d.length() - 1.0).abs() < 1e-12);
            assert!((s.pdf(d) - 1.0 / (4.0 * PI)).abs() < 1e-6);
        }
    }

    #[test]
    fn bright_texel_dominates() {
        let (h, w) = (8, 16);
        let mut ldr = vec![[0.001; 3]; h * w];
        let hot = 3 * w + 5;
        ldr[hot] = [50.0; 3];
        let env = EnvironmentMap::from_ldr(w, h, ldr).unwrap();
        let s = EnvSampler::new(&env).unwrap();
        let hot_w = 50.0 * oracle_solid_angle(3, h, w);
        let rest: f64 = (0..h * w).filter(|&b| b != hot).map(|b| 0.001 * oracle_solid_angle(b / w, h, w)).sum();
        let expected = hot_w / (hot_w + rest);
        assert!(expected > 0.99);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 20_000;
        let mut hits = 0;
        for _ in 0..n {
            let (d, _, _) = s.sample([rng.gen(), rng.gen()]);
            let (i, j) = direction_to_bin(d, h, w);
            if i * w + j == hot {
                hits += 1;
            }
        }
        assert!(hits as f64 / n as f64 >= 0.99, "{hits}");
    }

    #[test]
    fn histogram_matches_target_distribution() {
        let (h, w) = (4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ldr: Vec<_> = (0..h * w).map(|_| [rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0), rng.gen_range(0.1..2.0)]).collect();
        let env = EnvironmentMap::from_ldr(w, h, ldr.clone()).unwrap();
        let s = EnvSampler::new(&env).unwrap();
        let target: Vec<f64> = (0..h * w).map(|b| luminance(ldr[b]) * oracle_solid_angle(b / w, h, w)).collect();
        let total: f64 = target.iter().sum();
        let n = 200_000;
        let mut counts = vec![0usize; h * w];
        for _ in 0..n {
            let (d, pdf, bin) = s.sample([rng.gen(), rng.gen()]);
            let (i, j) = direction_to_bin(d, h, w);
            counts[i * w + j] += 1;
            assert_eq!(i * w + j, bin);
            assert!((pdf - target[bin] / total / oracle_solid_angle(i, h, w)).abs() < 1e-9);
        }
        let chi2: f64 = counts
            .iter()
            .zip(&target)
            .map(|(&c, &t)| {
                let e = n as f64 * t / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let p = 1.0 - ChiSquared::new((h * w - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2} p {p}");
    }

    #[test]
    fn density_integrates_to_one() {
        let (h, w) = (8, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ldr: Vec<_> = (0..h * w).map(|_| [rng.gen::<f64>(); 3]).collect();
        let s = EnvSampler::new(&EnvironmentMap::from_ldr(w, h, ldr).unwrap()).unwrap();
        // Uniform-sphere Monte Carlo estimate of the integral of the density.
        let n = 200_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..TAU);
            let r = (1.0 - z * z).sqrt();
            acc += s.pdf(Vec3::new(r * phi.cos(), z, r * phi.sin())) * 4.0 * PI;
        }
        assert!((acc / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn black_map_is_rejected() {
        let env = EnvironmentMap::constant(8, 4, [0.0; 3]);
        assert!(matches!(sample_envmap(&env, [0.5, 0.5]), Err(RenderError::ZeroEnergy)));
    }

    #[test]
    fn cosine_samples_stay_in_hemisphere() {
        let n = Vec3::new(0.2, -0.5, 0.8).normalized();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mean_cos = 0.0;
        for _ in 0..20_000 {
            let d = sample_cosine_hemisphere(n, [rng.gen(), rng.gen()]);
            assert!(d.dot(n) >= 0.0);
            mean_cos += d.dot(n);
        }
        // E[cos] under the cosine density is 2/3.
        assert!((mean_cos / 20_000.0 - 2.0 / 3.0).abs() < 0.01);
    }
}
