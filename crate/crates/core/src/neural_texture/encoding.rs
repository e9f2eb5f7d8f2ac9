use serde::{Deserialize, Serialize};

use crate::math::Vec3;

/// Multiresolution hash encoding hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashEncodingConfig {
    pub levels: usize,
    pub base_resolution: usize,
    pub growth: f64,
    /// Entries per level are `2^log2_table_size`.
    pub log2_table_size: u32,
    pub features: usize,
}

impl Default for HashEncodingConfig {
    fn default() -> Self {
        Self { levels: 12, base_resolution: 16, growth: 1.5, log2_table_size: 17, features: 2 }
    }
}

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

impl HashEncodingConfig {
    pub fn table_size(&self) -> usize {
        1usize << self.log2_table_size
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    pub fn parameter_count(&self) -> usize {
        self.levels * self.table_size() * self.features
    }

    pub fn level_resolution(&self, level: usize) -> usize {
        (self.base_resolution as f64 * self.growth.powi(level as i32)).floor() as usize
    }

    /// Table slot of an integer grid vertex at `level`. Coarse levels whose
    /// vertex count fits the table are indexed densely, finer levels hashed.
    fn slot(&self, level: usize, res: usize, c: [usize; 3]) -> usize {
        let t = self.table_size();
        let side = res + 1;
        let local = if side.saturating_mul(side).saturating_mul(side) <= t {
            c[0] + side * (c[1] + side * c[2])
        } else {
            let h = (c[0] as u64).wrapping_mul(PRIMES[0])
                ^ (c[1] as u64).wrapping_mul(PRIMES[1])
                ^ (c[2] as u64).wrapping_mul(PRIMES[2]);
            (h as usize) & (t - 1)
        };
        level * t + local
    }

    /// Writes the 8 trilinear corners of every level as `(slot, weight)`.
    /// `p` is a point in the normalized object space `[-0.5, 0.5]^3`.
    pub(crate) fn corners(&self, p: Vec3, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let q = [p.x + 0.5, p.y + 0.5, p.z + 0.5].map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.5 });
        for level in 0..self.levels {
            let res = self.level_resolution(level).max(1);
            let mut base = [0usize; 3];
            let mut frac = [0.0; 3];
            for a in 0..3 {
                let s = q[a] * res as f64;
                let b = (s.floor() as usize).min(res - 1);
                base[a] = b;
                frac[a] = s - b as f64;
            }
            for corner in 0..8usize {
                let mut c = base;
                let mut w = 1.0;
                for a in 0..3 {
                    if corner >> a & 1 == 1 {
                        c[a] += 1;
                        w *= frac[a];
                    } else {
                        w *= 1.0 - frac[a];
                    }
                }
                out.push((self.slot(level, res, c), w));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corner_weights_partition_unity() {
        let cfg = HashEncodingConfig { log2_table_size: 12, ..Default::default() };
        let mut out = Vec::new();
        cfg.corners(Vec3::new(0.123, -0.31, 0.4), &mut out);
        assert_eq!(out.len(), cfg.levels * 8);
        for lvl in out.chunks(8) {
            let s: f64 = lvl.iter().map(|c| c.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        for (level, lvl) in out.chunks(8).enumerate() {
            for &(slot, _) in lvl {
                assert_eq!(slot / cfg.table_size(), level);
            }
        }
    }

    #[test]
    fn resolutions_grow_geometrically() {
        let cfg = HashEncodingConfig::default();
        assert_eq!(cfg.level_resolution(0), 16);
        assert_eq!(cfg.level_resolution(1), 24);
        assert_eq!(cfg.level_resolution(11), (16.0 * 1.5f64.powi(11)).floor() as usize);
    }
}
