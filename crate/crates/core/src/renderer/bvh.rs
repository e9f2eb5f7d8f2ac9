use crate::geometry::{Ray, TriangleMesh};
use crate::math::Vec3;

const LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 12;

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: Vec3,
    max: Vec3,
}

impl Aabb {
    const EMPTY: Aabb = Aabb {
        min: Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY),
        max: Vec3::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
    };

    fn grow(&mut self, p: Vec3) {
        self.min = self.min.min(p);
        self.max = self.max.max(p);
    }

    fn union(&mut self, o: &Aabb) {
        self.min = self.min.min(o.min);
        self.max = self.max.max(o.max);
    }

    fn area(&self) -> f64 {
        let d = self.max - self.min;
        if d.x < 0.0 {
            return 0.0;
        }
        2.0 * (d.x * d.y + d.y * d.z + d.z * d.x)
    }

    /// Slab test; returns the entry distance if the box is hit before `t_max`.
    fn hit(&self, origin: Vec3, inv: Vec3, t_max: f64) -> Option<f64> {
        let mut t0: f64 = 0.0;
        let mut t1 = t_max;
        for a in 0..3 {
            let ta = (self.min[a] - origin[a]) * inv[a];
            let tb = (self.max[a] - origin[a]) * inv[a];
            let (lo, hi) = if ta <= tb { (ta, tb) } else { (tb, ta) };
            if lo > t0 {
                t0 = lo;
            }
            if hi < t1 {
                t1 = hi;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some(t0)
    }
}

#[derive(Clone, Copy, Debug)]
struct Node {
    bounds: Aabb,
    /// Leaf: first primitive index; interior: index of the right child
    /// (the left child directly follows the node).
    offset: u32,
    count: u32,
}

#[derive(Clone, Copy, Debug)]
struct Tri {
    v0: Vec3,
    e1: Vec3,
    e2: Vec3,
    face: u32,
}

/// Closest-hit record: distance, face and barycentrics of vertices 1 and 2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: usize,
    pub u: f64,
    pub v: f64,
}

/// Bounding volume hierarchy over a triangle mesh, built with binned SAH.
#[derive(Clone, Debug)]
pub struct Bvh {
    nodes: Vec<Node>,
    tris: Vec<Tri>,
}

impl Bvh {
    pub fn build(mesh: &TriangleMesh) -> Self {
        let mut tris: Vec<Tri> = (0..mesh.faces.len())
            .map(|f| {
                let [a, b, c] = mesh.triangle(f);
                Tri { v0: a, e1: b - a, e2: c - a, face: f as u32 }
            })
            .collect();
        let mut nodes = Vec::with_capacity(2 * tris.len().max(1));
        if !tris.is_empty() {
            let n = tris.len();
            build_recursive(&mut tris, 0, n, &mut nodes);
        }
        Self { nodes, tris }
    }

    fn tri_bounds(t: &Tri) -> Aabb {
        let mut b = Aabb::EMPTY;
        b.grow(t.v0);
        b.grow(t.v0 + t.e1);
        b.grow(t.v0 + t.e2);
        b
    }

    /// Möller-Trumbore; returns `(t, u, v)`.
    fn intersect_tri(tri: &Tri, ray: &Ray, t_max: f64) -> Option<(f64, f64, f64)> {
        let p = ray.dir.cross(tri.e2);
        let det = tri.e1.dot(p);
        if det.abs() < 1e-14 {
            return None;
        }
        let inv = 1.0 / det;
        let s = ray.origin - tri.v0;
        let u = s.dot(p) * inv;
        if !(0.0..=1.0).contains(&u) {
            return None;
        }
        let q = s.cross(tri.e1);
        let v = ray.dir.dot(q) * inv;
        if v < 0.0 || u + v > 1.0 {
            return None;
        }
        let t = tri.e2.dot(q) * inv;
        if t > 1e-9 && t < t_max {
            Some((t, u, v))
        } else {
            None
        }
    }

    fn traverse(&self, ray: &Ray, mut t_max: f64, any: bool) -> Option<Hit> {
        if self.nodes.is_empty() {
            return None;
        }
        // A zero component would give 0 * inf = NaN in the slab test for
        // rays starting on a box plane.
        let safe = |d: f64| if d == 0.0 { 1e-300f64.copysign(d) } else { d };
        let inv = Vec3::new(1.0 / safe(ray.dir.x), 1.0 / safe(ray.dir.y), 1.0 / safe(ray.dir.z));
        let mut best: Option<Hit> = None;
        let mut stack: [u32; 64] = [0; 64];
        let mut sp = 1;
        while sp > 0 {
            sp -= 1;
            let id = stack[sp];
            let node = &self.nodes[id as usize];
            if node.bounds.hit(ray.origin, inv, t_max).is_none() {
                continue;
            }
            if node.count > 0 {
                let first = node.offset as usize;
                for tri in &self.tris[first..first + node.count as usize] {
                    if let Some((t, u, v)) = Self::intersect_tri(tri, ray, t_max) {
                        t_max = t;
                        best = Some(Hit { t, face: tri.face as usize, u, v });
                        if any {
                            return best;
                        }
                    }
                }
            } else {
                let (left, right) = (id + 1, node.offset);
                // Visit the nearer child first.
                let a = self.nodes[left as usize].bounds.hit(ray.origin, inv, t_max);
                let b = self.nodes[right as usize].bounds.hit(ray.origin, inv, t_max);
                match (a, b) {
                    (Some(ta), Some(tb)) => {
                        let (near, far) = if ta <= tb { (left, right) } else { (right, left) };
                        stack[sp] = far;
                        stack[sp + 1] = near;
                        sp += 2;
                    }
                    (Some(_), None) => {
                        stack[sp] = left;
                        sp += 1;
                    }
                    (None, Some(_)) => {
                        stack[sp] = right;
                        sp += 1;
                    }
                    (None, None) => {}
                }
            }
        }
        best
    }

    pub fn intersect(&self, ray: &Ray, t_max: f64) -> Option<Hit> {
        self.traverse(ray, t_max, false)
    }

    pub fn occluded(&self, ray: &Ray, t_max: f64) -> bool {
        self.traverse(ray, t_max, true).is_some()
    }
}

fn build_recursive(tris: &mut [Tri], start: usize, end: usize, nodes: &mut Vec<Node>) -> u32 {
    let id = nodes.len() as u32;
    let mut bounds = Aabb::EMPTY;
    let mut cbounds = Aabb::EMPTY;
    for t in &tris[start..end] {
        bounds.union(&Bvh::tri_bounds(t));
        cbounds.grow(centroid(t));
    }
    nodes.push(Node { bounds, offset: start as u32, count: (end - start) as u32 });
    let n = end - start;
    if n <= LEAF_SIZE {
        return id;
    }
    let ext = cbounds.max - cbounds.min;
    let axis = if ext.x >= ext.y && ext.x >= ext.z {
        0
    } else if ext.y >= ext.z {
        1
    } else {
        2
    };
    if ext[axis] <= 0.0 {
        return id;
    }
    // Binned SAH split along the widest centroid axis.
    let lo = cbounds.min[axis];
    let scale = SAH_BINS as f64 / ext[axis];
    let bin_of = |t: &Tri| (((centroid(t)[axis] - lo) * scale) as usize).min(SAH_BINS - 1);
    let mut bin_bounds = [Aabb::EMPTY; SAH_BINS];
    let mut bin_count = [0usize; SAH_BINS];
    for t in &tris[start..end] {
        let b = bin_of(t);
        bin_count[b] += 1;
        bin_bounds[b].union(&Bvh::tri_bounds(t));
    }
    let mut best = (f64::INFINITY, 0);
    for split in 1..SAH_BINS {
        let (mut lb, mut rb) = (Aabb::EMPTY, Aabb::EMPTY);
        let (mut lc, mut rc) = (0, 0);
        for b in 0..split {
            lb.union(&bin_bounds[b]);
            lc += bin_count[b];
        }
        for b in split..SAH_BINS {
            rb.union(&bin_bounds[b]);
            rc += bin_count[b];
        }
        if lc == 0 || rc == 0 {
            continue;
        }
        let cost = lb.area() * lc as f64 + rb.area() * rc as f64;
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let mid = if best.0.is_finite() {
        let slice = &mut tris[start..end];
        let mut i = 0;
        for k in 0..slice.len() {
            if bin_of(&slice[k]) < best.1 {
                slice.swap(i, k);
                i += 1;
            }
        }
        start + i
    } else {
        let slice = &mut tris[start..end];
        slice.sort_by(|a, b| centroid(a)[axis].total_cmp(&centroid(b)[axis]));
        start + n / 2
    };
    build_recursive(tris, start, mid, nodes);
    let right = build_recursive(tris, mid, end, nodes);
    nodes[id as usize].offset = right;
    nodes[id as usize].count = 0;
    id
}

fn centroid(t: &Tri) -> Vec3 {
    t.v0 + (t.e1 + t.e2) / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::primitives::icosphere;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(bvh: &Bvh, ray: &Ray) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for tri in &bvh.tris {
            let t_max = best.map_or(f64::INFINITY, |h| h.t);
            if let Some((t, u, v)) = Bvh::intersect_tri(tri, ray, t_max) {
                best = Some(Hit { t, face: tri.face as usize, u, v });
            }
        }
        best
    }

    #[test]
    fn matches_brute_force_intersection() {
        let mesh = icosphere(3, 0.5);
        let bvh = Bvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let o = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let target = Vec3::new(rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6), rng.gen_range(-0.6..0.6));
            let ray = Ray { origin: o, dir: (target - o).normalized() };
            let a = bvh.intersect(&ray, f64::INFINITY);
            let b = brute(&bvh, &ray);
            assert_eq!(a.map(|h| h.t), b.map(|h| h.t));
            assert_eq!(a.is_some(), bvh.occluded(&ray, f64::INFINITY));
        }
    }

    #[test]
    fn axis_aligned_rays_hit_sphere() {
        let bvh = Bvh::build(&icosphere(2, 0.5));
        let ray = Ray { origin: Vec3::new(0.0, 0.0, 3.0), dir: Vec3::new(0.0, 0.0, -1.0) };
        let h = bvh.intersect(&ray, f64::INFINITY).unwrap();
        assert!((h.t - 2.5).abs() < 0.02);
    }
}
