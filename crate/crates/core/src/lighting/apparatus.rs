use crate::geometry::primitives::icosphere;
use crate::geometry::{TriangleMesh, NORMALIZED_RADIUS};
use crate::neural_texture::{ChannelBounds, PbrSample};

pub const APPARATUS_PROMPT: &str = "A gigantic diffuse white (spray-painted) sphere (ball)";
pub const APPARATUS_OBJECT_VIEWS: usize = 3;
/// Per-view loss weights: three object views, then the sphere view.
pub const APPARATUS_LOSS_WEIGHTS: [f64; 4] = [1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 0.5];

const SPHERE_SUBDIVISIONS: u32 = 4;

/// Second scene rendered next to the object during light estimation: a
/// white diffuse sphere resting on its own floor plane.
#[derive(Clone, Debug)]
pub struct ApparatusScene {
    pub sphere: TriangleMesh,
    pub material: PbrSample,
    pub prompt: &'static str,
    pub object_views: usize,
    pub loss_weights: [f64; 4],
}

pub fn build_apparatus_scene(object: &TriangleMesh) -> ApparatusScene {
    debug_assert!(object.max_vertex_norm() <= NORMALIZED_RADIUS + 1e-6, "object must be normalized");
    let bounds = ChannelBounds::default();
    ApparatusScene {
        sphere: icosphere(SPHERE_SUBDIVISIONS, NORMALIZED_RADIUS),
        material: PbrSample { kd: [1.0; 3], roughness: bounds.0[3].1, metalness: 0.0 },
        prompt: APPARATUS_PROMPT,
        object_views: APPARATUS_OBJECT_VIEWS,
        loss_weights: APPARATUS_LOSS_WEIGHTS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::normalize_mesh;
    use crate::geometry::primitives::uv_cube;

    #[test]
    fn apparatus_declaration() {
        let scene = build_apparatus_scene(&normalize_mesh(&uv_cube()).unwrap());
        assert_eq!(scene.material.kd, [1.0; 3]);
        assert_eq!(scene.material.metalness, 0.0);
        assert_eq!(scene.material.roughness, 1.0);
        assert!((scene.loss_weights.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(scene.prompt, "A gigantic diffuse white (spray-painted) sphere (ball)");
        assert!((scene.sphere.max_vertex_norm() - 0.5).abs() < 1e-12);
        assert!((scene.sphere.floor_height() + 0.5).abs() < 1e-12);
    }
}
