//! Small deterministic scenes shared by tests and the service.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::image::LinearImage;
use crate::light::{DeltaL, LightParams};
use crate::math::{Mat3, Vec3};
use crate::proxy::{ProxyMaps, ProxySample};
use crate::render::{
    render, CameraPose, GBuffer, Material, Primitive, RenderOptions, SceneSpec, Shape, Transform,
};

/// One rendered view with everything needed to re-render or relight it.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub scene: SceneSpec,
    pub camera: CameraPose,
    pub light: LightParams,
    pub image: LinearImage,
    pub gbuffer: GBuffer,
}

impl Fixture {
    pub fn render(scene: SceneSpec, camera: CameraPose, light: LightParams) -> Result<Fixture> {
        let (image, gbuffer) = render(&scene, &camera, &light, RenderOptions::default())?;
        Ok(Fixture {
            scene,
            camera,
            light,
            image,
            gbuffer,
        })
    }
}

/// Material shared by every sphere-set fixture.
pub fn fixture_material() -> Material {
    Material {
        albedo: Vec3::new(0.8, 0.45, 0.25),
        roughness: 0.5,
        metallic: 0.0,
    }
}

/// Unit sphere at the origin on a black background.
pub fn sphere_scene(material: Material) -> SceneSpec {
    SceneSpec {
        primitives: vec![Primitive {
            shape: Shape::Sphere,
            transform: Transform::translate_scale(Vec3::ZERO, 1.0),
            material,
        }],
        background: Vec3::ZERO,
    }
}

/// Oblique view of the origin from about 4.3 m.
pub fn sphere_camera(size: usize) -> CameraPose {
    CameraPose::looking_at(Vec3::new(0.0, -4.0, 1.5), Vec3::ZERO, 0.6, size, size)
}

/// Directional light drawn from the upper hemisphere, moderate energy and CCT.
pub fn random_light(rng: &mut impl Rng) -> LightParams {
    let yaw = rng.random_range(0.0..2.0 * PI);
    let pitch = rng.random_range(0.2..1.3);
    let energy = rng.random_range(500.0..2000.0);
    let temp = rng.random_range(3000.0..9000.0);
    LightParams::directional(yaw, pitch, energy, temp).expect("sampled within ranges")
}

/// `count` views of the fixed-material sphere under random directional lights.
pub fn sphere_fixture_set(count: usize, size: usize, seed: u64) -> Result<Vec<Fixture>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let light = random_light(&mut rng);
            Fixture::render(sphere_scene(fixture_material()), sphere_camera(size), light)
        })
        .collect()
}

/// Full-foreground proxy training samples from [`sphere_fixture_set`].
pub fn sphere_samples(count: usize, size: usize, seed: u64) -> Result<Vec<ProxySample>> {
    sphere_fixture_set(count, size, seed)?
        .iter()
        .enumerate()
        .map(|(i, f)| ProxySample::new(format!("sphere{i}"), &f.image, &ProxyMaps::from_gbuffer(&f.gbuffer), 0, 0))
        .collect()
}

/// A single sphere or box with a random material and placement.
pub fn random_convex_scene(rng: &mut impl Rng) -> SceneSpec {
    let material = Material {
        albedo: Vec3::new(
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
            rng.random_range(0.05..1.0),
        ),
        roughness: rng.random_range(0.1..1.0),
        metallic: if rng.random_bool(0.3) { 1.0 } else { rng.random_range(0.0..0.3) },
    };
    let axis = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.1..1.0),
    )
    .normalize();
    let rotation = Mat3::rotation(axis, rng.random_range(0.0..PI));
    let shape = if rng.random_bool(0.5) { Shape::Sphere } else { Shape::Box };
    let scale = match shape {
        Shape::Sphere => Vec3::splat(rng.random_range(0.6..1.0)),
        _ => Vec3::new(
            rng.random_range(0.4..0.8),
            rng.random_range(0.4..0.8),
            rng.random_range(0.4..0.8),
        ),
    };
    SceneSpec {
        primitives: vec![Primitive {
            shape,
            transform: Transform::new(rotation, Vec3::ZERO, scale),
            material,
        }],
        background: Vec3::new(0.02, 0.03, 0.05),
    }
}

/// Random edit keeping the target light inside its parameter ranges.
pub fn random_delta(source: &LightParams, rng: &mut impl Rng) -> Result<DeltaL> {
    let target_pitch = rng.random_range(0.2..1.4);
    let target_temp = rng.random_range(2000.0..10000.0);
    DeltaL::from_edit(
        source,
        rng.random_range(-PI..PI),
        target_pitch - source.pitch_rad(),
        rng.random_range(-1.0..1.0),
        (target_temp - source.temperature_k()) / crate::light::TEMPERATURE_SCALE_K,
    )
}

/// Sphere resting above a ground square, lit from two azimuths at equal
/// elevation so that only the cast shadow and the sphere's terminator move.
#[derive(Debug, Clone)]
pub struct MovedShadow {
    pub scene: SceneSpec,
    pub camera: CameraPose,
    pub source: LightParams,
    pub target: LightParams,
}

pub fn moved_shadow_fixture(size: usize) -> MovedShadow {
    let ground = Primitive {
        shape: Shape::Plane,
        transform: Transform::translate_scale(Vec3::ZERO, 4.0),
        material: Material {
            albedo: Vec3::splat(0.7),
            roughness: 0.9,
            metallic: 0.0,
        },
    };
    let sphere = Primitive {
        shape: Shape::Sphere,
        transform: Transform::translate_scale(Vec3::new(0.0, 0.0, 0.9), 0.6),
        material: Material {
            albedo: Vec3::new(0.6, 0.6, 0.7),
            roughness: 0.8,
            metallic: 0.0,
        },
    };
    let scene = SceneSpec {
        primitives: vec![ground, sphere],
        background: Vec3::ZERO,
    };
    let camera = CameraPose::looking_at(Vec3::new(0.0, -1.0, 7.0), Vec3::ZERO, 0.9, size, size);
    let pitch = 50f64.to_radians();
    MovedShadow {
        scene,
        camera,
        source: LightParams::directional(0.0, pitch, 1000.0, 5500.0).expect("valid"),
        target: LightParams::directional(PI / 2.0, pitch, 1000.0, 5500.0).expect("valid"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_set_is_deterministic_and_framed() {
        let a = sphere_fixture_set(3, 24, 1).unwrap();
        let b = sphere_fixture_set(3, 24, 1).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image, y.image);
            let cov = x.gbuffer.coverage.data().iter().sum::<f64>() / (24.0 * 24.0);
            assert!(cov > 0.2 && cov < 0.9, "coverage {cov}");
        }
    }

    #[test]
    fn random_deltas_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let s = random_light(&mut rng);
            let d = random_delta(&s, &mut rng).unwrap();
            crate::light::apply_delta(&s, &d).unwrap();
        }
    }

    #[test]
    fn convex_scenes_validate() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            random_convex_scene(&mut rng).validate().unwrap();
        }
    }
}
