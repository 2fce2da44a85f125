//! Deterministic analytic renderer producing linear radiance and G-buffers.
//!
//! World space is right-handed with +z up. Each pixel casts one primary ray
//! through its center; hits are shaded by a single light with optional hard
//! shadows. The renderer is both the dataset source and the reference that
//! relighting results are checked against.

mod camera;
mod scene;
pub mod shading;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use camera::{CameraFrame, CameraPose};
pub use scene::{Hit, Material, Primitive, SceneSpec, Shape, Transform, MIN_ROUGHNESS};
pub use shading::shade_pixel;

use crate::error::{Error, Result};
use crate::image::{self, LinearImage, Map};
use crate::light::LightParams;
use crate::math::Vec3;

/// Shadow-ray origin offset along the surface normal, meters.
pub const SHADOW_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderOptions {
    pub shadows: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions { shadows: true }
    }
}

/// Per-pixel intrinsic buffers. Normals are camera-space; depth is the
/// distance along the primary ray (∞ on background).
#[derive(Debug, Clone, PartialEq)]
pub struct GBuffer {
    pub albedo: Map,
    pub normal: Map,
    pub roughness: Map,
    pub metallic: Map,
    pub depth: Map,
    pub coverage: Map,
}

/// On-disk locations of a G-buffer's planes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GBufferPaths {
    pub albedo: String,
    pub normal: String,
    pub roughness: String,
    pub metallic: String,
    pub depth: String,
    pub coverage: String,
}

impl GBufferPaths {
    /// Conventional file names under `stem`.
    pub fn with_stem(stem: &str) -> Self {
        GBufferPaths {
            albedo: format!("{stem}_albedo.raw"),
            normal: format!("{stem}_normal.raw"),
            roughness: format!("{stem}_roughness.raw"),
            metallic: format!("{stem}_metallic.raw"),
            depth: format!("{stem}_depth.raw"),
            coverage: format!("{stem}_coverage.raw"),
        }
    }
}

impl GBuffer {
    pub fn height(&self) -> usize {
        self.coverage.height()
    }

    pub fn width(&self) -> usize {
        self.coverage.width()
    }

    pub fn is_foreground(&self, p: usize) -> bool {
        self.coverage.pixel(p)[0] > 0.5
    }

    pub fn material(&self, p: usize) -> Material {
        let a = self.albedo.pixel(p);
        Material {
            albedo: Vec3::new(a[0], a[1], a[2]),
            roughness: self.roughness.pixel(p)[0],
            metallic: self.metallic.pixel(p)[0],
        }
    }

    pub fn camera_normal(&self, p: usize) -> Vec3 {
        let n = self.normal.pixel(p);
        Vec3::new(n[0], n[1], n[2])
    }

    /// Writes the five float planes plus the byte coverage plane.
    pub fn save(&self, root: &Path, paths: &GBufferPaths) -> Result<()> {
        image::save_raw(&root.join(&paths.albedo), &self.albedo)?;
        image::save_raw(&root.join(&paths.normal), &self.normal)?;
        image::save_raw(&root.join(&paths.roughness), &self.roughness)?;
        image::save_raw(&root.join(&paths.metallic), &self.metallic)?;
        image::save_raw(&root.join(&paths.depth), &self.depth)?;
        image::write_file(&root.join(&paths.coverage), &image::write_raw_u8(&self.coverage))
    }

    pub fn load(root: &Path, paths: &GBufferPaths) -> Result<GBuffer> {
        let g = GBuffer {
            albedo: image::load_raw(&root.join(&paths.albedo))?,
            normal: image::load_raw(&root.join(&paths.normal))?,
            roughness: image::load_raw(&root.join(&paths.roughness))?,
            metallic: image::load_raw(&root.join(&paths.metallic))?,
            depth: image::load_raw(&root.join(&paths.depth))?,
            coverage: image::read_raw_u8(&image::read_file(&root.join(&paths.coverage))?)?,
        };
        let (h, w) = (g.coverage.height(), g.coverage.width());
        for (m, c, name) in [
            (&g.albedo, 3, "albedo"),
            (&g.normal, 3, "normal"),
            (&g.roughness, 1, "roughness"),
            (&g.metallic, 1, "metallic"),
            (&g.depth, 1, "depth"),
        ] {
            if m.height() != h || m.width() != w || m.channels() != c {
                return Err(Error::Shape(format!("g-buffer plane {name} has inconsistent shape")));
            }
        }
        Ok(g)
    }
}

/// Shadow test: 1 if the ray from `p + ε·n` toward the light is unblocked.
pub fn visibility(scene: &SceneSpec, p: Vec3, n: Vec3, light: &LightParams) -> u8 {
    let origin = p + n * SHADOW_EPSILON;
    let blocked = match light.position() {
        None => scene.occluded(origin, light.direction().vec(), f64::INFINITY),
        Some(pos) => {
            let to = pos - origin;
            let dist = to.norm();
            scene.occluded(origin, to / dist, dist)
        }
    };
    u8::from(!blocked)
}

/// Shading inputs recovered for a foreground pixel.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub position: Vec3,
    pub normal: Vec3,
    pub view: Vec3,
}

struct PixelSample {
    radiance: Vec3,
    albedo: Vec3,
    normal_cam: Vec3,
    roughness: f64,
    metallic: f64,
    depth: f64,
    covered: bool,
}

/// Renders `scene` from `cam` under `light`.
pub fn render(
    scene: &SceneSpec,
    cam: &CameraPose,
    light: &LightParams,
    opts: RenderOptions,
) -> Result<(LinearImage, GBuffer)> {
    cam.validate()?;
    scene.validate()?;
    let frame = cam.frame();
    let (h, w) = (cam.height, cam.width);
    let samples: Vec<PixelSample> = (0..h * w)
        .into_par_iter()
        .map(|idx| {
            let (row, col) = (idx / w, idx % w);
            let dir = cam.ray_dir(&frame, row, col);
            match scene.intersect(cam.position, dir) {
                None => PixelSample {
                    radiance: scene.background,
                    albedo: Vec3::ZERO,
                    normal_cam: Vec3::ZERO,
                    roughness: 0.0,
                    metallic: 0.0,
                    depth: f64::INFINITY,
                    covered: false,
                },
                Some(hit) => {
                    let p = cam.position + dir * hit.t;
                    let view = -dir;
                    let n = if hit.normal.dot(view) < 0.0 { -hit.normal } else { hit.normal };
                    let mat = scene.primitives[hit.primitive].material;
                    let (l, irradiance) = light.incident(p);
                    let mut radiance = shade_pixel(&mat, n, view, l, irradiance);
                    if opts.shadows && n.dot(l) > 0.0 && visibility(scene, p, n, light) == 0 {
                        radiance = Vec3::ZERO;
                    }
                    PixelSample {
                        radiance,
                        albedo: mat.albedo,
                        normal_cam: frame.to_camera(n),
                        roughness: mat.roughness,
                        metallic: mat.metallic,
                        depth: hit.t,
                        covered: true,
                    }
                }
            }
        })
        .collect();

    let mut radiance = Vec::with_capacity(h * w * 3);
    let mut albedo = Vec::with_capacity(h * w * 3);
    let mut normal = Vec::with_capacity(h * w * 3);
    let mut roughness = Vec::with_capacity(h * w);
    let mut metallic = Vec::with_capacity(h * w);
    let mut depth = Vec::with_capacity(h * w);
    let mut coverage = Vec::with_capacity(h * w);
    for s in &samples {
        radiance.extend_from_slice(&s.radiance.to_array());
        albedo.extend_from_slice(&s.albedo.to_array());
        normal.extend_from_slice(&s.normal_cam.to_array());
        roughness.push(s.roughness);
        metallic.push(s.metallic);
        depth.push(s.depth);
        coverage.push(if s.covered { 1.0 } else { 0.0 });
    }
    let image = LinearImage::new(Map::new(h, w, 3, radiance)?)?;
    let gbuffer = GBuffer {
        albedo: Map::new(h, w, 3, albedo)?,
        normal: Map::new(h, w, 3, normal)?,
        roughness: Map::new(h, w, 1, roughness)?,
        metallic: Map::new(h, w, 1, metallic)?,
        depth: Map::new(h, w, 1, depth)?,
        coverage: Map::new(h, w, 1, coverage)?,
    };
    Ok((image, gbuffer))
}

/// Surface point of foreground pixel `p` in world space, reconstructed from
/// the G-buffer and camera.
pub fn surface_point(g: &GBuffer, cam: &CameraPose, frame: &CameraFrame, p: usize) -> SurfacePoint {
    let (row, col) = (p / cam.width, p % cam.width);
    let dir = cam.ray_dir(frame, row, col);
    SurfacePoint {
        position: cam.position + dir * g.depth.pixel(p)[0],
        normal: frame.to_world(g.camera_normal(p)),
        view: -dir,
    }
}

/// 1 on foreground pixels that face the light and see it, else 0.
pub fn lit_mask(scene: &SceneSpec, cam: &CameraPose, g: &GBuffer, light: &LightParams) -> Map {
    let frame = cam.frame();
    let data = (0..g.coverage.pixels())
        .map(|p| {
            if !g.is_foreground(p) {
                return 0.0;
            }
            let sp = surface_point(g, cam, &frame, p);
            let (l, _) = light.incident(sp.position);
            f64::from(sp.normal.dot(l) > 0.0 && visibility(scene, sp.position, sp.normal, light) == 1)
        })
        .collect();
    Map::new(g.height(), g.width(), 1, data).expect("shape from g-buffer")
}

/// Per-pixel cast-shadow mask for `light`: 1 where the pixel faces the light
/// but the shadow ray is blocked.
pub fn cast_shadow_mask(scene: &SceneSpec, cam: &CameraPose, g: &GBuffer, light: &LightParams) -> Map {
    let frame = cam.frame();
    let data = (0..g.coverage.pixels())
        .map(|p| {
            if !g.is_foreground(p) {
                return 0.0;
            }
            let sp = surface_point(g, cam, &frame, p);
            let (l, _) = light.incident(sp.position);
            if sp.normal.dot(l) > 0.0 && visibility(scene, sp.position, sp.normal, light) == 0 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    Map::new(g.height(), g.width(), 1, data).expect("shape from g-buffer")
}
