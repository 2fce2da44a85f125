//! Analytic relighting from per-pixel intrinsics.
//!
//! The target light is `apply_delta(source, Δℓ)`; each foreground pixel is
//! re-shaded with the renderer's BRDF. Local mode ignores occlusion, so cast
//! shadows present in the source or target are not reproduced. Geometric
//! mode additionally traces shadow rays through a supplied scene.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LinearImage, Map};
use crate::light::{apply_delta_with, DeltaL, LightParams, RangePolicy};
use crate::mask::{mask_features, predict_mask, MaskPredictor, SoftMask};
use crate::math::Vec3;
use crate::render::{
    shade_pixel, visibility, CameraFrame, CameraPose, GBuffer, Material, SceneSpec, SurfacePoint, MIN_ROUGHNESS,
};

/// Per-pixel materials and camera-space normals, from a G-buffer or a
/// predicted proxy. Depth is optional.
#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub albedo: Map,
    pub normal: Map,
    pub roughness: Map,
    pub metallic: Map,
    pub coverage: Map,
    pub depth: Option<Map>,
}

impl From<&GBuffer> for Intrinsics {
    fn from(g: &GBuffer) -> Self {
        Intrinsics {
            albedo: g.albedo.clone(),
            normal: g.normal.clone(),
            roughness: g.roughness.clone(),
            metallic: g.metallic.clone(),
            coverage: g.coverage.clone(),
            depth: Some(g.depth.clone()),
        }
    }
}

impl Intrinsics {
    pub fn height(&self) -> usize {
        self.coverage.height()
    }

    pub fn width(&self) -> usize {
        self.coverage.width()
    }

    pub fn check_size(&self, height: usize, width: usize) -> Result<()> {
        let planes = [
            (&self.albedo, 3),
            (&self.normal, 3),
            (&self.roughness, 1),
            (&self.metallic, 1),
            (&self.coverage, 1),
        ];
        let depth_ok = self
            .depth
            .as_ref()
            .is_none_or(|d| d.height() == height && d.width() == width && d.channels() == 1);
        let ok = depth_ok
            && planes
                .iter()
                .all(|(m, c)| m.height() == height && m.width() == width && m.channels() == *c);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape(format!("intrinsics do not match a {height}x{width} image")))
        }
    }

    pub fn is_foreground(&self, p: usize) -> bool {
        self.coverage.data()[p] > 0.5
    }

    /// Material at `p`, roughness floored at the renderer minimum.
    pub fn material(&self, p: usize) -> Material {
        let a = self.albedo.pixel(p);
        Material {
            albedo: Vec3::new(a[0], a[1], a[2]),
            roughness: self.roughness.data()[p].max(MIN_ROUGHNESS),
            metallic: self.metallic.data()[p],
        }
    }

    /// World-space shading frame at `p`. Without depth the surface position
    /// is approximated by the camera's look-at point; the view direction is
    /// always the exact pixel ray.
    pub fn surface_point(&self, cam: &CameraPose, frame: &CameraFrame, p: usize) -> SurfacePoint {
        let (row, col) = (p / cam.width, p % cam.width);
        let dir = cam.ray_dir(frame, row, col);
        let n = self.normal.pixel(p);
        let position = match &self.depth {
            Some(d) => cam.position + dir * d.data()[p],
            None => cam.look_at,
        };
        SurfacePoint {
            position,
            normal: frame.to_world(Vec3::new(n[0], n[1], n[2])),
            view: -dir,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelightMode {
    /// Shading only; occlusion ignored.
    #[default]
    Local,
    /// Shading with shadow rays through the supplied scene.
    Geometric,
}

#[derive(Debug, Clone, Copy)]
pub struct RelightRequest<'a> {
    pub source_image: &'a LinearImage,
    pub intrinsics: &'a Intrinsics,
    pub camera: &'a CameraPose,
    pub source_light: &'a LightParams,
    pub delta: &'a DeltaL,
    pub mode: RelightMode,
    /// Required in geometric mode.
    pub scene: Option<&'a SceneSpec>,
    pub policy: RangePolicy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Relit {
    pub image: LinearImage,
    pub target_light: LightParams,
    /// Parameters clamped under [`RangePolicy::Clamp`].
    pub warnings: Vec<String>,
}

/// Re-shades every foreground pixel under the edited light. Background
/// pixels are copied from the source image.
pub fn relight(req: &RelightRequest) -> Result<Relit> {
    let (h, w) = (req.source_image.height(), req.source_image.width());
    req.intrinsics.check_size(h, w)?;
    if req.camera.width != w || req.camera.height != h {
        return Err(Error::Shape("camera resolution does not match the source image".into()));
    }
    let scene = match req.mode {
        RelightMode::Local => None,
        RelightMode::Geometric => {
            if req.intrinsics.depth.is_none() {
                return Err(Error::Config("geometric relighting requires depth".into()));
            }
            Some(
                req.scene
                    .ok_or_else(|| Error::Config("geometric relighting requires a scene".into()))?,
            )
        }
    };
    let (target, warnings) = apply_delta_with(req.source_light, req.delta, req.policy)?;
    let frame = req.camera.frame();
    let src = req.source_image.map();
    let mut data = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        if !req.intrinsics.is_foreground(p) {
            data.extend_from_slice(src.pixel(p));
            continue;
        }
        let sp = req.intrinsics.surface_point(req.camera, &frame, p);
        let (l, irradiance) = target.incident(sp.position);
        let mut radiance = shade_pixel(&req.intrinsics.material(p), sp.normal, sp.view, l, irradiance);
        if let Some(scene) = scene {
            if sp.normal.dot(l) > 0.0 && visibility(scene, sp.position, sp.normal, &target) == 0 {
                radiance = Vec3::ZERO;
            }
        }
        data.extend_from_slice(&radiance.to_array());
    }
    Ok(Relit {
        image: LinearImage::new(Map::new(h, w, 3, data)?)?,
        target_light: target,
        warnings,
    })
}

/// [`relight`] plus the predicted lighting-aware mask for the same edit.
pub fn relight_with_mask(req: &RelightRequest, predictor: &MaskPredictor) -> Result<(Relit, SoftMask)> {
    let relit = relight(req)?;
    let delta = crate::light::delta_illumination(req.source_light, &relit.target_light);
    let features = mask_features(req.source_image, req.intrinsics, req.camera, req.source_light, &delta)?;
    Ok((relit, predict_mask(predictor, &features)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{random_convex_scene, random_delta, random_light, sphere_camera, sphere_fixture_set};
    use crate::light::apply_delta;
    use crate::render::{render, RenderOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &LinearImage, b: &LinearImage) -> f64 {
        a.map().data().iter().zip(b.map().data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn local_mode_matches_fresh_render_on_convex_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..5 {
            let scene = random_convex_scene(&mut rng);
            let cam = sphere_camera(32);
            let source = random_light(&mut rng);
            let delta = random_delta(&source, &mut rng).unwrap();
            let (img, g) = render(&scene, &cam, &source, RenderOptions::default()).unwrap();
            let intr = Intrinsics::from(&g);
            let req = RelightRequest {
                source_image: &img,
                intrinsics: &intr,
                camera: &cam,
                source_light: &source,
                delta: &delta,
                mode: RelightMode::Local,
                scene: None,
                policy: RangePolicy::Error,
            };
            let relit = relight(&req).unwrap();
            let target = apply_delta(&source, &delta).unwrap();
            let (want, _) = render(&scene, &cam, &target, RenderOptions::default()).unwrap();
            assert!(max_abs_diff(&relit.image, &want) <= 1e-5);
        }
    }

    #[test]
    fn energy_doubling_is_exact() {
        let f = &sphere_fixture_set(1, 24, 2).unwrap()[0];
        let intr = Intrinsics::from(&f.gbuffer);
        let zero = DeltaL::default();
        let req = RelightRequest {
            source_image: &f.image,
            intrinsics: &intr,
            camera: &f.camera,
            source_light: &f.light,
            delta: &zero,
            mode: RelightMode::Geometric,
            scene: Some(&f.scene),
            policy: RangePolicy::Error,
        };
        let base = relight(&req).unwrap().image;
        assert!(max_abs_diff(&base, &f.image) <= 1e-6);
        for k in [2.0f64, 4.0, 0.5] {
            let delta = DeltaL {
                delta_log_e: k.ln(),
                ..DeltaL::default()
            };
            let scaled = relight(&RelightRequest { delta: &delta, ..req }).unwrap().image;
            for p in (0..24 * 24).filter(|&p| intr.is_foreground(p)) {
                for c in 0..3 {
                    assert_eq!(scaled.map().pixel(p)[c], k * base.map().pixel(p)[c]);
                }
            }
        }
    }

    #[test]
    fn geometric_mode_needs_depth_and_scene() {
        let f = &sphere_fixture_set(1, 8, 2).unwrap()[0];
        let intr = Intrinsics::from(&f.gbuffer);
        let no_depth = Intrinsics {
            depth: None,
            ..intr.clone()
        };
        let delta = DeltaL::default();
        let mut req = RelightRequest {
            source_image: &f.image,
            intrinsics: &intr,
            camera: &f.camera,
            source_light: &f.light,
            delta: &delta,
            mode: RelightMode::Geometric,
            scene: None,
            policy: RangePolicy::Error,
        };
        assert!(matches!(relight(&req), Err(Error::Config(_))));
        req.intrinsics = &no_depth;
        req.scene = Some(&f.scene);
        assert!(matches!(relight(&req), Err(Error::Config(_))));
    }
}
