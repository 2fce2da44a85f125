//! Cook–Torrance shading: Lambert diffuse plus GGX specular with separable
//! Smith visibility and Schlick Fresnel.

use std::f64::consts::PI;

use crate::math::Vec3;
use crate::render::scene::Material;

/// Floor on n·v to keep the specular denominator finite at grazing views.
const MIN_NDOTV: f64 = 1e-4;

pub fn ggx_distribution(n_dot_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_dot_h * n_dot_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

fn smith_g1(n_dot_x: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * n_dot_x / (n_dot_x + (a2 + (1.0 - a2) * n_dot_x * n_dot_x).sqrt())
}

pub fn fresnel_schlick(f0: Vec3, v_dot_h: f64) -> Vec3 {
    let k = (1.0 - v_dot_h).clamp(0.0, 1.0).powi(5);
    f0 + (Vec3::splat(1.0) - f0) * k
}

/// Diffuse and specular BRDF values (not yet multiplied by n·l).
pub fn brdf(mat: &Material, n: Vec3, v: Vec3, l: Vec3) -> (Vec3, Vec3) {
    let diffuse = mat.albedo * ((1.0 - mat.metallic) / PI);
    let n_dot_l = n.dot(l);
    let n_dot_v = n.dot(v).max(MIN_NDOTV);
    let Some(h) = (l + v).try_normalize() else {
        return (diffuse, Vec3::ZERO);
    };
    let alpha = mat.roughness * mat.roughness;
    let d = ggx_distribution(n.dot(h).max(0.0), alpha);
    let g = smith_g1(n_dot_l, alpha) * smith_g1(n_dot_v, alpha);
    let f0 = Vec3::splat(0.04) * (1.0 - mat.metallic) + mat.albedo * mat.metallic;
    let f = fresnel_schlick(f0, v.dot(h).max(0.0));
    let specular = f * (d * g / (4.0 * n_dot_l * n_dot_v));
    (diffuse, specular)
}

/// Outgoing radiance `(diffuse + specular) · irradiance · max(0, n·l)`.
pub fn shade_pixel(mat: &Material, n: Vec3, v: Vec3, l: Vec3, irradiance: Vec3) -> Vec3 {
    let n_dot_l = n.dot(l);
    if n_dot_l <= 0.0 {
        return Vec3::ZERO;
    }
    let (diffuse, specular) = brdf(mat, n, v, l);
    (diffuse + specular).mul_elem(irradiance) * n_dot_l
}
