use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

pub const MIN_ROUGHNESS: f64 = 0.02;

/// Lower bound on the parametric distance of accepted hits.
const HIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: Vec3,
    pub roughness: f64,
    pub metallic: f64,
}

impl Material {
    pub fn new(albedo: Vec3, roughness: f64, metallic: f64) -> Result<Self> {
        let m = Material {
            albedo,
            roughness,
            metallic,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let a = self.albedo;
        if !(a.is_finite() && a.min_elem() >= 0.0 && a.max_elem() <= 1.0) {
            return Err(Error::Config(format!("albedo {a:?} outside [0,1]^3")));
        }
        if !(MIN_ROUGHNESS..=1.0).contains(&self.roughness) {
            return Err(Error::Config(format!(
                "roughness {} outside [{MIN_ROUGHNESS}, 1]",
                self.roughness
            )));
        }
        if !(0.0..=1.0).contains(&self.metallic) {
            return Err(Error::Config(format!("metallic {} outside [0, 1]", self.metallic)));
        }
        Ok(())
    }
}

/// Canonical shapes in object space. The plane is the square |x|,|y| ≤ 1
/// on z = 0 with normal +z; the box spans [-1,1]³.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Box,
    Plane,
}

/// `world = rotation · (scale ⊙ object) + translation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: Vec3,
}

impl Transform {
    pub fn new(rotation: Mat3, translation: Vec3, scale: Vec3) -> Self {
        Transform {
            rotation,
            translation,
            scale,
        }
    }

    pub fn translate_scale(translation: Vec3, scale: f64) -> Self {
        Transform::new(Mat3::IDENTITY, translation, Vec3::splat(scale))
    }

    pub fn validate(&self) -> Result<()> {
        if !self.rotation.is_rotation(1e-9) {
            return Err(Error::Config("transform rotation is not orthonormal".into()));
        }
        let s = self.scale;
        if !(s.is_finite() && s.x.abs() > 1e-12 && s.y.abs() > 1e-12 && s.z.abs() > 1e-12) {
            return Err(Error::Config(format!("transform scale {s:?} is not invertible")));
        }
        if !self.translation.is_finite() {
            return Err(Error::Config("transform translation not finite".into()));
        }
        Ok(())
    }

    fn to_object(&self, v: Vec3) -> Vec3 {
        let r = self.rotation.transpose().mul_vec(v);
        Vec3::new(r.x / self.scale.x, r.y / self.scale.y, r.z / self.scale.z)
    }

    /// Applies a rigid motion on top of this transform.
    pub fn rigid_then(&self, rotation: &Mat3, translation: Vec3) -> Transform {
        Transform {
            rotation: rotation.mul_mat(&self.rotation),
            translation: rotation.mul_vec(self.translation) + translation,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub transform: Transform,
    pub material: Material,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub primitives: Vec<Primitive>,
    pub background: Vec3,
}

/// Closest intersection along a ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Outward geometric normal in world space.
    pub normal: Vec3,
    pub primitive: usize,
}

impl Primitive {
    /// Ray parameter and world normal of the first hit with `t > tmin`.
    pub fn intersect(&self, origin: Vec3, dir: Vec3, tmin: f64) -> Option<(f64, Vec3)> {
        let tr = &self.transform;
        let o = tr.to_object(origin - tr.translation);
        let d = tr.to_object(dir);
        let (t, n_obj) = match self.shape {
            Shape::Sphere => {
                let a = d.dot(d);
                let b = o.dot(d);
                let c = o.dot(o) - 1.0;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                let t0 = (-b - sq) / a;
                let t1 = (-b + sq) / a;
                let t = if t0 > tmin {
                    t0
                } else if t1 > tmin {
                    t1
                } else {
                    return None;
                };
                (t, o + d * t)
            }
            Shape::Box => {
                let mut t_near = f64::NEG_INFINITY;
                let mut t_far = f64::INFINITY;
                for k in 0..3 {
                    let (ok, dk) = (o[k], d[k]);
                    if dk.abs() < 1e-300 {
                        if ok.abs() > 1.0 {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-1.0 - ok) / dk;
                    let tb = (1.0 - ok) / dk;
                    t_near = t_near.max(ta.min(tb));
                    t_far = t_far.min(ta.max(tb));
                }
                if t_near > t_far {
                    return None;
                }
                let t = if t_near > tmin {
                    t_near
                } else if t_far > tmin {
                    t_far
                } else {
                    return None;
                };
                let p = o + d * t;
                let (ax, ay, az) = (p.x.abs(), p.y.abs(), p.z.abs());
                let n = if ax >= ay && ax >= az {
                    Vec3::new(p.x.signum(), 0.0, 0.0)
                } else if ay >= az {
                    Vec3::new(0.0, p.y.signum(), 0.0)
                } else {
                    Vec3::new(0.0, 0.0, p.z.signum())
                };
                (t, n)
            }
            Shape::Plane => {
                if d.z.abs() < 1e-300 {
                    return None;
                }
                let t = -o.z / d.z;
                if t <= tmin {
                    return None;
                }
                let p = o + d * t;
                if p.x.abs() > 1.0 || p.y.abs() > 1.0 {
                    return None;
                }
                (t, Vec3::Z)
            }
        };
        // Normals transform by the inverse transpose: R · S⁻¹.
        let s = tr.scale;
        let n = tr
            .rotation
            .mul_vec(Vec3::new(n_obj.x / s.x, n_obj.y / s.y, n_obj.z / s.z))
            .normalize();
        Some((t, n))
    }
}

impl SceneSpec {
    pub fn new(primitives: Vec<Primitive>, background: Vec3) -> Result<Self> {
        let s = SceneSpec {
            primitives,
            background,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.primitives.is_empty() {
            return Err(Error::Config("scene needs at least one primitive".into()));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.transform
                .validate()
                .and_then(|_| p.material.validate())
                .map_err(|e| Error::Config(format!("primitive {i}: {e}")))?;
        }
        let b = self.background;
        if !(b.is_finite() && b.min_elem() >= 0.0) {
            return Err(Error::Config(format!("background {b:?} must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn intersect(&self, origin: Vec3, dir: Vec3) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, p) in self.primitives.iter().enumerate() {
            if let Some((t, normal)) = p.intersect(origin, dir, HIT_EPS) {
                if best.is_none_or(|b| t < b.t) {
                    best = Some(Hit {
                        t,
                        normal,
                        primitive: i,
                    });
                }
            }
        }
        best
    }

    /// True if any primitive is hit at parameter in (0, tmax).
    pub fn occluded(&self, origin: Vec3, dir: Vec3, tmax: f64) -> bool {
        self.primitives
            .iter()
            .any(|p| p.intersect(origin, dir, HIT_EPS).is_some_and(|(t, _)| t < tmax))
    }

    /// The same scene moved by a rigid transform.
    pub fn rigidly_moved(&self, rotation: &Mat3, translation: Vec3) -> SceneSpec {
        SceneSpec {
            primitives: self
                .primitives
                .iter()
                .map(|p| Primitive {
                    transform: p.transform.rigid_then(rotation, translation),
                    ..*p
                })
                .collect(),
            background: self.background,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prim(shape: Shape, transform: Transform) -> Primitive {
        Primitive {
            shape,
            transform,
            material: Material::new(Vec3::splat(0.5), 0.5, 0.0).unwrap(),
        }
    }

    #[test]
    fn sphere_hit_distance_and_normal() {
        let p = prim(Shape::Sphere, Transform::translate_scale(Vec3::new(0.0, 0.0, 0.0), 2.0));
        let (t, n) = p.intersect(Vec3::new(0.0, 0.0, 5.0), -Vec3::Z, 0.0).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        assert!((n - Vec3::Z).norm() < 1e-12);
    }

    #[test]
    fn scaled_box_faces() {
        let p = prim(
            Shape::Box,
            Transform::new(Mat3::IDENTITY, Vec3::ZERO, Vec3::new(1.0, 2.0, 0.5)),
        );
        let (t, n) = p.intersect(Vec3::new(0.0, 5.0, 0.0), -Vec3::Y, 0.0).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        assert!((n - Vec3::Y).norm() < 1e-12);
        assert!(p.intersect(Vec3::new(1.5, 5.0, 0.0), -Vec3::Y, 0.0).is_none());
    }

    #[test]
    fn rotated_plane_normal() {
        let r = Mat3::rotation(Vec3::Y, std::f64::consts::FRAC_PI_2);
        let p = prim(Shape::Plane, Transform::new(r, Vec3::ZERO, Vec3::splat(1.0)));
        let (t, n) = p.intersect(Vec3::new(3.0, 0.2, 0.1), -Vec3::X, 0.0).unwrap();
        assert!((t - 3.0).abs() < 1e-12);
        assert!((n - Vec3::X).norm() < 1e-12);
    }

    #[test]
    fn scene_validation() {
        assert!(SceneSpec::new(vec![], Vec3::ZERO).is_err());
        let mut bad = prim(Shape::Sphere, Transform::translate_scale(Vec3::ZERO, 0.0));
        assert!(SceneSpec::new(vec![bad], Vec3::ZERO).is_err());
        bad.transform.scale = Vec3::splat(1.0);
        bad.material.roughness = 0.01;
        assert!(SceneSpec::new(vec![bad], Vec3::ZERO).is_err());
    }
}
