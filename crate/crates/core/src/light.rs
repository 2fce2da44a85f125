//! Physical light description and the relative-illumination vector.
//!
//! A light is placed by yaw θ and pitch φ (polar angle from +z) and mapped to
//! the unit direction `[cosθ sinφ, sinθ sinφ, cosφ]` pointing from the scene
//! toward the light. Lighting changes are encoded as an 11-vector
//! `[Δs_SH (9), Δln E, Δτ]` where `s_SH` is the order-2 real SH projection of
//! the direction and `Δτ = (τ_t − τ_s) / 10000 K`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::nn::AffineMap;

pub const MIN_TEMPERATURE_K: f64 = 1000.0;
pub const MAX_TEMPERATURE_K: f64 = 12000.0;
/// Kelvin per unit of normalized temperature difference.
pub const TEMPERATURE_SCALE_K: f64 = 10000.0;
/// Illuminance that maps to unit irradiance scale.
pub const REFERENCE_LUX: f64 = 1000.0;
/// Length of the relative-illumination vector.
pub const DELTA_DIM: usize = 11;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightKind {
    Directional,
    Point,
}

/// Unit direction vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Direction {
    /// Accepts `(x, y, z)` only if it has unit norm within 1e-9.
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let n2 = x * x + y * y + z * z;
        if !n2.is_finite() || (n2.sqrt() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Domain(format!(
                "direction ({x}, {y}, {z}) has norm {}, expected 1",
                n2.sqrt()
            )));
        }
        Ok(Direction { x, y, z })
    }

    /// Normalizes `v`; fails on zero or non-finite vectors.
    pub fn from_vec(v: Vec3) -> Result<Self> {
        let u = v
            .try_normalize()
            .ok_or_else(|| Error::Domain(format!("cannot normalize {v:?}")))?;
        Ok(Direction {
            x: u.x,
            y: u.y,
            z: u.z,
        })
    }

    pub fn vec(self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// Nine real SH coefficients ordered (0,0),(1,-1),(1,0),(1,1),(2,-2),(2,-1),(2,0),(2,1),(2,2).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ShVector(pub [f64; 9]);

impl ShVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

impl std::ops::Sub for ShVector {
    type Output = ShVector;
    fn sub(self, o: ShVector) -> ShVector {
        let mut c = [0.0; 9];
        for (k, out) in c.iter_mut().enumerate() {
            *out = self.0[k] - o.0[k];
        }
        ShVector(c)
    }
}

pub fn yaw_pitch_to_direction(yaw: f64, pitch: f64) -> Result<Direction> {
    if !(pitch > 0.0 && pitch < std::f64::consts::PI) || !yaw.is_finite() {
        return Err(Error::Domain(format!(
            "pitch must lie in (0, pi), got {pitch} (yaw {yaw})"
        )));
    }
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    Ok(Direction {
        x: cy * sp,
        y: sy * sp,
        z: cp,
    })
}

// Real SH normalization constants, no Condon–Shortley phase.
const SH_C0: f64 = 0.282_094_791_773_878_14; // ½√(1/π)
const SH_C1: f64 = 0.488_602_511_902_919_9; // √(3/4π)
const SH_C2: f64 = 1.092_548_430_592_079_2; // √(15/4π)
const SH_C3: f64 = 0.315_391_565_252_520_05; // ¼√(5/π)
const SH_C4: f64 = 0.546_274_215_296_039_6; // ¼√(15/π)

pub fn sh_project(d: Direction) -> Result<ShVector> {
    let d = Direction::new(d.x, d.y, d.z)?;
    let (x, y, z) = (d.x, d.y, d.z);
    Ok(ShVector([
        SH_C0,
        SH_C1 * y,
        SH_C1 * z,
        SH_C1 * x,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C2 * x * z,
        SH_C4 * (x * x - y * y),
    ]))
}

/// Physical light. For point lights, yaw/pitch describe the direction from
/// the world origin to `position` and are kept consistent with it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LightParamsRepr", into = "LightParamsRepr")]
pub struct LightParams {
    kind: LightKind,
    yaw_rad: f64,
    pitch_rad: f64,
    position: Option<Vec3>,
    energy_lux: f64,
    temperature_k: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LightParamsRepr {
    kind: LightKind,
    yaw_rad: f64,
    pitch_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    position: Option<Vec3>,
    energy_lux: f64,
    temperature_k: f64,
}

impl TryFrom<LightParamsRepr> for LightParams {
    type Error = Error;
    fn try_from(r: LightParamsRepr) -> Result<Self> {
        let light = match r.kind {
            LightKind::Directional => {
                LightParams::directional(r.yaw_rad, r.pitch_rad, r.energy_lux, r.temperature_k)?
            }
            LightKind::Point => {
                let pos = r
                    .position
                    .ok_or_else(|| Error::Config("point light requires a position".into()))?;
                let l = LightParams::point(pos, r.energy_lux, r.temperature_k)?;
                let angle_err = (l.direction().vec()
                    - yaw_pitch_to_direction(r.yaw_rad, r.pitch_rad)?.vec())
                .norm();
                if angle_err > 1e-9 {
                    return Err(Error::Config(format!(
                        "point light yaw/pitch disagree with position by {angle_err}"
                    )));
                }
                // Keep the stored angles so serialization round-trips exactly.
                LightParams {
                    yaw_rad: r.yaw_rad,
                    pitch_rad: r.pitch_rad,
                    ..l
                }
            }
        };
        Ok(light)
    }
}

impl From<LightParams> for LightParamsRepr {
    fn from(l: LightParams) -> Self {
        LightParamsRepr {
            kind: l.kind,
            yaw_rad: l.yaw_rad,
            pitch_rad: l.pitch_rad,
            position: l.position,
            energy_lux: l.energy_lux,
            temperature_k: l.temperature_k,
        }
    }
}

fn check_photometry(energy_lux: f64, temperature_k: f64) -> Result<()> {
    if !(energy_lux > 0.0 && energy_lux.is_finite()) {
        return Err(Error::Range(format!("energy must be > 0 lux, got {energy_lux}")));
    }
    if !(MIN_TEMPERATURE_K..=MAX_TEMPERATURE_K).contains(&temperature_k) {
        return Err(Error::Range(format!(
            "temperature {temperature_k} K outside [{MIN_TEMPERATURE_K}, {MAX_TEMPERATURE_K}]"
        )));
    }
    Ok(())
}

impl LightParams {
    pub fn directional(yaw_rad: f64, pitch_rad: f64, energy_lux: f64, temperature_k: f64) -> Result<Self> {
        yaw_pitch_to_direction(yaw_rad, pitch_rad).map_err(|e| Error::Range(e.to_string()))?;
        check_photometry(energy_lux, temperature_k)?;
        Ok(LightParams {
            kind: LightKind::Directional,
            yaw_rad,
            pitch_rad,
            position: None,
            energy_lux,
            temperature_k,
        })
    }

    /// Point light; `energy_lux` is the illuminance at 1 m.
    pub fn point(position: Vec3, energy_lux: f64, temperature_k: f64) -> Result<Self> {
        let r = position.norm();
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Range(format!("point light position {position:?} invalid")));
        }
        let pitch_rad = (position.z / r).clamp(-1.0, 1.0).acos();
        let yaw_rad = position.y.atan2(position.x);
        yaw_pitch_to_direction(yaw_rad, pitch_rad).map_err(|e| Error::Range(e.to_string()))?;
        check_photometry(energy_lux, temperature_k)?;
        Ok(LightParams {
            kind: LightKind::Point,
            yaw_rad,
            pitch_rad,
            position: Some(position),
            energy_lux,
            temperature_k,
        })
    }

    pub fn kind(&self) -> LightKind {
        self.kind
    }

    pub fn yaw_rad(&self) -> f64 {
        self.yaw_rad
    }

    pub fn pitch_rad(&self) -> f64 {
        self.pitch_rad
    }

    pub fn position(&self) -> Option<Vec3> {
        self.position
    }

    pub fn energy_lux(&self) -> f64 {
        self.energy_lux
    }

    pub fn temperature_k(&self) -> f64 {
        self.temperature_k
    }

    /// Direction toward the light (from the world origin for point lights).
    pub fn direction(&self) -> Direction {
        yaw_pitch_to_direction(self.yaw_rad, self.pitch_rad).expect("validated at construction")
    }

    /// Same light moved to new angles. Point lights keep their distance.
    pub fn with_angles(&self, yaw_rad: f64, pitch_rad: f64) -> Result<Self> {
        let dir = yaw_pitch_to_direction(yaw_rad, pitch_rad).map_err(|e| Error::Range(e.to_string()))?;
        let position = self.position.map(|p| dir.vec() * p.norm());
        Ok(LightParams {
            yaw_rad,
            pitch_rad,
            position,
            ..*self
        })
    }

    pub fn with_energy(&self, energy_lux: f64) -> Result<Self> {
        check_photometry(energy_lux, self.temperature_k)?;
        Ok(LightParams { energy_lux, ..*self })
    }

    pub fn with_temperature(&self, temperature_k: f64) -> Result<Self> {
        check_photometry(self.energy_lux, temperature_k)?;
        Ok(LightParams {
            temperature_k,
            ..*self
        })
    }

    /// Linear RGB light color scaled by energy, before distance falloff.
    pub fn radiant_scale(&self) -> Vec3 {
        let rgb = temperature_to_rgb(self.temperature_k).expect("validated at construction");
        Vec3::from(rgb) * (self.energy_lux / REFERENCE_LUX)
    }

    /// Unit vector toward the light and RGB irradiance arriving at `p`.
    pub fn incident(&self, p: Vec3) -> (Vec3, Vec3) {
        match self.position {
            None => (self.direction().vec(), self.radiant_scale()),
            Some(pos) => {
                let to = pos - p;
                let d2 = to.norm_squared();
                (to / d2.sqrt(), self.radiant_scale() / d2)
            }
        }
    }
}

/// Exact record of the angular part of an edit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AngularEdit {
    pub dyaw_rad: f64,
    pub dpitch_rad: f64,
}

/// Relative illumination `[Δs_SH, Δln E, Δτ]` plus the angular edit record.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DeltaL {
    pub delta_sh: ShVector,
    pub delta_log_e: f64,
    pub delta_tau: f64,
    pub edit: AngularEdit,
}

impl DeltaL {
    /// The 11 conditioning components; the edit record is not part of it.
    pub fn to_vector(&self) -> [f64; DELTA_DIM] {
        let mut v = [0.0; DELTA_DIM];
        v[..9].copy_from_slice(&self.delta_sh.0);
        v[9] = self.delta_log_e;
        v[10] = self.delta_tau;
        v
    }

    pub fn is_zero(&self) -> bool {
        self.to_vector().iter().all(|&c| c == 0.0)
            && self.edit.dyaw_rad == 0.0
            && self.edit.dpitch_rad == 0.0
    }

    /// Builds the delta for an edit in natural units applied to `source`.
    pub fn from_edit(
        source: &LightParams,
        dyaw_rad: f64,
        dpitch_rad: f64,
        delta_log_e: f64,
        delta_tau: f64,
    ) -> Result<DeltaL> {
        let target = source
            .with_angles(source.yaw_rad + dyaw_rad, source.pitch_rad + dpitch_rad)?
            .with_energy(source.energy_lux * delta_log_e.exp())?
            .with_temperature(source.temperature_k + delta_tau * TEMPERATURE_SCALE_K)?;
        let sh = sh_project(target.direction())? - sh_project(source.direction())?;
        Ok(DeltaL {
            delta_sh: sh,
            delta_log_e,
            delta_tau,
            edit: AngularEdit {
                dyaw_rad,
                dpitch_rad,
            },
        })
    }
}

impl std::ops::Neg for DeltaL {
    type Output = DeltaL;
    fn neg(self) -> DeltaL {
        let mut sh = self.delta_sh;
        sh.0.iter_mut().for_each(|c| *c = -*c);
        DeltaL {
            delta_sh: sh,
            delta_log_e: -self.delta_log_e,
            delta_tau: -self.delta_tau,
            edit: AngularEdit {
                dyaw_rad: -self.edit.dyaw_rad,
                dpitch_rad: -self.edit.dpitch_rad,
            },
        }
    }
}

pub fn delta_illumination(source: &LightParams, target: &LightParams) -> DeltaL {
    let sh_s = sh_project(source.direction()).expect("unit direction");
    let sh_t = sh_project(target.direction()).expect("unit direction");
    DeltaL {
        delta_sh: sh_t - sh_s,
        delta_log_e: target.energy_lux.ln() - source.energy_lux.ln(),
        delta_tau: (target.temperature_k - source.temperature_k) / TEMPERATURE_SCALE_K,
        edit: AngularEdit {
            dyaw_rad: target.yaw_rad - source.yaw_rad,
            dpitch_rad: target.pitch_rad - source.pitch_rad,
        },
    }
}

/// What to do when an edit leaves the valid parameter ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RangePolicy {
    /// Fail with a range error (batch pipelines).
    #[default]
    Error,
    /// Clamp into range and report a warning (interactive use).
    Clamp,
}

/// Inverts [`delta_illumination`] using the angular edit record.
///
/// The SH block must agree with the angular edit within 1e-9; it is not
/// inverted on its own since different directions can share SH differences.
pub fn apply_delta(source: &LightParams, d: &DeltaL) -> Result<LightParams> {
    let (target, warnings) = apply_delta_with(source, d, RangePolicy::Error)?;
    debug_assert!(warnings.is_empty());
    Ok(target)
}

/// [`apply_delta`] with an explicit out-of-range policy. Returns warnings for
/// every clamped parameter.
pub fn apply_delta_with(
    source: &LightParams,
    d: &DeltaL,
    policy: RangePolicy,
) -> Result<(LightParams, Vec<String>)> {
    let mut warnings = Vec::new();
    let yaw = source.yaw_rad + d.edit.dyaw_rad;
    let mut pitch = source.pitch_rad + d.edit.dpitch_rad;
    let mut energy = source.energy_lux * d.delta_log_e.exp();
    let mut temp = source.temperature_k + d.delta_tau * TEMPERATURE_SCALE_K;
    let values_finite = yaw.is_finite() && pitch.is_finite() && energy.is_finite() && temp.is_finite();
    if !values_finite {
        return Err(Error::Range(format!("edit {d:?} produces non-finite light parameters")));
    }
    let pi = std::f64::consts::PI;
    let pitch_ok = pitch > 0.0 && pitch < pi;
    let temp_ok = (MIN_TEMPERATURE_K..=MAX_TEMPERATURE_K).contains(&temp);
    let energy_ok = energy > 0.0;
    match policy {
        RangePolicy::Error => {
            if !pitch_ok {
                return Err(Error::Range(format!("target pitch {pitch} rad outside (0, pi)")));
            }
            if !temp_ok {
                return Err(Error::Range(format!(
                    "target temperature {temp} K outside [{MIN_TEMPERATURE_K}, {MAX_TEMPERATURE_K}]"
                )));
            }
            if !energy_ok {
                return Err(Error::Range(format!("target energy {energy} lux not positive")));
            }
        }
        RangePolicy::Clamp => {
            let eps = 1e-3;
            if !pitch_ok {
                let clamped = pitch.clamp(eps, pi - eps);
                warnings.push(format!("pitch {pitch} clamped to {clamped}"));
                pitch = clamped;
            }
            if !temp_ok {
                let clamped = temp.clamp(MIN_TEMPERATURE_K, MAX_TEMPERATURE_K);
                warnings.push(format!("temperature {temp} K clamped to {clamped} K"));
                temp = clamped;
            }
            if !energy_ok {
                let clamped = f64::MIN_POSITIVE;
                warnings.push(format!("energy {energy} clamped to {clamped}"));
                energy = clamped;
            }
        }
    }
    let target = source
        .with_angles(yaw, pitch)?
        .with_energy(energy)?
        .with_temperature(temp)?;
    if warnings.is_empty() {
        let implied = sh_project(target.direction())? - sh_project(source.direction())?;
        let mismatch = (implied - d.delta_sh).0.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        if mismatch > 1e-9 {
            return Err(Error::Domain(format!(
                "SH difference disagrees with the angular edit by {mismatch:e}"
            )));
        }
    }
    Ok((target, warnings))
}

/// Light color for a correlated color temperature, max channel = 1.
///
/// Piecewise log/power fits to the Planckian locus (Tanner Helland's
/// coefficients). Branches switch where they cross so each channel is
/// continuous in temperature.
pub fn temperature_to_rgb(temperature_k: f64) -> Result<[f64; 3]> {
    if !(MIN_TEMPERATURE_K..=MAX_TEMPERATURE_K).contains(&temperature_k) {
        return Err(Error::Domain(format!(
            "temperature {temperature_k} K outside [{MIN_TEMPERATURE_K}, {MAX_TEMPERATURE_K}]"
        )));
    }
    let t = temperature_k / 100.0;
    let red = if t > 60.0 {
        (329.698_727_446 * (t - 60.0).powf(-0.133_204_759_2)).min(255.0)
    } else {
        255.0
    };
    let green_low = 99.470_802_586_1 * t.ln() - 161.119_568_166_1;
    let green = if t > 60.0 {
        green_low.min(288.122_169_528_3 * (t - 60.0).powf(-0.075_514_849_2))
    } else {
        green_low
    }
    .clamp(0.0, 255.0);
    let blue = if t > 19.0 {
        (138.517_731_223_1 * (t - 10.0).ln() - 305.044_792_730_7).clamp(0.0, 255.0)
    } else {
        0.0
    };
    let max = red.max(green).max(blue);
    Ok([red / max, green / max, blue / max])
}

/// Affine lighting token `proj · Δℓ + bias`.
pub fn project_token(d: &DeltaL, proj: &AffineMap) -> Result<Vec<f64>> {
    proj.apply(&d.to_vector())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn axis_directions() {
        let d = yaw_pitch_to_direction(0.0, FRAC_PI_2).unwrap();
        assert!(close(d.x, 1.0, 1e-15) && close(d.y, 0.0, 1e-15) && close(d.z, 0.0, 1e-15));
        let d = yaw_pitch_to_direction(FRAC_PI_2, FRAC_PI_2).unwrap();
        assert!(close(d.x, 0.0, 1e-15) && close(d.y, 1.0, 1e-15) && close(d.z, 0.0, 1e-15));
        let d = yaw_pitch_to_direction(0.0, FRAC_PI_4).unwrap();
        let h = 2f64.sqrt() / 2.0;
        assert!(close(d.x, h, 1e-15) && close(d.y, 0.0, 1e-15) && close(d.z, h, 1e-15));
    }

    #[test]
    fn pitch_boundaries_rejected() {
        for bad in [0.0, PI, -0.1, 4.0, f64::NAN] {
            match yaw_pitch_to_direction(0.3, bad) {
                Err(Error::Domain(msg)) => assert!(msg.contains("pitch")),
                other => panic!("expected domain error for {bad}, got {other:?}"),
            }
        }
    }

    #[test]
    fn sh_rejects_non_unit() {
        let d = Direction {
            x: 1.0,
            y: 1.0,
            z: 0.0,
        };
        assert!(matches!(sh_project(d), Err(Error::Domain(_))));
    }

    #[test]
    fn doubling_energy_is_ln2() {
        let a = LightParams::directional(0.4, 1.0, 800.0, 5000.0).unwrap();
        let b = a.with_energy(1600.0).unwrap();
        let d = delta_illumination(&a, &b);
        assert!(close(d.delta_log_e, LN_2, 1e-15));
        assert!(d.delta_sh.0.iter().all(|&c| c == 0.0));
        assert_eq!(d.delta_tau, 0.0);
    }

    #[test]
    fn quarter_turn_yaw_changes_only_sh() {
        let a = LightParams::directional(0.0, PI / 3.0, 1000.0, 6500.0).unwrap();
        let b = a.with_angles(FRAC_PI_2, PI / 3.0).unwrap();
        let d = delta_illumination(&a, &b);
        assert_eq!(d.delta_log_e, 0.0);
        assert_eq!(d.delta_tau, 0.0);
        assert!(d.delta_sh.norm() > 0.1);
    }

    #[test]
    fn apply_delta_examples() {
        let s = LightParams::directional(0.2, 1.1, 1000.0, 4500.0).unwrap();
        assert_eq!(apply_delta(&s, &DeltaL::default()).unwrap(), s);
        let d = DeltaL {
            delta_log_e: LN_2,
            ..Default::default()
        };
        assert!(close(apply_delta(&s, &d).unwrap().energy_lux(), 2000.0, 1e-9));
        let d = DeltaL {
            delta_tau: 0.2,
            ..Default::default()
        };
        assert!(close(apply_delta(&s, &d).unwrap().temperature_k(), 6500.0, 1e-9));
    }

    #[test]
    fn apply_delta_range_errors_and_clamping() {
        let s = LightParams::directional(0.0, 0.3, 1000.0, 1500.0).unwrap();
        let d = DeltaL::from_edit(&s, 0.0, 0.0, 0.0, -0.04).unwrap();
        assert!(apply_delta(&s, &d).is_ok());
        let too_cold = DeltaL {
            delta_tau: -0.06,
            ..Default::default()
        };
        assert!(matches!(apply_delta(&s, &too_cold), Err(Error::Range(_))));
        let over_pole = DeltaL {
            edit: AngularEdit {
                dyaw_rad: 0.0,
                dpitch_rad: -0.5,
            },
            ..Default::default()
        };
        assert!(matches!(apply_delta(&s, &over_pole), Err(Error::Range(_))));
        let (t, warnings) = apply_delta_with(&s, &too_cold, RangePolicy::Clamp).unwrap();
        assert_eq!(t.temperature_k(), MIN_TEMPERATURE_K);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn inconsistent_sh_block_rejected() {
        let s = LightParams::directional(0.0, 1.0, 1000.0, 5000.0).unwrap();
        let mut d = DeltaL::default();
        d.delta_sh.0[3] = 0.1;
        assert!(matches!(apply_delta(&s, &d), Err(Error::Domain(_))));
    }

    #[test]
    fn point_light_angles_follow_position() {
        let p = LightParams::point(Vec3::new(0.0, 2.0, 2.0), 500.0, 3000.0).unwrap();
        assert!(close(p.pitch_rad(), FRAC_PI_4, 1e-15));
        assert!(close(p.yaw_rad(), FRAC_PI_2, 1e-15));
        let moved = p.with_angles(0.0, FRAC_PI_2).unwrap();
        let pos = moved.position().unwrap();
        assert!(close(pos.x, 8f64.sqrt(), 1e-12) && close(pos.z, 0.0, 1e-12));
        let json = crate::json::to_string(&p).unwrap();
        let back: LightParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn light_json_shape() {
        let l = LightParams::directional(0.5, 1.0, 1000.0, 6500.0).unwrap();
        let json = crate::json::to_string(&l).unwrap();
        assert_eq!(
            json,
            r#"{"kind":"directional","yaw_rad":0.5,"pitch_rad":1,"energy_lux":1000,"temperature_k":6500}"#
        );
        let bad = r#"{"kind":"directional","yaw_rad":0.5,"pitch_rad":1,"energy_lux":-1,"temperature_k":6500}"#;
        assert!(serde_json::from_str::<LightParams>(bad).is_err());
    }

    #[test]
    fn delta_json_shape() {
        let a = LightParams::directional(0.0, 1.0, 1000.0, 5000.0).unwrap();
        let b = a.with_angles(0.5, 1.2).unwrap();
        let d = delta_illumination(&a, &b);
        let v: serde_json::Value = serde_json::from_str(&crate::json::to_string(&d).unwrap()).unwrap();
        assert_eq!(v["delta_sh"].as_array().unwrap().len(), 9);
        assert!(v["edit"]["dyaw_rad"].is_number());
        assert!(v["edit"]["dpitch_rad"].is_number());
        assert!(v["delta_log_e"].is_number() && v["delta_tau"].is_number());
    }

    #[test]
    fn temperature_examples() {
        let white = temperature_to_rgb(6600.0).unwrap();
        assert!(white.iter().all(|&c| (c - 1.0).abs() <= 0.05), "{white:?}");
        let warm = temperature_to_rgb(1800.0).unwrap();
        assert_eq!(warm[0], 1.0);
        assert!(warm[2] < 0.3);
        let b = |t| temperature_to_rgb(t).unwrap()[2];
        assert!(b(2000.0) < b(5000.0) && b(5000.0) < b(9000.0));
        assert!(temperature_to_rgb(999.0).is_err());
        assert!(temperature_to_rgb(12001.0).is_err());
    }

    #[test]
    fn temperature_color_is_continuous() {
        let mut prev = temperature_to_rgb(MIN_TEMPERATURE_K).unwrap();
        let mut t = MIN_TEMPERATURE_K;
        while t < MAX_TEMPERATURE_K {
            t += 1.0;
            let cur = temperature_to_rgb(t).unwrap();
            for c in 0..3 {
                assert!((cur[c] - prev[c]).abs() < 5e-3, "jump at {t} K channel {c}");
            }
            assert!(cur.iter().all(|&v| (0.0..=1.0).contains(&v)));
            prev = cur;
        }
    }

    #[test]
    fn token_projection() {
        let a = LightParams::directional(0.0, 1.0, 1000.0, 5000.0).unwrap();
        let b = LightParams::directional(1.0, 0.7, 1500.0, 4000.0).unwrap();
        let d = delta_illumination(&a, &b);
        let id = AffineMap::identity(DELTA_DIM);
        assert_eq!(project_token(&d, &id).unwrap(), d.to_vector().to_vec());
        let zero = project_token(&DeltaL::default(), &AffineMap::random(DELTA_DIM, 16, 3)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        assert!(project_token(&d, &AffineMap::identity(8)).is_err());
    }
}
