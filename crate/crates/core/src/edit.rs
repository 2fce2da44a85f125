//! Interactive light edits in human units, applied to immutable scene
//! snapshots. Shared by the HTTP service and the CLI batch replay.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{derive_seed, procedural_scene, sample_base_light, sample_camera_hemisphere, Manifest};
use crate::error::{Error, Result};
use crate::image::{encode_gray_png, encode_srgb_png, load_image, LinearImage};
use crate::light::{apply_delta, delta_illumination, DeltaL, LightKind, LightParams, RangePolicy, TEMPERATURE_SCALE_K};
use crate::mask::{gt_mask, MaskConfig, MaskPredictor, SoftMask};
use crate::math::Vec3;
use crate::metrics::{score_pair, PairScores};
use crate::relight::{relight, relight_with_mask, Intrinsics, RelightMode, RelightRequest};
use crate::render::{render, CameraPose, RenderOptions, SceneSpec};

/// Largest accepted |yaw| change in degrees.
pub const MAX_DYAW_DEG: f64 = 180.0;
/// Largest accepted |pitch| change in degrees.
pub const MAX_DPITCH_DEG: f64 = 80.0;
pub const ENERGY_FACTOR_RANGE: (f64, f64) = (0.1, 10.0);
/// Largest accepted |temperature| change in kelvin.
pub const MAX_DTEMP_K: f64 = 5000.0;

/// A light edit relative to a scene's source light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub scene_id: String,
    #[serde(default)]
    pub dyaw_deg: f64,
    #[serde(default)]
    pub dpitch_deg: f64,
    /// Natural-log energy change; exclusive with `denergy_factor`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dlux_log: Option<f64>,
    /// Multiplicative energy change; exclusive with `dlux_log`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denergy_factor: Option<f64>,
    #[serde(default)]
    pub dtemp_k: f64,
    #[serde(default)]
    pub show_mask: bool,
}

fn check_bound(name: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::Range(format!("{name} must be finite, got {v}")));
    }
    if v < lo {
        return Err(Error::Range(format!("{name} = {v} is below the minimum {lo}")));
    }
    if v > hi {
        return Err(Error::Range(format!("{name} = {v} exceeds the maximum {hi}")));
    }
    Ok(())
}

impl EditRequest {
    /// An edit that leaves the light unchanged.
    pub fn identity(scene_id: impl Into<String>) -> Self {
        EditRequest {
            scene_id: scene_id.into(),
            dyaw_deg: 0.0,
            dpitch_deg: 0.0,
            dlux_log: None,
            denergy_factor: None,
            dtemp_k: 0.0,
            show_mask: false,
        }
    }

    /// Range errors name the violated bound.
    pub fn validate(&self) -> Result<()> {
        check_bound("dyaw_deg", self.dyaw_deg, -MAX_DYAW_DEG, MAX_DYAW_DEG)?;
        check_bound("dpitch_deg", self.dpitch_deg, -MAX_DPITCH_DEG, MAX_DPITCH_DEG)?;
        check_bound("dtemp_k", self.dtemp_k, -MAX_DTEMP_K, MAX_DTEMP_K)?;
        let (lo, hi) = ENERGY_FACTOR_RANGE;
        match (self.dlux_log, self.denergy_factor) {
            (Some(_), Some(_)) => Err(Error::Range("give at most one of dlux_log and denergy_factor".into())),
            (Some(l), None) => check_bound("dlux_log", l, lo.ln(), hi.ln()),
            (None, Some(f)) => check_bound("denergy_factor", f, lo, hi),
            (None, None) => Ok(()),
        }
    }

    pub fn delta_log_energy(&self) -> f64 {
        match (self.dlux_log, self.denergy_factor) {
            (Some(l), _) => l,
            (None, Some(f)) => f.ln(),
            (None, None) => 0.0,
        }
    }

    /// Converts to a light delta; the target must satisfy light invariants.
    /// The result is a fixed point of `delta_illumination(source,
    /// apply_delta(source, ·))`, so echoing it back reproduces the target.
    pub fn to_delta(&self, source: &LightParams) -> Result<DeltaL> {
        self.validate()?;
        let mut delta = DeltaL::from_edit(
            source,
            self.dyaw_deg.to_radians(),
            self.dpitch_deg.to_radians(),
            self.delta_log_energy(),
            self.dtemp_k / TEMPERATURE_SCALE_K,
        )?;
        // Rounding in (source + d) − source settles within a few rounds.
        for _ in 0..8 {
            let next = delta_illumination(source, &apply_delta(source, &delta)?);
            if next == delta {
                break;
            }
            delta = next;
        }
        Ok(delta)
    }
}

/// A dataset record of the same view whose light may match an edit target.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub light: LightParams,
    pub image_path: PathBuf,
}

/// Everything needed to relight one view; never mutated after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSnapshot {
    pub id: String,
    pub scene: SceneSpec,
    pub camera: CameraPose,
    pub light: LightParams,
    pub image: LinearImage,
    pub intrinsics: Intrinsics,
    pub references: Vec<Reference>,
}

/// Listing entry for a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub id: String,
    pub width: usize,
    pub height: usize,
    pub light: LightParams,
}

impl SceneSnapshot {
    pub fn summary(&self) -> SceneSummary {
        SceneSummary {
            id: self.id.clone(),
            width: self.camera.width,
            height: self.camera.height,
            light: self.light,
        }
    }

    pub fn preview_png(&self, exposure: f64) -> Result<Vec<u8>> {
        encode_srgb_png(&self.image, exposure)
    }

    /// Dataset image rendered under `light`, if one exists.
    fn reference_for(&self, light: &LightParams) -> Option<&Reference> {
        self.references.iter().find(|r| lights_match(&r.light, light))
    }
}

/// Equal up to rounding from angle and log-energy arithmetic.
fn lights_match(a: &LightParams, b: &LightParams) -> bool {
    const TOL: f64 = 1e-9;
    let close = |x: f64, y: f64| (x - y).abs() <= TOL * (1.0 + x.abs().max(y.abs()));
    let (pa, pb) = (a.position(), b.position());
    let same_position = match (pa, pb) {
        (None, None) => true,
        (Some(p), Some(q)) => close(p.x, q.x) && close(p.y, q.y) && close(p.z, q.z),
        _ => false,
    };
    same_position
        && close(a.yaw_rad(), b.yaw_rad())
        && close(a.pitch_rad(), b.pitch_rad())
        && close(a.energy_lux(), b.energy_lux())
        && close(a.temperature_k(), b.temperature_k())
}

/// Immutable set of scenes keyed by id.
#[derive(Debug, Clone, Default)]
pub struct SceneLibrary {
    scenes: BTreeMap<String, Arc<SceneSnapshot>>,
}

impl SceneLibrary {
    /// One scene per (object, view), lit by the view's lowest light id.
    /// Other lights of the view become ground-truth references.
    pub fn from_manifest(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::load(manifest_path)?;
        let root = manifest_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut views: BTreeMap<(u32, u32), Vec<&crate::dataset::SampleRecord>> = BTreeMap::new();
        for r in &manifest.records {
            views.entry((r.object_id, r.view_id)).or_default().push(r);
        }
        let snapshots: Vec<Result<SceneSnapshot>> = views
            .into_par_iter()
            .map(|((o, v), recs)| {
                let source = recs.iter().min_by_key(|r| r.light_id).expect("nonempty group");
                let (_, gbuffer) = source.render()?;
                Ok(SceneSnapshot {
                    id: format!("o{o:03}_v{v:02}"),
                    scene: source.scene.clone(),
                    camera: source.camera,
                    light: source.light,
                    image: source.load_image(&root)?,
                    intrinsics: Intrinsics::from(&gbuffer),
                    references: recs
                        .iter()
                        .map(|r| Reference {
                            light: r.light,
                            image_path: root.join(&r.image_path),
                        })
                        .collect(),
                })
            })
            .collect();
        Self::from_snapshots(snapshots.into_iter().collect::<Result<Vec<_>>>()?)
    }

    /// `count` procedural scenes without dataset references.
    pub fn procedural(count: usize, seed: u64, size: usize) -> Result<Self> {
        let snapshots: Vec<Result<SceneSnapshot>> = (0..count as u64)
            .into_par_iter()
            .map(|i| {
                let scene = procedural_scene(derive_seed(seed, &[1, i]));
                let camera = sample_camera_hemisphere(
                    derive_seed(seed, &[2, i]),
                    (3.5, 4.5),
                    Vec3::new(0.0, 0.0, 0.3),
                    40f64.to_radians(),
                    size,
                    size,
                )?;
                let light = sample_base_light(derive_seed(seed, &[3, i]), LightKind::Directional)?;
                let (image, gbuffer) = render(&scene, &camera, &light, RenderOptions::default())?;
                Ok(SceneSnapshot {
                    id: format!("p{i:03}"),
                    scene,
                    camera,
                    light,
                    image,
                    intrinsics: Intrinsics::from(&gbuffer),
                    references: Vec::new(),
                })
            })
            .collect();
        Self::from_snapshots(snapshots.into_iter().collect::<Result<Vec<_>>>()?)
    }

    pub fn from_snapshots(snapshots: Vec<SceneSnapshot>) -> Result<Self> {
        let mut scenes = BTreeMap::new();
        for s in snapshots {
            let id = s.id.clone();
            if scenes.insert(id.clone(), Arc::new(s)).is_some() {
                return Err(Error::Config(format!("duplicate scene id {id}")));
            }
        }
        Ok(SceneLibrary { scenes })
    }

    pub fn get(&self, id: &str) -> Option<Arc<SceneSnapshot>> {
        self.scenes.get(id).cloned()
    }

    pub fn summaries(&self) -> Vec<SceneSummary> {
        self.scenes.values().map(|s| s.summary()).collect()
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditOutcome {
    pub image: LinearImage,
    pub png: Vec<u8>,
    pub mask: Option<SoftMask>,
    pub mask_png: Option<Vec<u8>>,
    /// The exact delta applied; equals `delta_illumination(source, target)`.
    pub delta: DeltaL,
    pub target_light: LightParams,
    /// Against the dataset image for the target light, when one exists.
    pub metrics: Option<PairScores>,
}

/// Relights a snapshot with shadows traced through its scene. An identity
/// edit returns the source image unchanged. The mask comes from `predictor`
/// when given, otherwise from the source/relit image pair.
pub fn apply_edit(
    snapshot: &SceneSnapshot,
    req: &EditRequest,
    predictor: Option<&MaskPredictor>,
    exposure: f64,
) -> Result<EditOutcome> {
    let delta = req.to_delta(&snapshot.light)?;
    let (image, target_light, mask) = if delta.is_zero() {
        let mask = req.show_mask.then(|| SoftMask::zeros(snapshot.camera.height, snapshot.camera.width));
        (snapshot.image.clone(), snapshot.light, mask)
    } else {
        let rr = RelightRequest {
            source_image: &snapshot.image,
            intrinsics: &snapshot.intrinsics,
            camera: &snapshot.camera,
            source_light: &snapshot.light,
            delta: &delta,
            mode: RelightMode::Geometric,
            scene: Some(&snapshot.scene),
            policy: RangePolicy::Error,
        };
        match (req.show_mask, predictor) {
            (true, Some(p)) => {
                let (relit, mask) = relight_with_mask(&rr, p)?;
                (relit.image, relit.target_light, Some(mask))
            }
            (true, None) => {
                let relit = relight(&rr)?;
                let mask = gt_mask(
                    &snapshot.image,
                    &relit.image,
                    Some(&snapshot.intrinsics.coverage),
                    &MaskConfig::default(),
                )?;
                (relit.image, relit.target_light, Some(mask))
            }
            (false, _) => {
                let relit = relight(&rr)?;
                (relit.image, relit.target_light, None)
            }
        }
    };
    let metrics = match snapshot.reference_for(&target_light) {
        Some(r) => Some(score_pair(&image, &load_image(&r.image_path)?, exposure)?),
        None => None,
    };
    Ok(EditOutcome {
        png: encode_srgb_png(&image, exposure)?,
        mask_png: mask.as_ref().map(|m| encode_gray_png(m.map())).transpose()?,
        image,
        mask,
        delta,
        target_light,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn library() -> SceneLibrary {
        SceneLibrary::procedural(2, 5, 32).unwrap()
    }

    #[test]
    fn identity_edit_returns_preview_bytes() {
        let lib = library();
        let s = lib.get("p000").unwrap();
        let out = apply_edit(&s, &EditRequest::identity("p000"), None, 1.0).unwrap();
        assert_eq!(out.png, s.preview_png(1.0).unwrap());
        assert!(out.delta.is_zero());
    }

    #[test]
    fn temperature_edit_echoes_scaled_delta() {
        let s = library().get("p001").unwrap();
        let start = s.light.temperature_k();
        let req = EditRequest {
            dtemp_k: -2700.0,
            ..EditRequest::identity("p001")
        };
        let out = apply_edit(&s, &req, None, 1.0).unwrap();
        assert_eq!(out.delta.delta_tau, -0.27);
        assert!((out.target_light.temperature_k() - (start - 2700.0)).abs() < 1e-9);
    }

    #[test]
    fn echo_round_trips_through_the_target_light() {
        let s = library().get("p000").unwrap();
        let req = EditRequest {
            dyaw_deg: 35.0,
            dpitch_deg: -10.0,
            denergy_factor: Some(0.5),
            dtemp_k: 800.0,
            ..EditRequest::identity("p000")
        };
        let out = apply_edit(&s, &req, None, 1.0).unwrap();
        assert_eq!(delta_illumination(&s.light, &out.target_light), out.delta);
    }

    #[test]
    fn out_of_range_edits_name_the_bound() {
        let bad = [
            EditRequest {
                dyaw_deg: 200.0,
                ..EditRequest::identity("p000")
            },
            EditRequest {
                denergy_factor: Some(0.0),
                ..EditRequest::identity("p000")
            },
            EditRequest {
                dlux_log: Some(0.1),
                denergy_factor: Some(2.0),
                ..EditRequest::identity("p000")
            },
            EditRequest {
                dtemp_k: f64::NAN,
                ..EditRequest::identity("p000")
            },
        ];
        for req in bad {
            match req.validate() {
                Err(Error::Range(msg)) => assert!(!msg.is_empty()),
                other => panic!("expected a range error, got {other:?}"),
            }
        }
        assert!(matches!(
            EditRequest {
                dyaw_deg: 200.0,
                ..EditRequest::identity("p000")
            }
            .validate(),
            Err(Error::Range(m)) if m.contains("180")
        ));
    }

    #[test]
    fn halving_energy_halves_foreground_radiance() {
        let s = library().get("p000").unwrap();
        let req = EditRequest {
            denergy_factor: Some(0.5),
            ..EditRequest::identity("p000")
        };
        let out = apply_edit(&s, &req, None, 1.0).unwrap();
        let fg: Vec<usize> = (0..32 * 32).filter(|&p| s.intrinsics.is_foreground(p)).collect();
        let mean = |img: &LinearImage| fg.iter().map(|&p| img.rgb(p).iter().sum::<f64>()).sum::<f64>();
        let ratio = mean(&out.image) / mean(&s.image);
        assert!((ratio - 0.5).abs() < 1e-5, "{ratio}");
    }
}
