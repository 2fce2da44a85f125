//! Desk-scale multi-view, multi-illumination dataset builder.
//!
//! Every procedural object is rendered from several hemisphere cameras under
//! several perturbations of a base light. Records are written as JSON lines
//! (`"schema": "scalight-mini/1"`) together with raw float32 images; full
//! G-buffers are kept only for the supervised subset and the held-out split.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, write_file};
use crate::json;
use crate::light::{
    delta_illumination, DeltaL, LightKind, LightParams, MAX_TEMPERATURE_K, MIN_TEMPERATURE_K,
};
use crate::math::{Mat3, Vec3};
use crate::render::{
    render, CameraPose, GBuffer, GBufferPaths, Material, Primitive, RenderOptions, SceneSpec, Shape,
    Transform,
};

pub const SCHEMA: &str = "scalight-mini/1";

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for a tagged sub-stream of `seed`.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix64(seed), |acc, &t| mix64(acc ^ mix64(t)))
}

/// Which light attributes a variation (or a pair) changes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariationKind {
    Temperature,
    Position,
    Energy,
    Mixed,
}

impl VariationKind {
    pub const ALL: [VariationKind; 4] = [
        VariationKind::Temperature,
        VariationKind::Position,
        VariationKind::Energy,
        VariationKind::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariationKind::Temperature => "temperature",
            VariationKind::Position => "position",
            VariationKind::Energy => "energy",
            VariationKind::Mixed => "mixed",
        }
    }
}

/// Classifies the difference between two lights; `None` if identical.
pub fn classify_variation(a: &LightParams, b: &LightParams) -> Option<VariationKind> {
    let moved = a.yaw_rad() != b.yaw_rad() || a.pitch_rad() != b.pitch_rad() || a.position() != b.position();
    let changed = [
        (a.temperature_k() != b.temperature_k(), VariationKind::Temperature),
        (moved, VariationKind::Position),
        (a.energy_lux() != b.energy_lux(), VariationKind::Energy),
    ];
    let mut kinds = changed.iter().filter(|(c, _)| *c).map(|(_, k)| *k);
    match (kinds.next(), kinds.next()) {
        (None, _) => None,
        (Some(k), None) => Some(k),
        (Some(_), Some(_)) => Some(VariationKind::Mixed),
    }
}

/// Symmetric perturbation half-widths. A zero entry disables that attribute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LightRanges {
    pub yaw_deg: f64,
    pub pitch_deg: f64,
    /// Half-width of the natural-log energy perturbation.
    pub log_energy: f64,
    pub temperature_k: f64,
}

impl Default for LightRanges {
    fn default() -> Self {
        LightRanges {
            yaw_deg: 90.0,
            pitch_deg: 20.0,
            log_energy: std::f64::consts::LN_2,
            temperature_k: 2000.0,
        }
    }
}

impl LightRanges {
    fn enabled_kinds(&self) -> Vec<VariationKind> {
        let mut kinds = Vec::new();
        if self.temperature_k > 0.0 {
            kinds.push(VariationKind::Temperature);
        }
        if self.yaw_deg > 0.0 || self.pitch_deg > 0.0 {
            kinds.push(VariationKind::Position);
        }
        if self.log_energy > 0.0 {
            kinds.push(VariationKind::Energy);
        }
        kinds
    }

    /// Checks that every perturbation of `base` stays within light invariants.
    pub fn validate_for(&self, base: &LightParams) -> Result<()> {
        let all = [self.yaw_deg, self.pitch_deg, self.log_energy, self.temperature_k];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("light ranges must be finite and >= 0: {self:?}")));
        }
        if self.enabled_kinds().is_empty() {
            return Err(Error::Config("all light ranges are zero".into()));
        }
        if self.yaw_deg > 180.0 {
            return Err(Error::Config(format!("yaw range {} exceeds 180 deg", self.yaw_deg)));
        }
        let dp = self.pitch_deg.to_radians();
        if base.pitch_rad() - dp <= 0.0 || base.pitch_rad() + dp >= PI {
            return Err(Error::Config(format!(
                "pitch range ±{} deg around {} rad leaves (0, pi)",
                self.pitch_deg,
                base.pitch_rad()
            )));
        }
        let t = base.temperature_k();
        if t - self.temperature_k < MIN_TEMPERATURE_K || t + self.temperature_k > MAX_TEMPERATURE_K {
            return Err(Error::Config(format!(
                "temperature range ±{} K around {t} K leaves [{MIN_TEMPERATURE_K}, {MAX_TEMPERATURE_K}]",
                self.temperature_k
            )));
        }
        Ok(())
    }
}

/// Signed offset with magnitude in [0.2, 1]·range so variants always differ.
fn signed_offset(rng: &mut ChaCha8Rng, range: f64) -> f64 {
    if range == 0.0 {
        return 0.0;
    }
    let mag = rng.random_range(0.2..=1.0) * range;
    if rng.random_bool(0.5) {
        mag
    } else {
        -mag
    }
}

/// `n` perturbed copies of `base`, cycling through the enabled attributes.
pub fn sample_light_variations(
    base: &LightParams,
    ranges: &LightRanges,
    n: usize,
    seed: u64,
) -> Result<Vec<(LightParams, VariationKind)>> {
    if n == 0 {
        return Err(Error::Config("need at least one light variation".into()));
    }
    ranges.validate_for(base)?;
    let kinds = ranges.enabled_kinds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let light = match kind {
                VariationKind::Temperature => {
                    base.with_temperature(base.temperature_k() + signed_offset(&mut rng, ranges.temperature_k))?
                }
                VariationKind::Position => {
                    let dyaw = signed_offset(&mut rng, ranges.yaw_deg.to_radians());
                    let dpitch = signed_offset(&mut rng, ranges.pitch_deg.to_radians());
                    base.with_angles(base.yaw_rad() + dyaw, base.pitch_rad() + dpitch)?
                }
                VariationKind::Energy => {
                    base.with_energy(base.energy_lux() * signed_offset(&mut rng, ranges.log_energy).exp())?
                }
                VariationKind::Mixed => unreachable!("mixed is never sampled directly"),
            };
            Ok((light, kind))
        })
        .collect()
}

/// Uniform-area position on the upper hemisphere around `target`.
pub fn sample_camera_hemisphere(
    seed: u64,
    radius_range: (f64, f64),
    target: Vec3,
    vfov_rad: f64,
    width: usize,
    height: usize,
) -> Result<CameraPose> {
    let (rmin, rmax) = radius_range;
    if !(rmin > 0.0 && rmax >= rmin && rmax.is_finite()) {
        return Err(Error::Config(format!("bad camera radius range {radius_range:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z: f64 = rng.random_range(0.0..1.0);
    let phi: f64 = rng.random_range(0.0..(2.0 * PI));
    let r = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
    let s = (1.0 - z * z).max(0.0).sqrt();
    let offset = Vec3::new(s * phi.cos(), s * phi.sin(), z) * r;
    let cam = CameraPose::looking_at(target + offset, target, vfov_rad, width, height);
    cam.validate()?;
    Ok(cam)
}

/// Procedural object: 1–4 spheres/boxes resting on a ground square.
pub fn procedural_scene(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let material = |rng: &mut ChaCha8Rng| {
        let albedo = Vec3::new(
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
            rng.random_range(0.1..0.95),
        );
        let roughness = rng.random_range(0.15..1.0);
        let metallic = if rng.random_bool(0.25) { 1.0 } else { 0.0 };
        Material::new(albedo, roughness, metallic).expect("sampled within ranges")
    };
    let ground = Primitive {
        shape: Shape::Plane,
        transform: Transform::translate_scale(Vec3::ZERO, 2.5),
        material: material(&mut rng),
    };
    let count = rng.random_range(1..=4);
    let mut primitives = vec![ground];
    for _ in 0..count {
        let x = rng.random_range(-1.0..1.0);
        let y = rng.random_range(-1.0..1.0);
        let mat = material(&mut rng);
        let prim = if rng.random_bool(0.5) {
            let r = rng.random_range(0.25..0.6);
            Primitive {
                shape: Shape::Sphere,
                transform: Transform::translate_scale(Vec3::new(x, y, r), r),
                material: mat,
            }
        } else {
            let half = Vec3::new(
                rng.random_range(0.15..0.45),
                rng.random_range(0.15..0.45),
                rng.random_range(0.15..0.45),
            );
            let spin = Mat3::rotation(Vec3::Z, rng.random_range(0.0..PI));
            Primitive {
                shape: Shape::Box,
                transform: Transform::new(spin, Vec3::new(x, y, half.z), half),
                material: mat,
            }
        };
        primitives.push(prim);
    }
    SceneSpec::new(primitives, Vec3::new(0.05, 0.05, 0.06)).expect("procedural scene is valid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub objects: usize,
    pub views: usize,
    pub lights: usize,
    pub width: usize,
    pub height: usize,
    pub vfov_deg: f64,
    pub camera_radius: (f64, f64),
    pub supervision_fraction: f64,
    /// Objects held out for evaluation (G-buffers kept, never supervised).
    pub eval_objects: usize,
    pub ranges: LightRanges,
    pub light_kind: LightKind,
    pub shadows: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            objects: 16,
            views: 4,
            lights: 8,
            width: 128,
            height: 128,
            vfov_deg: 40.0,
            camera_radius: (3.5, 4.5),
            supervision_fraction: 0.03,
            eval_objects: 2,
            ranges: LightRanges::default(),
            light_kind: LightKind::Directional,
            shadows: true,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.views == 0 || self.lights == 0 {
            return Err(Error::Config("objects, views and lights must be >= 1".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be nonzero".into()));
        }
        if !(0.0..=1.0).contains(&self.supervision_fraction) {
            return Err(Error::Config(format!(
                "supervision fraction {} outside [0, 1]",
                self.supervision_fraction
            )));
        }
        if self.eval_objects >= self.objects {
            return Err(Error::Config("eval split must leave at least one training object".into()));
        }
        if !(self.vfov_deg > 0.0 && self.vfov_deg < 180.0) {
            return Err(Error::Config(format!("vfov {} deg outside (0, 180)", self.vfov_deg)));
        }
        let total = self.objects * self.views * self.lights;
        let train = (self.objects - self.eval_objects) * self.views * self.lights;
        if supervised_count(total, self.supervision_fraction) > train {
            return Err(Error::Config("supervised subset larger than the training split".into()));
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        self.objects * self.views * self.lights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RecordKey {
    pub object_id: u32,
    pub view_id: u32,
    pub light_id: u32,
}

impl RecordKey {
    pub fn stem(&self) -> String {
        format!("o{:03}_v{:02}_l{:02}", self.object_id, self.view_id, self.light_id)
    }
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.stem())
    }
}

/// One rendered sample. Paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub schema: String,
    pub record: String,
    pub object_id: u32,
    pub view_id: u32,
    pub light_id: u32,
    pub split: Split,
    pub camera: CameraPose,
    pub light: LightParams,
    /// Attribute perturbed relative to the view's base light.
    pub variation: VariationKind,
    pub shadows: bool,
    pub scene: SceneSpec,
    pub image_path: String,
    pub coverage_path: String,
    pub gbuffer_paths: Option<GBufferPaths>,
    pub has_pbr_supervision: bool,
}

impl SampleRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            object_id: self.object_id,
            view_id: self.view_id,
            light_id: self.light_id,
        }
    }

    /// Re-renders this record from its own metadata.
    pub fn render(&self) -> Result<(image::LinearImage, GBuffer)> {
        render(&self.scene, &self.camera, &self.light, RenderOptions { shadows: self.shadows })
    }

    pub fn load_image(&self, root: &Path) -> Result<image::LinearImage> {
        image::load_image(&root.join(&self.image_path))
    }

    pub fn load_coverage(&self, root: &Path) -> Result<image::Map> {
        image::read_raw_u8(&image::read_file(&root.join(&self.coverage_path))?)
    }

    pub fn load_gbuffer(&self, root: &Path) -> Result<Option<GBuffer>> {
        self.gbuffer_paths
            .as_ref()
            .map(|paths| GBuffer::load(root, paths))
            .transpose()
    }
}

/// Ordered collection of sample records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
}

impl Manifest {
    pub fn get(&self, key: RecordKey) -> Option<&SampleRecord> {
        self.records
            .binary_search_by(|r| r.key().cmp(&key))
            .ok()
            .map(|i| &self.records[i])
    }

    pub fn supervised(&self) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(|r| r.has_pbr_supervision)
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<Manifest> {
        let mut records: Vec<SampleRecord> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                let r: SampleRecord = serde_json::from_str(l)
                    .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
                if r.schema != SCHEMA || r.record != "sample" {
                    return Err(Error::Format(format!(
                        "manifest line {}: unexpected schema {:?} / record {:?}",
                        i + 1,
                        r.schema,
                        r.record
                    )));
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        records.sort_by_key(|r| r.key());
        Ok(Manifest { records })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let bytes = image::read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Manifest::from_jsonl(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_jsonl()?.as_bytes())
    }
}

/// `floor(fraction · total)`.
pub fn supervised_count(total: usize, fraction: f64) -> usize {
    // The small epsilon keeps e.g. 0.03 · 100 = 3.0000000000000004 / 2.9999… stable.
    ((fraction * total as f64) + 1e-9).floor() as usize
}

/// Deterministic supervised subset: the first `count` records ranked by a
/// hash of their object id (then view, light). Independent of the seed.
pub fn select_supervised(keys: &[RecordKey], count: usize) -> Vec<RecordKey> {
    let mut ranked: Vec<RecordKey> = keys.to_vec();
    ranked.sort_by_key(|k| (mix64(k.object_id as u64), *k));
    ranked.truncate(count);
    ranked.sort();
    ranked
}

/// Held-out objects: the `n` objects with the largest id hash.
pub fn eval_objects(objects: usize, n: usize) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..objects as u32).collect();
    ids.sort_by_key(|&o| std::cmp::Reverse((mix64(o as u64), o)));
    ids.truncate(n);
    ids.sort();
    ids
}

/// Base light for one (object, view): directional or point, moderate pitch.
pub fn sample_base_light(seed: u64, kind: LightKind) -> Result<LightParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let yaw = rng.random_range(0.0..(2.0 * PI));
    let pitch = rng.random_range(25f64.to_radians()..65f64.to_radians());
    let energy = rng.random_range(600.0..1400.0);
    let temp = rng.random_range(3500.0..7500.0);
    match kind {
        LightKind::Directional => LightParams::directional(yaw, pitch, energy, temp),
        LightKind::Point => {
            let dist = rng.random_range(3.0..5.0);
            let dir = crate::light::yaw_pitch_to_direction(yaw, pitch)?;
            // Illuminance at 1 m scaled so the object sees a similar level.
            LightParams::point(dir.vec() * dist, energy * dist * dist, temp)
        }
    }
}

/// Renders every (object, view, light) combination under `root` and writes
/// `manifest.jsonl`. Reruns with the same inputs reproduce identical bytes.
pub fn generate_dataset(cfg: &DatasetConfig, seed: u64, root: &Path) -> Result<Manifest> {
    cfg.validate()?;
    let vfov = cfg.vfov_deg.to_radians();
    let eval = eval_objects(cfg.objects, cfg.eval_objects);

    // Per-view plans are cheap and sequential; rendering is parallel.
    struct Plan {
        key: RecordKey,
        scene: std::sync::Arc<SceneSpec>,
        camera: CameraPose,
        light: LightParams,
        variation: VariationKind,
    }
    let mut plans = Vec::with_capacity(cfg.record_count());
    for o in 0..cfg.objects as u32 {
        let scene = std::sync::Arc::new(procedural_scene(derive_seed(seed, &[1, o as u64])));
        for v in 0..cfg.views as u32 {
            let camera = sample_camera_hemisphere(
                derive_seed(seed, &[2, o as u64, v as u64]),
                cfg.camera_radius,
                Vec3::new(0.0, 0.0, 0.3),
                vfov,
                cfg.width,
                cfg.height,
            )?;
            let base = sample_base_light(derive_seed(seed, &[3, o as u64, v as u64]), cfg.light_kind)?;
            let lights = sample_light_variations(
                &base,
                &cfg.ranges,
                cfg.lights,
                derive_seed(seed, &[4, o as u64, v as u64]),
            )?;
            for (l, (light, variation)) in lights.into_iter().enumerate() {
                plans.push(Plan {
                    key: RecordKey {
                        object_id: o,
                        view_id: v,
                        light_id: l as u32,
                    },
                    scene: scene.clone(),
                    camera,
                    light,
                    variation,
                });
            }
        }
    }

    // The count follows the whole dataset; candidates exclude the eval split.
    let train_keys: Vec<RecordKey> = plans
        .iter()
        .filter(|p| !eval.contains(&p.key.object_id))
        .map(|p| p.key)
        .collect();
    let supervised = select_supervised(&train_keys, supervised_count(plans.len(), cfg.supervision_fraction));

    let records: Vec<SampleRecord> = plans
        .par_iter()
        .map(|plan| {
            let key = plan.key;
            let split = if eval.contains(&key.object_id) { Split::Eval } else { Split::Train };
            let has_sup = supervised.contains(&key);
            let stem = key.stem();
            let record = SampleRecord {
                schema: SCHEMA.into(),
                record: "sample".into(),
                object_id: key.object_id,
                view_id: key.view_id,
                light_id: key.light_id,
                split,
                camera: plan.camera,
                light: plan.light,
                variation: plan.variation,
                shadows: cfg.shadows,
                scene: (*plan.scene).clone(),
                image_path: format!("images/{stem}.raw"),
                coverage_path: format!("coverage/{stem}.raw"),
                gbuffer_paths: (has_sup || split == Split::Eval)
                    .then(|| GBufferPaths::with_stem(&format!("gbuffers/{stem}"))),
                has_pbr_supervision: has_sup,
            };
            let (img, g) = record
                .render()
                .map_err(|e| Error::Config(format!("record {key}: {e}")))?;
            let write = || -> Result<()> {
                image::save_raw(&root.join(&record.image_path), img.map())?;
                write_file(&root.join(&record.coverage_path), &image::write_raw_u8(&g.coverage))?;
                if let Some(paths) = &record.gbuffer_paths {
                    g.save(root, paths)?;
                }
                Ok(())
            };
            write().map_err(|e| Error::Config(format!("record {key}: {e}")))?;
            Ok(record)
        })
        .collect::<Result<_>>()?;

    let manifest = Manifest { records };
    manifest.save(&root.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// A relighting pair inside one (object, view).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub schema: String,
    pub record: String,
    pub pair_id: String,
    pub object_id: u32,
    pub view_id: u32,
    pub source_light_id: u32,
    pub target_light_id: u32,
    pub delta: DeltaL,
    pub variation: VariationKind,
    #[serde(default)]
    pub mask_path: Option<String>,
}

impl PairRecord {
    pub fn source_key(&self) -> RecordKey {
        RecordKey {
            object_id: self.object_id,
            view_id: self.view_id,
            light_id: self.source_light_id,
        }
    }

    pub fn target_key(&self) -> RecordKey {
        RecordKey {
            object_id: self.object_id,
            view_id: self.view_id,
            light_id: self.target_light_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairSet {
    pub pairs: Vec<PairRecord>,
    /// Views skipped for having fewer than two lights.
    pub warnings: usize,
}

pub fn pair_id(object_id: u32, view_id: u32, s: u32, t: u32) -> String {
    format!("o{object_id:03}_v{view_id:02}_l{s:02}-l{t:02}")
}

/// Draws up to `per_view` pairs in each (object, view), rotating through
/// the variation classes so every class present in a view is represented.
pub fn sample_pairs(manifest: &Manifest, per_view: usize, seed: u64) -> PairSet {
    let mut groups: BTreeMap<(u32, u32), Vec<&SampleRecord>> = BTreeMap::new();
    for r in &manifest.records {
        groups.entry((r.object_id, r.view_id)).or_default().push(r);
    }
    let mut set = PairSet::default();
    for ((o, v), recs) in groups {
        if recs.len() < 2 {
            set.warnings += 1;
            continue;
        }
        let mut by_kind: BTreeMap<VariationKind, Vec<(&SampleRecord, &SampleRecord)>> = BTreeMap::new();
        for s in &recs {
            for t in &recs {
                if s.light_id == t.light_id {
                    continue;
                }
                if let Some(kind) = classify_variation(&s.light, &t.light) {
                    by_kind.entry(kind).or_default().push((s, t));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[5, o as u64, v as u64]));
        for list in by_kind.values_mut() {
            list.shuffle(&mut rng);
        }
        let mut chosen = Vec::new();
        let mut round = 0;
        while chosen.len() < per_view {
            let mut progressed = false;
            for list in by_kind.values() {
                if chosen.len() == per_view {
                    break;
                }
                if let Some(&pair) = list.get(round) {
                    chosen.push(pair);
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
            round += 1;
        }
        if chosen.is_empty() {
            set.warnings += 1;
        }
        for (s, t) in chosen {
            set.pairs.push(PairRecord {
                schema: SCHEMA.into(),
                record: "pair".into(),
                pair_id: pair_id(o, v, s.light_id, t.light_id),
                object_id: o,
                view_id: v,
                source_light_id: s.light_id,
                target_light_id: t.light_id,
                delta: delta_illumination(&s.light, &t.light),
                variation: classify_variation(&s.light, &t.light).expect("filtered above"),
                mask_path: None,
            });
        }
    }
    set
}

pub fn pairs_to_jsonl(pairs: &[PairRecord]) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn pairs_from_jsonl(text: &str) -> Result<Vec<PairRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let p: PairRecord = serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("pairs line {}: {e}", i + 1)))?;
            if p.schema != SCHEMA || p.record != "pair" {
                return Err(Error::Format(format!("pairs line {}: not a {SCHEMA} pair", i + 1)));
            }
            Ok(p)
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairRecord>> {
    let bytes = image::read_file(path)?;
    pairs_from_jsonl(&String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> LightParams {
        LightParams::directional(0.3, 0.9, 1000.0, 5000.0).unwrap()
    }

    #[test]
    fn temperature_only_ranges() {
        let ranges = LightRanges {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            log_energy: 0.0,
            temperature_k: 1500.0,
        };
        let b = base();
        for (l, kind) in sample_light_variations(&b, &ranges, 10, 7).unwrap() {
            assert_eq!(kind, VariationKind::Temperature);
            assert_eq!((l.yaw_rad(), l.pitch_rad(), l.energy_lux()), (b.yaw_rad(), b.pitch_rad(), b.energy_lux()));
            assert_ne!(l.temperature_k(), b.temperature_k());
        }
    }

    #[test]
    fn yaw_deltas_stay_in_range() {
        let ranges = LightRanges {
            yaw_deg: 90.0,
            pitch_deg: 0.0,
            log_energy: 0.0,
            temperature_k: 0.0,
        };
        let b = base();
        for (l, _) in sample_light_variations(&b, &ranges, 50, 1).unwrap() {
            let d = (l.yaw_rad() - b.yaw_rad()).to_degrees();
            assert!(d.abs() <= 90.0 + 1e-9 && d != 0.0);
        }
    }

    #[test]
    fn variations_are_reproducible_and_distinct() {
        let r = LightRanges::default();
        let a = sample_light_variations(&base(), &r, 8, 99).unwrap();
        assert_eq!(a, sample_light_variations(&base(), &r, 8, 99).unwrap());
        assert_ne!(a, sample_light_variations(&base(), &r, 8, 100).unwrap());
        for (l, kind) in &a {
            assert_eq!(classify_variation(&base(), l), Some(*kind));
        }
    }

    #[test]
    fn invalid_ranges_are_config_errors() {
        let mut r = LightRanges::default();
        r.temperature_k = 4500.0;
        assert!(matches!(sample_light_variations(&base(), &r, 3, 0), Err(Error::Config(_))));
        let mut r = LightRanges::default();
        r.pitch_deg = 60.0;
        assert!(matches!(sample_light_variations(&base(), &r, 3, 0), Err(Error::Config(_))));
        let r = LightRanges {
            yaw_deg: 0.0,
            pitch_deg: 0.0,
            log_energy: 0.0,
            temperature_k: 0.0,
        };
        assert!(sample_light_variations(&base(), &r, 3, 0).is_err());
        assert!(sample_light_variations(&base(), &LightRanges::default(), 0, 0).is_err());
    }

    #[test]
    fn supervised_selection_counts() {
        let keys: Vec<RecordKey> = (0..25)
            .flat_map(|o| {
                (0..4).map(move |l| RecordKey {
                    object_id: o,
                    view_id: 0,
                    light_id: l,
                })
            })
            .collect();
        assert_eq!(keys.len(), 100);
        let sel = select_supervised(&keys, supervised_count(keys.len(), 0.03));
        assert_eq!(sel.len(), 3);
        // All three come from the object with the smallest hash.
        assert!(sel.iter().all(|k| k.object_id == sel[0].object_id));
        assert_eq!(sel, select_supervised(&keys, 3));
        assert_eq!(supervised_count(512, 0.03), 15);
    }

    #[test]
    fn hemisphere_cameras_look_at_target() {
        let target = Vec3::new(0.0, 0.0, 0.3);
        for seed in 0..200 {
            let cam = sample_camera_hemisphere(seed, (4.0, 6.0), target, 0.7, 8, 8).unwrap();
            assert!(cam.position.z >= target.z);
            let r = (cam.position - target).norm();
            assert!((4.0 - 1e-12..=6.0 + 1e-12).contains(&r));
            assert_eq!(cam.look_at, target);
        }
    }

    #[test]
    fn pair_labels() {
        let a = base();
        assert_eq!(classify_variation(&a, &a), None);
        assert_eq!(
            classify_variation(&a, &a.with_temperature(3000.0).unwrap()),
            Some(VariationKind::Temperature)
        );
        assert_eq!(
            classify_variation(&a, &a.with_angles(1.0, 0.9).unwrap()),
            Some(VariationKind::Position)
        );
        let both = a.with_energy(10.0).unwrap().with_temperature(7000.0).unwrap();
        assert_eq!(classify_variation(&a, &both), Some(VariationKind::Mixed));
    }

    #[test]
    fn seeds_are_stream_separated() {
        assert_ne!(derive_seed(1, &[2, 3]), derive_seed(1, &[3, 2]));
        assert_ne!(derive_seed(1, &[2]), derive_seed(2, &[2]));
        assert_eq!(derive_seed(5, &[1, 2]), derive_seed(5, &[1, 2]));
    }
}
