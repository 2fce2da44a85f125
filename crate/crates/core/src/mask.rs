//! Lighting-aware masks.
//!
//! A ground-truth mask marks pixels whose appearance changes between a
//! source and a target render. It mixes the per-pixel log-luminance change
//! with an exposure-compensated, multi-scale smoothed luminance distance,
//! then normalizes by the foreground 99th percentile. Masks become loss
//! weights `W = 1 + γ·M`. A small per-pixel network learns to predict the
//! mask from the source image, its intrinsics and Δℓ.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{LinearImage, Map};
use crate::light::{apply_delta, DeltaL, LightParams};
use crate::nn::{sigmoid, Mlp, MlpDoc, StepSchedule};
use crate::relight::Intrinsics;
use crate::render::CameraPose;

/// Rec. 709 luma weights.
pub const LUMA: [f64; 3] = [0.2126, 0.7152, 0.0722];
/// Luminance floor applied before any logarithm.
pub const LUMINANCE_FLOOR: f64 = 1e-6;
pub const DEFAULT_ALPHA: f64 = 0.7;
pub const DEFAULT_SIGMAS: [f64; 3] = [1.0, 2.0, 4.0];
pub const DEFAULT_PERCENTILE: f64 = 99.0;
pub const DEFAULT_GAMMA: f64 = 1.0;
/// Number of per-pixel predictor features.
pub const FEATURES: usize = 6;
/// Probabilities are floored here inside BCE logarithms.
pub const BCE_FLOOR: f64 = 1e-7;
const DICE_EPS: f64 = 1e-6;
/// Below this percentile value a raw mask is treated as empty.
const EMPTY_MASK: f64 = 1e-6;

/// Per-pixel values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask(Map);

impl SoftMask {
    pub fn new(map: Map) -> Result<Self> {
        if map.channels() != 1 {
            return Err(Error::Shape(format!("mask needs 1 channel, got {}", map.channels())));
        }
        if let Some(v) = map.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!("mask value {v} outside [0, 1]")));
        }
        Ok(SoftMask(map))
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        SoftMask(Map::zeros(height, width, 1))
    }

    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn into_map(self) -> Map {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Per-pixel loss weights in [1, 1 + γ].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap(Map);

impl WeightMap {
    pub fn map(&self) -> &Map {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.data()
    }
}

/// Mask extraction knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskConfig {
    pub alpha: f64,
    pub sigmas: Vec<f64>,
    pub percentile: f64,
    pub gamma: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            alpha: DEFAULT_ALPHA,
            sigmas: DEFAULT_SIGMAS.to_vec(),
            percentile: DEFAULT_PERCENTILE,
            gamma: DEFAULT_GAMMA,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("mask alpha {} outside [0, 1]", self.alpha)));
        }
        if self.sigmas.is_empty() || self.sigmas.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Config(format!("mask sigmas must be positive: {:?}", self.sigmas)));
        }
        if !(self.percentile > 0.0 && self.percentile <= 100.0) {
            return Err(Error::Config(format!("mask percentile {} outside (0, 100]", self.percentile)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("mask gamma {} must be >= 0", self.gamma)));
        }
        Ok(())
    }
}

/// Floored Rec. 709 luminance, one channel.
pub fn luminance(img: &LinearImage) -> Map {
    let m = img.map();
    Map::from_fn(m.height(), m.width(), 1, |i, j, _| {
        let y: f64 = (0..3).map(|c| LUMA[c] * m.get(i, j, c)).sum();
        y.max(LUMINANCE_FLOOR)
    })
}

fn check_coverage(map: &Map, coverage: Option<&Map>) -> Result<()> {
    if let Some(c) = coverage {
        if c.height() != map.height() || c.width() != map.width() || c.channels() != 1 {
            return Err(Error::Shape("coverage does not match map".into()));
        }
    }
    Ok(())
}

fn foreground_values(map: &Map, coverage: Option<&Map>) -> Vec<f64> {
    match coverage {
        Some(c) => map
            .data()
            .iter()
            .zip(c.data())
            .filter(|(_, c)| **c > 0.5)
            .map(|(v, _)| *v)
            .collect(),
        None => map.data().to_vec(),
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (q / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// Normalized 1-D Gaussian taps over ±⌈3σ⌉.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian blur of every channel with edge replication.
pub fn gaussian_blur(map: &Map, sigma: f64) -> Map {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let (h, w, ch) = (map.height() as i64, map.width() as i64, map.channels());
    let horiz = Map::from_fn(h as usize, w as usize, ch, |i, j, c| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * map.get(i, (j as i64 + t as i64 - r).clamp(0, w - 1) as usize, c))
            .sum()
    });
    Map::from_fn(h as usize, w as usize, ch, |i, j, c| {
        k.iter()
            .enumerate()
            .map(|(t, kv)| kv * horiz.get((i as i64 + t as i64 - r).clamp(0, h - 1) as usize, j, c))
            .sum()
    })
}

/// Median over the foreground, or the mean when the median is zero.
fn exposure_scale(y: &Map, coverage: Option<&Map>) -> f64 {
    let fg = foreground_values(y, coverage);
    let med = percentile(&fg, 50.0).unwrap_or(0.0);
    if med > 0.0 {
        med
    } else if fg.is_empty() {
        0.0
    } else {
        fg.iter().sum::<f64>() / fg.len() as f64
    }
}

/// Exposure-compensated luminance distance averaged over Gaussian scales.
pub fn robust_distance(ys: &Map, yt: &Map, coverage: Option<&Map>, sigmas: &[f64]) -> Result<Map> {
    ys.check_same_shape(yt, "robust_distance")?;
    check_coverage(ys, coverage)?;
    let (ms, mt) = (exposure_scale(ys, coverage), exposure_scale(yt, coverage));
    let norm = |v: f64, m: f64| if m > 0.0 { v / m } else { 0.0 };
    let diff = Map::new(
        ys.height(),
        ys.width(),
        1,
        ys.data()
            .iter()
            .zip(yt.data())
            .map(|(s, t)| (norm(*t, mt) - norm(*s, ms)).abs())
            .collect(),
    )?;
    let mut acc = vec![0.0; diff.pixels()];
    for &sigma in sigmas {
        for (a, b) in acc.iter_mut().zip(gaussian_blur(&diff, sigma).data()) {
            *a += b;
        }
    }
    let n = sigmas.len().max(1) as f64;
    Map::new(ys.height(), ys.width(), 1, acc.into_iter().map(|v| v / n).collect())
}

/// Unnormalized mask `α·|Δ ln Y| + (1 − α)·robust_distance`.
pub fn raw_mask(xs: &LinearImage, xt: &LinearImage, coverage: Option<&Map>, cfg: &MaskConfig) -> Result<Map> {
    cfg.validate()?;
    let (ys, yt) = (luminance(xs), luminance(xt));
    let robust = robust_distance(&ys, &yt, coverage, &cfg.sigmas)?;
    let data = ys
        .data()
        .iter()
        .zip(yt.data())
        .zip(robust.data())
        .map(|((s, t), r)| cfg.alpha * (t.ln() - s.ln()).abs() + (1.0 - cfg.alpha) * r)
        .collect();
    Map::new(ys.height(), ys.width(), 1, data)
}

/// Divides by the foreground percentile and clamps to [0, 1]. Background
/// pixels are zero when a coverage map is given.
pub fn normalize_mask(raw: &Map, coverage: Option<&Map>, percentile_q: f64) -> Result<SoftMask> {
    check_coverage(raw, coverage)?;
    if raw.channels() != 1 {
        return Err(Error::Shape("raw mask must have one channel".into()));
    }
    if let Some(v) = raw.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::Domain(format!("raw mask value {v} is negative or NaN")));
    }
    let p = percentile(&foreground_values(raw, coverage), percentile_q).unwrap_or(0.0);
    if p < EMPTY_MASK {
        return Ok(SoftMask::zeros(raw.height(), raw.width()));
    }
    let data = raw
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| match coverage {
            Some(c) if c.data()[i] <= 0.5 => 0.0,
            _ => (v / p).clamp(0.0, 1.0),
        })
        .collect();
    SoftMask::new(Map::new(raw.height(), raw.width(), 1, data)?)
}

/// Ground-truth lighting-aware mask for a source/target image pair.
pub fn gt_mask(xs: &LinearImage, xt: &LinearImage, coverage: Option<&Map>, cfg: &MaskConfig) -> Result<SoftMask> {
    normalize_mask(&raw_mask(xs, xt, coverage, cfg)?, coverage, cfg.percentile)
}

pub fn mask_to_weight(m: &SoftMask, gamma: f64) -> Result<WeightMap> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Domain(format!("gamma {gamma} must be finite and >= 0")));
    }
    Ok(WeightMap(m.map().map(|v| 1.0 + gamma * v)))
}

/// Mean over pixels of `W² · Σ_c (pred − target)²`.
pub fn weighted_mse(w: &WeightMap, pred: &Map, target: &Map) -> Result<f64> {
    pred.check_same_shape(target, "weighted_mse")?;
    let wm = w.map();
    if wm.height() != pred.height() || wm.width() != pred.width() {
        return Err(Error::Shape("weight map does not match prediction".into()));
    }
    Ok(weighted_sum(Some(wm.data()), pred, target) / pred.pixels() as f64)
}

/// Mean over pixels of `Σ_c (pred − target)²`.
pub fn mse(pred: &Map, target: &Map) -> Result<f64> {
    pred.check_same_shape(target, "mse")?;
    Ok(weighted_sum(None, pred, target) / pred.pixels() as f64)
}

fn weighted_sum(w: Option<&[f64]>, pred: &Map, target: &Map) -> f64 {
    (0..pred.pixels())
        .map(|p| {
            let se: f64 = pred.pixel(p).iter().zip(target.pixel(p)).map(|(a, b)| (a - b) * (a - b)).sum();
            let wv = w.map_or(1.0, |w| w[p]);
            wv * wv * se
        })
        .sum()
}

/// `(1 − m)·base + m·full`, the mask broadcast across channels.
pub fn masked_blend(m: &SoftMask, base: &Map, full: &Map) -> Result<Map> {
    base.check_same_shape(full, "masked_blend")?;
    let mm = m.map();
    if mm.height() != base.height() || mm.width() != base.width() {
        return Err(Error::Shape("mask does not match blend inputs".into()));
    }
    let ch = base.channels();
    let data = base
        .data()
        .iter()
        .zip(full.data())
        .enumerate()
        .map(|(i, (b, f))| {
            let w = mm.data()[i / ch];
            (1.0 - w) * b + w * f
        })
        .collect();
    Map::new(base.height(), base.width(), ch, data)
}

/// Central-difference gradient magnitude with edge replication.
fn gradient_magnitude(y: &Map) -> Map {
    let (h, w) = (y.height(), y.width());
    Map::from_fn(h, w, 1, |i, j, _| {
        let gx = (y.get(i, (j + 1).min(w - 1), 0) - y.get(i, j.saturating_sub(1), 0)) / 2.0;
        let gy = (y.get((i + 1).min(h - 1), j, 0) - y.get(i.saturating_sub(1), j, 0)) / 2.0;
        gx.hypot(gy)
    })
}

/// Predictor inputs, one row of [`FEATURES`] values per pixel:
/// ln Y, |∇ ln Y|, diffuse shading change, |Δ ln E|, |Δτ|, coverage.
pub fn mask_features(
    xs: &LinearImage,
    intrinsics: &Intrinsics,
    camera: &CameraPose,
    source: &LightParams,
    d: &DeltaL,
) -> Result<Map> {
    let (h, w) = (xs.height(), xs.width());
    intrinsics.check_size(h, w)?;
    let target = apply_delta(source, d)?;
    let log_y = luminance(xs).map(f64::ln);
    let grad = gradient_magnitude(&log_y);
    let frame = camera.frame();
    let (dle, dtau) = (d.delta_log_e.abs(), d.delta_tau.abs());
    let mut data = Vec::with_capacity(h * w * FEATURES);
    for p in 0..h * w {
        let covered = intrinsics.is_foreground(p);
        let shading = if covered {
            let sp = intrinsics.surface_point(camera, &frame, p);
            let (ls, _) = source.incident(sp.position);
            let (lt, _) = target.incident(sp.position);
            (sp.normal.dot(lt).max(0.0) - sp.normal.dot(ls).max(0.0)).abs()
        } else {
            0.0
        };
        data.extend_from_slice(&[
            log_y.data()[p],
            grad.data()[p],
            shading,
            dle,
            dtau,
            f64::from(covered),
        ]);
    }
    Map::new(h, w, FEATURES, data)
}

pub const MASK_SCHEMA: &str = "relightkit.mask-predictor/1";

/// Per-pixel `FEATURES → hidden → 1` network with a logistic output.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPredictor {
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskPredictorDoc {
    schema: String,
    network: MlpDoc,
}

impl MaskPredictor {
    pub fn new(hidden: usize, seed: u64) -> Self {
        MaskPredictor {
            net: Mlp::init(FEATURES, hidden, 1, seed),
        }
    }

    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.net.forward(features).out[0])
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&MaskPredictorDoc {
            schema: MASK_SCHEMA.into(),
            network: MlpDoc::from(&self.net),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MaskPredictorDoc = serde_json::from_str(text)?;
        if doc.schema != MASK_SCHEMA {
            return Err(Error::Format(format!("unsupported mask predictor schema {:?}", doc.schema)));
        }
        let net = Mlp::try_from(&doc.network)?;
        if net.input != FEATURES || net.output != 1 {
            return Err(Error::Shape(format!(
                "mask predictor must map {FEATURES} -> 1, got {} -> {}",
                net.input, net.output
            )));
        }
        Ok(MaskPredictor { net })
    }
}

/// Applies the predictor to every pixel of a feature stack.
pub fn predict_mask(params: &MaskPredictor, features: &Map) -> Result<SoftMask> {
    if features.channels() != params.net.input {
        return Err(Error::Shape(format!(
            "feature stack has {} channels, predictor expects {}",
            features.channels(),
            params.net.input
        )));
    }
    let data: Vec<f64> = (0..features.pixels())
        .into_par_iter()
        .map(|p| params.probability(features.pixel(p)))
        .collect();
    SoftMask::new(Map::new(features.height(), features.width(), 1, data)?)
}

/// Mean floored binary cross-entropy.
pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len().max(1) as f64;
    pred.iter()
        .zip(target)
        .map(|(p, g)| -(g * p.max(BCE_FLOOR).ln() + (1.0 - g) * (1.0 - p).max(BCE_FLOOR).ln()))
        .sum::<f64>()
        / n
}

/// `1 − (2Σpg + ε) / (Σp² + Σg² + ε)`.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> f64 {
    let (num, den) = dice_parts(pred, target);
    1.0 - num / den
}

fn dice_parts(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let pg: f64 = pred.iter().zip(target).map(|(p, g)| p * g).sum();
    let pp: f64 = pred.iter().map(|p| p * p).sum();
    let gg: f64 = target.iter().map(|g| g * g).sum();
    (2.0 * pg + DICE_EPS, pp + gg + DICE_EPS)
}

/// BCE plus Dice with equal weight.
pub fn bce_dice_loss(pred: &SoftMask, gt: &SoftMask) -> Result<f64> {
    pred.map().check_same_shape(gt.map(), "bce_dice_loss")?;
    Ok(bce(pred.values(), gt.values()) + dice_loss(pred.values(), gt.values()))
}

/// ∂(BCE + Dice)/∂p for each prediction.
fn bce_dice_grad(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len().max(1) as f64;
    let (num, den) = dice_parts(pred, target);
    pred.iter()
        .zip(target)
        .map(|(&p, &g)| {
            let d_pos = if p > BCE_FLOOR { -g / p } else { 0.0 };
            let d_neg = if 1.0 - p > BCE_FLOOR { (1.0 - g) / (1.0 - p) } else { 0.0 };
            let d_dice = -(2.0 * g * den - num * 2.0 * p) / (den * den);
            (d_pos + d_neg) / n + d_dice
        })
        .collect()
}

/// One training pair: a feature stack and its ground-truth mask.
#[derive(Debug, Clone)]
pub struct MaskExample {
    pub features: Map,
    pub target: SoftMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskTrainConfig {
    pub hidden: usize,
    pub iterations: usize,
    pub lr: f64,
    pub samples_per_example: usize,
    /// Supplied by the caller, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for MaskTrainConfig {
    fn default() -> Self {
        MaskTrainConfig {
            hidden: 16,
            iterations: 150,
            lr: 0.5,
            samples_per_example: 768,
            seed: 0,
        }
    }
}

impl MaskTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.samples_per_example == 0 {
            return Err(Error::Config("mask hidden width and sample count must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("mask learning rate {} must be > 0", self.lr)));
        }
        Ok(())
    }
}

/// Fixed per-example pixel subsets (features row-major, targets).
#[derive(Debug, Clone)]
pub struct MaskBatch {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl MaskBatch {
    /// Deterministic subsample of up to `per_example` pixels of each example.
    pub fn sample(examples: &[MaskExample], per_example: usize, seed: u64) -> Result<MaskBatch> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = MaskBatch {
            features: Vec::new(),
            targets: Vec::new(),
        };
        for ex in examples {
            if ex.features.channels() != FEATURES {
                return Err(Error::Shape(format!("mask example needs {FEATURES} feature channels")));
            }
            let tm = ex.target.map();
            if tm.height() != ex.features.height() || tm.width() != ex.features.width() {
                return Err(Error::Shape("mask example target does not match features".into()));
            }
            let n = ex.features.pixels();
            let mut idx = sample(&mut rng, n, per_example.min(n)).into_vec();
            idx.sort_unstable();
            batch.features.push(idx.iter().flat_map(|&p| ex.features.pixel(p).to_vec()).collect());
            batch.targets.push(idx.iter().map(|&p| tm.data()[p]).collect());
        }
        Ok(batch)
    }

    /// Mean over examples of BCE + Dice, with the parameter gradient.
    pub fn loss_and_grad(&self, net: &Mlp, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let parts: Vec<(f64, Option<Vec<f64>>)> = self
            .features
            .par_iter()
            .zip(&self.targets)
            .map(|(feats, targets)| {
                let traces: Vec<_> = feats.chunks(net.input).map(|f| net.forward(f)).collect();
                let probs: Vec<f64> = traces.iter().map(|t| sigmoid(t.out[0])).collect();
                let loss = bce(&probs, targets) + dice_loss(&probs, targets);
                let grad = want_grad.then(|| {
                    let mut g = vec![0.0; net.params.len()];
                    for ((t, p), dp) in traces.iter().zip(&probs).zip(bce_dice_grad(&probs, targets)) {
                        net.backward(t, &[dp * p * (1.0 - p)], &mut g);
                    }
                    g
                });
                (loss, grad)
            })
            .collect();
        let n = parts.len().max(1) as f64;
        let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
        let grad = want_grad.then(|| {
            let mut total = vec![0.0; net.params.len()];
            for (_, g) in &parts {
                for (t, v) in total.iter_mut().zip(g.as_ref().expect("requested")) {
                    *t += v / n;
                }
            }
            total
        });
        (loss, grad)
    }

    fn standardization(&self) -> (Vec<f64>, Vec<f64>) {
        let rows: Vec<&[f64]> = self.features.iter().flat_map(|f| f.chunks(FEATURES)).collect();
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..FEATURES).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std = (0..FEATURES)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        (mean, std)
    }
}

/// Fits the mask predictor by step-halving gradient descent. Returns the
/// predictor and the accepted loss after every iteration (nonincreasing).
pub fn train_mask_predictor(examples: &[MaskExample], cfg: &MaskTrainConfig) -> Result<(MaskPredictor, Vec<f64>)> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::Config("mask training needs at least one example".into()));
    }
    let batch = MaskBatch::sample(examples, cfg.samples_per_example, cfg.seed)?;
    let mut predictor = MaskPredictor::new(cfg.hidden, cfg.seed ^ 0x6d61_736b);
    let (mean, std) = batch.standardization();
    predictor.net.set_standardization(&mean, &std);

    let (mut loss, _) = batch.loss_and_grad(&predictor.net, false);
    if !loss.is_finite() {
        return Err(Error::Numeric("mask loss is not finite at iteration 0".into()));
    }
    let mut log = vec![loss];
    let mut schedule = StepSchedule {
        lr: cfg.lr,
        growth: 1.2,
        min_lr: 1e-10,
    };
    for it in 1..=cfg.iterations {
        let (_, grad) = batch.loss_and_grad(&predictor.net, true);
        let grad = grad.expect("requested");
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("mask gradient is not finite at iteration {it}")));
        }
        let mut params = predictor.net.params.clone();
        let mut trial_net = predictor.net.clone();
        let accepted = schedule.step(&mut params, &grad, |trial| {
            trial_net.params.copy_from_slice(trial);
            let (l, _) = batch.loss_and_grad(&trial_net, false);
            Ok((l.is_finite() && l <= loss).then_some(l))
        })?;
        match accepted {
            Some(l) => {
                predictor.net.params = params;
                loss = l;
            }
            None => {
                log.push(loss);
                break;
            }
        }
        log.push(loss);
    }
    log::debug!("mask predictor trained: loss {} -> {}", log[0], loss);
    Ok((predictor, log))
}
