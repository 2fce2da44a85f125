//! Few-shot PBR proxy encoder.
//!
//! A per-pixel network maps nine local image features to eight intrinsic
//! channels: albedo (3, logistic), normal (3, normalized), roughness and
//! metallic (logistic). It is fitted on the small supervised subset with a
//! weighted sum of albedo L1, normal cosine, roughness L1 and metallic BCE.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, LinearImage, Map};
use crate::mask::{bce, BCE_FLOOR, LUMA, LUMINANCE_FLOOR};
use crate::math::Vec3;
use crate::nn::{sigmoid, AffineMap, Mlp, MlpDoc, StepSchedule};
use crate::relight::Intrinsics;
use crate::render::GBuffer;

/// Encoder input features per pixel.
pub const INPUT_FEATURES: usize = 9;
/// Proxy channels: albedo RGB, normal xyz, roughness, metallic.
pub const CHANNELS: usize = 8;
pub const DEFAULT_TOKEN_DIM: usize = 768;
/// Divergence threshold for fitting and refinement.
pub const DIVERGENCE_LOSS: f64 = 1e3;

/// One pixel of proxy maps in channel order.
pub type ProxyPixel = [f64; CHANNELS];

const UP: Vec3 = Vec3::Z;

/// Predicted or ground-truth intrinsic maps with their foreground mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyMaps {
    pub albedo: Map,
    pub normal: Map,
    pub roughness: Map,
    pub metallic: Map,
    pub coverage: Map,
}

impl ProxyMaps {
    pub fn from_gbuffer(g: &GBuffer) -> Self {
        ProxyMaps {
            albedo: g.albedo.clone(),
            normal: g.normal.clone(),
            roughness: g.roughness.clone(),
            metallic: g.metallic.clone(),
            coverage: g.coverage.clone(),
        }
    }

    /// Assembles maps from per-pixel values; background pixels are zero.
    pub fn from_pixels(height: usize, width: usize, coverage: &Map, pixels: &[ProxyPixel]) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape("pixel count does not match map size".into()));
        }
        let plane = |range: std::ops::Range<usize>| {
            let ch = range.len();
            Map::new(height, width, ch, pixels.iter().flat_map(|px| px[range.clone()].to_vec()).collect())
        };
        Ok(ProxyMaps {
            albedo: plane(0..3)?,
            normal: plane(3..6)?,
            roughness: plane(6..7)?,
            metallic: plane(7..8)?,
            coverage: coverage.clone(),
        })
    }

    pub fn height(&self) -> usize {
        self.coverage.height()
    }

    pub fn width(&self) -> usize {
        self.coverage.width()
    }

    pub fn is_foreground(&self, p: usize) -> bool {
        self.coverage.data()[p] > 0.5
    }

    pub fn pixel(&self, p: usize) -> ProxyPixel {
        let (a, n) = (self.albedo.pixel(p), self.normal.pixel(p));
        [
            a[0],
            a[1],
            a[2],
            n[0],
            n[1],
            n[2],
            self.roughness.data()[p],
            self.metallic.data()[p],
        ]
    }

    pub fn foreground(&self) -> Vec<usize> {
        (0..self.coverage.pixels()).filter(|&p| self.is_foreground(p)).collect()
    }

    pub fn check_same_shape(&self, other: &ProxyMaps) -> Result<()> {
        let pairs = [
            (&self.albedo, &other.albedo),
            (&self.normal, &other.normal),
            (&self.roughness, &other.roughness),
            (&self.metallic, &other.metallic),
            (&self.coverage, &other.coverage),
        ];
        for (a, b) in pairs {
            a.check_same_shape(b, "proxy maps")?;
        }
        Ok(())
    }

    /// Intrinsics for relighting; proxies carry no depth.
    pub fn to_intrinsics(&self) -> Intrinsics {
        Intrinsics {
            albedo: self.albedo.clone(),
            normal: self.normal.clone(),
            roughness: self.roughness.clone(),
            metallic: self.metallic.clone(),
            coverage: self.coverage.clone(),
            depth: None,
        }
    }

    /// Writes `{stem}_{albedo,normal,roughness,metallic,coverage}.raw`.
    pub fn save(&self, root: &std::path::Path, stem: &str) -> Result<()> {
        image::save_raw(&root.join(format!("{stem}_albedo.raw")), &self.albedo)?;
        image::save_raw(&root.join(format!("{stem}_normal.raw")), &self.normal)?;
        image::save_raw(&root.join(format!("{stem}_roughness.raw")), &self.roughness)?;
        image::save_raw(&root.join(format!("{stem}_metallic.raw")), &self.metallic)?;
        image::write_file(
            &root.join(format!("{stem}_coverage.raw")),
            &image::write_raw_u8(&self.coverage),
        )
    }
}

/// Scales every foreground vector to unit length. Zero vectors become +z;
/// the second value counts them.
pub fn normalize_normals(raw: &Map, coverage: Option<&Map>) -> Result<(Map, usize)> {
    if raw.channels() != 3 {
        return Err(Error::Shape("normals need 3 channels".into()));
    }
    let mut warnings = 0;
    let mut out = raw.clone();
    for p in 0..raw.pixels() {
        if coverage.is_some_and(|c| c.data()[p] <= 0.5) {
            continue;
        }
        let v = raw.pixel(p);
        let n = match Vec3::new(v[0], v[1], v[2]).try_normalize() {
            Some(n) => n,
            None => {
                warnings += 1;
                UP
            }
        };
        out.pixel_mut(p).copy_from_slice(&n.to_array());
    }
    Ok((out, warnings))
}

/// Per-term loss weights; all must be finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub albedo: f64,
    pub normal: f64,
    pub roughness: f64,
    pub metallic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            albedo: 1.0,
            normal: 1.0,
            roughness: 0.5,
            metallic: 0.5,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        albedo: 0.0,
        normal: 0.0,
        roughness: 0.0,
        metallic: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.albedo, self.normal, self.roughness, self.metallic];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

/// Foreground-averaged loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProxyLoss {
    pub albedo: f64,
    pub normal: f64,
    pub roughness: f64,
    pub metallic: f64,
    pub total: f64,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn dot3(a: &[f64], b: &[f64]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Per-pixel terms: albedo L1 (summed over RGB), 1 − ⟨n, n̂⟩, roughness L1,
/// metallic BCE of the prediction against the target.
fn pixel_terms(pred: &ProxyPixel, gt: &ProxyPixel) -> [f64; 4] {
    [
        l1(&pred[0..3], &gt[0..3]),
        1.0 - dot3(&pred[3..6], &gt[3..6]),
        (pred[6] - gt[6]).abs(),
        bce(&pred[7..8], &gt[7..8]),
    ]
}

fn combine(sums: [f64; 4], n: usize, w: &LossWeights) -> ProxyLoss {
    let n = n as f64;
    let (a, nn, r, m) = (sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n);
    ProxyLoss {
        albedo: a,
        normal: nn,
        roughness: r,
        metallic: m,
        total: w.albedo * a + w.normal * nn + w.roughness * r + w.metallic * m,
    }
}

fn loss_over(pred: &[ProxyPixel], gt: &[ProxyPixel], w: &LossWeights) -> Result<ProxyLoss> {
    if gt.is_empty() {
        return Err(Error::Domain("proxy loss over an empty foreground".into()));
    }
    let mut sums = [0.0; 4];
    for (p, g) in pred.iter().zip(gt) {
        for (s, t) in sums.iter_mut().zip(pixel_terms(p, g)) {
            *s += t;
        }
    }
    Ok(combine(sums, gt.len(), w))
}

/// Weighted proxy loss averaged over `coverage` foreground pixels.
pub fn proxy_loss(pred: &ProxyMaps, gt: &ProxyMaps, w: &LossWeights, coverage: &Map) -> Result<ProxyLoss> {
    pred.check_same_shape(gt)?;
    gt.coverage.check_same_shape(coverage, "proxy loss coverage")?;
    let fg: Vec<usize> = (0..coverage.pixels()).filter(|&p| coverage.data()[p] > 0.5).collect();
    let p: Vec<ProxyPixel> = fg.iter().map(|&i| pred.pixel(i)).collect();
    let g: Vec<ProxyPixel> = fg.iter().map(|&i| gt.pixel(i)).collect();
    loss_over(&p, &g, w)
}

/// ∂(weighted per-pixel loss)/∂(squashed output).
fn pixel_loss_grad(pred: &ProxyPixel, gt: &ProxyPixel, w: &LossWeights) -> ProxyPixel {
    let mut d = [0.0; CHANNELS];
    for c in 0..3 {
        d[c] = w.albedo * sign(pred[c] - gt[c]);
        d[3 + c] = -w.normal * gt[3 + c];
    }
    d[6] = w.roughness * sign(pred[6] - gt[6]);
    let (p, m) = (pred[7], gt[7]);
    let d_pos = if p > BCE_FLOOR { -m / p } else { 0.0 };
    let d_neg = if 1.0 - p > BCE_FLOOR { (1.0 - m) / (1.0 - p) } else { 0.0 };
    d[7] = w.metallic * (d_pos + d_neg);
    d
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-pixel encoder inputs: ln Y, two chromaticities, Sobel x/y of ln Y,
/// Sobel x/y of coverage, radial image coordinate, coverage.
pub fn encoder_features(img: &LinearImage, coverage: &Map) -> Result<Map> {
    let (h, w) = (img.height(), img.width());
    if coverage.height() != h || coverage.width() != w || coverage.channels() != 1 {
        return Err(Error::Shape("coverage does not match image".into()));
    }
    let m = img.map();
    let log_y = Map::from_fn(h, w, 1, |i, j, _| {
        (0..3).map(|c| LUMA[c] * m.get(i, j, c)).sum::<f64>().max(LUMINANCE_FLOOR).ln()
    });
    let sobel = |src: &Map, i: usize, j: usize| {
        let at = |di: i64, dj: i64| {
            let r = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
            let c = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
            src.get(r, c, 0)
        };
        let gx = (at(-1, 1) + 2.0 * at(0, 1) + at(1, 1)) - (at(-1, -1) + 2.0 * at(0, -1) + at(1, -1));
        let gy = (at(1, -1) + 2.0 * at(1, 0) + at(1, 1)) - (at(-1, -1) + 2.0 * at(-1, 0) + at(-1, 1));
        (gx / 8.0, gy / 8.0)
    };
    let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let half_diag = (ci * ci + cj * cj).sqrt().max(1.0);
    let mut data = Vec::with_capacity(h * w * INPUT_FEATURES);
    for i in 0..h {
        for j in 0..w {
            let rgb = [m.get(i, j, 0), m.get(i, j, 1), m.get(i, j, 2)];
            let sum = rgb.iter().sum::<f64>() + 1e-6;
            let (lx, ly) = sobel(&log_y, i, j);
            let (cx, cy) = sobel(coverage, i, j);
            let radial = ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt() / half_diag;
            data.extend_from_slice(&[
                log_y.get(i, j, 0),
                rgb[0] / sum,
                rgb[1] / sum,
                lx,
                ly,
                cx,
                cy,
                radial,
                coverage.get(i, j, 0),
            ]);
        }
    }
    Map::new(h, w, INPUT_FEATURES, data)
}

pub const ENCODER_SCHEMA: &str = "relightkit.proxy-encoder/1";

/// The per-pixel encoder network.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyEncoder {
    pub net: Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncoderDoc {
    schema: String,
    network: MlpDoc,
}

/// Squashed outputs plus what the backward pass needs.
struct PixelForward {
    trace: crate::nn::MlpTrace,
    out: ProxyPixel,
    normal_len: f64,
}

impl ProxyEncoder {
    pub fn new(hidden: usize, seed: u64) -> Self {
        ProxyEncoder {
            net: Mlp::init(INPUT_FEATURES, hidden, CHANNELS, seed),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        ProxyEncoder {
            net: Mlp::zeros(INPUT_FEATURES, hidden, CHANNELS),
        }
    }

    /// Fresh encoder whose input standardization matches `samples`.
    pub fn init_for(samples: &[ProxySample], hidden: usize, seed: u64) -> Self {
        let mut enc = Self::new(hidden, seed);
        let rows: Vec<&[f64]> = samples.iter().flat_map(|s| s.features.chunks(INPUT_FEATURES)).collect();
        let n = rows.len().max(1) as f64;
        let mean: Vec<f64> = (0..INPUT_FEATURES).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..INPUT_FEATURES)
            .map(|k| (rows.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        enc.net.set_standardization(&mean, &std);
        enc
    }

    fn forward(&self, features: &[f64]) -> PixelForward {
        let trace = self.net.forward(features);
        let raw = &trace.out;
        let v = Vec3::new(raw[3], raw[4], raw[5]);
        let len = v.norm();
        let n = if len > 0.0 { v / len } else { UP };
        let out = [
            sigmoid(raw[0]),
            sigmoid(raw[1]),
            sigmoid(raw[2]),
            n.x,
            n.y,
            n.z,
            sigmoid(raw[6]),
            sigmoid(raw[7]),
        ];
        PixelForward {
            trace,
            out,
            normal_len: len,
        }
    }

    /// Squashed proxy values for one feature row.
    pub fn predict_pixel(&self, features: &[f64]) -> ProxyPixel {
        self.forward(features).out
    }

    /// Accumulates parameter gradients given ∂L/∂(squashed output).
    fn backward(&self, f: &PixelForward, d_out: &ProxyPixel, grad: &mut [f64]) {
        let mut d_raw = [0.0; CHANNELS];
        for c in [0, 1, 2, 6, 7] {
            d_raw[c] = d_out[c] * f.out[c] * (1.0 - f.out[c]);
        }
        if f.normal_len > 0.0 {
            let n = &f.out[3..6];
            let dn = &d_out[3..6];
            let along = dot3(dn, n);
            for c in 0..3 {
                d_raw[3 + c] = (dn[c] - along * n[c]) / f.normal_len;
            }
        }
        self.net.backward(&f.trace, &d_raw, grad);
    }

    /// Forward then backward for one feature row.
    pub(crate) fn backward_pixel(&self, features: &[f64], d_out: &ProxyPixel, grad: &mut [f64]) {
        let f = self.forward(features);
        self.backward(&f, d_out, grad);
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(&EncoderDoc {
            schema: ENCODER_SCHEMA.into(),
            network: MlpDoc::from(&self.net),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: EncoderDoc = serde_json::from_str(text)?;
        if doc.schema != ENCODER_SCHEMA {
            return Err(Error::Format(format!("unsupported encoder schema {:?}", doc.schema)));
        }
        let net = Mlp::try_from(&doc.network)?;
        if net.input != INPUT_FEATURES || net.output != CHANNELS {
            return Err(Error::Shape(format!(
                "encoder must map {INPUT_FEATURES} -> {CHANNELS}, got {} -> {}",
                net.input, net.output
            )));
        }
        Ok(ProxyEncoder { net })
    }
}

/// Runs the encoder on every foreground pixel; background stays zero.
pub fn encode(encoder: &ProxyEncoder, img: &LinearImage, coverage: &Map) -> Result<ProxyMaps> {
    let feats = encoder_features(img, coverage)?;
    let pixels: Vec<ProxyPixel> = (0..feats.pixels())
        .into_par_iter()
        .map(|p| {
            if coverage.data()[p] > 0.5 {
                encoder.predict_pixel(feats.pixel(p))
            } else {
                [0.0; CHANNELS]
            }
        })
        .collect();
    if let Some(p) = pixels.iter().position(|px| px.iter().any(|v| !v.is_finite())) {
        return Err(Error::Numeric(format!("encoder produced a non-finite value at pixel {p}")));
    }
    ProxyMaps::from_pixels(img.height(), img.width(), coverage, &pixels)
}

/// Coverage-weighted mean of the eight channels, then an affine map.
pub fn pool_project(maps: &ProxyMaps, proj: &AffineMap) -> Result<Vec<f64>> {
    if proj.in_dim() != CHANNELS {
        return Err(Error::Shape(format!("projection expects {} inputs, need {CHANNELS}", proj.in_dim())));
    }
    let mut pooled = [0.0; CHANNELS];
    let mut weight = 0.0;
    for p in 0..maps.coverage.pixels() {
        let c = maps.coverage.data()[p];
        if c <= 0.0 {
            continue;
        }
        weight += c;
        for (acc, v) in pooled.iter_mut().zip(maps.pixel(p)) {
            *acc += c * v;
        }
    }
    if weight == 0.0 {
        return Err(Error::Domain("cannot pool an empty foreground".into()));
    }
    pooled.iter_mut().for_each(|v| *v /= weight);
    proj.apply(&pooled)
}

/// A supervised training example restricted to a fixed set of foreground
/// pixels (all of them unless subsampled).
#[derive(Debug, Clone, PartialEq)]
pub struct ProxySample {
    pub id: String,
    /// Row-major features, [`INPUT_FEATURES`] per pixel.
    pub features: Vec<f64>,
    pub target: Vec<ProxyPixel>,
}

impl ProxySample {
    /// `max_pixels = 0` keeps the whole foreground.
    pub fn new(
        id: impl Into<String>,
        img: &LinearImage,
        target: &ProxyMaps,
        max_pixels: usize,
        seed: u64,
    ) -> Result<Self> {
        let feats = encoder_features(img, &target.coverage)?;
        let mut fg = target.foreground();
        if fg.is_empty() {
            return Err(Error::Domain("training sample has an empty foreground".into()));
        }
        if max_pixels > 0 && fg.len() > max_pixels {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pick: Vec<usize> = sample(&mut rng, fg.len(), max_pixels).into_iter().map(|i| fg[i]).collect();
            pick.sort_unstable();
            fg = pick;
        }
        Ok(ProxySample {
            id: id.into(),
            features: fg.iter().flat_map(|&p| feats.pixel(p).to_vec()).collect(),
            target: fg.iter().map(|&p| target.pixel(p)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.features.chunks(INPUT_FEATURES)
    }

    /// Encoder output on this sample's pixels.
    pub fn predict(&self, encoder: &ProxyEncoder) -> Vec<ProxyPixel> {
        self.rows().map(|r| encoder.predict_pixel(r)).collect()
    }
}

/// Mean proxy loss over samples, with the parameter gradient on request.
pub fn samples_loss(
    encoder: &ProxyEncoder,
    samples: &[ProxySample],
    w: &LossWeights,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    if samples.is_empty() {
        return Err(Error::Config("proxy fitting needs at least one supervised sample".into()));
    }
    let parts: Vec<Result<(f64, Option<Vec<f64>>)>> = samples
        .par_iter()
        .map(|s| {
            let fwd: Vec<PixelForward> = s.rows().map(|r| encoder.forward(r)).collect();
            let preds: Vec<ProxyPixel> = fwd.iter().map(|f| f.out).collect();
            let loss = loss_over(&preds, &s.target, w)?.total;
            let grad = want_grad.then(|| {
                let mut g = vec![0.0; encoder.net.params.len()];
                let inv = 1.0 / s.len() as f64;
                for (f, t) in fwd.iter().zip(&s.target) {
                    let mut d = pixel_loss_grad(&f.out, t, w);
                    d.iter_mut().for_each(|v| *v *= inv);
                    encoder.backward(f, &d, &mut g);
                }
                g
            });
            Ok((loss, grad))
        })
        .collect();
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; encoder.net.params.len()]);
    for part in parts {
        let (l, g) = part?;
        loss += l / n;
        if let (Some(total), Some(g)) = (grad.as_mut(), g) {
            total.iter_mut().zip(g).for_each(|(t, v)| *t += v / n);
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProxyFitConfig {
    pub weights: LossWeights,
    pub hidden: usize,
    pub lr: f64,
    pub iterations: usize,
    /// Foreground pixels kept per supervised record (0 = all).
    pub pixels_per_record: usize,
    /// Supplied by the caller, never read from config files.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ProxyFitConfig {
    fn default() -> Self {
        ProxyFitConfig {
            weights: LossWeights::default(),
            hidden: 16,
            lr: 0.05,
            iterations: 300,
            pixels_per_record: 2048,
            seed: 0,
        }
    }
}

impl ProxyFitConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.hidden == 0 {
            return Err(Error::Config("encoder hidden width must be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("proxy learning rate {} must be > 0", self.lr)));
        }
        Ok(())
    }
}

/// Step-halving gradient descent on the mean proxy loss, starting from
/// `init`. Returns the fitted encoder and the loss after each iteration.
pub fn fit_encoder(
    init: &ProxyEncoder,
    samples: &[ProxySample],
    cfg: &ProxyFitConfig,
) -> Result<(ProxyEncoder, Vec<f64>)> {
    cfg.validate()?;
    let mut enc = init.clone();
    let (mut loss, _) = samples_loss(&enc, samples, &cfg.weights, false)?;
    check_loss(loss, 0)?;
    let mut log = vec![loss];
    let mut schedule = StepSchedule {
        lr: cfg.lr,
        growth: 1.2,
        min_lr: 1e-12,
    };
    for it in 1..=cfg.iterations {
        let (_, grad) = samples_loss(&enc, samples, &cfg.weights, true)?;
        let grad = grad.expect("requested");
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let mut params = enc.net.params.clone();
        let mut trial = enc.clone();
        let accepted = schedule.step(&mut params, &grad, |p| {
            trial.net.params.copy_from_slice(p);
            let (l, _) = samples_loss(&trial, samples, &cfg.weights, false)?;
            Ok((l.is_finite() && l <= loss).then_some(l))
        })?;
        let Some(l) = accepted else { break };
        enc.net.params = params;
        loss = l;
        check_loss(loss, it)?;
        log.push(loss);
    }
    log::debug!("proxy encoder fitted: loss {} -> {}", log[0], loss);
    Ok((enc, log))
}

fn check_loss(loss: f64, it: usize) -> Result<()> {
    if !loss.is_finite() || loss > DIVERGENCE_LOSS {
        return Err(Error::Numeric(format!("proxy loss diverged ({loss}) at iteration {it}")));
    }
    Ok(())
}

/// Mean absolute albedo error per channel over a sample's pixels.
pub fn albedo_mae(encoder: &ProxyEncoder, sample: &ProxySample) -> f64 {
    let preds = sample.predict(encoder);
    preds.iter().zip(&sample.target).map(|(p, t)| l1(&p[0..3], &t[0..3])).sum::<f64>() / (3 * sample.len()) as f64
}
