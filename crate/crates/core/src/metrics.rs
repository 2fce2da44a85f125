//! Image-quality metrics on sRGB images mapped to [−1, 1], and grouped
//! evaluation reports over relighting pairs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{pairs_to_jsonl, Manifest, PairRecord, VariationKind};
use crate::error::{Error, Result};
use crate::image::{load_image, read_file, srgb_encode, write_file, LinearImage, Map};
use crate::json::format_g17;
use crate::mask::{gaussian_blur, LUMA};

/// Reported when the RMSE is below [`PSNR_CAP_RMSE`].
pub const PSNR_CAP_DB: f64 = 99.0;
pub const PSNR_CAP_RMSE: f64 = 2e-5;
/// Peak-to-peak range of [−1, 1] images.
const PEAK: f64 = 2.0;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// sRGB-encodes `exposure · img` and maps [0, 1] linearly onto [−1, 1].
pub fn normalize_pm1(img: &LinearImage, exposure: f64) -> Result<Map> {
    if !(exposure > 0.0 && exposure.is_finite()) {
        return Err(Error::Domain(format!("exposure must be > 0, got {exposure}")));
    }
    Ok(img.map().map(|v| 2.0 * srgb_encode(v * exposure) - 1.0))
}

fn check_pair(a: &Map, b: &Map) -> Result<()> {
    a.check_same_shape(b, "metric inputs")?;
    if a.data().is_empty() {
        return Err(Error::Shape("metrics need a non-empty image".into()));
    }
    Ok(())
}

pub fn rmse(a: &Map, b: &Map) -> Result<f64> {
    check_pair(a, b)?;
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sq / a.data().len() as f64).sqrt())
}

/// PSNR for a given RMSE on [−1, 1] data, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse < PSNR_CAP_RMSE {
        PSNR_CAP_DB
    } else {
        (20.0 * (PEAK / rmse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Map, b: &Map) -> Result<f64> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

fn luma(m: &Map) -> Map {
    if m.channels() == 1 {
        return m.clone();
    }
    Map::from_fn(m.height(), m.width(), 1, |i, j, _| (0..3).map(|c| LUMA[c] * m.get(i, j, c)).sum())
}

/// Mean local SSIM of the luminance planes. Local statistics use an
/// 11-tap Gaussian window (σ = 1.5) with edge replication.
pub fn ssim(a: &Map, b: &Map) -> Result<f64> {
    check_pair(a, b)?;
    let (x, y) = (luma(a), luma(b));
    let (h, w) = (x.height(), x.width());
    let prod = |p: &Map, q: &Map| Map::new(h, w, 1, p.data().iter().zip(q.data()).map(|(u, v)| u * v).collect());
    let mu_x = gaussian_blur(&x, SSIM_SIGMA);
    let mu_y = gaussian_blur(&y, SSIM_SIGMA);
    let e_xx = gaussian_blur(&prod(&x, &x)?, SSIM_SIGMA);
    let e_yy = gaussian_blur(&prod(&y, &y)?, SSIM_SIGMA);
    let e_xy = gaussian_blur(&prod(&x, &y)?, SSIM_SIGMA);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..h * w)
        .map(|p| {
            let (mx, my) = (mu_x.data()[p], mu_y.data()[p]);
            let vx = e_xx.data()[p] - mx * mx;
            let vy = e_yy.data()[p] - my * my;
            let cov = e_xy.data()[p] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (h * w) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScores {
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

/// All three metrics after normalizing both linear images.
pub fn score_pair(pred: &LinearImage, truth: &LinearImage, exposure: f64) -> Result<PairScores> {
    let a = normalize_pm1(pred, exposure)?;
    let b = normalize_pm1(truth, exposure)?;
    let r = rmse(&a, &b)?;
    Ok(PairScores {
        rmse: r,
        ssim: ssim(&a, &b)?,
        psnr: psnr_from_rmse(r),
    })
}

/// Mean metrics over one group of pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// A variation name, or `overall`.
    pub variation: String,
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub n_pairs: usize,
}

impl EvalRow {
    /// Per-metric means; `scores` must be nonempty.
    pub fn mean(variation: &str, scores: &[PairScores]) -> Self {
        let n = scores.len() as f64;
        EvalRow {
            variation: variation.to_string(),
            rmse: scores.iter().map(|s| s.rmse).sum::<f64>() / n,
            ssim: scores.iter().map(|s| s.ssim).sum::<f64>() / n,
            psnr: scores.iter().map(|s| s.psnr).sum::<f64>() / n,
            n_pairs: scores.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalError {
    pub pair_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub manifest_sha256: String,
    pub pairs_sha256: String,
    pub config_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Exposure applied before sRGB encoding.
    pub exposure: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { exposure: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One row per variation present, in [`VariationKind::ALL`] order.
    pub rows: Vec<EvalRow>,
    /// Absent when no pair could be evaluated.
    pub overall: Option<EvalRow>,
    pub errors: Vec<EvalError>,
    pub provenance: Provenance,
}

pub const CSV_HEADER: [&str; 5] = ["variation", "rmse", "ssim", "psnr", "n_pairs"];

impl EvalReport {
    /// True when every pair was evaluated.
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }

    /// Per-variation rows followed by the overall row.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Format(format!("csv: {e}"));
        w.write_record(CSV_HEADER).map_err(csv_err)?;
        for row in self.rows.iter().chain(&self.overall) {
            w.write_record([
                row.variation.clone(),
                format_g17(row.rmse),
                format_g17(row.ssim),
                format_g17(row.psnr),
                row.n_pairs.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        crate::json::to_string(self)
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        write_file(&dir.join("report.csv"), self.to_csv()?.as_bytes())?;
        write_file(&dir.join("report.json"), format!("{}\n", self.to_json()?).as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Prediction file for a pair.
pub fn prediction_path(dir: &Path, pair_id: &str) -> PathBuf {
    dir.join(format!("{pair_id}.raw"))
}

/// Scores `{predictions}/{pair_id}.raw` against each pair's target image
/// from the dataset next to `manifest_path`. Unreadable or mismatched
/// predictions are listed in `errors` and excluded from every row.
pub fn evaluate_suite(
    manifest_path: &Path,
    pairs: &[PairRecord],
    predictions: &Path,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let manifest_bytes = read_file(manifest_path)?;
    let manifest = Manifest::from_jsonl(
        std::str::from_utf8(&manifest_bytes).map_err(|e| Error::Format(format!("manifest is not UTF-8: {e}")))?,
    )?;
    let root = manifest_path.parent().unwrap_or(Path::new("."));
    let provenance = Provenance {
        manifest_sha256: sha256_hex(&manifest_bytes),
        pairs_sha256: sha256_hex(pairs_to_jsonl(pairs)?.as_bytes()),
        config_sha256: sha256_hex(crate::json::to_string(cfg)?.as_bytes()),
    };

    let scored: Vec<std::result::Result<PairScores, String>> = pairs
        .par_iter()
        .map(|pair| {
            let target = manifest
                .get(pair.target_key())
                .ok_or_else(|| format!("target record {} not in manifest", pair.target_key().stem()))?;
            let truth = target.load_image(root).map_err(|e| e.to_string())?;
            let pred = load_image(&prediction_path(predictions, &pair.pair_id)).map_err(|e| e.to_string())?;
            score_pair(&pred, &truth, cfg.exposure).map_err(|e| e.to_string())
        })
        .collect();

    let mut groups: BTreeMap<VariationKind, Vec<PairScores>> = BTreeMap::new();
    let mut all = Vec::new();
    let mut errors = Vec::new();
    for (pair, s) in pairs.iter().zip(scored) {
        match s {
            Ok(s) => {
                groups.entry(pair.variation).or_default().push(s);
                all.push(s);
            }
            Err(message) => errors.push(EvalError {
                pair_id: pair.pair_id.clone(),
                message,
            }),
        }
    }
    Ok(EvalReport {
        rows: groups.iter().map(|(k, v)| EvalRow::mean(k.as_str(), v)).collect(),
        overall: (!all.is_empty()).then(|| EvalRow::mean("overall", &all)),
        errors,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(v: f64) -> Map {
        Map::filled(16, 16, 3, v)
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = Map::from_fn(20, 20, 3, |i, j, c| ((i * 7 + j * 3 + c) % 11) as f64 / 5.0 - 1.0);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset() {
        let r = rmse(&constant(0.2), &constant(-0.3)).unwrap();
        assert!((r - 0.5).abs() < 1e-15);
        let p = psnr(&constant(0.2), &constant(-0.3)).unwrap();
        assert!((p - 12.041199826559248).abs() < 1e-9, "{p}");
        assert!((rmse(&constant(0.3), &constant(-0.3)).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn psnr_cap_threshold() {
        assert_eq!(psnr_from_rmse(1.9e-5), 99.0);
        assert!(psnr_from_rmse(3e-5) < 99.0);
        assert!(psnr_from_rmse(0.1) > psnr_from_rmse(0.2));
    }

    #[test]
    fn normalization_examples() {
        let img = |v: f64| LinearImage::new(Map::filled(1, 1, 3, v)).unwrap();
        assert_eq!(normalize_pm1(&img(0.0), 1.0).unwrap().data()[0], -1.0);
        assert_eq!(normalize_pm1(&img(1.0), 1.0).unwrap().data()[0], 1.0);
        assert_eq!(normalize_pm1(&img(7.0), 1.0).unwrap().data()[0], 1.0);
        // The linear value whose sRGB encoding is one half.
        let mid = crate::image::srgb_decode(0.5);
        assert!(normalize_pm1(&img(mid), 1.0).unwrap().data()[0].abs() <= 1.0 / 255.0);
        // Linear 0.5 (byte 188) lands at 2·0.735357 − 1.
        let v = normalize_pm1(&img(0.5), 1.0).unwrap().data()[0];
        assert!((v - 0.47071).abs() < 1e-4, "{v}");
        assert!(normalize_pm1(&img(0.5), 0.0).is_err());
    }

    #[test]
    fn ssim_ignores_common_shift() {
        // Contrast and structure terms cancel a shift exactly; the luminance
        // term only approximately, so local means stay well away from zero.
        let a = Map::from_fn(24, 24, 3, |i, j, _| 0.55 + 0.3 * (i as f64 * 0.7).sin() * (j as f64 * 0.4).cos());
        let b = Map::from_fn(24, 24, 3, |i, j, c| a.get(i, j, c) + 0.05 * ((i * 13 + j * 7) % 5) as f64 / 4.0 - 0.025);
        let base = ssim(&a, &b).unwrap();
        let shifted = ssim(&a.map(|v| v + 0.1), &b.map(|v| v + 0.1)).unwrap();
        assert!((base - shifted).abs() <= 1e-3, "{base} {shifted}");
        assert!(base < 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(rmse(&constant(0.0), &Map::filled(8, 8, 3, 0.0)).is_err());
    }

    #[test]
    fn csv_has_expected_header() {
        let report = EvalReport {
            rows: vec![EvalRow::mean(
                "energy",
                &[PairScores {
                    rmse: 0.0,
                    ssim: 1.0,
                    psnr: 99.0,
                }],
            )],
            overall: None,
            errors: vec![],
            provenance: Provenance {
                manifest_sha256: String::new(),
                pairs_sha256: String::new(),
                config_sha256: String::new(),
            },
        };
        assert_eq!(report.to_csv().unwrap(), "variation,rmse,ssim,psnr,n_pairs\nenergy,0,1,99,1\n");
    }
}
