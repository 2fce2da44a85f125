//! Stage orchestration: configuration, artifact layout and one function per
//! pipeline stage. Every stage reads its inputs from and writes its outputs
//! under a single output root, and reruns reproduce identical bytes.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    derive_seed, generate_dataset, load_pairs, pairs_to_jsonl, sample_pairs, DatasetConfig, Manifest, PairRecord,
    SampleRecord, Split,
};
use crate::dpo::{dpo_refine, DpoConfig};
use crate::error::{Error, Result};
use crate::image::{load_raw, read_file, save_raw, write_file};
use crate::mask::{gt_mask, mask_features, train_mask_predictor, MaskConfig, MaskExample, MaskTrainConfig, SoftMask};
use crate::metrics::{evaluate_suite, prediction_path, EvalConfig, EvalReport};
use crate::proxy::{encode, fit_encoder, ProxyEncoder, ProxyFitConfig, ProxyMaps, ProxySample};
use crate::relight::{relight, Intrinsics, RelightMode, RelightRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Root for every artifact; relative paths resolve against the config
    /// file's directory.
    pub output: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { output: "out".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairsConfig {
    pub per_view: usize,
}

impl Default for PairsConfig {
    fn default() -> Self {
        PairsConfig { per_view: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskStageConfig {
    #[serde(flatten)]
    pub extract: MaskConfig,
    /// Training pairs used for the predictor, spread evenly over the train split.
    pub max_examples: usize,
    pub train: MaskTrainConfig,
}

impl Default for MaskStageConfig {
    fn default() -> Self {
        MaskStageConfig {
            extract: MaskConfig::default(),
            max_examples: 32,
            train: MaskTrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntrinsicsSource {
    /// Encoded from the source image by the refined proxy encoder.
    #[default]
    Proxy,
    /// Re-rendered ground-truth G-buffers.
    Gbuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelightStageConfig {
    pub intrinsics: IntrinsicsSource,
    pub mode: RelightMode,
}

impl Default for RelightStageConfig {
    fn default() -> Self {
        RelightStageConfig {
            intrinsics: IntrinsicsSource::Proxy,
            mode: RelightMode::Local,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub dataset: DatasetConfig,
    pub pairs: PairsConfig,
    pub mask: MaskStageConfig,
    pub proxy: ProxyFitConfig,
    pub dpo: DpoConfig,
    pub relight: RelightStageConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            paths: PathsConfig::default(),
            dataset: DatasetConfig::default(),
            pairs: PairsConfig::default(),
            mask: MaskStageConfig::default(),
            proxy: ProxyFitConfig::default(),
            dpo: DpoConfig::default(),
            relight: RelightStageConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; a relative output path is anchored at the file.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
        let mut cfg = Self::parse(text)?;
        if cfg.paths.output.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            cfg.paths.output = base.join(&cfg.paths.output);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if self.pairs.per_view == 0 {
            return Err(Error::Config("pairs.per_view must be >= 1".into()));
        }
        self.mask.extract.validate()?;
        self.mask.train.validate()?;
        if self.mask.max_examples == 0 {
            return Err(Error::Config("mask.max_examples must be >= 1".into()));
        }
        self.proxy.validate()?;
        self.dpo.validate()?;
        // Proxy intrinsics carry no depth, so shadow rays have no origin.
        if self.relight.intrinsics == IntrinsicsSource::Proxy && self.relight.mode == RelightMode::Geometric {
            return Err(Error::Config("relight.mode = \"geometric\" needs intrinsics = \"gbuffer\"".into()));
        }
        if !(self.eval.exposure > 0.0 && self.eval.exposure.is_finite()) {
            return Err(Error::Config(format!("eval exposure {} must be > 0", self.eval.exposure)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.paths.output)
    }
}

/// Artifact paths under the output root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout { root: root.to_path_buf() }
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }

    pub fn manifest(&self) -> PathBuf {
        self.dataset_dir().join("manifest.jsonl")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.jsonl")
    }

    /// Relative to the output root, as stored in pair records.
    pub fn mask_rel(pair_id: &str) -> String {
        format!("masks/{pair_id}.raw")
    }

    pub fn mask_predictor(&self) -> PathBuf {
        self.root.join("mask").join("predictor.json")
    }

    pub fn mask_log(&self) -> PathBuf {
        self.root.join("mask").join("train_log.json")
    }

    pub fn proxy_encoder(&self) -> PathBuf {
        self.root.join("proxy").join("encoder.json")
    }

    pub fn proxy_log(&self) -> PathBuf {
        self.root.join("proxy").join("fit_log.json")
    }

    pub fn dpo_encoder(&self) -> PathBuf {
        self.root.join("dpo").join("encoder.json")
    }

    pub fn dpo_log(&self) -> PathBuf {
        self.root.join("dpo").join("log.json")
    }

    pub fn predictions_dir(&self) -> PathBuf {
        self.root.join("predictions")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Gen,
    Pairs,
    MaskGt,
    TrainMask,
    FitProxy,
    Dpo,
    Relight,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Gen,
        Stage::Pairs,
        Stage::MaskGt,
        Stage::TrainMask,
        Stage::FitProxy,
        Stage::Dpo,
        Stage::Relight,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Gen => "gen",
            Stage::Pairs => "pairs",
            Stage::MaskGt => "mask-gt",
            Stage::TrainMask => "train-mask",
            Stage::FitProxy => "fit-proxy",
            Stage::Dpo => "dpo",
            Stage::Relight => "relight",
            Stage::Eval => "eval",
        }
    }
}

/// Result of one stage: a one-line summary, and whether every item succeeded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageOutcome {
    pub summary: String,
    pub complete: bool,
}

impl StageOutcome {
    fn done(summary: String) -> Self {
        StageOutcome {
            summary,
            complete: true,
        }
    }
}

/// Sub-seed tags; the dataset itself uses the root seed.
const TAG_PAIRS: u64 = 20;
const TAG_MASK: u64 = 30;
const TAG_PROXY: u64 = 40;

pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<StageOutcome> {
    match stage {
        Stage::Gen => stage_gen(cfg),
        Stage::Pairs => stage_pairs(cfg),
        Stage::MaskGt => stage_mask_gt(cfg),
        Stage::TrainMask => stage_train_mask(cfg),
        Stage::FitProxy => stage_fit_proxy(cfg),
        Stage::Dpo => stage_dpo(cfg),
        Stage::Relight => stage_relight(cfg),
        Stage::Eval => stage_eval(cfg).map(|(outcome, _)| outcome),
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_file(path, format!("{}\n", crate::json::to_string(value)?).as_bytes())
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_file(path)?).map_err(|e| Error::Format(format!("{}: not UTF-8: {e}", path.display())))
}

fn save_pairs(path: &Path, pairs: &[PairRecord]) -> Result<()> {
    write_file(path, pairs_to_jsonl(pairs)?.as_bytes())
}

pub fn stage_gen(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let m = generate_dataset(&cfg.dataset, cfg.seed, &layout.dataset_dir())?;
    let supervised = m.supervised().count();
    let eval = m.records.iter().filter(|r| r.split == Split::Eval).count();
    Ok(StageOutcome::done(format!(
        "gen: {} records ({} objects x {} views x {} lights), {supervised} supervised, {eval} eval -> {}",
        m.records.len(),
        cfg.dataset.objects,
        cfg.dataset.views,
        cfg.dataset.lights,
        layout.manifest().display()
    )))
}

pub fn stage_pairs(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let manifest = Manifest::load(&layout.manifest())?;
    let set = sample_pairs(&manifest, cfg.pairs.per_view, derive_seed(cfg.seed, &[TAG_PAIRS]));
    save_pairs(&layout.pairs(), &set.pairs)?;
    Ok(StageOutcome::done(format!(
        "pairs: {} pairs, {} single-light views skipped -> {}",
        set.pairs.len(),
        set.warnings,
        layout.pairs().display()
    )))
}

fn record<'a>(manifest: &'a Manifest, key: crate::dataset::RecordKey) -> Result<&'a SampleRecord> {
    manifest
        .get(key)
        .ok_or_else(|| Error::Config(format!("record {key} missing from the manifest")))
}

pub fn stage_mask_gt(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let manifest = Manifest::load(&layout.manifest())?;
    let root = layout.dataset_dir();
    let pairs = load_pairs(&layout.pairs())?;
    let updated: Vec<Result<PairRecord>> = pairs
        .par_iter()
        .map(|pair| {
            let src = record(&manifest, pair.source_key())?;
            let tgt = record(&manifest, pair.target_key())?;
            let coverage = src.load_coverage(&root)?;
            let mask = gt_mask(
                &src.load_image(&root)?,
                &tgt.load_image(&root)?,
                Some(&coverage),
                &cfg.mask.extract,
            )?;
            let rel = Layout::mask_rel(&pair.pair_id);
            save_raw(&layout.root.join(&rel), mask.map())?;
            Ok(PairRecord {
                mask_path: Some(rel),
                ..pair.clone()
            })
        })
        .collect();
    let updated = updated.into_iter().collect::<Result<Vec<_>>>()?;
    save_pairs(&layout.pairs(), &updated)?;
    Ok(StageOutcome::done(format!(
        "mask-gt: {} masks -> {}",
        updated.len(),
        layout.root.join("masks").display()
    )))
}

/// Evenly spaced subset of at most `n` items, order preserved.
fn spread<T>(items: Vec<T>, n: usize) -> Vec<T> {
    let len = items.len();
    if len <= n {
        return items;
    }
    let keep: std::collections::BTreeSet<usize> = (0..n).map(|i| i * len / n).collect();
    items
        .into_iter()
        .enumerate()
        .filter_map(|(i, x)| keep.contains(&i).then_some(x))
        .collect()
}

pub fn stage_train_mask(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let manifest = Manifest::load(&layout.manifest())?;
    let pairs = load_pairs(&layout.pairs())?;
    let train: Vec<&PairRecord> = pairs
        .iter()
        .filter(|p| record(&manifest, p.source_key()).is_ok_and(|r| r.split == Split::Train))
        .collect();
    let chosen = spread(train, cfg.mask.max_examples);
    let examples: Vec<Result<MaskExample>> = chosen
        .par_iter()
        .map(|pair| {
            let rel = pair
                .mask_path
                .as_ref()
                .ok_or_else(|| Error::Config(format!("pair {} has no mask; run mask-gt first", pair.pair_id)))?;
            let src = record(&manifest, pair.source_key())?;
            let image = src.load_image(&layout.dataset_dir())?;
            // Features use the source view's geometry, re-rendered from metadata.
            let (_, gbuffer) = src.render()?;
            let features = mask_features(&image, &Intrinsics::from(&gbuffer), &src.camera, &src.light, &pair.delta)?;
            Ok(MaskExample {
                features,
                target: SoftMask::new(load_raw(&layout.root.join(rel))?)?,
            })
        })
        .collect();
    let examples = examples.into_iter().collect::<Result<Vec<_>>>()?;
    let train_cfg = MaskTrainConfig {
        seed: derive_seed(cfg.seed, &[TAG_MASK]),
        ..cfg.mask.train.clone()
    };
    let (predictor, log) = train_mask_predictor(&examples, &train_cfg)?;
    write_file(&layout.mask_predictor(), format!("{}\n", predictor.to_json()?).as_bytes())?;
    write_json(&layout.mask_log(), &log)?;
    Ok(StageOutcome::done(format!(
        "train-mask: {} examples, loss {:.6} -> {:.6} -> {}",
        examples.len(),
        log.first().copied().unwrap_or(f64::NAN),
        log.last().copied().unwrap_or(f64::NAN),
        layout.mask_predictor().display()
    )))
}

/// Pixel-subsampled samples for every supervised record.
pub fn supervised_samples(cfg: &PipelineConfig) -> Result<Vec<ProxySample>> {
    let layout = cfg.layout();
    let root = layout.dataset_dir();
    let manifest = Manifest::load(&layout.manifest())?;
    let records: Vec<&SampleRecord> = manifest.supervised().collect();
    if records.is_empty() {
        return Err(Error::Config("the dataset has no supervised records".into()));
    }
    let samples: Vec<Result<ProxySample>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let gbuffer = r
                .load_gbuffer(&root)?
                .ok_or_else(|| Error::Config(format!("supervised record {} has no G-buffer", r.key())))?;
            ProxySample::new(
                r.key().stem(),
                &r.load_image(&root)?,
                &ProxyMaps::from_gbuffer(&gbuffer),
                cfg.proxy.pixels_per_record,
                derive_seed(cfg.seed, &[TAG_PROXY, i as u64]),
            )
        })
        .collect();
    samples.into_iter().collect()
}

fn load_encoder(path: &Path) -> Result<ProxyEncoder> {
    ProxyEncoder::from_json(&read_text(path)?)
}

pub fn stage_fit_proxy(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let samples = supervised_samples(cfg)?;
    let fit_cfg = ProxyFitConfig {
        seed: derive_seed(cfg.seed, &[TAG_PROXY]),
        ..cfg.proxy.clone()
    };
    let init = ProxyEncoder::init_for(&samples, fit_cfg.hidden, fit_cfg.seed);
    let (encoder, log) = fit_encoder(&init, &samples, &fit_cfg)?;
    write_file(&layout.proxy_encoder(), format!("{}\n", encoder.to_json()?).as_bytes())?;
    write_json(&layout.proxy_log(), &log)?;
    Ok(StageOutcome::done(format!(
        "fit-proxy: {} supervised records, loss {:.6} -> {:.6} -> {}",
        samples.len(),
        log[0],
        log[log.len() - 1],
        layout.proxy_encoder().display()
    )))
}

pub fn stage_dpo(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let samples = supervised_samples(cfg)?;
    let init = load_encoder(&layout.proxy_encoder())?;
    let run = dpo_refine(&init, &samples, &cfg.dpo)?;
    write_file(&layout.dpo_encoder(), format!("{}\n", run.encoder.to_json()?).as_bytes())?;
    write_json(&layout.dpo_log(), &run.log)?;
    let first = &run.log[0];
    let last = &run.log[run.log.len() - 1];
    Ok(StageOutcome::done(format!(
        "dpo: {} accepted steps, mean reward {:.6} -> {:.6} -> {}",
        run.log.len() - 1,
        first.mean_reward,
        last.mean_reward,
        layout.dpo_encoder().display()
    )))
}

/// Eval-split pairs, the ones predictions are made and scored for.
fn eval_pairs(manifest: &Manifest, pairs: Vec<PairRecord>) -> Vec<PairRecord> {
    pairs
        .into_iter()
        .filter(|p| manifest.get(p.source_key()).is_some_and(|r| r.split == Split::Eval))
        .collect()
}

pub fn stage_relight(cfg: &PipelineConfig) -> Result<StageOutcome> {
    let layout = cfg.layout();
    let root = layout.dataset_dir();
    let manifest = Manifest::load(&layout.manifest())?;
    let pairs = eval_pairs(&manifest, load_pairs(&layout.pairs())?);
    let encoder = match cfg.relight.intrinsics {
        IntrinsicsSource::Proxy => Some(load_encoder(&layout.dpo_encoder())?),
        IntrinsicsSource::Gbuffer => None,
    };
    let done: Vec<Result<()>> = pairs
        .par_iter()
        .map(|pair| {
            let src = record(&manifest, pair.source_key())?;
            let image = src.load_image(&root)?;
            let intrinsics = match &encoder {
                Some(enc) => encode(enc, &image, &src.load_coverage(&root)?)?.to_intrinsics(),
                None => Intrinsics::from(&src.render()?.1),
            };
            let relit = relight(&RelightRequest {
                source_image: &image,
                intrinsics: &intrinsics,
                camera: &src.camera,
                source_light: &src.light,
                delta: &pair.delta,
                mode: cfg.relight.mode,
                scene: Some(&src.scene),
                policy: crate::light::RangePolicy::Error,
            })?;
            save_raw(&prediction_path(&layout.predictions_dir(), &pair.pair_id), relit.image.map())
        })
        .collect();
    done.into_iter().collect::<Result<Vec<()>>>()?;
    Ok(StageOutcome::done(format!(
        "relight: {} eval pairs -> {}",
        pairs.len(),
        layout.predictions_dir().display()
    )))
}

/// Scores eval-split predictions; incomplete when any prediction failed.
pub fn stage_eval(cfg: &PipelineConfig) -> Result<(StageOutcome, EvalReport)> {
    stage_eval_from(cfg, &cfg.layout().predictions_dir())
}

pub fn stage_eval_from(cfg: &PipelineConfig, predictions: &Path) -> Result<(StageOutcome, EvalReport)> {
    let layout = cfg.layout();
    let manifest = Manifest::load(&layout.manifest())?;
    let pairs = eval_pairs(&manifest, load_pairs(&layout.pairs())?);
    if pairs.is_empty() {
        return Err(Error::Config("no eval-split pairs to score".into()));
    }
    let report = evaluate_suite(&layout.manifest(), &pairs, predictions, &cfg.eval)?;
    report.save(&layout.eval_dir())?;
    let overall = report
        .overall
        .as_ref()
        .map(|o| format!("psnr {:.2} dB, ssim {:.4}, rmse {:.5}", o.psnr, o.ssim, o.rmse))
        .unwrap_or_else(|| "no pairs scored".into());
    let outcome = StageOutcome {
        summary: format!(
            "eval: {} pairs, {} errors, {overall} -> {}",
            pairs.len(),
            report.errors.len(),
            layout.eval_dir().display()
        ),
        complete: report.is_complete(),
    };
    Ok((outcome, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_configs_agree() {
        let toml = "seed = 3\n[dataset]\nobjects = 4\n[dpo]\nbeta = 0.25\n[mask]\nalpha = 0.5\nmax_examples = 8\n";
        let json = r#"{"seed": 3, "dataset": {"objects": 4}, "dpo": {"beta": 0.25}, "mask": {"alpha": 0.5, "max_examples": 8}}"#;
        let a = PipelineConfig::parse(toml).unwrap();
        assert_eq!(a, PipelineConfig::parse(json).unwrap());
        assert_eq!(a.dataset.objects, 4);
        assert_eq!(a.dataset.views, DatasetConfig::default().views);
        assert_eq!(a.mask.extract.alpha, 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["sed = 1\n", "[dataset]\nobject = 3\n", "[dpo]\nbeta = 0.5\ngamma = 1\n", "[mask]\nalpha = 0.5\nbogus = 1\n"] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_ranges_are_rejected() {
        for text in ["[dataset]\nsupervision_fraction = 1.5\n", "[dpo]\nsigma = 0.0\n", "[pairs]\nper_view = 0\n",
            "[relight]\nmode = \"geometric\"\n"] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn geometric_mode_needs_gbuffer_intrinsics() {
        let cfg = PipelineConfig::parse("[relight]\nintrinsics = \"gbuffer\"\nmode = \"geometric\"\n").unwrap();
        assert_eq!(cfg.relight.mode, RelightMode::Geometric);
    }

    #[test]
    fn spread_keeps_order_and_count() {
        assert_eq!(spread((0..10).collect(), 3), vec![0, 3, 6]);
        assert_eq!(spread((0..2).collect(), 3), vec![0, 1]);
    }
}
