use std::collections::BTreeMap;
use std::path::Path;

use relightkit::pipeline::{run_stage, stage_eval_from, PipelineConfig, Stage};

fn small_config(root: &Path) -> PipelineConfig {
    let text = format!(
        r#"
seed = 5
[paths]
output = "{}"
[dataset]
objects = 4
views = 2
lights = 4
width = 48
height = 48
supervision_fraction = 0.125
eval_objects = 1
[pairs]
per_view = 3
[mask]
max_examples = 6
[mask.train]
iterations = 20
samples_per_example = 256
[proxy]
iterations = 40
pixels_per_record = 512
[dpo]
iterations = 5
"#,
        root.display()
    );
    PipelineConfig::parse(&text).unwrap()
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn full_pipeline_is_byte_identical_across_runs() {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(dir.path());
        for stage in Stage::ALL {
            let outcome = run_stage(stage, &cfg).unwrap();
            assert!(outcome.complete, "{}", outcome.summary);
            assert!(outcome.summary.starts_with(stage.name()));
        }
        runs.push(snapshot(dir.path()));
    }
    let (a, b) = (&runs[0], &runs[1]);
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    for (name, bytes) in a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
    for expected in [
        "dataset/manifest.jsonl",
        "pairs.jsonl",
        "mask/predictor.json",
        "proxy/encoder.json",
        "dpo/encoder.json",
        "dpo/log.json",
        "eval/report.csv",
        "eval/report.json",
    ] {
        assert!(a.contains_key(expected), "missing {expected}");
    }
    assert_eq!(a.keys().filter(|k| k.starts_with("dataset/images/")).count(), 32);
}

#[test]
fn oracle_copies_score_at_the_cap_and_missing_ones_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    for stage in [Stage::Gen, Stage::Pairs] {
        run_stage(stage, &cfg).unwrap();
    }
    let manifest = relightkit::dataset::Manifest::load(&cfg.layout().manifest()).unwrap();
    let pairs = relightkit::dataset::load_pairs(&cfg.layout().pairs()).unwrap();
    let oracle = dir.path().join("oracle");
    let mut copied = 0;
    for p in &pairs {
        let target = manifest.get(p.target_key()).unwrap();
        let src = cfg.layout().dataset_dir().join(&target.image_path);
        let dst = relightkit::metrics::prediction_path(&oracle, &p.pair_id);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::copy(src, dst).unwrap();
        copied += 1;
    }
    assert!(copied > 0);
    let (outcome, report) = stage_eval_from(&cfg, &oracle).unwrap();
    assert!(outcome.complete);
    for row in report.rows.iter().chain(&report.overall) {
        assert_eq!((row.rmse, row.ssim, row.psnr), (0.0, 1.0, 99.0), "{row:?}");
    }

    std::fs::remove_file(relightkit::metrics::prediction_path(
        &oracle,
        &report_pair(&cfg),
    ))
    .unwrap();
    let (outcome, report) = stage_eval_from(&cfg, &oracle).unwrap();
    assert!(!outcome.complete);
    assert_eq!(report.errors.len(), 1);
}

fn report_pair(cfg: &PipelineConfig) -> String {
    let manifest = relightkit::dataset::Manifest::load(&cfg.layout().manifest()).unwrap();
    relightkit::dataset::load_pairs(&cfg.layout().pairs())
        .unwrap()
        .into_iter()
        .find(|p| manifest.get(p.source_key()).unwrap().split == relightkit::dataset::Split::Eval)
        .unwrap()
        .pair_id
}
