use std::path::Path;
use std::process::{Command, Output};

fn relightkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relightkit"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("c.toml");
    std::fs::write(
        &path,
        r#"
seed = 1
[paths]
output = "out"
[dataset]
objects = 3
views = 2
lights = 3
width = 32
height = 32
supervision_fraction = 0.2
eval_objects = 1
[pairs]
per_view = 2
"#,
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn bad_flags_exit_with_usage_code() {
    let o = relightkit(&["gen", "--no-such-flag"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(relightkit(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(relightkit(&["--help"]).status.code(), Some(0));
}

#[test]
fn gen_pairs_mask_gt_produce_counted_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");

    let o = relightkit(&["gen", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    // 3 objects x 2 views x 3 lights; floor(0.2 * 18) supervised; 1 eval object.
    assert!(stdout(&o).starts_with("gen: 18 records (3 objects x 2 views x 3 lights), 3 supervised, 6 eval"), "{}", stdout(&o));
    assert!(out.join("dataset/manifest.jsonl").exists());

    let o = relightkit(&["pairs", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("pairs: 12 pairs"), "{}", stdout(&o));

    let o = relightkit(&["mask-gt", "--config", &cfg]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("mask-gt: 12 masks"));
    assert_eq!(std::fs::read_dir(out.join("masks")).unwrap().count(), 12);
    let pairs = std::fs::read_to_string(out.join("pairs.jsonl")).unwrap();
    assert!(pairs.lines().all(|l| l.contains("\"mask_path\":\"masks/")));
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let manifest = |seed: &str, out: &str| {
        let o = relightkit(&["gen", "--config", &cfg, "--seed", seed, "--output", out]);
        assert!(o.status.success());
        std::fs::read(Path::new(out).join("dataset/manifest.jsonl")).unwrap()
    };
    let a = dir.path().join("a").to_string_lossy().into_owned();
    let b = dir.path().join("b").to_string_lossy().into_owned();
    let c = dir.path().join("c").to_string_lossy().into_owned();
    assert_eq!(manifest("1", &a), manifest("1", &b));
    assert_ne!(manifest("1", &a), manifest("2", &c));
}

#[test]
fn stage_errors_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let o = relightkit(&["pairs", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pairs:"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[dataset]\nobjectz = 2\n").unwrap();
    let o = relightkit(&["gen", "--config", &bad.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("objectz"));
}

#[test]
fn eval_with_oracle_predictions_hits_the_cap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("out");
    for stage in ["gen", "pairs"] {
        assert!(relightkit(&[stage, "--config", &cfg]).status.success());
    }
    let manifest = relightkit::dataset::Manifest::load(&out.join("dataset/manifest.jsonl")).unwrap();
    let pairs = relightkit::dataset::load_pairs(&out.join("pairs.jsonl")).unwrap();
    let oracle = dir.path().join("oracle");
    std::fs::create_dir_all(&oracle).unwrap();
    for p in &pairs {
        let t = manifest.get(p.target_key()).unwrap();
        std::fs::copy(out.join("dataset").join(&t.image_path), oracle.join(format!("{}.raw", p.pair_id))).unwrap();
    }
    let o = relightkit(&["eval", "--config", &cfg, "--predictions", &oracle.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("eval/report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variation,rmse,ssim,psnr,n_pairs"));
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[1..4], ["0", "1", "99"], "{line}");
    }

    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = relightkit(&["eval", "--config", &cfg, "--predictions", &empty.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn edit_replay_writes_pngs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    assert!(relightkit(&["gen", "--config", &cfg]).status.success());
    let edits = dir.path().join("edits.json");
    std::fs::write(
        &edits,
        r#"[{"scene_id":"o000_v00","dyaw_deg":20,"dpitch_deg":0,"dtemp_k":-500,"show_mask":false},
            {"scene_id":"o001_v01","dyaw_deg":0,"dpitch_deg":0,"dtemp_k":0,"show_mask":true}]"#,
    )
    .unwrap();
    let o = relightkit(&["relight", "--config", &cfg, "--edits", &edits.to_string_lossy()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("out/edits");
    assert!(out.join("000_o000_v00.png").exists());
    assert!(out.join("001_o001_v01.png").exists());
    let results: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    // The identity edit reproduces the source record, which is its own reference.
    assert_eq!(results[1]["metrics"]["psnr"].as_f64(), Some(99.0));
}
