use relightkit::dataset::{
    generate_dataset, load_pairs, pairs_to_jsonl, sample_camera_hemisphere, sample_pairs, DatasetConfig, Manifest,
    Split, VariationKind,
};
use relightkit::image;
use relightkit::light::delta_illumination;
use relightkit::math::Vec3;

fn small() -> DatasetConfig {
    DatasetConfig {
        objects: 4,
        views: 2,
        lights: 3,
        width: 24,
        height: 24,
        eval_objects: 1,
        supervision_fraction: 0.25,
        ..DatasetConfig::default()
    }
}

#[test]
fn record_count_and_layout() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), 7, dir.path()).unwrap();
    assert_eq!(m.records.len(), 24);
    let mut keys: Vec<_> = m.records.iter().map(|r| r.key()).collect();
    keys.dedup();
    assert_eq!(keys.len(), 24);
    assert_eq!(m.supervised().count(), 6);
    for r in &m.records {
        assert!(dir.path().join(&r.image_path).is_file());
        assert!(dir.path().join(&r.coverage_path).is_file());
        if r.has_pbr_supervision {
            assert_eq!(r.split, Split::Train);
        }
        let want_g = r.has_pbr_supervision || r.split == Split::Eval;
        assert_eq!(r.gbuffer_paths.is_some(), want_g);
        if let Some(g) = r.load_gbuffer(dir.path()).unwrap() {
            assert_eq!((g.height(), g.width()), (24, 24));
        }
    }
    assert_eq!(m.records.iter().filter(|r| r.split == Split::Eval).count(), 6);
}

#[test]
fn reruns_are_byte_identical_and_self_contained() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = generate_dataset(&small(), 11, a.path()).unwrap();
    generate_dataset(&small(), 11, b.path()).unwrap();
    let read = |d: &std::path::Path, p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read(a.path(), "manifest.jsonl"), read(b.path(), "manifest.jsonl"));
    for r in &ma.records {
        assert_eq!(read(a.path(), &r.image_path), read(b.path(), &r.image_path));
    }

    let loaded = Manifest::load(&a.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded, ma);
    for r in loaded.records.iter().step_by(5) {
        let (img, _) = r.render().unwrap();
        let stored = r.load_image(a.path()).unwrap();
        assert_eq!(image::write_raw_f32(img.map()), image::write_raw_f32(stored.map()));
    }

    let other = tempfile::tempdir().unwrap();
    let mc = generate_dataset(&small(), 12, other.path()).unwrap();
    assert_ne!(mc, ma);
}

#[test]
fn scenes_are_framed() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), 3, dir.path()).unwrap();
    for r in &m.records {
        let cov = r.load_coverage(dir.path()).unwrap();
        let frac = cov.data().iter().sum::<f64>() / cov.pixels() as f64;
        assert!(frac > 0.2, "{} covers only {frac}", r.key());
    }
}

#[test]
fn pairs_follow_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = generate_dataset(&small(), 5, dir.path()).unwrap();
    let set = sample_pairs(&m, 4, 5);
    assert_eq!(set.warnings, 0);
    assert_eq!(set.pairs.len(), 8 * 4);
    for p in &set.pairs {
        let s = m.get(p.source_key()).unwrap();
        let t = m.get(p.target_key()).unwrap();
        assert_eq!(p.delta, delta_illumination(&s.light, &t.light));
        assert!(!p.delta.is_zero());
    }
    assert_eq!(set, sample_pairs(&m, 4, 5));
    let path = dir.path().join("pairs.jsonl");
    image::write_file(&path, pairs_to_jsonl(&set.pairs).unwrap().as_bytes()).unwrap();
    assert_eq!(load_pairs(&path).unwrap(), set.pairs);
}

#[test]
fn single_light_views_warn() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = DatasetConfig {
        lights: 1,
        ..small()
    };
    let m = generate_dataset(&cfg, 1, dir.path()).unwrap();
    let set = sample_pairs(&m, 4, 1);
    assert!(set.pairs.is_empty());
    assert_eq!(set.warnings, 8);
}

#[test]
fn temperature_pairs_are_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small();
    cfg.ranges.yaw_deg = 0.0;
    cfg.ranges.pitch_deg = 0.0;
    cfg.ranges.log_energy = 0.0;
    let m = generate_dataset(&cfg, 2, dir.path()).unwrap();
    let set = sample_pairs(&m, 3, 2);
    assert!(!set.pairs.is_empty());
    assert!(set.pairs.iter().all(|p| p.variation == VariationKind::Temperature));
}

#[test]
fn camera_golden_seed_42() {
    let cam = sample_camera_hemisphere(42, (4.5, 6.0), Vec3::ZERO, 0.7, 64, 64).unwrap();
    let got = [cam.position.x, cam.position.y, cam.position.z];
    // Frozen from the first run; guards against RNG or sampling drift.
    let want = [3.5785296407347493, -1.1558924310962906, 3.5058155762647796];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{got:?}");
    }
    assert_eq!(cam.look_at, Vec3::ZERO);
    let r = cam.position.norm();
    assert!((4.5..=6.0).contains(&r));
}

#[test]
fn camera_azimuth_is_uniform() {
    let target = Vec3::new(0.0, 0.0, 0.0);
    let n = 10_000;
    let mut bins = [0usize; 10];
    for seed in 0..n {
        let c = sample_camera_hemisphere(seed, (1.0, 2.0), target, 0.7, 4, 4).unwrap();
        let az = c.position.y.atan2(c.position.x).rem_euclid(std::f64::consts::TAU);
        bins[((az / std::f64::consts::TAU * 10.0) as usize).min(9)] += 1;
    }
    let expected = n as f64 / 10.0;
    let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
    // 9 degrees of freedom, p = 0.01.
    assert!(chi2 < 21.666, "chi2 = {chi2}, bins = {bins:?}");
}
