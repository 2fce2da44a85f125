use relightkit::fixtures::moved_shadow_fixture;
use relightkit::image::{LinearImage, Map};
use relightkit::mask::{gt_mask, MaskConfig};
use relightkit::render::{lit_mask, render, RenderOptions};

#[test]
fn moved_shadow_mass_is_in_changed_region() {
    let f = moved_shadow_fixture(96);
    let (xs, gs) = render(&f.scene, &f.camera, &f.source, RenderOptions::default()).unwrap();
    let (xt, _) = render(&f.scene, &f.camera, &f.target, RenderOptions::default()).unwrap();
    let m = gt_mask(&xs, &xt, Some(&gs.coverage), &MaskConfig::default()).unwrap();
    let ls = lit_mask(&f.scene, &f.camera, &gs, &f.source);
    let lt = lit_mask(&f.scene, &f.camera, &gs, &f.target);
    let changed: Vec<bool> = ls.data().iter().zip(lt.data()).map(|(a, b)| a != b).collect();
    let total: f64 = m.values().iter().sum();
    let inside: f64 = m.values().iter().zip(&changed).filter(|(_, c)| **c).map(|(v, _)| v).sum();
    let frac = inside / total;
    println!("mask mass in changed region: {frac:.4}, changed px {}", changed.iter().filter(|c| **c).count());
    assert!(frac >= 0.7, "{frac}");
}

fn with_fill(img: &LinearImage, fill: f64, k: f64) -> LinearImage {
    LinearImage::new(img.map().map(|v| k * (v + fill))).unwrap()
}

#[test]
fn exposure_scaling_leaves_mask_unchanged() {
    // A uniform fill keeps every luminance above the log floor, where the
    // invariance is exact.
    let f = moved_shadow_fixture(48);
    let (xs, gs) = render(&f.scene, &f.camera, &f.source, RenderOptions::default()).unwrap();
    let (xt, _) = render(&f.scene, &f.camera, &f.target, RenderOptions::default()).unwrap();
    let cfg = MaskConfig::default();
    let base = gt_mask(&with_fill(&xs, 0.01, 1.0), &with_fill(&xt, 0.01, 1.0), Some(&gs.coverage), &cfg).unwrap();
    assert!(base.values().iter().any(|v| *v > 0.5));
    for k in [2.0, 0.37, 5.3, 1e-3] {
        let m = gt_mask(&with_fill(&xs, 0.01, k), &with_fill(&xt, 0.01, k), Some(&gs.coverage), &cfg).unwrap();
        let dev = m.values().iter().zip(base.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev <= 1e-9, "k = {k}: deviation {dev}");
    }
}

#[test]
fn identical_images_give_empty_mask() {
    let f = moved_shadow_fixture(32);
    let (xs, gs) = render(&f.scene, &f.camera, &f.source, RenderOptions::default()).unwrap();
    let m = gt_mask(&xs, &xs, Some(&gs.coverage), &MaskConfig::default()).unwrap();
    assert!(m.values().iter().all(|v| *v == 0.0));
    let none = gt_mask(&xs, &xs, None, &MaskConfig::default()).unwrap();
    assert_eq!(none.map(), &Map::zeros(32, 32, 1));
}
