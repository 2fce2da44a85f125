use relightkit::dpo::{build_preference_pairs, dpo_refine, mean_reward, DpoConfig};
use relightkit::fixtures::sphere_samples;
use relightkit::proxy::{albedo_mae, fit_encoder, ProxyEncoder, ProxyFitConfig};

#[test]
fn encoder_learns_sphere_albedo() {
    let train = sphere_samples(6, 48, 11).unwrap();
    let held_out = sphere_samples(2, 48, 12).unwrap();
    let cfg = ProxyFitConfig::default();
    let init = ProxyEncoder::init_for(&train, cfg.hidden, cfg.seed);
    let (enc, log) = fit_encoder(&init, &train, &cfg).unwrap();
    assert!(log.windows(2).all(|w| w[1] <= w[0]));
    for s in &held_out {
        let mae = albedo_mae(&enc, s);
        assert!(mae <= 0.05, "held-out albedo error {mae}");
    }
}

#[test]
fn refinement_raises_reward_without_hurting_albedo() {
    let train = sphere_samples(6, 48, 21).unwrap();
    let held_out = sphere_samples(2, 48, 22).unwrap();
    let fit = ProxyFitConfig {
        iterations: 40,
        ..ProxyFitConfig::default()
    };
    let init = ProxyEncoder::init_for(&train, fit.hidden, fit.seed);
    let (start, _) = fit_encoder(&init, &train, &fit).unwrap();

    for p in build_preference_pairs(&start, &train).unwrap() {
        assert!(p.reward_gap >= 0.0);
    }
    let before = mean_reward(&start, &train).unwrap();
    let run = dpo_refine(&start, &train, &DpoConfig::default()).unwrap();
    let after = mean_reward(&run.encoder, &train).unwrap();
    assert!(after > before, "reward {before} -> {after}");
    assert!(run.log.windows(2).all(|w| w[1].mean_reward >= w[0].mean_reward));
    for s in &held_out {
        assert!(albedo_mae(&run.encoder, s) <= albedo_mae(&start, s));
    }
}
