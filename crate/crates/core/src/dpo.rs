//! Preference refinement of the proxy encoder.
//!
//! Each supervised sample yields a pair: ground truth is preferred over the
//! encoder's own current prediction. Log-likelihoods come from an isotropic
//! Gaussian around the encoder output, and the objective is the sigmoid
//! preference loss against a frozen copy of the starting encoder.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, softplus, StepSchedule};
use crate::proxy::{ProxyEncoder, ProxyMaps, ProxyPixel, ProxySample, CHANNELS, DIVERGENCE_LOSS};

/// Pairs whose reward gap is below this carry no signal and are dropped.
pub const MIN_REWARD_GAP: f64 = 1e-6;

/// Foreground-averaged error terms; `total = −(sum of terms)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub albedo_l1: f64,
    pub roughness_l1: f64,
    pub normal_angular: f64,
    pub metallic_bce: f64,
    pub total: f64,
}

/// Angle between two vectors, exactly 0 for identical inputs.
fn angle(a: &[f64], b: &[f64]) -> f64 {
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let s = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
    s.atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
}

/// Reward over matching pixel lists.
pub fn reward_pixels(pred: &[ProxyPixel], gt: &[ProxyPixel]) -> Result<RewardBreakdown> {
    if gt.is_empty() {
        return Err(Error::Domain("reward over an empty foreground".into()));
    }
    if pred.len() != gt.len() {
        return Err(Error::Shape("prediction and ground truth differ in pixel count".into()));
    }
    let mut sums = [0.0; 4];
    for (p, g) in pred.iter().zip(gt) {
        sums[0] += (0..3).map(|c| (p[c] - g[c]).abs()).sum::<f64>();
        sums[1] += (p[6] - g[6]).abs();
        sums[2] += angle(&p[3..6], &g[3..6]);
        sums[3] += crate::mask::bce(&p[7..8], &g[7..8]);
    }
    let n = gt.len() as f64;
    let [a, r, ang, m] = sums.map(|s| s / n);
    Ok(RewardBreakdown {
        albedo_l1: a,
        roughness_l1: r,
        normal_angular: ang,
        metallic_bce: m,
        total: -(a + r + ang + m),
    })
}

/// Reward of `pred` against `gt` over the ground-truth foreground.
pub fn reward(pred: &ProxyMaps, gt: &ProxyMaps) -> Result<RewardBreakdown> {
    pred.check_same_shape(gt)?;
    let fg = gt.foreground();
    let p: Vec<ProxyPixel> = fg.iter().map(|&i| pred.pixel(i)).collect();
    let g: Vec<ProxyPixel> = fg.iter().map(|&i| gt.pixel(i)).collect();
    reward_pixels(&p, &g)
}

/// `r(y_pos) − r(y_neg)` measured against `gt`.
pub fn reward_delta(y_pos: &ProxyMaps, y_neg: &ProxyMaps, gt: &ProxyMaps) -> Result<f64> {
    Ok(reward(y_pos, gt)?.total - reward(y_neg, gt)?.total)
}

/// Ground truth preferred over the encoder's prediction on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    /// Index into the sample list the pair was built from.
    pub sample: usize,
    pub y_pos: Vec<ProxyPixel>,
    pub y_neg: Vec<ProxyPixel>,
    pub reward_gap: f64,
}

/// One pair per sample with `y_neg` = current prediction; pairs with a
/// reward gap below [`MIN_REWARD_GAP`] are dropped.
pub fn build_preference_pairs(encoder: &ProxyEncoder, samples: &[ProxySample]) -> Result<Vec<PreferencePair>> {
    let pairs: Vec<Result<Option<PreferencePair>>> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let y_neg = s.predict(encoder);
            let gap = reward_pixels(&s.target, &s.target)?.total - reward_pixels(&y_neg, &s.target)?.total;
            Ok((gap >= MIN_REWARD_GAP).then(|| PreferencePair {
                sample: i,
                y_pos: s.target.clone(),
                y_neg,
                reward_gap: gap,
            }))
        })
        .collect();
    pairs.into_iter().filter_map(|p| p.transpose()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    /// Preference sharpness.
    pub beta: f64,
    /// Gaussian likelihood scale.
    pub sigma: f64,
    pub lr: f64,
    pub iterations: usize,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta: 0.5,
            sigma: 0.1,
            lr: 1e-3,
            iterations: 50,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma), ("lr", self.lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("dpo {name} = {v} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Gaussian log-likelihood of `y` around `mean`, summed over pixels and
/// channels (constant terms dropped).
fn log_likelihood(y: &[ProxyPixel], mean: &[ProxyPixel], sigma: f64) -> f64 {
    let sq: f64 = y
        .iter()
        .zip(mean)
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>())
        .sum();
    -sq / (2.0 * sigma * sigma)
}

/// Reference log-likelihoods of a pair, fixed while the reference is frozen.
#[derive(Debug, Clone, Copy)]
struct ReferenceTerms {
    pos: f64,
    neg: f64,
}

fn reference_terms(reference: &ProxyEncoder, sample: &ProxySample, pair: &PreferencePair, sigma: f64) -> ReferenceTerms {
    let out = sample.predict(reference);
    ReferenceTerms {
        pos: log_likelihood(&pair.y_pos, &out, sigma),
        neg: log_likelihood(&pair.y_neg, &out, sigma),
    }
}

fn pair_loss(
    policy: &ProxyEncoder,
    sample: &ProxySample,
    pair: &PreferencePair,
    reference: ReferenceTerms,
    cfg: &DpoConfig,
) -> f64 {
    let out = sample.predict(policy);
    let margin = (log_likelihood(&pair.y_pos, &out, cfg.sigma) - reference.pos)
        - (log_likelihood(&pair.y_neg, &out, cfg.sigma) - reference.neg);
    softplus(-cfg.beta * margin)
}

/// `−ln σ(β · margin)` for one pair.
pub fn dpo_loss(
    policy: &ProxyEncoder,
    reference: &ProxyEncoder,
    sample: &ProxySample,
    pair: &PreferencePair,
    cfg: &DpoConfig,
) -> Result<f64> {
    let loss = pair_loss(policy, sample, pair, reference_terms(reference, sample, pair, cfg.sigma), cfg);
    if !loss.is_finite() {
        return Err(Error::Numeric("dpo loss is not finite".into()));
    }
    Ok(loss)
}

/// Mean pair loss and its gradient with respect to the policy parameters.
fn batch_loss(
    policy: &ProxyEncoder,
    samples: &[ProxySample],
    pairs: &[PreferencePair],
    refs: &[ReferenceTerms],
    cfg: &DpoConfig,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let parts: Vec<(f64, Option<Vec<f64>>)> = pairs
        .par_iter()
        .zip(refs)
        .map(|(pair, r)| {
            let s = &samples[pair.sample];
            let loss = pair_loss(policy, s, pair, *r, cfg);
            let grad = want_grad.then(|| {
                let out = s.predict(policy);
                let margin = (log_likelihood(&pair.y_pos, &out, cfg.sigma) - r.pos)
                    - (log_likelihood(&pair.y_neg, &out, cfg.sigma) - r.neg);
                // ∂loss/∂ŷ = ∂loss/∂margin · (y_pos − y_neg)/σ².
                let scale = -cfg.beta * sigmoid(-cfg.beta * margin) / (cfg.sigma * cfg.sigma);
                let mut g = vec![0.0; policy.net.params.len()];
                for ((row, pos), neg) in s.rows().zip(&pair.y_pos).zip(&pair.y_neg) {
                    let mut d = [0.0; CHANNELS];
                    for c in 0..CHANNELS {
                        d[c] = scale * (pos[c] - neg[c]);
                    }
                    policy.backward_pixel(row, &d, &mut g);
                }
                g
            });
            (loss, grad)
        })
        .collect();
    let n = pairs.len().max(1) as f64;
    let loss = parts.iter().map(|(l, _)| l).sum::<f64>() / n;
    let grad = want_grad.then(|| {
        let mut total = vec![0.0; policy.net.params.len()];
        for (_, g) in &parts {
            for (t, v) in total.iter_mut().zip(g.as_ref().expect("requested")) {
                *t += v / n;
            }
        }
        total
    });
    (loss, grad)
}

/// Mean DPO loss over `pairs` and its gradient (exposed for checking).
pub fn dpo_loss_and_grad(
    policy: &ProxyEncoder,
    reference: &ProxyEncoder,
    samples: &[ProxySample],
    pairs: &[PreferencePair],
    cfg: &DpoConfig,
) -> (f64, Vec<f64>) {
    let refs: Vec<ReferenceTerms> = pairs
        .iter()
        .map(|p| reference_terms(reference, &samples[p.sample], p, cfg.sigma))
        .collect();
    let (loss, grad) = batch_loss(policy, samples, pairs, &refs, cfg, true);
    (loss, grad.expect("requested"))
}

/// Mean total reward of the encoder over samples.
pub fn mean_reward(encoder: &ProxyEncoder, samples: &[ProxySample]) -> Result<f64> {
    let rewards: Vec<Result<f64>> = samples
        .par_iter()
        .map(|s| Ok(reward_pixels(&s.predict(encoder), &s.target)?.total))
        .collect();
    let n = samples.len().max(1) as f64;
    rewards.into_iter().try_fold(0.0, |acc, r| Ok(acc + r? / n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoLogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub mean_reward: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpoRun {
    pub encoder: ProxyEncoder,
    pub log: Vec<DpoLogEntry>,
}

/// Refines `init` against a frozen copy of itself. Pairs are rebuilt from
/// the current policy every iteration. A step is accepted only if it lowers
/// neither the preference objective's fit nor the mean reward, so the mean
/// reward never decreases.
pub fn dpo_refine(init: &ProxyEncoder, samples: &[ProxySample], cfg: &DpoConfig) -> Result<DpoRun> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Config("dpo refinement needs supervised samples".into()));
    }
    let reference = init.clone();
    let mut policy = init.clone();
    let mut reward = mean_reward(&policy, samples)?;
    let mut log = vec![DpoLogEntry {
        iteration: 0,
        loss: std::f64::consts::LN_2,
        mean_reward: reward,
        pairs: 0,
    }];
    let mut schedule = StepSchedule {
        lr: cfg.lr,
        growth: 1.2,
        min_lr: 1e-14,
    };
    for it in 1..=cfg.iterations {
        let pairs = build_preference_pairs(&policy, samples)?;
        if pairs.is_empty() {
            break;
        }
        let refs: Vec<ReferenceTerms> = pairs
            .iter()
            .map(|p| reference_terms(&reference, &samples[p.sample], p, cfg.sigma))
            .collect();
        let (loss, grad) = batch_loss(&policy, samples, &pairs, &refs, cfg, true);
        let grad = grad.expect("requested");
        if !loss.is_finite() || loss > DIVERGENCE_LOSS || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("dpo diverged at iteration {it}: loss {loss}")));
        }
        let mut params = policy.net.params.clone();
        let mut trial = policy.clone();
        let mut trial_reward = reward;
        let accepted = schedule.step(&mut params, &grad, |p| {
            trial.net.params.copy_from_slice(p);
            let (l, _) = batch_loss(&trial, samples, &pairs, &refs, cfg, false);
            if !(l.is_finite() && l <= loss) {
                return Ok(None);
            }
            trial_reward = mean_reward(&trial, samples)?;
            Ok((trial_reward >= reward).then_some(l))
        })?;
        let Some(l) = accepted else { break };
        policy.net.params = params;
        reward = trial_reward;
        log.push(DpoLogEntry {
            iteration: it,
            loss: l,
            mean_reward: reward,
            pairs: pairs.len(),
        });
    }
    debug_assert_eq!(reference, *init);
    Ok(DpoRun { encoder: policy, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{LinearImage, Map};
    use crate::nn::{max_relative_error, numeric_gradient};

    fn maps(pixels: &[ProxyPixel], h: usize, w: usize) -> ProxyMaps {
        ProxyMaps::from_pixels(h, w, &Map::filled(h, w, 1, 1.0), pixels).unwrap()
    }

    #[test]
    fn perfect_prediction_has_zero_reward() {
        let px = [0.3, 0.2, 0.9, 0.0, 0.6, 0.8, 0.4, 1.0];
        let gt = maps(&[px; 4], 2, 2);
        let r = reward(&gt, &gt).unwrap();
        assert_eq!(r, RewardBreakdown::default());
        assert_eq!(r.total, 0.0);
    }

    #[test]
    fn antiparallel_normals() {
        let a = [0.3, 0.2, 0.9, 0.0, 0.6, 0.8, 0.4, 0.0];
        let mut b = a;
        b[3..6].copy_from_slice(&[0.0, -0.6, -0.8]);
        let r = reward(&maps(&[b; 2], 1, 2), &maps(&[a; 2], 1, 2)).unwrap();
        assert_eq!(r.normal_angular, std::f64::consts::PI);
        assert_eq!(r.total, -std::f64::consts::PI);
        let gt = maps(&[a; 2], 1, 2);
        assert_eq!(reward_delta(&gt, &maps(&[b; 2], 1, 2), &gt).unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn hand_summed_two_by_two() {
        // Oracle computed by hand term by term.
        let gt = [
            [0.5, 0.5, 0.5, 0.0, 0.0, 1.0, 0.5, 0.0],
            [0.2, 0.4, 0.6, 1.0, 0.0, 0.0, 0.3, 1.0],
            [0.9, 0.1, 0.1, 0.0, 1.0, 0.0, 0.8, 0.0],
            [0.1, 0.1, 0.1, 0.0, 0.0, 1.0, 0.1, 1.0],
        ];
        let mut pred = gt;
        pred[0][0] = 0.7; // albedo |Δ| 0.2
        pred[1][6] = 0.5; // roughness |Δ| 0.2
        pred[2][3..6].copy_from_slice(&[1.0, 0.0, 0.0]); // 90°
        pred[3][7] = 0.5; // BCE ln 2
        let r = reward(&maps(&pred, 2, 2), &maps(&gt, 2, 2)).unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert!((r.albedo_l1 - 0.05).abs() < 1e-15);
        assert!((r.roughness_l1 - 0.05).abs() < 1e-15);
        assert!((r.normal_angular - half_pi / 4.0).abs() < 1e-15);
        assert!((r.metallic_bce - std::f64::consts::LN_2 / 4.0).abs() < 1e-15);
        let want = -(0.05 + 0.05 + half_pi / 4.0 + std::f64::consts::LN_2 / 4.0);
        assert!((r.total - want).abs() < 1e-15);
    }

    fn tiny_sample(seed: u64) -> ProxySample {
        let img = LinearImage::new(Map::from_fn(4, 4, 3, |i, j, c| {
            0.05 + 0.1 * (((i * 3 + j * 5 + c) as u64 + seed) % 7) as f64
        }))
        .unwrap();
        let pixels: Vec<ProxyPixel> = (0..16)
            .map(|p| {
                let t = (p as f64 + seed as f64) / 20.0;
                let n = crate::math::Vec3::new(t - 0.4, 0.2, 1.0).normalize();
                [0.2 + 0.5 * t, 0.4, 0.6, n.x, n.y, n.z, 0.5, (p % 2) as f64]
            })
            .collect();
        ProxySample::new("s", &img, &maps(&pixels, 4, 4), 0, 0).unwrap()
    }

    #[test]
    fn loss_is_ln2_at_reference() {
        let samples = [tiny_sample(1)];
        let enc = ProxyEncoder::init_for(&samples, 16, 1);
        let pairs = build_preference_pairs(&enc, &samples).unwrap();
        assert_eq!(pairs.len(), 1);
        for beta in [0.1, 0.5, 3.0] {
            let cfg = DpoConfig {
                beta,
                ..DpoConfig::default()
            };
            let l = dpo_loss(&enc, &enc, &samples[0], &pairs[0], &cfg).unwrap();
            assert_eq!(l, std::f64::consts::LN_2);
        }
    }

    #[test]
    fn loss_decreases_in_margin() {
        let losses: Vec<f64> = [-1.0, 0.0, 2.0].iter().map(|m: &f64| softplus(-0.5 * m)).collect();
        assert!(losses[0] > losses[1] && losses[1] > losses[2]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let samples = [tiny_sample(2), tiny_sample(3)];
        let reference = ProxyEncoder::init_for(&samples, 16, 4);
        let pairs = build_preference_pairs(&reference, &samples).unwrap();
        let mut policy = reference.clone();
        for (i, p) in policy.net.params.iter_mut().enumerate() {
            *p += 0.002 * ((i * 7) as f64).sin();
        }
        // A larger σ keeps the margin out of the saturated regime.
        let cfg = DpoConfig {
            sigma: 2.0,
            ..DpoConfig::default()
        };
        let (_, grad) = dpo_loss_and_grad(&policy, &reference, &samples, &pairs, &cfg);
        let numeric = numeric_gradient(&policy.net.params, 1e-5, |p| {
            let mut e = policy.clone();
            e.net.params.copy_from_slice(p);
            dpo_loss_and_grad(&e, &reference, &samples, &pairs, &cfg).0
        });
        let err = max_relative_error(&grad, &numeric);
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn zero_iterations_return_input() {
        let samples = [tiny_sample(5)];
        let enc = ProxyEncoder::init_for(&samples, 8, 2);
        let run = dpo_refine(
            &enc,
            &samples,
            &DpoConfig {
                iterations: 0,
                ..DpoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(run.encoder, enc);
    }

    #[test]
    fn policy_on_the_positive_beats_the_reference() {
        let samples = [tiny_sample(7)];
        let reference = ProxyEncoder::init_for(&samples, 8, 3);
        let pairs = build_preference_pairs(&reference, &samples).unwrap();
        // Margin with the policy output exactly at y_pos, by direct evaluation.
        let cfg = DpoConfig::default();
        let refs = reference_terms(&reference, &samples[0], &pairs[0], cfg.sigma);
        let at_pos = &pairs[0].y_pos;
        let margin = (log_likelihood(&pairs[0].y_pos, at_pos, cfg.sigma) - refs.pos)
            - (log_likelihood(&pairs[0].y_neg, at_pos, cfg.sigma) - refs.neg);
        assert!(margin > 0.0);
        assert!(softplus(-cfg.beta * margin) < std::f64::consts::LN_2);
    }

    #[test]
    fn fresh_encoder_pairs_every_sample_and_pairs_track_updates() {
        let samples: Vec<ProxySample> = (10..14).map(tiny_sample).collect();
        let enc = ProxyEncoder::init_for(&samples, 8, 9);
        let before = build_preference_pairs(&enc, &samples).unwrap();
        assert_eq!(before.len(), samples.len());
        let frozen = enc.clone();
        let run = dpo_refine(
            &enc,
            &samples,
            &DpoConfig {
                iterations: 3,
                ..DpoConfig::default()
            },
        )
        .unwrap();
        assert_eq!(enc, frozen);
        assert!(run.log.len() > 1, "no refinement step accepted");
        let after = build_preference_pairs(&run.encoder, &samples).unwrap();
        assert_ne!(before[0].y_neg, after[0].y_neg);
        assert_eq!(before[0].y_pos, after[0].y_pos);
    }

    #[test]
    fn perfect_encoder_yields_no_pairs() {
        let samples = [tiny_sample(6)];
        let enc = ProxyEncoder::zeros(4);
        let preds = samples[0].predict(&enc);
        let exact = ProxySample {
            target: preds,
            ..samples[0].clone()
        };
        assert!(build_preference_pairs(&enc, &[exact]).unwrap().is_empty());
    }
}
