use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use vsumm::evaluation::PreparedTestVideo;
use vsumm::rewards::RewardContext;
use vsumm::trainer::Rollouts;
use vsumm::{
    generate_synthetic, score_frames, train, ActionSequence, FrameFeatureSequence, ImportanceScores, KtsConfig,
    PlaneEvidence, RewardFlags, SyntheticSpec, TrainConfig, TrainMode,
};

/// Exact gradient of `J(p) = sum_a P(a) R(a)` for two frames by enumeration.
fn exact_gradient(p: [f64; 2], reward: impl Fn(&ActionSequence) -> f64) -> ([f64; 2], f64) {
    let mut grad = [0.0; 2];
    let mut value = 0.0;
    for bits in 0..4u8 {
        let a = [bits & 1 == 1, bits & 2 == 2];
        let r = reward(&ActionSequence::new(a.to_vec()));
        let pr = |t: usize| if a[t] { p[t] } else { 1.0 - p[t] };
        let dpr = |t: usize| if a[t] { 1.0 } else { -1.0 };
        value += pr(0) * pr(1) * r;
        grad[0] += dpr(0) * pr(1) * r;
        grad[1] += pr(0) * dpr(1) * r;
    }
    (grad, value)
}

#[test]
fn reinforce_matches_enumerated_gradient() {
    let f = FrameFeatureSequence::from_rows("v", &[vec![1.0, 0.0], vec![0.6, 0.8]], 30.0).unwrap();
    let ev = PlaneEvidence::new(vec![0.9, 0.2], vec![true, false]).unwrap();
    let ctx = RewardContext::new(&f, &ev).unwrap();
    let reward = |a: &ActionSequence| ctx.evaluate(a, RewardFlags::ALL).unwrap().total;
    let p = [0.3, 0.6];
    let (exact, value) = exact_gradient(p, reward);

    let probs = ImportanceScores::new(p.to_vec()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let rollouts = Rollouts::sample(&probs, 100_000, &mut rng, |a| Ok(reward(a))).unwrap();
    for baseline in [0.0, value] {
        let est = rollouts.prob_gradient(&p, baseline);
        for t in 0..2 {
            assert!(
                (est[t] - exact[t]).abs() < 0.02,
                "baseline {baseline}: frame {t} estimate {} vs exact {}",
                est[t],
                exact[t]
            );
        }
    }
}

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_videos: 6,
        frames_range: [150, 180],
        dim: 16,
        plane_fraction: 0.5,
        seed: 9,
        ..Default::default()
    }
}

fn small_config(mode: TrainMode) -> TrainConfig {
    TrainConfig {
        mode,
        epochs: 25,
        lr: 0.003,
        hidden_size: 8,
        episodes: 10,
        seed: 1,
        ..Default::default()
    }
}

#[test]
fn detection_reward_rises_during_training() {
    let data = generate_synthetic(&small_spec()).unwrap();
    let (_, log) = train(&data, &small_config(TrainMode::Unsupervised)).unwrap();
    let head: f64 = log[..3].iter().map(|r| r.mean_det).sum::<f64>() / 3.0;
    let tail: f64 = log[log.len() - 3..].iter().map(|r| r.mean_det).sum::<f64>() / 3.0;
    assert!(tail > head + 0.1, "det reward {head:.3} -> {tail:.3}");
}

#[test]
fn trained_scorer_prefers_plane_frames() {
    let data = generate_synthetic(&small_spec()).unwrap();
    for mode in [TrainMode::Unsupervised, TrainMode::Supervised] {
        let (state, _) = train(&data, &small_config(mode)).unwrap();
        let (mut plane, mut background) = (Vec::new(), Vec::new());
        for v in &data.videos {
            let p = score_frames(&state.params, &v.features).unwrap();
            for (&s, &is_plane) in p.probs.iter().zip(&v.evidence.is_plane) {
                if is_plane { plane.push(s) } else { background.push(s) }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(
            mean(&plane) > mean(&background) + 0.05,
            "{mode:?}: plane {:.3} vs background {:.3}",
            mean(&plane),
            mean(&background)
        );
    }
}

#[test]
fn summaries_hit_key_shots_after_training() {
    let data = generate_synthetic(&small_spec()).unwrap();
    let (state, _) = train(&data, &small_config(TrainMode::Supervised)).unwrap();
    let kts = KtsConfig::default();
    let mut hits = 0;
    for v in &data.videos {
        let prepared = PreparedTestVideo::new(v, &kts).unwrap();
        let probs = score_frames(&state.params, &v.features).unwrap();
        if prepared.evaluate(&probs, &[0.3]).unwrap()[0].precision > 0.0 {
            hits += 1;
        }
    }
    assert!(hits >= 5, "{hits} of 6 summaries overlap a key shot");
}
