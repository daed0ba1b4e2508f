use ndarray::Array2;
use proptest::prelude::*;

use vsumm::evaluation::{make_splits, precision_recall_f1, SplitPlan};
use vsumm::rewards::{total_reward, RewardContext};
use vsumm::scorer::log_prob_of_actions;
use vsumm::segmentation::{kts_segment, KernelScatter, KtsConfig, ScatterProfile};
use vsumm::summarizer::{budget_frames, keyframes_to_scores, select_shots};
use vsumm::trainer::differentiable_loss;
use vsumm::{
    load_dataset, reduce_class_probs, save_dataset, ActionSequence, Dataset, FrameFeatureSequence,
    ImportanceScores, PlaneEvidence, RewardFlags, ShotSegmentation, VideoRecord,
};

fn features(rows: &[Vec<f32>]) -> FrameFeatureSequence {
    FrameFeatureSequence::from_rows("v", rows, 30.0).unwrap()
}

/// `n` frames of dimension `d`, entries bounded away from an all-zero row.
fn frames(n: std::ops::RangeInclusive<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f32>>> {
    prop::collection::vec(
        prop::collection::vec(-2.0f32..2.0, d).prop_map(|mut r| {
            r[0] = r[0].abs() + 0.1;
            r
        }),
        n,
    )
}

/// Video of `n` frames with matching evidence and actions.
fn instance() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, Vec<bool>, Vec<bool>)> {
    (1usize..12).prop_flat_map(|n| {
        (
            frames(n..=n, 3),
            prop::collection::vec(0.0f32..=1.0, n),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

/// Ordered shot lengths and matching per-shot scores.
fn shots(max_shots: usize) -> impl Strategy<Value = (Vec<usize>, Vec<f64>)> {
    (1..=max_shots).prop_flat_map(|n| {
        (
            prop::collection::vec(1usize..12, n),
            prop::collection::vec(0.0f64..1.0, n),
        )
    })
}

fn segmentation(lengths: &[usize]) -> ShotSegmentation {
    let mut cps = Vec::new();
    let mut at = 0;
    for &l in &lengths[..lengths.len() - 1] {
        at += l;
        cps.push(at);
    }
    ShotSegmentation::from_change_points(&cps, lengths.iter().sum()).unwrap()
}

fn total_scatter(ks: &KernelScatter, cps: &[usize]) -> f64 {
    let mut bounds = vec![0];
    bounds.extend_from_slice(cps);
    bounds.push(ks.n_frames());
    bounds.windows(2).map(|w| ks.scatter(w[0], w[1])).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn rewards_are_bounded_and_finite((rows, scores, planes, acts) in instance()) {
        let f = features(&rows);
        let ev = PlaneEvidence::new(scores, planes).unwrap();
        let r = total_reward(&f, &ev, &ActionSequence::new(acts)).unwrap();
        prop_assert!(r.rep >= 0.0);
        prop_assert!(r.rep <= 1.0);
        prop_assert!((0.0..=2.0 + 1e-12).contains(&r.div));
        prop_assert!((-1.0..=1.0).contains(&r.det));
        prop_assert!(r.total.is_finite());
    }

    #[test]
    fn rewards_are_invariant_to_joint_frame_permutation(
        (rows, scores, planes, acts) in instance(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let n = rows.len();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let pick = |v: &[f32]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let a = total_reward(
            &features(&rows),
            &PlaneEvidence::new(scores.clone(), planes.clone()).unwrap(),
            &ActionSequence::new(acts.clone()),
        ).unwrap();
        let b = total_reward(
            &features(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>()),
            &PlaneEvidence::new(pick(&scores), perm.iter().map(|&i| planes[i]).collect()).unwrap(),
            &ActionSequence::new(perm.iter().map(|&i| acts[i]).collect()),
        ).unwrap();
        prop_assert!((a.rep - b.rep).abs() < 1e-12);
        prop_assert!((a.div - b.div).abs() < 1e-12);
        prop_assert!((a.det - b.det).abs() < 1e-12);
    }

    #[test]
    fn precomputed_context_matches_direct_rewards((rows, scores, planes, acts) in instance()) {
        let f = features(&rows);
        let ev = PlaneEvidence::new(scores, planes).unwrap();
        let a = ActionSequence::new(acts);
        let direct = total_reward(&f, &ev, &a).unwrap();
        let fast = RewardContext::new(&f, &ev).unwrap().evaluate(&a, RewardFlags::ALL).unwrap();
        prop_assert!((direct.rep - fast.rep).abs() < 1e-9);
        prop_assert!((direct.div - fast.div).abs() < 1e-9);
        prop_assert!((direct.det - fast.det).abs() < 1e-12);
    }

    #[test]
    fn masked_rewards_only_count_active_terms((rows, scores, planes, acts) in instance(), mask in 0u8..8) {
        let f = features(&rows);
        let ev = PlaneEvidence::new(scores, planes).unwrap();
        let flags = RewardFlags { rep: mask & 1 != 0, div: mask & 2 != 0, det: mask & 4 != 0 };
        let a = ActionSequence::new(acts);
        let full = RewardContext::new(&f, &ev).unwrap().evaluate(&a, RewardFlags::ALL).unwrap();
        let m = RewardContext::new(&f, &ev).unwrap().evaluate(&a, flags).unwrap();
        let expect = [(flags.rep, full.rep), (flags.div, full.div), (flags.det, full.det)]
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, v)| v)
            .sum::<f64>();
        prop_assert!((m.total - expect).abs() < 1e-12);
    }

    #[test]
    fn kts_dp_matches_exhaustive_search(rows in frames(3..=12, 2)) {
        let f = features(&rows);
        let n = rows.len();
        let ks = KernelScatter::new(&f);
        let profile = ScatterProfile::compute(&ks, 3);
        prop_assert!((profile.scatter_for(1) - ks.scatter(0, n)).abs() < 1e-9);
        let mut best2 = f64::INFINITY;
        let mut best3 = f64::INFINITY;
        for a in 1..n {
            best2 = best2.min(total_scatter(&ks, &[a]));
            for b in a + 1..n {
                best3 = best3.min(total_scatter(&ks, &[a, b]));
            }
        }
        prop_assert!((profile.scatter_for(2) - best2).abs() < 1e-9);
        prop_assert!((profile.scatter_for(3) - best3).abs() < 1e-9);
        for m in 1..=3 {
            let cps = profile.change_points_for(m);
            prop_assert_eq!(cps.len(), m - 1);
            prop_assert!((total_scatter(&ks, &cps) - profile.scatter_for(m)).abs() < 1e-9);
        }
    }

    #[test]
    fn kts_scatter_is_non_increasing_in_segment_count(rows in frames(2..=30, 3)) {
        let ks = KernelScatter::new(&features(&rows));
        let profile = ScatterProfile::compute(&ks, rows.len());
        for m in 2..=profile.max_segments() {
            prop_assert!(profile.scatter_for(m) <= profile.scatter_for(m - 1) + 1e-9);
        }
        prop_assert!(profile.scatter_for(profile.max_segments()) > -1e-9);
    }

    #[test]
    fn kts_output_is_a_partition(rows in frames(1..=60, 3), max_m in 1usize..8, w in 0.0f64..3.0) {
        let f = features(&rows);
        let cfg = KtsConfig { max_segments: Some(max_m), penalty_weight: w };
        let seg = kts_segment(&f, &cfg);
        prop_assert!(seg.validate(rows.len()).is_ok());
        prop_assert!(seg.n_shots() <= max_m.min(rows.len()));
    }

    #[test]
    fn kts_scatter_is_translation_invariant(rows in frames(2..=15, 2), shift in -3.0f32..3.0) {
        let moved: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|v| v + shift).collect()).collect();
        let (a, b) = (KernelScatter::new(&features(&rows)), KernelScatter::new(&features(&moved)));
        let n = rows.len();
        for s in 0..n {
            for e in s + 1..=n {
                prop_assert!((a.scatter(s, e) - b.scatter(s, e)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn knapsack_is_optimal_and_within_budget((lengths, scores) in shots(10), budget in 0.01f64..=1.0) {
        let seg = segmentation(&lengths);
        let r = select_shots(&seg, &scores, budget).unwrap();
        let cap = budget_frames(budget, seg.n_frames());
        prop_assert!(r.used_frames <= cap);
        prop_assert_eq!(r.frame_mask.iter().filter(|&&m| m).count(), r.used_frames);
        let value = |set: &[usize]| set.iter().map(|&i| scores[i] * lengths[i] as f64).sum::<f64>();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << lengths.len()) {
            let set: Vec<usize> = (0..lengths.len()).filter(|i| mask >> i & 1 == 1).collect();
            if set.iter().map(|&i| lengths[i]).sum::<usize>() <= cap {
                best = best.max(value(&set));
            }
        }
        prop_assert!((value(&r.selected_shots) - best).abs() < 1e-9);
    }

    #[test]
    fn knapsack_value_grows_with_budget((lengths, scores) in shots(8), b1 in 0.01f64..=1.0, b2 in 0.01f64..=1.0) {
        let seg = segmentation(&lengths);
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        let value = |b: f64| {
            let r = select_shots(&seg, &scores, b).unwrap();
            r.selected_shots.iter().map(|&i| scores[i] * lengths[i] as f64).sum::<f64>()
        };
        prop_assert!(value(lo) <= value(hi) + 1e-12);
    }

    #[test]
    fn knapsack_ignores_score_scaling((lengths, scores) in shots(8), budget in 0.05f64..=1.0, c in 0.1f64..10.0) {
        let seg = segmentation(&lengths);
        let a = select_shots(&seg, &scores, budget).unwrap();
        let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
        let b = select_shots(&seg, &scaled, budget).unwrap();
        let value = |set: &[usize]| set.iter().map(|&i| scores[i] * lengths[i] as f64).sum::<f64>();
        prop_assert!((value(&a.selected_shots) - value(&b.selected_shots)).abs() < 1e-9);
    }

    #[test]
    fn keyframe_scores_are_constant_within_shots(
        (lengths, _) in shots(8),
        picks in prop::collection::vec(any::<prop::sample::Index>(), 0..5),
    ) {
        let seg = segmentation(&lengths);
        let n = seg.n_frames();
        let keys: Vec<usize> = picks.iter().map(|i| i.index(n)).collect();
        let scores = keyframes_to_scores(&seg, &keys).unwrap();
        for &(s, e) in &seg.boundaries {
            let key_shot = keys.iter().any(|&k| s <= k && k < e);
            prop_assert!(scores[s..e].iter().all(|&v| v == u8::from(key_shot)));
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..60)) {
        let (gt, pred): (Vec<bool>, Vec<bool>) = pairs.into_iter().unzip();
        let a = precision_recall_f1(&gt, &pred).unwrap();
        let b = precision_recall_f1(&pred, &gt).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
        for v in [a.precision, a.recall, a.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let (lo, hi) = (a.precision.min(a.recall), a.precision.max(a.recall));
        prop_assert!(a.f1 >= lo - 1e-12 && a.f1 <= hi + 1e-12);
    }

    #[test]
    fn class_prob_reduction_matches_argmax(raw in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 4), 1..20)) {
        let rows: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let s: f64 = r.iter().sum::<f64>() + 1e-3;
                r.iter().map(|v| (v + 2.5e-4) / s).collect()
            })
            .collect();
        let m = Array2::from_shape_fn((rows.len(), 4), |(i, j)| rows[i][j]);
        let ev = reduce_class_probs(m.view()).unwrap();
        for (t, r) in rows.iter().enumerate() {
            let best = r[1..].iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(ev.is_plane[t], best > r[0]);
            prop_assert!((f64::from(ev.det_score[t]) - best).abs() < 1e-6);
        }
    }

    #[test]
    fn log_prob_is_a_sum_of_bernoulli_terms(
        ps in prop::collection::vec(0.001f64..0.999, 1..30),
        bits in prop::collection::vec(any::<bool>(), 30),
    ) {
        let a = ActionSequence::new(bits[..ps.len()].to_vec());
        let lp = log_prob_of_actions(&ImportanceScores::new(ps.clone()).unwrap(), &a).unwrap();
        let direct: f64 = ps
            .iter()
            .zip(&a.actions)
            .map(|(p, &x)| if x { p.ln() } else { (1.0 - p).ln() })
            .sum();
        prop_assert!((lp - direct).abs() < 1e-9);
        prop_assert!(lp <= 0.0);
    }

    #[test]
    fn loss_gradient_matches_finite_differences(
        ps in prop::collection::vec(0.05f64..0.95, 1..12),
        gt_bits in prop::collection::vec(any::<bool>(), 12),
        beta in 0.0f64..2.0,
        eps in 0.0f64..1.0,
    ) {
        let gt: Vec<f64> = gt_bits[..ps.len()].iter().map(|&b| f64::from(u8::from(b))).collect();
        let loss = differentiable_loss(&ps, Some(&gt), beta, eps).unwrap();
        let h = 1e-6;
        for t in 0..ps.len() {
            let (mut up, mut down) = (ps.clone(), ps.clone());
            up[t] += h;
            down[t] -= h;
            let fd = (differentiable_loss(&up, Some(&gt), beta, eps).unwrap().value
                - differentiable_loss(&down, Some(&gt), beta, eps).unwrap().value)
                / (2.0 * h);
            prop_assert!((fd - loss.d_probs[t]).abs() <= 1e-6 + 1e-4 * fd.abs());
        }
    }

    #[test]
    fn splits_partition_the_videos(n in 2usize..40, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
        let plan = SplitPlan { n_splits: 3, train_fraction: frac, seed };
        for s in make_splits(&ids, &plan).unwrap() {
            prop_assert!(!s.train.is_empty() && !s.test.is_empty());
            let mut all: Vec<String> = s.train.iter().chain(&s.test).cloned().collect();
            all.sort();
            let mut expect = ids.clone();
            expect.sort();
            prop_assert_eq!(all, expect);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_round_trips_through_disk(
        videos in prop::collection::vec(
            (1usize..20).prop_flat_map(|n| (
                frames(n..=n, 3),
                prop::collection::vec(0.0f32..=1.0, n),
                prop::collection::vec(any::<bool>(), n),
                prop::option::of(prop::collection::btree_set(0..n, 0..4).prop_map(|k| k.into_iter().collect())),
            )),
            0..4,
        )
    ) {
        let records: Vec<VideoRecord> = videos
            .into_iter()
            .enumerate()
            .map(|(i, (rows, det, plane, keys))| VideoRecord {
                features: FrameFeatureSequence::from_rows(format!("v{i}"), &rows, 25.0).unwrap(),
                evidence: PlaneEvidence::new(det, plane).unwrap(),
                keyframes: keys,
            })
            .collect();
        let data = Dataset::new(3, records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&data, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), data);
    }
}
