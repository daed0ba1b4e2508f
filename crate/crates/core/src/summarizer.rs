//! From frame scores to a budgeted summary: shot scoring, 0/1 knapsack
//! shot selection, and conversion of keyframe annotations to frame labels.

use serde::{Deserialize, Serialize};

use crate::datamodel::{FrameFeatureSequence, ImportanceScores, ShotSegmentation};
use crate::error::{Error, Result};
use crate::scorer::{score_frames, ScorerParams};
use crate::segmentation::{kts_segment, shots_containing, KtsConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryResult {
    pub selected_shots: Vec<usize>,
    pub frame_mask: Vec<bool>,
    pub shot_scores: Vec<f64>,
    pub budget_frames: usize,
    pub used_frames: usize,
}

/// Serialized form of one video's summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub video_id: String,
    pub budget: f64,
    /// Selected shots as `[start, end)` pairs.
    pub shots: Vec<(usize, usize)>,
    pub frame_scores: Vec<f64>,
    pub used_frames: usize,
    /// Shots containing a ground-truth keyframe, when annotations exist.
    pub key_shots: Option<Vec<(usize, usize)>>,
}

impl SummaryRecord {
    pub fn new(
        video_id: &str,
        budget: f64,
        seg: &ShotSegmentation,
        summary: &SummaryResult,
        scores: &ImportanceScores,
        keyframes: Option<&[usize]>,
    ) -> Result<Self> {
        let key_shots = match keyframes {
            Some(k) => {
                let mut ids = shots_containing(seg, k)?;
                ids.sort_unstable();
                ids.dedup();
                Some(ids.into_iter().map(|i| seg.boundaries[i]).collect())
            }
            None => None,
        };
        Ok(SummaryRecord {
            video_id: video_id.to_string(),
            budget,
            shots: summary
                .selected_shots
                .iter()
                .map(|&i| seg.boundaries[i])
                .collect(),
            frame_scores: scores.probs.clone(),
            used_frames: summary.used_frames,
            key_shots,
        })
    }
}

/// 1 for every frame of a shot that contains at least one keyframe.
pub fn keyframes_to_scores(seg: &ShotSegmentation, keyframes: &[usize]) -> Result<Vec<u8>> {
    let mut key_shot = vec![false; seg.n_shots()];
    for shot in shots_containing(seg, keyframes)? {
        key_shot[shot] = true;
    }
    let mut scores = vec![0u8; seg.n_frames()];
    for (&(s, e), &key) in seg.boundaries.iter().zip(&key_shot) {
        if key {
            scores[s..e].fill(1);
        }
    }
    Ok(scores)
}

/// Mean frame probability within each shot.
pub fn shot_scores(seg: &ShotSegmentation, probs: &ImportanceScores) -> Result<Vec<f64>> {
    if seg.n_frames() != probs.len() {
        return Err(Error::LengthMismatch {
            what: "importance scores",
            expected: seg.n_frames(),
            found: probs.len(),
        });
    }
    Ok(seg
        .boundaries
        .iter()
        .map(|&(s, e)| probs.probs[s..e].iter().sum::<f64>() / (e - s) as f64)
        .collect())
}

/// `floor(budget * n_frames)`, tolerant of representation error in `budget`.
pub fn budget_frames(budget: f64, n_frames: usize) -> usize {
    ((budget * n_frames as f64) + 1e-9).floor().max(0.0) as usize
}

/// Exact 0/1 knapsack: maximize `sum(score * length)` over selected shots
/// subject to the total length fitting in `floor(budget * T)` frames.
/// Among optimal sets, earlier shots are preferred.
pub fn select_shots(seg: &ShotSegmentation, scores: &[f64], budget: f64) -> Result<SummaryResult> {
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(Error::invalid("budget", format!("{budget} outside (0, 1]")));
    }
    if scores.len() != seg.n_shots() {
        return Err(Error::LengthMismatch {
            what: "shot scores",
            expected: seg.n_shots(),
            found: scores.len(),
        });
    }
    let n_frames = seg.n_frames();
    let capacity = budget_frames(budget, n_frames);
    let lengths = seg.lengths();
    let values: Vec<f64> = scores.iter().zip(&lengths).map(|(s, &l)| s * l as f64).collect();
    let n = lengths.len();

    // best[i][w]: optimum over shots i.. with capacity w.
    let mut best = vec![vec![0.0f64; capacity + 1]; n + 1];
    for i in (0..n).rev() {
        let (head, tail) = best.split_at_mut(i + 1);
        let (cur, next) = (&mut head[i], &tail[0]);
        for w in 0..=capacity {
            let skip = next[w];
            cur[w] = if lengths[i] <= w {
                skip.max(values[i] + next[w - lengths[i]])
            } else {
                skip
            };
        }
    }

    let mut selected_shots = Vec::new();
    let mut w = capacity;
    for i in 0..n {
        if lengths[i] <= w && values[i] + best[i + 1][w - lengths[i]] == best[i][w] {
            selected_shots.push(i);
            w -= lengths[i];
        }
    }

    let mut frame_mask = vec![false; n_frames];
    for &i in &selected_shots {
        let (s, e) = seg.boundaries[i];
        frame_mask[s..e].fill(true);
    }
    let used_frames = selected_shots.iter().map(|&i| lengths[i]).sum();
    Ok(SummaryResult {
        selected_shots,
        frame_mask,
        shot_scores: scores.to_vec(),
        budget_frames: capacity,
        used_frames,
    })
}

/// Summary from precomputed frame scores on a given segmentation.
pub fn summarize_scores(seg: &ShotSegmentation, probs: &ImportanceScores, budget: f64) -> Result<SummaryResult> {
    select_shots(seg, &shot_scores(seg, probs)?, budget)
}

/// Score frames, segment into shots, score shots, pick shots under budget.
pub fn generate_summary(
    params: &ScorerParams,
    features: &FrameFeatureSequence,
    kts_config: &KtsConfig,
    budget: f64,
) -> Result<(SummaryResult, ImportanceScores, ShotSegmentation)> {
    let probs = score_frames(params, features)?;
    let seg = kts_segment(features, kts_config);
    let summary = summarize_scores(&seg, &probs, budget)?;
    Ok((summary, probs, seg))
}
