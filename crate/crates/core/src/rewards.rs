//! Representativeness, diversity and plane-detection rewards for a sampled
//! frame selection.
//!
//! All three terms are 0 when nothing is selected, and diversity is 0 for a
//! single selected frame (no pairs).

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::datamodel::{ActionSequence, FrameFeatureSequence, PlaneEvidence, RewardFlags};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub rep: f64,
    pub div: f64,
    pub det: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(rep: f64, div: f64, det: f64) -> Self {
        RewardBreakdown {
            rep,
            div,
            det,
            total: rep + div + det,
        }
    }

    /// Zeroes the disabled terms and recomputes the total.
    pub fn masked(self, flags: RewardFlags) -> Self {
        let pick = |on: bool, v: f64| if on { v } else { 0.0 };
        Self::new(pick(flags.rep, self.rep), pick(flags.div, self.div), pick(flags.det, self.det))
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::LengthMismatch {
            what,
            expected,
            found,
        })
    }
}

fn euclidean(a: ArrayView1<'_, f32>, b: ArrayView1<'_, f32>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(&u, &v)| {
            let d = f64::from(u) - f64::from(v);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// `exp(-mean_t min_{s in S} ||x_t - x_s||)`.
pub fn representativeness_reward(features: &FrameFeatureSequence, actions: &ActionSequence) -> Result<f64> {
    check_len("actions", features.n_frames(), actions.len())?;
    let selected = actions.selected();
    if selected.is_empty() {
        return Ok(0.0);
    }
    let t_len = features.n_frames();
    let total: f64 = (0..t_len)
        .map(|t| {
            selected
                .iter()
                .map(|&s| euclidean(features.row(t), features.row(s)))
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok((-total / t_len as f64).exp())
}

/// `1 - cos(u, v)`.
pub fn cosine_dissimilarity(u: ArrayView1<'_, f32>, v: ArrayView1<'_, f32>) -> Option<f64> {
    let (mut dot, mut nu, mut nv) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in u.iter().zip(v.iter()) {
        let (a, b) = (f64::from(a), f64::from(b));
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some(1.0 - dot / (nu.sqrt() * nv.sqrt()))
}

/// Mean pairwise cosine dissimilarity over ordered pairs of selected frames.
pub fn diversity_reward(features: &FrameFeatureSequence, actions: &ActionSequence) -> Result<f64> {
    check_len("actions", features.n_frames(), actions.len())?;
    let selected = actions.selected();
    if let Some(&t) = selected
        .iter()
        .find(|&&t| features.row(t).iter().all(|&v| v == 0.0))
    {
        return Err(Error::ZeroNorm(t));
    }
    let n = selected.len();
    if n <= 1 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (a, &i) in selected.iter().enumerate() {
        for &j in &selected[a + 1..] {
            // Both orderings contribute the same value.
            sum += 2.0 * cosine_dissimilarity(features.row(i), features.row(j)).expect("non-zero rows");
        }
    }
    Ok(sum / (n * (n - 1)) as f64)
}

/// Mean over selected frames of `+s` for plane frames and `-s` otherwise.
pub fn detection_reward(evidence: &PlaneEvidence, actions: &ActionSequence) -> Result<f64> {
    check_len("actions", evidence.len(), actions.len())?;
    let (sum, count) = actions
        .actions
        .iter()
        .zip(evidence.det_score.iter().zip(&evidence.is_plane))
        .filter(|(&a, _)| a)
        .fold((0.0f64, 0usize), |(sum, n), (_, (&s, &plane))| {
            let s = f64::from(s);
            (if plane { sum + s } else { sum - s }, n + 1)
        });
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

pub fn total_reward(
    features: &FrameFeatureSequence,
    evidence: &PlaneEvidence,
    actions: &ActionSequence,
) -> Result<RewardBreakdown> {
    check_len("plane evidence", features.n_frames(), evidence.len())?;
    Ok(RewardBreakdown::new(
        representativeness_reward(features, actions)?,
        diversity_reward(features, actions)?,
        detection_reward(evidence, actions)?,
    ))
}

/// Pairwise frame geometry of one video, precomputed so that many sampled
/// selections can be rewarded cheaply.
#[derive(Clone, Debug)]
pub struct RewardContext {
    dist: Array2<f64>,
    gram: Array2<f64>,
    norms: Array1<f64>,
    det_signed: Vec<f64>,
}

impl RewardContext {
    pub fn new(features: &FrameFeatureSequence, evidence: &PlaneEvidence) -> Result<Self> {
        check_len("plane evidence", features.n_frames(), evidence.len())?;
        let x = features.to_f64();
        let gram = x.dot(&x.t());
        let sq = gram.diag().to_owned();
        let norms = sq.mapv(f64::sqrt);
        let n = x.nrows();
        let dist = Array2::from_shape_fn((n, n), |(i, j)| {
            if i == j {
                0.0
            } else {
                (sq[i] + sq[j] - 2.0 * gram[[i, j]]).max(0.0).sqrt()
            }
        });
        let det_signed = evidence
            .det_score
            .iter()
            .zip(&evidence.is_plane)
            .map(|(&s, &p)| if p { f64::from(s) } else { -f64::from(s) })
            .collect();
        Ok(RewardContext {
            dist,
            gram,
            norms,
            det_signed,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.norms.len()
    }

    pub fn evaluate(&self, actions: &ActionSequence, flags: RewardFlags) -> Result<RewardBreakdown> {
        check_len("actions", self.n_frames(), actions.len())?;
        let selected = actions.selected();
        if selected.is_empty() {
            return Ok(RewardBreakdown::default());
        }
        let n = self.n_frames();

        let rep = if flags.rep {
            let total: f64 = self
                .dist
                .rows()
                .into_iter()
                .map(|row| selected.iter().map(|&s| row[s]).fold(f64::INFINITY, f64::min))
                .sum();
            (-total / n as f64).exp()
        } else {
            0.0
        };

        let div = if flags.div {
            if let Some(&t) = selected.iter().find(|&&t| self.norms[t] == 0.0) {
                return Err(Error::ZeroNorm(t));
            }
            let k = selected.len();
            if k <= 1 {
                0.0
            } else {
                let mut sum = 0.0;
                for (a, &i) in selected.iter().enumerate() {
                    let row = self.gram.row(i);
                    for &j in &selected[a + 1..] {
                        sum += 2.0 * (1.0 - row[j] / (self.norms[i] * self.norms[j]));
                    }
                }
                sum / (k * (k - 1)) as f64
            }
        } else {
            0.0
        };

        let det = if flags.det {
            selected.iter().map(|&t| self.det_signed[t]).sum::<f64>() / selected.len() as f64
        } else {
            0.0
        };

        Ok(RewardBreakdown::new(rep, div, det))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn seq(rows: &[Vec<f32>]) -> FrameFeatureSequence {
        FrameFeatureSequence::from_rows("v", rows, 30.0).unwrap()
    }

    fn mask(bits: &[u8]) -> ActionSequence {
        ActionSequence::new(bits.iter().map(|&b| b == 1).collect())
    }

    #[test]
    fn rep_all_selected_is_one() {
        let f = seq(&[vec![1.0, 2.0], vec![-3.0, 0.5], vec![0.0, 7.0]]);
        assert_eq!(representativeness_reward(&f, &mask(&[1, 1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn rep_hand_example() {
        let f = seq(&[vec![0.0, 0.0], vec![3.0, 4.0]]);
        let r = representativeness_reward(&f, &mask(&[1, 0])).unwrap();
        assert_relative_eq!(r, (-2.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(r, 0.082085, epsilon = 1e-6);
    }

    #[test]
    fn empty_selection_is_all_zero() {
        let f = seq(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let ev = PlaneEvidence::new(vec![0.3, 0.9], vec![false, true]).unwrap();
        let a = mask(&[0, 0]);
        assert_eq!(total_reward(&f, &ev, &a).unwrap(), RewardBreakdown::default());
        let ctx = RewardContext::new(&f, &ev).unwrap();
        assert_eq!(ctx.evaluate(&a, RewardFlags::ALL).unwrap(), RewardBreakdown::default());
    }

    #[test]
    fn div_single_and_orthogonal_pair() {
        let f = seq(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert_eq!(diversity_reward(&f, &mask(&[1, 0, 0])).unwrap(), 0.0);
        assert_eq!(diversity_reward(&f, &mask(&[1, 1, 0])).unwrap(), 1.0);
    }

    #[test]
    fn div_zero_norm_selected_frame_errors() {
        let f = seq(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(diversity_reward(&f, &mask(&[1, 1])), Err(Error::ZeroNorm(1))));
        // Unselected zero rows are fine.
        assert_eq!(diversity_reward(&f, &mask(&[1, 0])).unwrap(), 0.0);
    }

    #[test]
    fn det_examples() {
        let ev = PlaneEvidence::new(vec![1.0, 1.0, 0.8, 0.6], vec![true, true, true, false]).unwrap();
        assert_eq!(detection_reward(&ev, &mask(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_relative_eq!(detection_reward(&ev, &mask(&[0, 0, 1, 1])).unwrap(), 0.1, epsilon = 1e-7);
        let bg = PlaneEvidence::new(vec![1.0, 1.0], vec![false, false]).unwrap();
        assert_eq!(detection_reward(&bg, &mask(&[1, 1])).unwrap(), -1.0);
    }

    #[test]
    fn det_ignores_features_rep_div_ignore_evidence() {
        let f = seq(&[vec![1.0, 0.2], vec![0.3, 1.0], vec![-1.0, 0.5]]);
        let ev1 = PlaneEvidence::new(vec![0.9, 0.1, 0.5], vec![true, false, true]).unwrap();
        let ev2 = PlaneEvidence::new(vec![0.2, 0.7, 0.4], vec![false, true, false]).unwrap();
        let a = mask(&[1, 0, 1]);
        let r1 = total_reward(&f, &ev1, &a).unwrap();
        let r2 = total_reward(&f, &ev2, &a).unwrap();
        assert_eq!((r1.rep, r1.div), (r2.rep, r2.div));
        let g = seq(&[vec![5.0, 1.0], vec![0.0, 1.0], vec![2.0, 2.0]]);
        assert_eq!(total_reward(&g, &ev1, &a).unwrap().det, r1.det);
    }

    #[test]
    fn masked_breakdown() {
        let r = RewardBreakdown::new(0.5, 0.25, -0.125);
        let m = r.masked(RewardFlags { rep: true, div: false, det: true });
        assert_eq!((m.rep, m.div, m.det, m.total), (0.5, 0.0, -0.125, 0.375));
    }

    #[test]
    fn length_mismatch() {
        let f = seq(&[vec![1.0], vec![2.0]]);
        assert!(representativeness_reward(&f, &mask(&[1])).is_err());
        assert!(diversity_reward(&f, &mask(&[1, 1, 1])).is_err());
    }
}
