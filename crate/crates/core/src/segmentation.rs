//! Kernel temporal segmentation.
//!
//! Shots minimize the total within-segment kernel scatter under a linear
//! (dot-product) kernel, with the number of shots chosen by the penalty
//! `w * m * (ln(T / m) + 1)`. Each segment's scatter is O(1) from prefix
//! sums of the Gram matrix, and an exact dynamic program over shot counts
//! `1..=max_segments` gives the optimum for every count at once.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{FrameFeatureSequence, ShotSegmentation};
use crate::error::{Error, Result};

pub const DEFAULT_FRAMES_PER_SEGMENT: usize = 20;
pub const DEFAULT_MAX_SEGMENTS_CAP: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KtsConfig {
    /// `None` means `ceil(T / 20)` capped at 50.
    pub max_segments: Option<usize>,
    pub penalty_weight: f64,
}

impl Default for KtsConfig {
    fn default() -> Self {
        KtsConfig {
            max_segments: None,
            penalty_weight: 1.0,
        }
    }
}

impl KtsConfig {
    pub fn resolve_max_segments(&self, n_frames: usize) -> usize {
        let m = self.max_segments.unwrap_or_else(|| {
            n_frames
                .div_ceil(DEFAULT_FRAMES_PER_SEGMENT)
                .min(DEFAULT_MAX_SEGMENTS_CAP)
        });
        m.clamp(1, n_frames.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_segments == Some(0) {
            return Err(Error::invalid("kts config", "max_segments must be >= 1"));
        }
        if !(self.penalty_weight.is_finite() && self.penalty_weight >= 0.0) {
            return Err(Error::invalid(
                "kts config",
                format!("penalty_weight {} must be finite and >= 0", self.penalty_weight),
            ));
        }
        Ok(())
    }
}

/// O(1) within-segment scatter under the linear kernel.
#[derive(Clone, Debug)]
pub struct KernelScatter {
    diag_prefix: Vec<f64>,
    /// `block[[i, j]]` = sum of `K[p, q]` over `p < i`, `q < j`.
    block: Array2<f64>,
}

impl KernelScatter {
    pub fn new(features: &FrameFeatureSequence) -> Self {
        let x = features.to_f64();
        let gram = x.dot(&x.t());
        let n = gram.nrows();
        let mut diag_prefix = vec![0.0; n + 1];
        for i in 0..n {
            diag_prefix[i + 1] = diag_prefix[i] + gram[[i, i]];
        }
        let mut block = Array2::<f64>::zeros((n + 1, n + 1));
        for i in 0..n {
            let mut row_sum = 0.0;
            for j in 0..n {
                row_sum += gram[[i, j]];
                block[[i + 1, j + 1]] = block[[i, j + 1]] + row_sum;
            }
        }
        KernelScatter { diag_prefix, block }
    }

    pub fn n_frames(&self) -> usize {
        self.diag_prefix.len() - 1
    }

    /// Scatter of frames `[a, b)`, `a < b`.
    pub fn scatter(&self, a: usize, b: usize) -> f64 {
        let diag = self.diag_prefix[b] - self.diag_prefix[a];
        let sum = self.block[[b, b]] - self.block[[a, b]] - self.block[[b, a]] + self.block[[a, a]];
        diag - sum / (b - a) as f64
    }
}

/// Optimal segmentations for every shot count `1..=max_segments`.
#[derive(Clone, Debug)]
pub struct ScatterProfile {
    n_frames: usize,
    /// `cost[k - 1][a]`: best scatter of `[a, T)` split into `k` segments.
    cost: Vec<Vec<f64>>,
    /// First boundary chosen for that subproblem.
    choice: Vec<Vec<usize>>,
}

impl ScatterProfile {
    pub fn compute(scatter: &KernelScatter, max_segments: usize) -> Self {
        let n = scatter.n_frames();
        let max_m = max_segments.clamp(1, n);
        let mut cost = vec![vec![f64::INFINITY; n]; max_m];
        let mut choice = vec![vec![n; n]; max_m];
        for a in 0..n {
            cost[0][a] = scatter.scatter(a, n);
        }
        for k in 2..=max_m {
            let (done, rest) = cost.split_at_mut(k - 1);
            let prev = &done[k - 2];
            let cur = &mut rest[0];
            // [a, T) needs at least k frames.
            for a in 0..=n - k {
                let mut best = f64::INFINITY;
                let mut best_b = n;
                for b in a + 1..=n - (k - 1) {
                    let c = scatter.scatter(a, b) + prev[b];
                    if c < best {
                        best = c;
                        best_b = b;
                    }
                }
                cur[a] = best;
                choice[k - 1][a] = best_b;
            }
        }
        ScatterProfile {
            n_frames: n,
            cost,
            choice,
        }
    }

    pub fn max_segments(&self) -> usize {
        self.cost.len()
    }

    /// Minimum total scatter with exactly `m` segments.
    pub fn scatter_for(&self, m: usize) -> f64 {
        self.cost[m - 1][0]
    }

    /// Change points of the lexicographically earliest optimum with `m` segments.
    pub fn change_points_for(&self, m: usize) -> Vec<usize> {
        let mut cps = Vec::with_capacity(m - 1);
        let mut a = 0;
        for k in (2..=m).rev() {
            a = self.choice[k - 1][a];
            cps.push(a);
        }
        cps
    }

    pub fn penalty(n_frames: usize, m: usize) -> f64 {
        m as f64 * ((n_frames as f64 / m as f64).ln() + 1.0)
    }

    /// Shot count minimizing scatter plus weighted penalty (smallest on ties).
    pub fn best_count(&self, penalty_weight: f64) -> usize {
        let mut best_m = 1;
        let mut best = f64::INFINITY;
        for m in 1..=self.max_segments() {
            let v = self.scatter_for(m) + penalty_weight * Self::penalty(self.n_frames, m);
            if v < best {
                best = v;
                best_m = m;
            }
        }
        best_m
    }
}

pub fn kts_segment(features: &FrameFeatureSequence, config: &KtsConfig) -> ShotSegmentation {
    let n = features.n_frames();
    let scatter = KernelScatter::new(features);
    let profile = ScatterProfile::compute(&scatter, config.resolve_max_segments(n));
    let m = profile.best_count(config.penalty_weight);
    ShotSegmentation::from_change_points(&profile.change_points_for(m), n)
        .expect("dynamic program yields a valid partition")
}

/// Shot id of every frame index.
pub fn shots_containing(seg: &ShotSegmentation, frame_indices: &[usize]) -> Result<Vec<usize>> {
    let n = seg.n_frames();
    frame_indices
        .iter()
        .map(|&f| {
            if f >= n {
                return Err(Error::IndexOutOfRange {
                    what: "frame",
                    index: f,
                    len: n,
                });
            }
            Ok(seg.boundaries.partition_point(|&(_, end)| end <= f))
        })
        .collect()
}
