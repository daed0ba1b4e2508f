//! Frame feature and plane-evidence providers.
//!
//! The summarizer only needs a [`FrameFeatureSequence`] and a
//! [`PlaneEvidence`] per video. Real deployments would obtain both from a
//! pretrained plane-detection encoder; [`generate_synthetic`] produces
//! stand-in data with the same structure, and [`reduce_class_probs`] turns
//! an encoder's softmax output into plane evidence.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, FrameFeatureSequence, PlaneEvidence, VideoRecord};
use crate::derive_seed;
use crate::error::{Error, Result};

pub const SYNTHETIC_FPS: f64 = 30.0;

/// Fetal screening planes the synthetic classes stand in for. Class 0 is
/// background, class `k >= 1` is `PLANE_NAMES[k - 1]`.
pub const PLANE_NAMES: [&str; 13] = [
    "Brain (Cb.)",
    "Brain (Tv.)",
    "Profile",
    "Lips",
    "Abdominal",
    "Kidneys",
    "Femur",
    "Spine (Cor.)",
    "Spine (Sag.)",
    "4CH",
    "3VV",
    "RVOT",
    "LVOT",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_videos: usize,
    pub frames_range: [usize; 2],
    pub dim: usize,
    pub n_plane_classes: usize,
    pub segment_len_range: [usize; 2],
    pub plane_fraction: f64,
    pub noise_sigma: f64,
    pub drift_sigma: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_videos: 10,
            frames_range: [500, 700],
            dim: 64,
            n_plane_classes: PLANE_NAMES.len(),
            segment_len_range: [20, 60],
            plane_fraction: 0.3,
            noise_sigma: 0.1,
            drift_sigma: 0.02,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::invalid("synthetic spec", reason));
        let [fmin, fmax] = self.frames_range;
        let [smin, smax] = self.segment_len_range;
        if fmin == 0 || fmin > fmax {
            return bad(format!("frames_range {:?} must be positive and ordered", self.frames_range));
        }
        if smin == 0 || smin > smax {
            return bad(format!(
                "segment_len_range {:?} must be positive and ordered",
                self.segment_len_range
            ));
        }
        if smin > fmax {
            return bad(format!("segment_len_range min {smin} exceeds frames_range max {fmax}"));
        }
        if self.dim == 0 || self.n_plane_classes == 0 {
            return bad("dim and n_plane_classes must be >= 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.plane_fraction) {
            return bad(format!("plane_fraction {} outside [0, 1]", self.plane_fraction));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return bad(format!("label_noise {} outside [0, 0.5)", self.label_noise));
        }
        if !(self.noise_sigma >= 0.0 && self.drift_sigma >= 0.0) {
            return bad("noise_sigma and drift_sigma must be >= 0".to_string());
        }
        Ok(())
    }
}

/// Synthetic video together with its generating segment labels.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub record: VideoRecord,
    /// `(start, end, class)` with class 0 = background.
    pub segments: Vec<(usize, usize, usize)>,
}

/// Random Gaussian directions normalized to unit length, one per class
/// (row 0 is the background class).
pub fn class_prototypes(n_classes: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
    let mut protos: Array2<f64> = Array2::from_shape_simple_fn((n_classes, dim), || {
        StandardNormal.sample(&mut rng)
    });
    for mut row in protos.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    protos
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let videos = generate_synthetic_detailed(spec)?
        .into_iter()
        .map(|v| v.record)
        .collect();
    Dataset::new(spec.dim, videos)
}

/// Like [`generate_synthetic`] but keeps the planted segment labels.
pub fn generate_synthetic_detailed(spec: &SyntheticSpec) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let protos = class_prototypes(spec.n_plane_classes + 1, spec.dim, spec.seed);
    (0..spec.n_videos)
        .into_par_iter()
        .map(|i| synth_video(spec, &protos, i))
        .collect()
}

fn synth_video(spec: &SyntheticSpec, protos: &Array2<f64>, index: usize) -> Result<SyntheticVideo> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, index as u64));
    let n_frames = rng.random_range(spec.frames_range[0]..=spec.frames_range[1]);

    let mut segments = Vec::new();
    let mut start = 0;
    while start < n_frames {
        let len = rng.random_range(spec.segment_len_range[0]..=spec.segment_len_range[1]);
        let end = (start + len).min(n_frames);
        let class = if rng.random::<f64>() < spec.plane_fraction {
            rng.random_range(1..=spec.n_plane_classes)
        } else {
            0
        };
        segments.push((start, end, class));
        start = end;
    }

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid("noise_sigma", e.to_string()))?;
    let drift = Normal::new(0.0, spec.drift_sigma).map_err(|e| Error::invalid("drift_sigma", e.to_string()))?;
    let mut walk = vec![0.0f64; spec.dim];
    let mut features = Array2::<f32>::zeros((n_frames, spec.dim));
    let mut det_score = Vec::with_capacity(n_frames);
    let mut is_plane = Vec::with_capacity(n_frames);
    let mut keyframes = Vec::new();

    for &(s, e, class) in &segments {
        let proto = protos.row(class);
        for t in s..e {
            for (j, w) in walk.iter_mut().enumerate() {
                *w += drift.sample(&mut rng);
                features[[t, j]] = (proto[j] + noise.sample(&mut rng) + *w) as f32;
            }
            let u: f64 = rng.random();
            let score = if class > 0 {
                1.0 - spec.label_noise * u
            } else {
                spec.label_noise * u
            };
            det_score.push(score as f32);
            is_plane.push(class > 0);
        }
        if class > 0 {
            keyframes.push(rng.random_range(s..e));
        }
    }

    let record = VideoRecord {
        features: FrameFeatureSequence::new(format!("synth_{index:03}"), features, SYNTHETIC_FPS)?,
        evidence: PlaneEvidence::new(det_score, is_plane)?,
        keyframes: Some(keyframes),
    };
    Ok(SyntheticVideo { record, segments })
}

/// Collapses per-frame class probabilities (column 0 = background) into
/// plane evidence: the verdict is whether the overall argmax is a plane
/// class, the score is the largest plane-class probability.
pub fn reduce_class_probs(class_probs: ArrayView2<'_, f64>) -> Result<PlaneEvidence> {
    if class_probs.ncols() < 2 {
        return Err(Error::invalid(
            "class probabilities",
            format!("need background plus >= 1 plane column, got {}", class_probs.ncols()),
        ));
    }
    let mut det_score = Vec::with_capacity(class_probs.nrows());
    let mut is_plane = Vec::with_capacity(class_probs.nrows());
    for (t, row) in class_probs.rows().into_iter().enumerate() {
        let sum: f64 = row.sum();
        if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(
                "class probabilities",
                format!("row {t} is not a probability vector (sum {sum})"),
            ));
        }
        let (best_plane, plane_max) = row
            .iter()
            .enumerate()
            .skip(1)
            .fold((0, f64::NEG_INFINITY), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
        debug_assert!(best_plane >= 1);
        // Ties with background resolve to background.
        is_plane.push(plane_max > row[0]);
        det_score.push(plane_max.clamp(0.0, 1.0) as f32);
    }
    PlaneEvidence::new(det_score, is_plane)
}
