//! Domain types shared by every stage of the pipeline, and the on-disk
//! dataset container.
//!
//! A dataset root holds `manifest.json` plus three raw little-endian
//! binary32 files per video: the row-major `n_frames × dim` feature matrix,
//! the per-frame plane detection score and the per-frame plane verdict
//! (stored as `0.0` / `1.0`).
//!
//! Frame indices are 0-based and intervals are half-open everywhere.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Per-video matrix of frame feature vectors, one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatureSequence {
    pub video_id: String,
    pub features: Array2<f32>,
    pub fps: f64,
}

impl FrameFeatureSequence {
    pub fn new(video_id: impl Into<String>, features: Array2<f32>, fps: f64) -> Result<Self> {
        let seq = FrameFeatureSequence {
            video_id: video_id.into(),
            features,
            fps,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn from_rows(video_id: impl Into<String>, rows: &[Vec<f32>], fps: f64) -> Result<Self> {
        let t = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::LengthMismatch {
                what: "feature row",
                expected: d,
                found: bad.len(),
            });
        }
        let flat: Vec<f32> = rows.iter().flatten().copied().collect();
        let features = Array2::from_shape_vec((t, d), flat)
            .map_err(|e| Error::invalid("feature matrix", e.to_string()))?;
        Self::new(video_id, features, fps)
    }

    pub fn n_frames(&self) -> usize {
        self.features.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, t: usize) -> ArrayView1<'_, f32> {
        self.features.row(t)
    }

    /// Features widened to `f64` for numerical work.
    pub fn to_f64(&self) -> Array2<f64> {
        self.features.mapv(f64::from)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 || self.dim() == 0 {
            return Err(Error::invalid(
                "feature sequence",
                format!(
                    "video {} has shape {}x{}, need T >= 1 and D >= 1",
                    self.video_id,
                    self.n_frames(),
                    self.dim()
                ),
            ));
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("features of {}", self.video_id)));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::invalid("fps", format!("{} for {}", self.fps, self.video_id)));
        }
        Ok(())
    }
}

/// Per-frame standard-plane detection score and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneEvidence {
    pub det_score: Vec<f32>,
    pub is_plane: Vec<bool>,
}

impl PlaneEvidence {
    pub fn new(det_score: Vec<f32>, is_plane: Vec<bool>) -> Result<Self> {
        let ev = PlaneEvidence {
            det_score,
            is_plane,
        };
        ev.validate()?;
        Ok(ev)
    }

    pub fn len(&self) -> usize {
        self.det_score.len()
    }

    pub fn is_empty(&self) -> bool {
        self.det_score.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.det_score.len() != self.is_plane.len() {
            return Err(Error::LengthMismatch {
                what: "is_plane",
                expected: self.det_score.len(),
                found: self.is_plane.len(),
            });
        }
        if let Some((t, s)) = self
            .det_score
            .iter()
            .enumerate()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return Err(Error::invalid(
                "det_score",
                format!("frame {t} has score {s}, expected [0, 1]"),
            ));
        }
        Ok(())
    }
}

/// Binary selection mask; the summary set is the frames marked `true`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub actions: Vec<bool>,
}

impl ActionSequence {
    pub fn new(actions: Vec<bool>) -> Self {
        ActionSequence { actions }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn selected(&self) -> Vec<usize> {
        self.actions
            .iter()
            .enumerate()
            .filter_map(|(t, &a)| a.then_some(t))
            .collect()
    }

    pub fn count(&self) -> usize {
        self.actions.iter().filter(|&&a| a).count()
    }
}

/// Frame-level selection probabilities in the open interval (0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceScores {
    pub probs: Vec<f64>,
}

impl ImportanceScores {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if let Some((t, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !(p.is_finite() && **p > 0.0 && **p < 1.0))
        {
            return Err(Error::invalid(
                "importance score",
                format!("frame {t} has probability {p}, expected (0, 1)"),
            ));
        }
        Ok(ImportanceScores { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Ordered, disjoint, exhaustive list of `[start, end)` shots.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotSegmentation {
    pub boundaries: Vec<(usize, usize)>,
}

impl ShotSegmentation {
    pub fn new(boundaries: Vec<(usize, usize)>, n_frames: usize) -> Result<Self> {
        let seg = ShotSegmentation { boundaries };
        seg.validate(n_frames)?;
        Ok(seg)
    }

    /// Builds shots from interior change points (sorted, each in `1..n_frames`).
    pub fn from_change_points(change_points: &[usize], n_frames: usize) -> Result<Self> {
        let mut boundaries = Vec::with_capacity(change_points.len() + 1);
        let mut start = 0;
        for &cp in change_points.iter().chain(std::iter::once(&n_frames)) {
            boundaries.push((start, cp));
            start = cp;
        }
        Self::new(boundaries, n_frames)
    }

    pub fn n_shots(&self) -> usize {
        self.boundaries.len()
    }

    pub fn n_frames(&self) -> usize {
        self.boundaries.last().map_or(0, |&(_, e)| e)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.boundaries.iter().map(|&(s, e)| e - s).collect()
    }

    /// Interior change points (the start of every shot but the first).
    pub fn change_points(&self) -> Vec<usize> {
        self.boundaries.iter().skip(1).map(|&(s, _)| s).collect()
    }

    pub fn validate(&self, n_frames: usize) -> Result<()> {
        let mut expect = 0;
        for &(s, e) in &self.boundaries {
            if s != expect || e <= s {
                return Err(Error::invalid(
                    "segmentation",
                    format!("interval [{s}, {e}) does not continue from {expect}"),
                ));
            }
            expect = e;
        }
        if expect != n_frames {
            return Err(Error::invalid(
                "segmentation",
                format!("covers [0, {expect}) but video has {n_frames} frames"),
            ));
        }
        Ok(())
    }
}

/// Ground-truth keyframes together with the frame scores they induce on a
/// particular shot segmentation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthAnnotation {
    pub keyframe_indices: Vec<usize>,
    pub frame_scores: Vec<u8>,
}

impl GroundTruthAnnotation {
    pub fn derive(keyframes: &[usize], seg: &ShotSegmentation) -> Result<Self> {
        let frame_scores = crate::summarizer::keyframes_to_scores(seg, keyframes)?;
        let mut keyframe_indices = keyframes.to_vec();
        keyframe_indices.sort_unstable();
        keyframe_indices.dedup();
        Ok(GroundTruthAnnotation {
            keyframe_indices,
            frame_scores,
        })
    }

    pub fn as_mask(&self) -> Vec<bool> {
        self.frame_scores.iter().map(|&s| s == 1).collect()
    }
}

/// One dataset entry. `keyframes` is `None` when ground truth is withheld.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoRecord {
    pub features: FrameFeatureSequence,
    pub evidence: PlaneEvidence,
    pub keyframes: Option<Vec<usize>>,
}

impl VideoRecord {
    pub fn id(&self) -> &str {
        &self.features.video_id
    }

    pub fn n_frames(&self) -> usize {
        self.features.n_frames()
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.evidence.validate()?;
        let t = self.n_frames();
        if self.evidence.len() != t {
            return Err(Error::LengthMismatch {
                what: "plane evidence",
                expected: t,
                found: self.evidence.len(),
            });
        }
        if let Some(kf) = &self.keyframes {
            if let Some(&k) = kf.iter().find(|&&k| k >= t) {
                return Err(Error::IndexOutOfRange {
                    what: "keyframe",
                    index: k,
                    len: t,
                });
            }
            if kf.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::invalid(
                    "keyframes",
                    format!("video {} keyframes are not strictly increasing", self.id()),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub dim: usize,
    pub videos: Vec<VideoRecord>,
}

impl Dataset {
    pub fn new(dim: usize, videos: Vec<VideoRecord>) -> Result<Self> {
        let ds = Dataset { dim, videos };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::invalid("dataset", "dim must be >= 1"));
        }
        for v in &self.videos {
            v.validate()?;
            if v.features.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: v.features.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id() == id)
    }

    /// Subset of videos by id, in the order given.
    pub fn subset(&self, ids: &[String]) -> Result<Dataset> {
        let videos = ids
            .iter()
            .map(|id| {
                self.get(id)
                    .cloned()
                    .ok_or_else(|| Error::invalid("video id", format!("{id} not in dataset")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            dim: self.dim,
            videos,
        })
    }

    /// Same dataset with every keyframe list removed.
    pub fn without_ground_truth(&self) -> Dataset {
        Dataset {
            dim: self.dim,
            videos: self
                .videos
                .iter()
                .map(|v| VideoRecord {
                    keyframes: None,
                    ..v.clone()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    #[serde(alias = "sup")]
    Supervised,
    #[serde(alias = "unsup")]
    Unsupervised,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sup" | "supervised" => Ok(TrainMode::Supervised),
            "unsup" | "unsupervised" => Ok(TrainMode::Unsupervised),
            other => Err(Error::invalid("mode", format!("unknown mode {other:?}"))),
        }
    }
}

/// Which reward terms contribute to the total reward.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardFlags {
    pub rep: bool,
    pub div: bool,
    pub det: bool,
}

impl RewardFlags {
    pub const ALL: RewardFlags = RewardFlags {
        rep: true,
        div: true,
        det: true,
    };
    pub const NONE: RewardFlags = RewardFlags {
        rep: false,
        div: false,
        det: false,
    };

    pub fn any(&self) -> bool {
        self.rep || self.div || self.det
    }

    /// Canonical short form, e.g. `rep+div+det` or `none`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [(self.rep, "rep"), (self.div, "div"), (self.det, "det")]
            .iter()
            .filter_map(|&(on, name)| on.then_some(name))
            .collect();
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

impl Default for RewardFlags {
    fn default() -> Self {
        RewardFlags::ALL
    }
}

impl std::str::FromStr for RewardFlags {
    type Err = Error;

    /// Parses `rep+div`, `rep,det`, `all` or `none`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("all") {
            return Ok(RewardFlags::ALL);
        }
        let mut flags = RewardFlags::NONE;
        if s.is_empty() || s.eq_ignore_ascii_case("none") {
            return Ok(flags);
        }
        for part in s.split(['+', ',']) {
            match part.trim() {
                "rep" => flags.rep = true,
                "div" => flags.div = true,
                "det" => flags.det = true,
                other => {
                    return Err(Error::invalid(
                        "reward flags",
                        format!("unknown reward term {other:?}"),
                    ))
                }
            }
        }
        Ok(flags)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub episodes: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epsilon: f64,
    pub beta: f64,
    pub gamma: f64,
    pub budget: f64,
    pub hidden_size: usize,
    pub rewards: RewardFlags,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainMode::Unsupervised,
            episodes: 5,
            epochs: 300,
            lr: 1e-4,
            lr_decay_factor: 0.5,
            lr_decay_every: 50,
            momentum: 0.9,
            weight_decay: 1e-5,
            epsilon: 0.5,
            beta: 0.01,
            gamma: 1.0,
            budget: 0.15,
            hidden_size: 256,
            rewards: RewardFlags::ALL,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, reason: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid("train config", reason))
            }
        };
        check(self.episodes >= 1, format!("episodes = {} < 1", self.episodes))?;
        check(
            self.budget > 0.0 && self.budget <= 1.0,
            format!("budget = {} outside (0, 1]", self.budget),
        )?;
        check(
            (0.0..=1.0).contains(&self.epsilon),
            format!("epsilon = {} outside [0, 1]", self.epsilon),
        )?;
        check(
            self.lr > 0.0 && self.lr.is_finite(),
            format!("lr = {} must be > 0", self.lr),
        )?;
        check(self.hidden_size >= 1, "hidden_size must be >= 1".to_string())?;
        check(
            self.lr_decay_every >= 1,
            "lr_decay_every must be >= 1".to_string(),
        )?;
        check(
            self.lr_decay_factor > 0.0 && self.momentum >= 0.0 && self.weight_decay >= 0.0,
            "lr_decay_factor must be > 0, momentum and weight_decay >= 0".to_string(),
        )?;
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.lr_decay_every) as i32;
        self.lr * self.lr_decay_factor.powi(steps)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dim: usize,
    videos: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    n_frames: usize,
    fps: f64,
    features_file: String,
    det_score_file: String,
    is_plane_file: String,
    #[serde(default)]
    keyframes: Option<Vec<usize>>,
}

fn write_f32s(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f32::to_le_bytes).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_f32s(path: &Path, expected_len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::ShapeMismatch {
            what: path.display().to_string(),
            expected: expected_len * 4,
            found: bytes.len(),
        });
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(path.display().to_string()));
    }
    Ok(values)
}

/// Writes `data` under `root` and returns the manifest path.
pub fn save_dataset(data: &Dataset, root: impl AsRef<Path>) -> Result<PathBuf> {
    let root = root.as_ref();
    data.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut entries = Vec::with_capacity(data.videos.len());
    for (i, v) in data.videos.iter().enumerate() {
        let stem = format!("video_{i:04}");
        let entry = ManifestEntry {
            id: v.id().to_string(),
            n_frames: v.n_frames(),
            fps: v.features.fps,
            features_file: format!("{stem}.features.f32"),
            det_score_file: format!("{stem}.det_score.f32"),
            is_plane_file: format!("{stem}.is_plane.f32"),
            keyframes: v.keyframes.clone(),
        };
        write_f32s(
            &root.join(&entry.features_file),
            v.features.features.iter().copied(),
        )?;
        write_f32s(
            &root.join(&entry.det_score_file),
            v.evidence.det_score.iter().copied(),
        )?;
        write_f32s(
            &root.join(&entry.is_plane_file),
            v.evidence.is_plane.iter().map(|&p| if p { 1.0 } else { 0.0 }),
        )?;
        entries.push(entry);
    }

    let manifest = Manifest {
        dim: data.dim,
        videos: entries,
    };
    let path = root.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Reads a dataset written by [`save_dataset`] (or any producer of the same
/// format). `root` may be the directory or the manifest file itself.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let (dir, manifest_path) = if root.is_dir() {
        (root.to_path_buf(), root.join(MANIFEST_FILE))
    } else {
        (
            root.parent().unwrap_or(Path::new(".")).to_path_buf(),
            root.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        source: e,
    })?;

    let mut videos = Vec::with_capacity(manifest.videos.len());
    for entry in manifest.videos {
        let t = entry.n_frames;
        let raw = read_f32s(&dir.join(&entry.features_file), t * manifest.dim)?;
        let features = Array2::from_shape_vec((t, manifest.dim), raw)
            .map_err(|e| Error::invalid("feature matrix", e.to_string()))?;
        let det_score = read_f32s(&dir.join(&entry.det_score_file), t)?;
        let is_plane = read_f32s(&dir.join(&entry.is_plane_file), t)?
            .into_iter()
            .enumerate()
            .map(|(i, v)| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                other => Err(Error::invalid(
                    "is_plane",
                    format!("video {} frame {i} has value {other}", entry.id),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        let record = VideoRecord {
            features: FrameFeatureSequence {
                video_id: entry.id,
                features,
                fps: entry.fps,
            },
            evidence: PlaneEvidence {
                det_score,
                is_plane,
            },
            keyframes: entry.keyframes,
        };
        record.validate()?;
        videos.push(record);
    }
    Dataset::new(manifest.dim, videos)
}
