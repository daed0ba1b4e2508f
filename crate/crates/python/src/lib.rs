//! Python bindings. Features cross the boundary as lists of rows of
//! floats; results come back as plain Python values.

use ndarray::Array2;
use pyo3::exceptions::{PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use vsumm::evaluation::PreparedTestVideo;
use vsumm::rewards::RewardContext;
use vsumm::summarizer::summarize_scores;
use vsumm::{
    ActionSequence, FrameFeatureSequence, ImportanceScores, KtsConfig, PlaneEvidence, RewardFlags,
    ShotSegmentation, SyntheticSpec, TrainConfig, TrainMode,
};

fn err(e: vsumm::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sequence(rows: Vec<Vec<f32>>) -> PyResult<FrameFeatureSequence> {
    FrameFeatureSequence::from_rows("input", &rows, 30.0).map_err(err)
}

fn rows_of(x: &Array2<f32>) -> Vec<Vec<f32>> {
    x.rows().into_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "Dataset", module = "vsumm", skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: vsumm::Dataset,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: vsumm::load_dataset(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<String> {
        let manifest = vsumm::save_dataset(&self.inner, path).map_err(err)?;
        Ok(manifest.display().to_string())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn video_ids(&self) -> Vec<String> {
        self.inner.videos.iter().map(|v| v.id().to_string()).collect()
    }

    fn features(&self, index: usize) -> PyResult<Vec<Vec<f32>>> {
        Ok(rows_of(&self.video(index)?.features.features))
    }

    fn det_scores(&self, index: usize) -> PyResult<Vec<f32>> {
        Ok(self.video(index)?.evidence.det_score.clone())
    }

    fn is_plane(&self, index: usize) -> PyResult<Vec<bool>> {
        Ok(self.video(index)?.evidence.is_plane.clone())
    }

    fn keyframes(&self, index: usize) -> PyResult<Option<Vec<usize>>> {
        Ok(self.video(index)?.keyframes.clone())
    }

    fn without_ground_truth(&self) -> Self {
        PyDataset {
            inner: self.inner.without_ground_truth(),
        }
    }

    fn __repr__(&self) -> String {
        format!("Dataset(videos={}, dim={})", self.inner.len(), self.inner.dim)
    }
}

impl PyDataset {
    fn video(&self, index: usize) -> PyResult<&vsumm::VideoRecord> {
        self.inner
            .videos
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("video {index} out of range")))
    }
}

/// Trained (or freshly initialized) frame scorer.
#[pyclass(name = "Scorer", module = "vsumm", skip_from_py_object)]
#[derive(Clone)]
pub struct PyScorer {
    inner: vsumm::Checkpoint,
}

#[pymethods]
impl PyScorer {
    #[new]
    #[pyo3(signature = (input_size, hidden_size = 256, seed = 0))]
    fn new(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        PyScorer {
            inner: vsumm::Checkpoint {
                config: TrainConfig {
                    hidden_size,
                    seed,
                    ..Default::default()
                },
                epoch: 0,
                params: vsumm::ScorerParams::new(input_size, hidden_size, seed),
            },
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyScorer {
            inner: vsumm::Checkpoint::load(path).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.params.input_size()
    }

    #[getter]
    fn hidden_size(&self) -> usize {
        self.inner.params.hidden_size()
    }

    #[getter]
    fn epoch(&self) -> usize {
        self.inner.epoch
    }

    /// Per-frame selection probabilities.
    fn score(&self, features: Vec<Vec<f32>>) -> PyResult<Vec<f64>> {
        let f = sequence(features)?;
        Ok(vsumm::score_frames(&self.inner.params, &f).map_err(err)?.probs)
    }

    /// Budgeted summary: `{"shots", "frame_mask", "scores", "used_frames"}`.
    #[pyo3(signature = (features, budget = 0.15, max_segments = None, penalty_weight = 1.0))]
    fn summarize<'py>(
        &self,
        py: Python<'py>,
        features: Vec<Vec<f32>>,
        budget: f64,
        max_segments: Option<usize>,
        penalty_weight: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let f = sequence(features)?;
        let kts = KtsConfig {
            max_segments,
            penalty_weight,
        };
        let (summary, scores, seg) = vsumm::generate_summary(&self.inner.params, &f, &kts, budget).map_err(err)?;
        let shots: Vec<(usize, usize)> = summary.selected_shots.iter().map(|&i| seg.boundaries[i]).collect();
        let out = PyDict::new(py);
        out.set_item("shots", shots)?;
        out.set_item("frame_mask", summary.frame_mask)?;
        out.set_item("scores", scores.probs)?;
        out.set_item("used_frames", summary.used_frames)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scorer(input_size={}, hidden_size={}, epoch={})",
            self.input_size(),
            self.hidden_size(),
            self.epoch()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (
    n_videos = 10, min_frames = 500, max_frames = 700, dim = 64, n_plane_classes = 13,
    plane_fraction = 0.3, noise_sigma = 0.1, drift_sigma = 0.02, label_noise = 0.05, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    n_videos: usize,
    min_frames: usize,
    max_frames: usize,
    dim: usize,
    n_plane_classes: usize,
    plane_fraction: f64,
    noise_sigma: f64,
    drift_sigma: f64,
    label_noise: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    let spec = SyntheticSpec {
        n_videos,
        frames_range: [min_frames, max_frames],
        dim,
        n_plane_classes,
        plane_fraction,
        noise_sigma,
        drift_sigma,
        label_noise,
        seed,
        ..Default::default()
    };
    Ok(PyDataset {
        inner: vsumm::generate_synthetic(&spec).map_err(err)?,
    })
}

/// Trains a scorer; returns it with the per-epoch log as a list of dicts.
#[pyfunction]
#[pyo3(signature = (
    dataset, mode = "unsup", rewards = "rep+div+det", epochs = 300, lr = 1e-4, hidden_size = 256,
    episodes = 5, beta = 0.01, epsilon = 0.5, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    mode: &str,
    rewards: &str,
    epochs: usize,
    lr: f64,
    hidden_size: usize,
    episodes: usize,
    beta: f64,
    epsilon: f64,
    seed: u64,
) -> PyResult<(PyScorer, Vec<Bound<'py, PyDict>>)> {
    let config = TrainConfig {
        mode: mode.parse::<TrainMode>().map_err(err)?,
        rewards: rewards.parse::<RewardFlags>().map_err(err)?,
        epochs,
        lr,
        hidden_size,
        episodes,
        beta,
        epsilon,
        seed,
        ..Default::default()
    };
    let data = dataset.inner.clone();
    let cfg = config.clone();
    let (state, log) = py.detach(move || vsumm::train(&data, &cfg)).map_err(err)?;
    let log = log
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("lr", r.lr)?;
            d.set_item("mean_reward", r.mean_reward)?;
            d.set_item("mean_rep", r.mean_rep)?;
            d.set_item("mean_div", r.mean_div)?;
            d.set_item("mean_det", r.mean_det)?;
            d.set_item("mean_pred_loss", r.mean_pred_loss)?;
            d.set_item("mean_reg_loss", r.mean_reg_loss)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let scorer = PyScorer {
        inner: vsumm::Checkpoint {
            config,
            epoch: state.epoch,
            params: state.params,
        },
    };
    Ok((scorer, log))
}

/// Shot boundaries as `[start, end)` pairs.
#[pyfunction]
#[pyo3(signature = (features, max_segments = None, penalty_weight = 1.0))]
fn kts_segment(features: Vec<Vec<f32>>, max_segments: Option<usize>, penalty_weight: f64) -> PyResult<Vec<(usize, usize)>> {
    let f = sequence(features)?;
    let cfg = KtsConfig {
        max_segments,
        penalty_weight,
    };
    cfg.validate().map_err(err)?;
    Ok(vsumm::kts_segment(&f, &cfg).boundaries)
}

/// Indices of the shots picked by the 0/1 knapsack under `budget`.
#[pyfunction]
fn select_shots(boundaries: Vec<(usize, usize)>, frame_scores: Vec<f64>, budget: f64) -> PyResult<Vec<usize>> {
    let n = frame_scores.len();
    let seg = ShotSegmentation::new(boundaries, n).map_err(err)?;
    let probs = ImportanceScores::new(frame_scores).map_err(err)?;
    Ok(summarize_scores(&seg, &probs, budget).map_err(err)?.selected_shots)
}

/// `{"rep", "div", "det", "total"}` for one selection.
#[pyfunction]
fn rewards<'py>(
    py: Python<'py>,
    features: Vec<Vec<f32>>,
    det_score: Vec<f32>,
    is_plane: Vec<bool>,
    actions: Vec<bool>,
) -> PyResult<Bound<'py, PyDict>> {
    let f = sequence(features)?;
    let ev = PlaneEvidence::new(det_score, is_plane).map_err(err)?;
    let r = RewardContext::new(&f, &ev)
        .and_then(|ctx| ctx.evaluate(&ActionSequence::new(actions), RewardFlags::ALL))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("rep", r.rep)?;
    out.set_item("div", r.div)?;
    out.set_item("det", r.det)?;
    out.set_item("total", r.total)?;
    Ok(out)
}

/// `(precision, recall, f1)` of a predicted frame mask.
#[pyfunction]
fn precision_recall_f1(gt_mask: Vec<bool>, pred_mask: Vec<bool>) -> PyResult<(f64, f64, f64)> {
    let m = vsumm::precision_recall_f1(&gt_mask, &pred_mask).map_err(err)?;
    Ok((m.precision, m.recall, m.f1))
}

/// F-score of `scorer` on one dataset video at each budget.
#[pyfunction]
#[pyo3(signature = (scorer, dataset, index, budgets = vec![0.15]))]
fn evaluate_video(scorer: &PyScorer, dataset: &PyDataset, index: usize, budgets: Vec<f64>) -> PyResult<Vec<f64>> {
    let video = dataset.video(index)?;
    let prepared = PreparedTestVideo::new(video, &KtsConfig::default()).map_err(err)?;
    let probs = vsumm::score_frames(&scorer.inner.params, &video.features).map_err(err)?;
    Ok(prepared
        .evaluate(&probs, &budgets)
        .map_err(err)?
        .into_iter()
        .map(|m| m.f1)
        .collect())
}

#[pymodule]
#[pyo3(name = "vsumm")]
fn vsumm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyScorer>()?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(kts_segment, m)?)?;
    m.add_function(wrap_pyfunction!(select_shots, m)?)?;
    m.add_function(wrap_pyfunction!(rewards, m)?)?;
    m.add_function(wrap_pyfunction!(precision_recall_f1, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_video, m)?)?;
    Ok(())
}
