//! Temporal-overlap precision / recall / F1 and the repeated-split
//! experiment harness (budget sweeps and reward ablations).

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, GroundTruthAnnotation, ImportanceScores, RewardFlags, TrainConfig, TrainMode, VideoRecord};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::scorer::score_frames;
use crate::segmentation::{kts_segment, KtsConfig};
use crate::summarizer::summarize_scores;
use crate::trainer::{train_with, EpochReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Precision = overlap / |pred|, recall = overlap / |gt|, F1 their harmonic
/// mean. Zero denominators give 0.
pub fn precision_recall_f1(gt_mask: &[bool], pred_mask: &[bool]) -> Result<Prf> {
    if gt_mask.len() != pred_mask.len() {
        return Err(Error::LengthMismatch {
            what: "predicted mask",
            expected: gt_mask.len(),
            found: pred_mask.len(),
        });
    }
    let (mut overlap, mut n_gt, mut n_pred) = (0usize, 0usize, 0usize);
    for (&g, &p) in gt_mask.iter().zip(pred_mask) {
        overlap += usize::from(g && p);
        n_gt += usize::from(g);
        n_pred += usize::from(p);
    }
    let precision = ratio(overlap as f64, n_pred as f64);
    let recall = ratio(overlap as f64, n_gt as f64);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Ok(Prf {
        precision,
        recall,
        f1,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitPlan {
    pub n_splits: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPlan {
    fn default() -> Self {
        SplitPlan {
            n_splits: 5,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_splits == 0 {
            return Err(Error::invalid("split plan", "n_splits must be >= 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid(
                "split plan",
                format!("train_fraction {} outside (0, 1)", self.train_fraction),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

/// Independent seeded random partitions with `round(fraction * N)` training
/// videos, kept within `1..N` so neither side is empty.
pub fn make_splits(video_ids: &[String], plan: &SplitPlan) -> Result<Vec<Split>> {
    plan.validate()?;
    let n = video_ids.len();
    if n < 2 {
        return Err(Error::invalid("split plan", format!("need >= 2 videos, got {n}")));
    }
    let n_train = ((plan.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    Ok((0..plan.n_splits)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, k as u64));
            let mut ids = video_ids.to_vec();
            ids.shuffle(&mut rng);
            let test = ids.split_off(n_train);
            Split { train: ids, test }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub split: usize,
    pub budget: f64,
    pub flags: String,
    pub video_id: String,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F")]
    pub f1: f64,
}

/// Test video with its segmentation and ground-truth mask precomputed.
#[derive(Clone, Debug)]
pub struct PreparedTestVideo<'a> {
    pub video: &'a VideoRecord,
    pub segmentation: crate::datamodel::ShotSegmentation,
    pub gt_mask: Vec<bool>,
}

impl<'a> PreparedTestVideo<'a> {
    pub fn new(video: &'a VideoRecord, kts: &KtsConfig) -> Result<Self> {
        let keyframes = video
            .keyframes
            .as_ref()
            .ok_or_else(|| Error::MissingGroundTruth(video.id().to_string()))?;
        let segmentation = kts_segment(&video.features, kts);
        let gt = GroundTruthAnnotation::derive(keyframes, &segmentation)?;
        Ok(PreparedTestVideo {
            video,
            gt_mask: gt.as_mask(),
            segmentation,
        })
    }

    /// P/R/F of the summary built from `probs` at each budget.
    pub fn evaluate(&self, probs: &ImportanceScores, budgets: &[f64]) -> Result<Vec<Prf>> {
        budgets
            .iter()
            .map(|&b| {
                let summary = summarize_scores(&self.segmentation, probs, b)?;
                precision_recall_f1(&self.gt_mask, &summary.frame_mask)
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanPrf {
    pub split: Option<usize>,
    pub budget: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_videos: usize,
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a EvalRow>, split: Option<usize>, budget: f64) -> MeanPrf {
    let (mut p, mut r, mut f, mut n) = (0.0, 0.0, 0.0, 0usize);
    for row in rows {
        p += row.precision;
        r += row.recall;
        f += row.f1;
        n += 1;
    }
    let d = n.max(1) as f64;
    MeanPrf {
        split,
        budget,
        precision: p / d,
        recall: r / d,
        f1: f / d,
        n_videos: n,
    }
}

/// Per-split and per-budget means of a set of result rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub budgets: Vec<f64>,
    pub per_split: Vec<MeanPrf>,
    pub per_budget: Vec<MeanPrf>,
    pub grand_mean_f1: f64,
}

impl RowSummary {
    pub fn from_rows(rows: &[EvalRow], n_splits: usize, budgets: &[f64]) -> Self {
        let per_split = (0..n_splits)
            .flat_map(|s| budgets.iter().map(move |&b| (s, b)))
            .map(|(s, b)| split_mean(rows, s, b))
            .collect();
        let per_budget = budgets.iter().map(|&b| budget_mean(rows, b)).collect();
        RowSummary {
            budgets: budgets.to_vec(),
            per_split,
            per_budget,
            grand_mean_f1: mean_of(rows.iter(), None, 0.0).f1,
        }
    }
}

pub fn split_mean(rows: &[EvalRow], split: usize, budget: f64) -> MeanPrf {
    mean_of(
        rows.iter().filter(|r| r.split == split && r.budget == budget),
        Some(split),
        budget,
    )
}

pub fn budget_mean(rows: &[EvalRow], budget: f64) -> MeanPrf {
    mean_of(rows.iter().filter(|r| r.budget == budget), None, budget)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub mode: TrainMode,
    pub flags: String,
    #[serde(flatten)]
    pub stats: RowSummary,
}

#[derive(Clone, Debug)]
pub struct ExperimentReport {
    pub mode: TrainMode,
    pub flags: RewardFlags,
    pub budgets: Vec<f64>,
    pub n_splits: usize,
    pub rows: Vec<EvalRow>,
    pub training: Vec<Vec<EpochReport>>,
}

impl ExperimentReport {
    pub fn split_mean(&self, split: usize, budget: f64) -> MeanPrf {
        split_mean(&self.rows, split, budget)
    }

    pub fn budget_mean(&self, budget: f64) -> MeanPrf {
        budget_mean(&self.rows, budget)
    }

    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            mode: self.mode,
            flags: self.flags.label(),
            stats: RowSummary::from_rows(&self.rows, self.n_splits, &self.budgets),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows_csv(&self.rows, path)
    }
}

pub fn write_rows_csv(rows: &[EvalRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::invalid("results csv", e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows_csv(path: impl AsRef<Path>) -> Result<Vec<EvalRow>> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::invalid("results csv", format!("{}: {e}", path.display()));
    csv::Reader::from_path(path)
        .map_err(csv_err)?
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// For every split: train on the training videos with only `flags` active,
/// summarize each test video at every budget on its own KTS segmentation,
/// and score against the keyframe-derived ground truth.
pub fn run_experiment(
    dataset: &Dataset,
    config: &TrainConfig,
    kts: &KtsConfig,
    plan: &SplitPlan,
    budgets: &[f64],
    flags: RewardFlags,
) -> Result<ExperimentReport> {
    if config.mode == TrainMode::Unsupervised && !flags.any() {
        return Err(Error::invalid(
            "reward flags",
            "unsupervised training needs at least one reward term",
        ));
    }
    if budgets.is_empty() {
        return Err(Error::invalid("budgets", "need at least one budget"));
    }
    if let Some(b) = budgets.iter().find(|&&b| !(b > 0.0 && b <= 1.0)) {
        return Err(Error::invalid("budgets", format!("{b} outside (0, 1]")));
    }
    let ids: Vec<String> = dataset.videos.iter().map(|v| v.id().to_string()).collect();
    let splits = make_splits(&ids, plan)?;

    let per_split: Vec<(Vec<EvalRow>, Vec<EpochReport>)> = splits
        .par_iter()
        .enumerate()
        .map(|(k, split)| {
            let train_set = dataset.subset(&split.train)?;
            let cfg = TrainConfig {
                rewards: flags,
                seed: derive_seed(config.seed, k as u64),
                ..config.clone()
            };
            let (state, log) = train_with(&train_set, &cfg, kts, |_| {})?;
            let mut rows = Vec::new();
            for id in &split.test {
                let video = dataset.get(id).expect("split ids come from the dataset");
                let prepared = PreparedTestVideo::new(video, kts)?;
                let probs = score_frames(&state.params, &video.features)?;
                for (prf, &budget) in prepared.evaluate(&probs, budgets)?.into_iter().zip(budgets) {
                    rows.push(EvalRow {
                        split: k,
                        budget,
                        flags: flags.label(),
                        video_id: id.clone(),
                        precision: prf.precision,
                        recall: prf.recall,
                        f1: prf.f1,
                    });
                }
            }
            Ok((rows, log))
        })
        .collect::<Result<_>>()?;

    let (rows, training): (Vec<_>, Vec<_>) = per_split.into_iter().unzip();
    let mut rows: Vec<EvalRow> = rows.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        (a.split, a.video_id.as_str())
            .cmp(&(b.split, b.video_id.as_str()))
            .then(a.budget.total_cmp(&b.budget))
    });
    Ok(ExperimentReport {
        mode: config.mode,
        flags,
        budgets: budgets.to_vec(),
        n_splits: plan.n_splits,
        rows,
        training,
    })
}
