use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vsumm::evaluation::{write_rows_csv, PreparedTestVideo};
use vsumm::summarizer::SummaryRecord;
use vsumm::trainer::train_with;
use vsumm::{
    generate_summary, generate_synthetic, kts_segment, load_dataset, precision_recall_f1, run_experiment,
    save_dataset, Checkpoint, EpochReport, EvalRow, KtsConfig, RewardFlags, RowSummary, SplitPlan,
    SyntheticSpec, TrainConfig, TrainMode,
};

use crate::config::Layers;
use crate::{config_keys, plot, CliError};

pub const DEFAULT_BUDGETS: [f64; 4] = [0.15, 0.25, 0.35, 0.45];

fn usage(e: vsumm::Error) -> CliError {
    CliError::Usage(e.to_string())
}

fn layers(subcommand: &str, config: Option<&Path>) -> Result<Layers, CliError> {
    Layers::load(config, &config_keys(subcommand))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(vsumm::Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", path.display())))
}

#[derive(Debug, Args)]
pub struct KtsOpts {
    /// Upper bound on shots per video [default: ceil(T/20), at most 50].
    #[arg(long)]
    max_segments: Option<usize>,
    /// Weight of the shot-count penalty [default: 1].
    #[arg(long)]
    penalty_weight: Option<f64>,
}

impl KtsOpts {
    fn resolve(&self, l: &Layers) -> Result<KtsConfig, CliError> {
        let d = KtsConfig::default();
        let cfg = KtsConfig {
            max_segments: l.get(self.max_segments, "max-segments")?,
            penalty_weight: l.or(self.penalty_weight, "penalty-weight", d.penalty_weight)?,
        };
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainOpts {
    /// Training mode: sup or unsup [default: unsup].
    #[arg(long)]
    mode: Option<String>,
    /// Active reward terms, e.g. rep+div+det, rep+div, all [default: all].
    #[arg(long)]
    rewards: Option<String>,
    /// [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// [default: 0.5]
    #[arg(long)]
    lr_decay_factor: Option<f64>,
    /// Epochs between learning-rate decays [default: 50].
    #[arg(long)]
    lr_decay_every: Option<usize>,
    /// [default: 0.9]
    #[arg(long)]
    momentum: Option<f64>,
    /// [default: 1e-5]
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Sampled selections per video and step [default: 5].
    #[arg(long)]
    episodes: Option<usize>,
    /// Target mean selection probability [default: 0.5].
    #[arg(long)]
    epsilon: Option<f64>,
    /// Weight of the selection-rate regularizer [default: 0.01].
    #[arg(long)]
    beta: Option<f64>,
    /// Weight of the reward term [default: 1].
    #[arg(long)]
    gamma: Option<f64>,
    /// Summary length as a fraction of the video [default: 0.15].
    #[arg(long)]
    budget: Option<f64>,
    /// LSTM hidden units per direction [default: 256].
    #[arg(long)]
    hidden_size: Option<usize>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

impl TrainOpts {
    fn resolve(&self, l: &Layers) -> Result<TrainConfig, CliError> {
        let d = TrainConfig::default();
        let mode = match l.get(self.mode.clone(), "mode")? {
            Some(s) => s.parse::<TrainMode>().map_err(usage)?,
            None => d.mode,
        };
        let rewards = match l.get(self.rewards.clone(), "rewards")? {
            Some(s) => s.parse::<RewardFlags>().map_err(usage)?,
            None => d.rewards,
        };
        let cfg = TrainConfig {
            mode,
            rewards,
            epochs: l.or(self.epochs, "epochs", d.epochs)?,
            lr: l.or(self.lr, "lr", d.lr)?,
            lr_decay_factor: l.or(self.lr_decay_factor, "lr-decay-factor", d.lr_decay_factor)?,
            lr_decay_every: l.or(self.lr_decay_every, "lr-decay-every", d.lr_decay_every)?,
            momentum: l.or(self.momentum, "momentum", d.momentum)?,
            weight_decay: l.or(self.weight_decay, "weight-decay", d.weight_decay)?,
            episodes: l.or(self.episodes, "episodes", d.episodes)?,
            epsilon: l.or(self.epsilon, "epsilon", d.epsilon)?,
            beta: l.or(self.beta, "beta", d.beta)?,
            gamma: l.or(self.gamma, "gamma", d.gamma)?,
            budget: l.or(self.budget, "budget", d.budget)?,
            hidden_size: l.or(self.hidden_size, "hidden-size", d.hidden_size)?,
            seed: l.or(self.seed, "seed", d.seed)?,
        };
        cfg.validate().map_err(usage)?;
        if cfg.mode == TrainMode::Unsupervised && !cfg.rewards.any() {
            return Err(CliError::Usage("unsupervised training needs at least one reward term".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with option values keyed by flag name.
    #[arg(long)]
    config: Option<PathBuf>,
    /// [default: 10]
    #[arg(long)]
    n_videos: Option<usize>,
    /// [default: 500]
    #[arg(long)]
    min_frames: Option<usize>,
    /// [default: 700]
    #[arg(long)]
    max_frames: Option<usize>,
    /// Feature dimension [default: 64].
    #[arg(long)]
    dim: Option<usize>,
    /// [default: 13]
    #[arg(long)]
    n_plane_classes: Option<usize>,
    /// [default: 20]
    #[arg(long)]
    min_segment_len: Option<usize>,
    /// [default: 60]
    #[arg(long)]
    max_segment_len: Option<usize>,
    /// Probability that a segment shows a plane [default: 0.3].
    #[arg(long)]
    plane_fraction: Option<f64>,
    /// [default: 0.1]
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Per-frame step of the feature random walk [default: 0.02].
    #[arg(long)]
    drift_sigma: Option<f64>,
    /// [default: 0.05]
    #[arg(long)]
    label_noise: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let l = layers("synth", a.config.as_deref())?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_videos: l.or(a.n_videos, "n-videos", d.n_videos)?,
        frames_range: [
            l.or(a.min_frames, "min-frames", d.frames_range[0])?,
            l.or(a.max_frames, "max-frames", d.frames_range[1])?,
        ],
        dim: l.or(a.dim, "dim", d.dim)?,
        n_plane_classes: l.or(a.n_plane_classes, "n-plane-classes", d.n_plane_classes)?,
        segment_len_range: [
            l.or(a.min_segment_len, "min-segment-len", d.segment_len_range[0])?,
            l.or(a.max_segment_len, "max-segment-len", d.segment_len_range[1])?,
        ],
        plane_fraction: l.or(a.plane_fraction, "plane-fraction", d.plane_fraction)?,
        noise_sigma: l.or(a.noise_sigma, "noise-sigma", d.noise_sigma)?,
        drift_sigma: l.or(a.drift_sigma, "drift-sigma", d.drift_sigma)?,
        label_noise: l.or(a.label_noise, "label-noise", d.label_noise)?,
        seed: l.or(a.seed, "seed", d.seed)?,
    };
    let out: PathBuf = l.require(a.out.clone(), "out")?;
    spec.validate().map_err(usage)?;
    let data = generate_synthetic(&spec)?;
    let manifest = save_dataset(&data, &out)?;
    info!("wrote {} videos to {}", data.len(), manifest.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output JSON file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    kts: KtsOpts,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub video_id: String,
    pub n_frames: usize,
    pub boundaries: Vec<(usize, usize)>,
}

pub fn segment(a: &SegmentArgs) -> Result<(), CliError> {
    let l = layers("segment", a.config.as_deref())?;
    let data_path: PathBuf = l.require(a.data.clone(), "data")?;
    let out: PathBuf = l.require(a.out.clone(), "out")?;
    let kts = a.kts.resolve(&l)?;
    let data = load_dataset(&data_path)?;
    let records: Vec<SegmentRecord> = data
        .videos
        .par_iter()
        .map(|v| SegmentRecord {
            video_id: v.id().to_string(),
            n_frames: v.n_frames(),
            boundaries: kts_segment(&v.features, &kts).boundaries,
        })
        .collect();
    write_json(&out, &records)?;
    info!("segmented {} videos into {}", records.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output checkpoint (JSON).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Training log, one JSON object per epoch [default: <checkpoint>.log.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    kts: KtsOpts,
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let l = layers("train", a.config.as_deref())?;
    let data_path: PathBuf = l.require(a.data.clone(), "data")?;
    let ckpt_path: PathBuf = l.require(a.checkpoint.clone(), "checkpoint")?;
    let log_path = l
        .get(a.log.clone(), "log")?
        .unwrap_or_else(|| ckpt_path.with_extension("log.jsonl"));
    let cfg = a.train.resolve(&l)?;
    let kts = a.kts.resolve(&l)?;
    let data = load_dataset(&data_path)?;

    let file = File::create(&log_path)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", log_path.display())))?;
    let mut log = BufWriter::new(file);
    let mut log_err = None;
    let (state, _) = train_with(&data, &cfg, &kts, |r: &EpochReport| {
        info!("epoch {} lr {:.3e} reward {:.4}", r.epoch, r.lr, r.mean_reward);
        if log_err.is_none() {
            let line = serde_json::to_string(r).expect("epoch reports serialize");
            log_err = writeln!(log, "{line}").err();
        }
    })?;
    if let Some(e) = log_err.or_else(|| log.flush().err()) {
        return Err(CliError::Runtime(format!("cannot write {}: {e}", log_path.display())));
    }

    Checkpoint {
        config: cfg,
        epoch: state.epoch,
        params: state.params,
    }
    .save(&ckpt_path)?;
    info!("saved checkpoint {}", ckpt_path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output JSON file with one summary per video.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary length as a fraction of the video [default: checkpoint's budget].
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    kts: KtsOpts,
}

pub fn summarize(a: &SummarizeArgs) -> Result<(), CliError> {
    let l = layers("summarize", a.config.as_deref())?;
    let data_path: PathBuf = l.require(a.data.clone(), "data")?;
    let ckpt_path: PathBuf = l.require(a.checkpoint.clone(), "checkpoint")?;
    let out: PathBuf = l.require(a.out.clone(), "out")?;
    let kts = a.kts.resolve(&l)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let budget = l.or(a.budget, "budget", ckpt.config.budget)?;
    if !(budget > 0.0 && budget <= 1.0) {
        return Err(CliError::Usage(format!("budget {budget} outside (0, 1]")));
    }
    let data = load_dataset(&data_path)?;
    let records = data
        .videos
        .par_iter()
        .map(|v| {
            let (summary, scores, seg) = generate_summary(&ckpt.params, &v.features, &kts, budget)?;
            SummaryRecord::new(v.id(), budget, &seg, &summary, &scores, v.keyframes.as_deref())
        })
        .collect::<vsumm::Result<Vec<_>>>()?;
    write_json(&out, &records)?;
    info!("summarized {} videos into {}", records.len(), out.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory for results.csv and report.json.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Score these summaries against the dataset instead of training.
    #[arg(long)]
    summaries: Option<PathBuf>,
    /// Comma-separated budgets [default: 0.15,0.25,0.35,0.45].
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<f64>>,
    /// [default: 5]
    #[arg(long)]
    n_splits: Option<usize>,
    /// [default: 0.8]
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Seed of the train/test partitions [default: 0].
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    train: TrainOpts,
    #[command(flatten)]
    kts: KtsOpts,
}

/// Contents of `report.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct ReportFile {
    pub label: String,
    pub mode: Option<TrainMode>,
    pub flags: Option<String>,
    pub n_splits: usize,
    #[serde(flatten)]
    pub stats: RowSummary,
    pub training: Vec<Vec<EpochReport>>,
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let l = layers("evaluate", a.config.as_deref())?;
    let data_path: PathBuf = l.require(a.data.clone(), "data")?;
    let out_dir: PathBuf = l.require(a.out_dir.clone(), "out-dir")?;
    let kts = a.kts.resolve(&l)?;
    let summaries: Option<PathBuf> = l.get(a.summaries.clone(), "summaries")?;

    let (rows, report) = match summaries {
        Some(path) => {
            let data = load_dataset(&data_path)?;
            let records: Vec<SummaryRecord> = read_json(&path)?;
            score_summaries(&data, &records, &kts)?
        }
        None => {
            let cfg = a.train.resolve(&l)?;
            let budgets = l.or(a.budgets.clone(), "budgets", DEFAULT_BUDGETS.to_vec())?;
            if budgets.is_empty() || budgets.iter().any(|&b| !(b > 0.0 && b <= 1.0)) {
                return Err(CliError::Usage(format!("budgets {budgets:?} must lie in (0, 1]")));
            }
            let d = SplitPlan::default();
            let plan = SplitPlan {
                n_splits: l.or(a.n_splits, "n-splits", d.n_splits)?,
                train_fraction: l.or(a.train_fraction, "train-fraction", d.train_fraction)?,
                seed: l.or(a.split_seed, "split-seed", d.seed)?,
            };
            plan.validate().map_err(usage)?;
            let data = load_dataset(&data_path)?;
            let exp = run_experiment(&data, &cfg, &kts, &plan, &budgets, cfg.rewards)?;
            let summary = exp.summary();
            let report = ReportFile {
                label: format!("{} {}", mode_name(cfg.mode), summary.flags),
                mode: Some(cfg.mode),
                flags: Some(summary.flags),
                n_splits: plan.n_splits,
                stats: summary.stats,
                training: exp.training,
            };
            (exp.rows, report)
        }
    };

    create_dir(&out_dir)?;
    write_rows_csv(&rows, out_dir.join("results.csv"))?;
    write_json(&out_dir.join("report.json"), &report)?;
    info!(
        "{}: {} rows, mean F {:.4}",
        report.label,
        rows.len(),
        report.stats.grand_mean_f1
    );
    Ok(())
}

fn mode_name(mode: TrainMode) -> &'static str {
    match mode {
        TrainMode::Supervised => "supervised",
        TrainMode::Unsupervised => "unsupervised",
    }
}

/// Scores each summary's shots against the keyframe ground truth of its
/// video on that video's segmentation.
fn score_summaries(
    data: &vsumm::Dataset,
    records: &[SummaryRecord],
    kts: &KtsConfig,
) -> Result<(Vec<EvalRow>, ReportFile), CliError> {
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let video = data
            .get(&rec.video_id)
            .ok_or_else(|| CliError::Runtime(format!("summary for unknown video {:?}", rec.video_id)))?;
        let prepared = PreparedTestVideo::new(video, kts)?;
        let mask = shots_mask(&rec.shots, video.n_frames()).ok_or_else(|| {
            CliError::Runtime(format!("summary of {}: shots are not ordered disjoint intervals", rec.video_id))
        })?;
        let prf = precision_recall_f1(&prepared.gt_mask, &mask)?;
        rows.push(EvalRow {
            split: 0,
            budget: rec.budget,
            flags: "summary".to_string(),
            video_id: rec.video_id.clone(),
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
        });
    }
    let mut budgets: Vec<f64> = rows.iter().map(|r| r.budget).collect();
    budgets.sort_by(f64::total_cmp);
    budgets.dedup();
    let report = ReportFile {
        label: "summaries".to_string(),
        mode: None,
        flags: None,
        n_splits: 1,
        stats: RowSummary::from_rows(&rows, 1, &budgets),
        training: Vec::new(),
    };
    Ok((rows, report))
}

/// Frame mask of ordered, disjoint, in-range `[start, end)` intervals.
fn shots_mask(shots: &[(usize, usize)], n_frames: usize) -> Option<Vec<bool>> {
    let mut mask = vec![false; n_frames];
    let mut at = 0;
    for &(s, e) in shots {
        if s < at || s >= e || e > n_frames {
            return None;
        }
        mask[s..e].fill(true);
        at = e;
    }
    Some(mask)
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Summaries JSON from `summarize`; one score curve per video.
    #[arg(long)]
    summaries: Option<PathBuf>,
    /// report.json from `evaluate`; repeat to compare runs in the bar chart.
    #[arg(long = "report")]
    report: Vec<PathBuf>,
    /// Output directory for the SVG files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

pub fn plot(a: &PlotArgs) -> Result<(), CliError> {
    let l = layers("plot", a.config.as_deref())?;
    let summaries: PathBuf = l.require(a.summaries.clone(), "summaries")?;
    let reports: Vec<PathBuf> = l.require((!a.report.is_empty()).then(|| a.report.clone()), "report")?;
    let out_dir: PathBuf = l.require(a.out_dir.clone(), "out-dir")?;

    let records: Vec<SummaryRecord> = read_json(&summaries)?;
    let reports: Vec<ReportFile> = reports.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    create_dir(&out_dir)?;
    for rec in &records {
        plot::score_curve(rec, &out_dir.join(format!("scores_{}.svg", file_stem(&rec.video_id))))?;
    }
    plot::budget_bars(&reports, &out_dir.join("f1_by_budget.svg"))?;
    info!("wrote {} plots to {}", records.len() + 1, out_dir.display());
    Ok(())
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}
