//! Reinforcement-learning frame selection for diagnostic video summaries.
//!
//! A bidirectional LSTM ([`scorer`]) assigns every frame a selection
//! probability. It is trained ([`trainer`]) by policy gradient on
//! representativeness, diversity and plane-detection rewards ([`rewards`]),
//! optionally with a supervised loss against keyframe-derived labels.
//! Summaries are built by segmenting the video into shots
//! ([`segmentation`]) and picking the best shots under a length budget
//! ([`summarizer`]); [`evaluation`] scores them by temporal overlap.

pub mod datamodel;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod rewards;
pub mod scorer;
pub mod segmentation;
pub mod summarizer;
pub mod trainer;

pub use datamodel::{
    load_dataset, save_dataset, ActionSequence, Dataset, FrameFeatureSequence,
    GroundTruthAnnotation, ImportanceScores, PlaneEvidence, RewardFlags, ShotSegmentation,
    TrainConfig, TrainMode, VideoRecord,
};
pub use error::{Error, Result};
pub use evaluation::{
    make_splits, precision_recall_f1, run_experiment, EvalRow, ExperimentReport, Prf, RowSummary, SplitPlan,
};
pub use features::{generate_synthetic, reduce_class_probs, SyntheticSpec};
pub use rewards::{
    detection_reward, diversity_reward, representativeness_reward, total_reward, RewardBreakdown,
};
pub use scorer::{log_prob_of_actions, sample_actions, score_frames, Checkpoint, ScorerParams};
pub use segmentation::{kts_segment, shots_containing, KtsConfig};
pub use summarizer::{generate_summary, keyframes_to_scores, select_shots, shot_scores, SummaryResult};
pub use trainer::{estimate_policy_gradient, prediction_loss, regularization_loss, train, EpochReport, TrainState};

/// Mixes a base seed with a stream index (SplitMix64 finalizer) so that
/// per-video and per-split generators are independent but reproducible.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
