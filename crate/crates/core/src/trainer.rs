//! Scorer optimization.
//!
//! Each optimizer step processes one video and minimizes
//!
//! ```text
//! [supervised] L_pred + beta * L_reg - gamma * mean_e (R_e - b) * log pi(a_e)
//! ```
//!
//! where the last term is the REINFORCE surrogate whose gradient is the
//! policy-gradient estimate of the expected reward, `a_e` are sampled
//! selections and `b` is a per-video moving-average reward baseline.
//! Updates use SGD with momentum and L2 weight decay, and the learning
//! rate is multiplied by `lr_decay_factor` every `lr_decay_every` epochs.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    ActionSequence, Dataset, FrameFeatureSequence, GroundTruthAnnotation, ImportanceScores,
    PlaneEvidence, RewardFlags, TrainConfig, TrainMode,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::rewards::{RewardBreakdown, RewardContext};
use crate::scorer::{sample_actions_with, ScorerParams};
use crate::segmentation::{kts_segment, KtsConfig};

/// Momentum of the per-video reward baseline.
pub const BASELINE_MOMENTUM: f64 = 0.9;

/// Seed stream for scorer initialization.
const INIT_STREAM: u64 = 0x1417;

pub fn prediction_loss(probs: &[f64], gt_scores: &[f64]) -> Result<f64> {
    if probs.len() != gt_scores.len() {
        return Err(Error::LengthMismatch {
            what: "ground-truth scores",
            expected: probs.len(),
            found: gt_scores.len(),
        });
    }
    let n = probs.len() as f64;
    Ok(probs
        .iter()
        .zip(gt_scores)
        .map(|(p, g)| (p - g) * (p - g))
        .sum::<f64>()
        / n)
}

/// `(mean(p) - epsilon)^2`.
pub fn regularization_loss(probs: &[f64], epsilon: f64) -> f64 {
    let mean = probs.iter().sum::<f64>() / probs.len() as f64;
    (mean - epsilon) * (mean - epsilon)
}

/// Value and probability-gradient of `[L_pred] + beta * L_reg`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferentiableLoss {
    pub pred: Option<f64>,
    pub reg: f64,
    pub value: f64,
    pub d_probs: Vec<f64>,
}

pub fn differentiable_loss(
    probs: &[f64],
    gt_scores: Option<&[f64]>,
    beta: f64,
    epsilon: f64,
) -> Result<DifferentiableLoss> {
    let n = probs.len() as f64;
    let reg = regularization_loss(probs, epsilon);
    let mean = probs.iter().sum::<f64>() / n;
    let reg_grad = beta * 2.0 * (mean - epsilon) / n;
    let mut d_probs = vec![reg_grad; probs.len()];
    let pred = match gt_scores {
        Some(gt) => {
            let loss = prediction_loss(probs, gt)?;
            for ((d, p), g) in d_probs.iter_mut().zip(probs).zip(gt) {
                *d += 2.0 * (p - g) / n;
            }
            Some(loss)
        }
        None => None,
    };
    Ok(DifferentiableLoss {
        pred,
        reg,
        value: pred.unwrap_or(0.0) + beta * reg,
        d_probs,
    })
}

/// Sampled selections and their rewards.
#[derive(Clone, Debug)]
pub struct Rollouts {
    pub actions: Vec<ActionSequence>,
    pub rewards: Vec<f64>,
}

impl Rollouts {
    pub fn sample<R, F>(probs: &ImportanceScores, episodes: usize, rng: &mut R, mut reward: F) -> Result<Self>
    where
        R: Rng + ?Sized,
        F: FnMut(&ActionSequence) -> Result<f64>,
    {
        let mut actions = Vec::with_capacity(episodes);
        let mut rewards = Vec::with_capacity(episodes);
        for _ in 0..episodes {
            let a = sample_actions_with(probs, rng);
            rewards.push(reward(&a)?);
            actions.push(a);
        }
        Ok(Rollouts { actions, rewards })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }

    /// REINFORCE estimate of `dJ/dp_t`:
    /// `mean_e (R_e - b) * (a_t / p_t - (1 - a_t) / (1 - p_t))`.
    pub fn prob_gradient(&self, probs: &[f64], baseline: f64) -> Vec<f64> {
        self.accumulate(probs.len(), baseline, |t, a| {
            let p = probs[t];
            if a {
                1.0 / p
            } else {
                -1.0 / (1.0 - p)
            }
        })
    }

    /// Same estimate w.r.t. the logits of `p_t = sigmoid(z_t)`:
    /// `mean_e (R_e - b) * (a_t - p_t)`.
    pub fn logit_gradient(&self, probs: &[f64], baseline: f64) -> Vec<f64> {
        self.accumulate(probs.len(), baseline, |t, a| f64::from(u8::from(a)) - probs[t])
    }

    fn accumulate(&self, n: usize, baseline: f64, score: impl Fn(usize, bool) -> f64) -> Vec<f64> {
        let mut grad = vec![0.0; n];
        let episodes = self.rewards.len() as f64;
        for (a, &r) in self.actions.iter().zip(&self.rewards) {
            let adv = (r - baseline) / episodes;
            if adv == 0.0 {
                continue;
            }
            for (t, (g, &act)) in grad.iter_mut().zip(&a.actions).enumerate() {
                *g += adv * score(t, act);
            }
        }
        grad
    }
}

#[derive(Clone, Debug)]
pub struct PolicyGradient {
    /// Ascent direction for the expected reward.
    pub grad: ScorerParams,
    pub mean_reward: f64,
    pub episode_rewards: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_policy_gradient<R: Rng + ?Sized>(
    params: &ScorerParams,
    features: &FrameFeatureSequence,
    evidence: &PlaneEvidence,
    flags: RewardFlags,
    episodes: usize,
    baseline: f64,
    rng: &mut R,
) -> Result<PolicyGradient> {
    if episodes == 0 {
        return Err(Error::invalid("episodes", "need at least one episode"));
    }
    let ctx = RewardContext::new(features, evidence)?;
    let pass = params.forward(features.to_f64())?;
    let probs = ImportanceScores::new(pass.probs.clone())?;
    let rollouts = Rollouts::sample(&probs, episodes, rng, |a| Ok(ctx.evaluate(a, flags)?.total))?;
    let d_logits = rollouts.logit_gradient(&pass.probs, baseline);
    let grad = params.backward(&pass, &d_logits)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite("policy gradient".to_string()));
    }
    Ok(PolicyGradient {
        grad,
        mean_reward: rollouts.mean_reward(),
        episode_rewards: rollouts.rewards,
    })
}

/// SGD with momentum and L2 weight decay.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    pub weight_decay: f64,
    pub buffer: ScorerParams,
}

impl SgdMomentum {
    pub fn new(like: &ScorerParams, momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum,
            weight_decay,
            buffer: like.zeros_like(),
        }
    }

    /// `v <- mu * v + (g + wd * p)`, `p <- p - lr * v`.
    pub fn step(&mut self, params: &mut ScorerParams, grad: &ScorerParams, lr: f64) {
        for ((p, &g), v) in params.iter_mut().zip(grad.iter()).zip(self.buffer.iter_mut()) {
            *v = self.momentum * *v + (g + self.weight_decay * *p);
            *p -= lr * *v;
        }
    }
}

pub struct TrainState {
    pub params: ScorerParams,
    pub optimizer: SgdMomentum,
    pub epoch: usize,
    pub baselines: BTreeMap<String, f64>,
    pub rng: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub lr: f64,
    pub mean_reward: f64,
    pub mean_rep: f64,
    pub mean_div: f64,
    pub mean_det: f64,
    /// Supervised mode only.
    pub mean_pred_loss: Option<f64>,
    pub mean_reg_loss: f64,
}

struct PreparedVideo {
    id: String,
    input: Array2<f64>,
    rewards: RewardContext,
    gt_scores: Option<Vec<f64>>,
}

fn prepare(dataset: &Dataset, config: &TrainConfig, kts: &KtsConfig) -> Result<Vec<PreparedVideo>> {
    dataset
        .videos
        .iter()
        .map(|v| {
            let gt_scores = match config.mode {
                TrainMode::Unsupervised => None,
                TrainMode::Supervised => {
                    let keyframes = v
                        .keyframes
                        .as_ref()
                        .ok_or_else(|| Error::MissingGroundTruth(v.id().to_string()))?;
                    let seg = kts_segment(&v.features, kts);
                    let gt = GroundTruthAnnotation::derive(keyframes, &seg)?;
                    Some(gt.frame_scores.iter().map(|&s| f64::from(s)).collect())
                }
            };
            Ok(PreparedVideo {
                id: v.id().to_string(),
                input: v.features.to_f64(),
                rewards: RewardContext::new(&v.features, &v.evidence)?,
                gt_scores,
            })
        })
        .collect()
}

impl TrainState {
    pub fn new(dim: usize, config: &TrainConfig) -> Self {
        let params = ScorerParams::new(dim, config.hidden_size, derive_seed(config.seed, INIT_STREAM));
        let optimizer = SgdMomentum::new(&params, config.momentum, config.weight_decay);
        TrainState {
            params,
            optimizer,
            epoch: 0,
            baselines: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        }
    }
}

#[derive(Default)]
struct StepStats {
    reward: RewardBreakdown,
    pred: Option<f64>,
    reg: f64,
}

fn train_step(
    state: &mut TrainState,
    video: &PreparedVideo,
    config: &TrainConfig,
    lr: f64,
) -> Result<StepStats> {
    let pass = state.params.forward(video.input.clone())?;
    let probs = ImportanceScores::new(pass.probs.clone())?;
    let loss = differentiable_loss(&pass.probs, video.gt_scores.as_deref(), config.beta, config.epsilon)?;

    let mut breakdowns = Vec::with_capacity(config.episodes);
    let rollouts = Rollouts::sample(&probs, config.episodes, &mut state.rng, |a| {
        let r = video.rewards.evaluate(a, config.rewards)?;
        breakdowns.push(r);
        Ok(r.total)
    })?;
    let baseline = state.baselines.get(&video.id).copied().unwrap_or(0.0);
    let pg = rollouts.logit_gradient(&pass.probs, baseline);

    let d_logits: Vec<f64> = loss
        .d_probs
        .iter()
        .zip(&pass.probs)
        .zip(&pg)
        .map(|((d, p), g)| d * p * (1.0 - p) - config.gamma * g)
        .collect();
    let grad = state.params.backward(&pass, &d_logits)?;
    state.optimizer.step(&mut state.params, &grad, lr);

    let mean_reward = rollouts.mean_reward();
    state.baselines.insert(
        video.id.clone(),
        BASELINE_MOMENTUM * baseline + (1.0 - BASELINE_MOMENTUM) * mean_reward,
    );

    let e = breakdowns.len() as f64;
    let mean = |f: fn(&RewardBreakdown) -> f64| breakdowns.iter().map(f).sum::<f64>() / e;
    Ok(StepStats {
        reward: RewardBreakdown {
            rep: mean(|r| r.rep),
            div: mean(|r| r.div),
            det: mean(|r| r.det),
            total: mean_reward,
        },
        pred: loss.pred,
        reg: loss.reg,
    })
}

/// Trains a fresh scorer. Supervised targets come from each video's
/// keyframes on its default KTS segmentation.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<(TrainState, Vec<EpochReport>)> {
    train_with(dataset, config, &KtsConfig::default(), |_| {})
}

/// [`train`] with an explicit segmentation config and a per-epoch callback.
pub fn train_with(
    dataset: &Dataset,
    config: &TrainConfig,
    kts: &KtsConfig,
    mut on_epoch: impl FnMut(&EpochReport),
) -> Result<(TrainState, Vec<EpochReport>)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset", "no training videos"));
    }
    let videos = prepare(dataset, config, kts)?;
    let mut state = TrainState::new(dataset.dim, config);
    let mut reports = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..videos.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut state.rng);
        let mut sums = [0.0f64; 6];
        for &i in &order {
            let stats = train_step(&mut state, &videos[i], config, lr).map_err(|e| match e {
                Error::NonFinite(reason) => Error::Diverged { epoch, reason },
                other => other,
            })?;
            let loss = stats.pred.unwrap_or(0.0) + config.beta * stats.reg - config.gamma * stats.reward.total;
            if !loss.is_finite() || !state.params.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("non-finite loss or parameters after video {}", videos[i].id),
                });
            }
            for (s, v) in sums.iter_mut().zip([
                stats.reward.total,
                stats.reward.rep,
                stats.reward.div,
                stats.reward.det,
                stats.pred.unwrap_or(0.0),
                stats.reg,
            ]) {
                *s += v;
            }
        }
        let n = videos.len() as f64;
        let report = EpochReport {
            epoch,
            lr,
            mean_reward: sums[0] / n,
            mean_rep: sums[1] / n,
            mean_div: sums[2] / n,
            mean_det: sums[3] / n,
            mean_pred_loss: (config.mode == TrainMode::Supervised).then_some(sums[4] / n),
            mean_reg_loss: sums[5] / n,
        };
        on_epoch(&report);
        reports.push(report);
        state.epoch = epoch + 1;
    }
    Ok((state, reports))
}
