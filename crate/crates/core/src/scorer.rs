//! Bidirectional LSTM frame scorer.
//!
//! Each frame's selection probability is a sigmoid over an affine map of
//! the concatenation `[x_t, h_t^fwd, h_t^bwd]`. Both recurrent passes start
//! from a zero state. Gradients are computed by explicit backpropagation
//! through time; the encoder features are inputs, never trained.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::datamodel::{ActionSequence, FrameFeatureSequence, ImportanceScores, TrainConfig};
use crate::error::{Error, Result};

/// Clamp applied to probabilities before taking logs.
pub const LOG_PROB_CLAMP: f64 = 1e-7;

#[inline]
pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// One LSTM direction. Gate blocks are stacked as input, forget, cell,
/// output along the first axis of `w_ih`, `w_hh` and `bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Activations recorded during a forward pass, indexed by frame.
#[derive(Clone, Debug)]
pub struct LstmTrace {
    /// Post-activation gates `[i, f, g, o]`, shape `T × 4H`.
    gates: Array2<f64>,
    cell: Array2<f64>,
    pub hidden: Array2<f64>,
}

impl LstmCell {
    fn zeros(input: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Array2::zeros((4 * hidden, input)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    fn random(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("valid bounds");
        LstmCell {
            w_ih: Array2::from_shape_simple_fn((4 * hidden, input), || dist.sample(rng)),
            w_hh: Array2::from_shape_simple_fn((4 * hidden, hidden), || dist.sample(rng)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.ncols()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.ncols()
    }

    fn step_index(n: usize, step: usize, reverse: bool) -> usize {
        if reverse {
            n - 1 - step
        } else {
            step
        }
    }

    pub fn run(&self, x: &ArrayView2<'_, f64>, reverse: bool) -> LstmTrace {
        let n = x.nrows();
        let h = self.hidden_size();
        let mut gates = x.dot(&self.w_ih.t()) + &self.bias;
        let mut cell = Array2::<f64>::zeros((n, h));
        let mut hidden = Array2::<f64>::zeros((n, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);

        for step in 0..n {
            let t = Self::step_index(n, step, reverse);
            let rec = self.w_hh.dot(&h_prev);
            let mut g = gates.row_mut(t);
            g += &rec;
            for k in 0..h {
                let i = sigmoid(g[k]);
                let f = sigmoid(g[h + k]);
                let c_hat = g[2 * h + k].tanh();
                let o = sigmoid(g[3 * h + k]);
                g[k] = i;
                g[h + k] = f;
                g[2 * h + k] = c_hat;
                g[3 * h + k] = o;
                let c = f * c_prev[k] + i * c_hat;
                c_prev[k] = c;
                h_prev[k] = o * c.tanh();
            }
            cell.row_mut(t).assign(&c_prev);
            hidden.row_mut(t).assign(&h_prev);
        }
        LstmTrace {
            gates,
            cell,
            hidden,
        }
    }

    /// Parameter gradients given the loss gradient w.r.t. every hidden
    /// state produced by [`run`](Self::run).
    pub fn backprop(
        &self,
        x: &ArrayView2<'_, f64>,
        trace: &LstmTrace,
        d_hidden: &ArrayView2<'_, f64>,
        reverse: bool,
    ) -> LstmCell {
        let n = x.nrows();
        let h = self.hidden_size();
        let mut d_pre = Array2::<f64>::zeros((n, 4 * h));
        let mut h_prev_mat = Array2::<f64>::zeros((n, h));
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);

        for step in (0..n).rev() {
            let t = Self::step_index(n, step, reverse);
            let prev = (step > 0).then(|| Self::step_index(n, step - 1, reverse));
            if let Some(p) = prev {
                h_prev_mat.row_mut(t).assign(&trace.hidden.row(p));
            }
            let g = trace.gates.row(t);
            let c = trace.cell.row(t);
            let dh_ext = d_hidden.row(t);
            let mut dp = d_pre.row_mut(t);
            for k in 0..h {
                let (i, f, c_hat, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let c_prev = prev.map_or(0.0, |p| trace.cell[[p, k]]);
                let tc = c[k].tanh();
                let dh = dh_ext[k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                dc_next[k] = dc * f;
                dp[k] = dc * c_hat * i * (1.0 - i);
                dp[h + k] = dc * c_prev * f * (1.0 - f);
                dp[2 * h + k] = dc * i * (1.0 - c_hat * c_hat);
                dp[3 * h + k] = d_o * o * (1.0 - o);
            }
            dh_next = self.w_hh.t().dot(&d_pre.row(t));
        }

        LstmCell {
            w_ih: d_pre.t().dot(x),
            w_hh: d_pre.t().dot(&h_prev_mat),
            bias: d_pre.sum_axis(Axis(0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerParams {
    pub fwd_cell: LstmCell,
    pub bwd_cell: LstmCell,
    /// Affine head over `[x_t, h_t^fwd, h_t^bwd]`, length `D + 2H`.
    pub head_weight: Array1<f64>,
    pub head_bias: f64,
}

fn cell_iter(c: &LstmCell) -> impl Iterator<Item = &f64> {
    c.w_ih.iter().chain(c.w_hh.iter()).chain(c.bias.iter())
}

fn cell_iter_mut(c: &mut LstmCell) -> impl Iterator<Item = &mut f64> {
    let LstmCell { w_ih, w_hh, bias } = c;
    w_ih.iter_mut().chain(w_hh.iter_mut()).chain(bias.iter_mut())
}

/// Everything a backward pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub input: Array2<f64>,
    pub fwd: LstmTrace,
    pub bwd: LstmTrace,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ScorerParams {
    /// Weights uniform in `[-1/sqrt(H), 1/sqrt(H)]`, biases zero.
    pub fn new(input_size: usize, hidden_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fwd_cell = LstmCell::random(input_size, hidden_size, &mut rng);
        let bwd_cell = LstmCell::random(input_size, hidden_size, &mut rng);
        let k = 1.0 / (hidden_size as f64).sqrt();
        let dist = Uniform::new_inclusive(-k, k).expect("valid bounds");
        let head_weight =
            Array1::from_shape_simple_fn(input_size + 2 * hidden_size, || dist.sample(&mut rng));
        ScorerParams {
            fwd_cell,
            bwd_cell,
            head_weight,
            head_bias: 0.0,
        }
    }

    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        ScorerParams {
            fwd_cell: LstmCell::zeros(input_size, hidden_size),
            bwd_cell: LstmCell::zeros(input_size, hidden_size),
            head_weight: Array1::zeros(input_size + 2 * hidden_size),
            head_bias: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_size(), self.hidden_size())
    }

    pub fn input_size(&self) -> usize {
        self.fwd_cell.input_size()
    }

    pub fn hidden_size(&self) -> usize {
        self.fwd_cell.hidden_size()
    }

    pub fn n_params(&self) -> usize {
        self.iter().count()
    }

    /// All scalars in a fixed order.
    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        cell_iter(&self.fwd_cell)
            .chain(cell_iter(&self.bwd_cell))
            .chain(self.head_weight.iter())
            .chain(std::iter::once(&self.head_bias))
    }

    /// Mutable view of all scalars in the same order as [`iter`](Self::iter).
    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        let ScorerParams {
            fwd_cell,
            bwd_cell,
            head_weight,
            head_bias,
        } = self;
        cell_iter_mut(fwd_cell)
            .chain(cell_iter_mut(bwd_cell))
            .chain(head_weight.iter_mut())
            .chain(std::iter::once(head_bias))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != n {
            return Err(Error::LengthMismatch {
                what: "flat parameters",
                expected: n,
                found: flat.len(),
            });
        }
        for (p, &v) in self.iter_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    /// Parameters that score the time-reversed sequence exactly as `self`
    /// scores the original one, reversed.
    pub fn with_swapped_directions(&self) -> Self {
        let d = self.input_size();
        let h = self.hidden_size();
        let mut head_weight = self.head_weight.clone();
        head_weight
            .slice_mut(s![d..d + h])
            .assign(&self.head_weight.slice(s![d + h..]));
        head_weight
            .slice_mut(s![d + h..])
            .assign(&self.head_weight.slice(s![d..d + h]));
        ScorerParams {
            fwd_cell: self.bwd_cell.clone(),
            bwd_cell: self.fwd_cell.clone(),
            head_weight,
            head_bias: self.head_bias,
        }
    }

    pub fn forward(&self, input: Array2<f64>) -> Result<ForwardPass> {
        if input.ncols() != self.input_size() {
            return Err(Error::DimensionMismatch {
                expected: self.input_size(),
                found: input.ncols(),
            });
        }
        let d = self.input_size();
        let h = self.hidden_size();
        let x = input.view();
        let fwd = self.fwd_cell.run(&x, false);
        let bwd = self.bwd_cell.run(&x, true);
        let w_x = self.head_weight.slice(s![..d]);
        let w_f = self.head_weight.slice(s![d..d + h]);
        let w_b = self.head_weight.slice(s![d + h..]);
        let logits: Vec<f64> = (x.dot(&w_x) + fwd.hidden.dot(&w_f) + bwd.hidden.dot(&w_b))
            .iter()
            .map(|z| z + self.head_bias)
            .collect();
        if let Some(t) = logits.iter().position(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("scorer logit at frame {t}")));
        }
        let probs = logits
            .iter()
            .map(|&z| sigmoid(z).clamp(f64::EPSILON, 1.0 - f64::EPSILON))
            .collect();
        Ok(ForwardPass {
            input,
            fwd,
            bwd,
            logits,
            probs,
        })
    }

    /// Gradient of a loss w.r.t. every parameter, given `d_logits[t]`, the
    /// loss gradient w.r.t. the pre-sigmoid output of frame `t`.
    pub fn backward(&self, pass: &ForwardPass, d_logits: &[f64]) -> Result<ScorerParams> {
        let n = pass.input.nrows();
        if d_logits.len() != n {
            return Err(Error::LengthMismatch {
                what: "logit gradient",
                expected: n,
                found: d_logits.len(),
            });
        }
        let d = self.input_size();
        let h = self.hidden_size();
        let dz = Array1::from(d_logits.to_vec());
        let x = pass.input.view();

        let mut head_weight = Array1::<f64>::zeros(d + 2 * h);
        head_weight.slice_mut(s![..d]).assign(&x.t().dot(&dz));
        head_weight
            .slice_mut(s![d..d + h])
            .assign(&pass.fwd.hidden.t().dot(&dz));
        head_weight
            .slice_mut(s![d + h..])
            .assign(&pass.bwd.hidden.t().dot(&dz));

        let dz_col = dz.view().insert_axis(Axis(1));
        let d_hf = &dz_col * &self.head_weight.slice(s![d..d + h]);
        let d_hb = &dz_col * &self.head_weight.slice(s![d + h..]);

        Ok(ScorerParams {
            fwd_cell: self.fwd_cell.backprop(&x, &pass.fwd, &d_hf.view(), false),
            bwd_cell: self.bwd_cell.backprop(&x, &pass.bwd, &d_hb.view(), true),
            head_weight,
            head_bias: dz.sum(),
        })
    }

    /// Backward pass from gradients w.r.t. the probabilities.
    pub fn backward_from_probs(&self, pass: &ForwardPass, d_probs: &[f64]) -> Result<ScorerParams> {
        let d_logits: Vec<f64> = d_probs
            .iter()
            .zip(&pass.probs)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();
        self.backward(pass, &d_logits)
    }
}

pub fn score_frames(params: &ScorerParams, features: &FrameFeatureSequence) -> Result<ImportanceScores> {
    let pass = params.forward(features.to_f64())?;
    ImportanceScores::new(pass.probs)
}

/// Draws `a_t ~ Bernoulli(p_t)` independently from `rng`.
pub fn sample_actions_with<R: Rng + ?Sized>(probs: &ImportanceScores, rng: &mut R) -> ActionSequence {
    ActionSequence::new(probs.probs.iter().map(|&p| rng.random::<f64>() < p).collect())
}

pub fn sample_actions(probs: &ImportanceScores, seed: u64) -> ActionSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_actions_with(probs, &mut rng)
}

/// Log-probability of an action sequence under independent Bernoulli
/// selection with per-frame probabilities `probs`.
pub fn log_prob_of_actions(probs: &ImportanceScores, actions: &ActionSequence) -> Result<f64> {
    if probs.len() != actions.len() {
        return Err(Error::LengthMismatch {
            what: "actions",
            expected: probs.len(),
            found: actions.len(),
        });
    }
    Ok(probs
        .probs
        .iter()
        .zip(&actions.actions)
        .map(|(&p, &a)| {
            let p = p.clamp(LOG_PROB_CLAMP, 1.0 - LOG_PROB_CLAMP);
            if a {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum())
}

/// Trained parameters plus the configuration that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub epoch: usize,
    pub params: ScorerParams,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        if !ckpt.params.is_finite() {
            return Err(Error::NonFinite(format!("checkpoint {}", path.display())));
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::StandardNormal;

    fn random_input(t: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((t, d), || StandardNormal.sample(&mut rng))
    }

    fn seq(x: &Array2<f64>) -> FrameFeatureSequence {
        FrameFeatureSequence::new("v", x.mapv(|v| v as f32), 30.0).unwrap()
    }

    #[test]
    fn outputs_are_open_unit_interval() {
        let params = ScorerParams::new(5, 7, 1);
        let scores = score_frames(&params, &seq(&random_input(20, 5, 2))).unwrap();
        assert_eq!(scores.len(), 20);
        assert!(scores.probs.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn zero_params_give_one_half() {
        let params = ScorerParams::zeros(4, 3);
        let scores = score_frames(&params, &seq(&random_input(9, 4, 3))).unwrap();
        assert!(scores.probs.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn reversed_sequence_with_swapped_cells_reverses_scores() {
        let params = ScorerParams::new(4, 6, 11);
        let x = random_input(12, 4, 5);
        let mut x_rev = x.clone();
        x_rev.invert_axis(Axis(0));
        let p = params.forward(x).unwrap().probs;
        let p_rev = params.with_swapped_directions().forward(x_rev).unwrap().probs;
        for (a, b) in p.iter().zip(p_rev.iter().rev()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn frame_order_matters() {
        let params = ScorerParams::new(3, 4, 2);
        let x = random_input(6, 3, 9);
        let mut shuffled = x.clone();
        for (dst, src) in [0usize, 1, 2, 3, 4, 5].iter().zip([3usize, 0, 5, 1, 4, 2]) {
            shuffled.row_mut(*dst).assign(&x.row(src));
        }
        let a = params.forward(x).unwrap().probs;
        let b = params.forward(shuffled).unwrap().probs;
        let permuted: Vec<f64> = [3usize, 0, 5, 1, 4, 2].iter().map(|&i| a[i]).collect();
        assert!(permuted.iter().zip(&b).any(|(u, v)| (u - v).abs() > 1e-9));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let params = ScorerParams::new(3, 4, 0);
        assert!(matches!(
            params.forward(random_input(5, 4, 0)),
            Err(Error::DimensionMismatch { expected: 3, found: 4 })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (t, d, h) = (7, 3, 4);
        let params = ScorerParams::new(d, h, 21);
        let x = random_input(t, d, 22);
        let weights: Vec<f64> = (0..t).map(|i| 0.3 + 0.2 * i as f64).collect();
        let loss = |p: &ScorerParams| -> f64 {
            let probs = p.forward(x.clone()).unwrap().probs;
            probs.iter().zip(&weights).map(|(p, w)| w * p * p).sum()
        };
        let pass = params.forward(x.clone()).unwrap();
        let d_probs: Vec<f64> = pass.probs.iter().zip(&weights).map(|(p, w)| 2.0 * w * p).collect();
        let grad = params.backward_from_probs(&pass, &d_probs).unwrap().to_flat();

        let base = params.to_flat();
        let step = 1e-5;
        for (k, &g) in grad.iter().enumerate() {
            let mut plus = params.clone();
            let mut minus = params.clone();
            let mut v = base.clone();
            v[k] += step;
            plus.set_flat(&v).unwrap();
            v[k] -= 2.0 * step;
            minus.set_flat(&v).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-8);
            assert!(err < 1e-3 || (fd - g).abs() < 1e-9, "param {k}: fd {fd} vs analytic {g}");
        }
    }

    #[test]
    fn degenerate_bernoulli_sampling() {
        let ones = ImportanceScores::new(vec![1.0 - 1e-9; 50]).unwrap();
        assert_eq!(sample_actions(&ones, 3).count(), 50);
        let zeros = ImportanceScores::new(vec![1e-9; 50]).unwrap();
        assert_eq!(sample_actions(&zeros, 3).count(), 0);
    }

    #[test]
    fn sampling_is_seeded() {
        let p = ImportanceScores::new(vec![0.5; 100]).unwrap();
        assert_eq!(sample_actions(&p, 42), sample_actions(&p, 42));
        assert_ne!(sample_actions(&p, 42), sample_actions(&p, 43));
    }

    #[test]
    fn fair_coin_selection_rate() {
        let p = ImportanceScores::new(vec![0.5; 10_000]).unwrap();
        let rate = sample_actions(&p, 17).count() as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&rate), "rate {rate}");
    }

    #[test]
    fn log_prob_uniform_and_near_deterministic() {
        let p = ImportanceScores::new(vec![0.5; 4]).unwrap();
        let a = ActionSequence::new(vec![true, false, false, true]);
        assert_relative_eq!(log_prob_of_actions(&p, &a).unwrap(), 4.0 * 0.5f64.ln(), epsilon = 1e-15);

        let p = ImportanceScores::new(vec![1e-9, 1.0 - 1e-9, 1e-9]).unwrap();
        let a = ActionSequence::new(vec![false, true, false]);
        assert!(log_prob_of_actions(&p, &a).unwrap().abs() < 1e-6);
    }

    #[test]
    fn log_prob_matches_pmf_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let probs: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..0.99)).collect();
            let acts: Vec<bool> = (0..6).map(|_| rng.random()).collect();
            let pmf: f64 = probs
                .iter()
                .zip(&acts)
                .map(|(&p, &a)| if a { p } else { 1.0 - p })
                .product();
            let lp = log_prob_of_actions(
                &ImportanceScores::new(probs).unwrap(),
                &ActionSequence::new(acts),
            )
            .unwrap();
            assert_relative_eq!(lp, pmf.ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn log_prob_length_mismatch() {
        let p = ImportanceScores::new(vec![0.5; 3]).unwrap();
        assert!(log_prob_of_actions(&p, &ActionSequence::new(vec![true])).is_err());
    }

    #[test]
    fn checkpoint_round_trip_preserves_scores() {
        let dir = tempfile::tempdir().unwrap();
        let params = ScorerParams::new(4, 5, 8);
        let ckpt = Checkpoint {
            config: TrainConfig::default(),
            epoch: 3,
            params,
        };
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let x = seq(&random_input(10, 4, 1));
        assert_eq!(
            score_frames(&back.params, &x).unwrap(),
            score_frames(&ckpt.params, &x).unwrap()
        );
    }

    #[test]
    fn flat_round_trip() {
        let params = ScorerParams::new(3, 2, 1);
        let n = params.n_params();
        assert_eq!(n, 2 * (4 * 2 * 3 + 4 * 2 * 2 + 4 * 2) + 3 + 4 + 1);
        let mut other = params.zeros_like();
        other.set_flat(&params.to_flat()).unwrap();
        assert_eq!(other, params);
    }
}
