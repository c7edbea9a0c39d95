//! Per-foundation binary classifiers.
//!
//! The main model runs an LSTM over the tweet's token embeddings, passes
//! the last hidden state through a dense layer, transforms the optional
//! background-knowledge and dictionary vectors through their own dense
//! layers, concatenates everything, and classifies with a two-way softmax.
//! Dropout applies to the embedding, LSTM, and dense outputs; L2
//! regularization to the softmax weights only. Training is plain seeded
//! SGD and bit-reproducible. A logistic-regression baseline over mean
//! embeddings shares the same contracts.

mod logreg;
mod math;

pub use logreg::{train_logreg_baseline, LogRegModel};
pub use math::Mat;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{derive_non_moral, Foundation, LabelClass, LabelSet};
use math::{add_scaled_vec, sigmoid, softmax2};

const PROB_CLAMP: f64 = 1e-12;
const INIT_RANGE: f64 = 0.08;
const MODEL_MAGIC: &str = "mft-model v1";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("degenerate labels: training set has a single class")]
    DegenerateLabels,
    #[error("missing feature vector for enabled flag {flag}")]
    MissingFeature { flag: &'static str },
    #[error("missing model for {foundation}")]
    MissingModel { foundation: &'static str },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which auxiliary feature vectors the classifier consumes. The embedding
/// path is always on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFlags {
    pub bk: bool,
    pub mfd: bool,
}

impl FeatureFlags {
    pub fn label(&self) -> &'static str {
        match (self.bk, self.mfd) {
            (false, false) => "E",
            (true, false) => "E+BK",
            (true, true) => "E+BK+MFD",
            (false, true) => "E+MFD",
        }
    }
}

/// Training hyperparameters. All values are artifact defaults and config
/// keys, not constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_embed: f64,
    pub dropout_lstm: f64,
    pub dropout_fc: f64,
    pub l2_lambda: f64,
    pub seed: u64,
    pub features: FeatureFlags,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            hidden_dim: 64,
            head_dim: 32,
            learning_rate: 0.05,
            epochs: 20,
            dropout_embed: 0.2,
            dropout_lstm: 0.2,
            dropout_fc: 0.2,
            l2_lambda: 1e-4,
            seed: 42,
            features: FeatureFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, rate) in [
            ("dropout_embed", self.dropout_embed),
            ("dropout_lstm", self.dropout_lstm),
            ("dropout_fc", self.dropout_fc),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(ModelError::InvalidConfig(format!(
                    "{name} must be in [0, 1), got {rate}"
                )));
            }
        }
        if self.l2_lambda < 0.0 {
            return Err(ModelError::InvalidConfig(format!(
                "l2_lambda must be >= 0, got {}",
                self.l2_lambda
            )));
        }
        if self.hidden_dim == 0 || self.head_dim == 0 {
            return Err(ModelError::InvalidConfig(
                "hidden_dim and head_dim must be positive".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(ModelError::InvalidConfig("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gate weights and biases for a single LSTM layer. Each weight matrix is
/// `hidden_dim x (input_dim + hidden_dim)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_input: Mat,
    pub w_forget: Mat,
    pub w_output: Mat,
    pub w_cell: Mat,
    pub b_input: Vec<f64>,
    pub b_forget: Vec<f64>,
    pub b_output: Vec<f64>,
    pub b_cell: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> LstmParams {
        let width = input_dim + hidden_dim;
        LstmParams {
            input_dim,
            hidden_dim,
            w_input: Mat::zeros(hidden_dim, width),
            w_forget: Mat::zeros(hidden_dim, width),
            w_output: Mat::zeros(hidden_dim, width),
            w_cell: Mat::zeros(hidden_dim, width),
            b_input: vec![0.0; hidden_dim],
            b_forget: vec![0.0; hidden_dim],
            b_output: vec![0.0; hidden_dim],
            b_cell: vec![0.0; hidden_dim],
        }
    }
}

/// One dense layer: `weight` is `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(out: usize, input: usize) -> DenseParams {
        DenseParams {
            weight: Mat::zeros(out, input),
            bias: vec![0.0; out],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Full parameter set of one classifier. Doubles as the gradient
/// container since gradients share every shape.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub lstm: LstmParams,
    pub tweet_head: DenseParams,
    pub bk_head: Option<DenseParams>,
    pub mfd_head: Option<DenseParams>,
    pub softmax: DenseParams,
}

/// Input/output widths of one classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub head_dim: usize,
    pub bk_dim: Option<usize>,
    pub mfd_dim: Option<usize>,
}

impl ModelDims {
    fn concat_width(&self) -> usize {
        let mut w = self.head_dim;
        if self.bk_dim.is_some() {
            w += self.head_dim;
        }
        if self.mfd_dim.is_some() {
            w += self.head_dim;
        }
        w
    }
}

impl ClassifierParams {
    pub fn zeros(dims: ModelDims) -> ClassifierParams {
        ClassifierParams {
            lstm: LstmParams::zeros(dims.input_dim, dims.hidden_dim),
            tweet_head: DenseParams::zeros(dims.head_dim, dims.hidden_dim),
            bk_head: dims.bk_dim.map(|d| DenseParams::zeros(dims.head_dim, d)),
            mfd_head: dims.mfd_dim.map(|d| DenseParams::zeros(dims.head_dim, d)),
            softmax: DenseParams::zeros(2, dims.concat_width()),
        }
    }

    pub fn init(dims: ModelDims, rng: &mut ChaCha8Rng) -> ClassifierParams {
        let mut params = Self::zeros(dims);
        for (_, tensor) in params.tensors_mut() {
            for v in tensor {
                *v = rng.gen_range(-INIT_RANGE..INIT_RANGE);
            }
        }
        params
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input_dim: self.lstm.input_dim,
            hidden_dim: self.lstm.hidden_dim,
            head_dim: self.tweet_head.out_dim(),
            bk_dim: self.bk_head.as_ref().map(DenseParams::in_dim),
            mfd_dim: self.mfd_head.as_ref().map(DenseParams::in_dim),
        }
    }

    /// Named flat views over every parameter tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("lstm.w_input", self.lstm.w_input.as_slice()),
            ("lstm.w_forget", self.lstm.w_forget.as_slice()),
            ("lstm.w_output", self.lstm.w_output.as_slice()),
            ("lstm.w_cell", self.lstm.w_cell.as_slice()),
            ("lstm.b_input", &self.lstm.b_input),
            ("lstm.b_forget", &self.lstm.b_forget),
            ("lstm.b_output", &self.lstm.b_output),
            ("lstm.b_cell", &self.lstm.b_cell),
            ("tweet_head.weight", self.tweet_head.weight.as_slice()),
            ("tweet_head.bias", &self.tweet_head.bias),
        ];
        if let Some(head) = &self.bk_head {
            out.push(("bk_head.weight", head.weight.as_slice()));
            out.push(("bk_head.bias", &head.bias));
        }
        if let Some(head) = &self.mfd_head {
            out.push(("mfd_head.weight", head.weight.as_slice()));
            out.push(("mfd_head.bias", &head.bias));
        }
        out.push(("softmax.weight", self.softmax.weight.as_slice()));
        out.push(("softmax.bias", &self.softmax.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("lstm.w_input", self.lstm.w_input.as_mut_slice()),
            ("lstm.w_forget", self.lstm.w_forget.as_mut_slice()),
            ("lstm.w_output", self.lstm.w_output.as_mut_slice()),
            ("lstm.w_cell", self.lstm.w_cell.as_mut_slice()),
            ("lstm.b_input", &mut self.lstm.b_input),
            ("lstm.b_forget", &mut self.lstm.b_forget),
            ("lstm.b_output", &mut self.lstm.b_output),
            ("lstm.b_cell", &mut self.lstm.b_cell),
            ("tweet_head.weight", self.tweet_head.weight.as_mut_slice()),
            ("tweet_head.bias", &mut self.tweet_head.bias),
        ];
        if let Some(head) = &mut self.bk_head {
            out.push(("bk_head.weight", head.weight.as_mut_slice()));
            out.push(("bk_head.bias", &mut head.bias));
        }
        if let Some(head) = &mut self.mfd_head {
            out.push(("mfd_head.weight", head.weight.as_mut_slice()));
            out.push(("mfd_head.bias", &mut head.bias));
        }
        out.push(("softmax.weight", self.softmax.weight.as_mut_slice()));
        out.push(("softmax.bias", &mut self.softmax.bias));
        out
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ClassifierParams, scale: f64) {
        self.lstm.w_input.add_scaled(&other.lstm.w_input, scale);
        self.lstm.w_forget.add_scaled(&other.lstm.w_forget, scale);
        self.lstm.w_output.add_scaled(&other.lstm.w_output, scale);
        self.lstm.w_cell.add_scaled(&other.lstm.w_cell, scale);
        add_scaled_vec(&mut self.lstm.b_input, &other.lstm.b_input, scale);
        add_scaled_vec(&mut self.lstm.b_forget, &other.lstm.b_forget, scale);
        add_scaled_vec(&mut self.lstm.b_output, &other.lstm.b_output, scale);
        add_scaled_vec(&mut self.lstm.b_cell, &other.lstm.b_cell, scale);
        self.tweet_head
            .weight
            .add_scaled(&other.tweet_head.weight, scale);
        add_scaled_vec(&mut self.tweet_head.bias, &other.tweet_head.bias, scale);
        if let (Some(a), Some(b)) = (&mut self.bk_head, &other.bk_head) {
            a.weight.add_scaled(&b.weight, scale);
            add_scaled_vec(&mut a.bias, &b.bias, scale);
        }
        if let (Some(a), Some(b)) = (&mut self.mfd_head, &other.mfd_head) {
            a.weight.add_scaled(&b.weight, scale);
            add_scaled_vec(&mut a.bias, &b.bias, scale);
        }
        self.softmax.weight.add_scaled(&other.softmax.weight, scale);
        add_scaled_vec(&mut self.softmax.bias, &other.softmax.bias, scale);
    }
}

/// A trained classifier for one class, carrying the config it was trained
/// with.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierModel {
    pub class: LabelClass,
    pub params: ClassifierParams,
    pub config: TrainConfig,
}

/// The feature vectors of one example. `bk`/`mfd` must be present exactly
/// when the model has the matching head.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRow {
    pub tweet: Vec<Vec<f64>>,
    pub bk: Option<Vec<f64>>,
    pub mfd: Option<Vec<f64>>,
}

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: FeatureRow,
    pub label: bool,
}

/// Inverted-dropout multipliers for one example: 0 where dropped,
/// `1/(1-rate)` elsewhere. Evaluation uses all-ones masks, which is a
/// bitwise no-op.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub embed: Vec<Vec<f64>>,
    pub lstm: Vec<f64>,
    pub fc_tweet: Vec<f64>,
    pub fc_bk: Option<Vec<f64>>,
    pub fc_mfd: Option<Vec<f64>>,
}

impl DropoutMasks {
    /// All-ones masks (evaluation mode).
    pub fn ones(row: &FeatureRow, dims: ModelDims) -> DropoutMasks {
        DropoutMasks {
            embed: row.tweet.iter().map(|v| vec![1.0; v.len()]).collect(),
            lstm: vec![1.0; dims.hidden_dim],
            fc_tweet: vec![1.0; dims.head_dim],
            fc_bk: dims.bk_dim.map(|_| vec![1.0; dims.head_dim]),
            fc_mfd: dims.mfd_dim.map(|_| vec![1.0; dims.head_dim]),
        }
    }

    /// Sample Bernoulli masks with the config's rates.
    pub fn sample(
        row: &FeatureRow,
        dims: ModelDims,
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> DropoutMasks {
        let mut draw = |len: usize, rate: f64| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if rate > 0.0 && rng.gen::<f64>() < rate {
                        0.0
                    } else {
                        1.0 / (1.0 - rate)
                    }
                })
                .collect()
        };
        DropoutMasks {
            embed: row
                .tweet
                .iter()
                .map(|v| draw(v.len(), cfg.dropout_embed))
                .collect(),
            lstm: draw(dims.hidden_dim, cfg.dropout_lstm),
            fc_tweet: draw(dims.head_dim, cfg.dropout_fc),
            fc_bk: dims.bk_dim.map(|_| draw(dims.head_dim, cfg.dropout_fc)),
            fc_mfd: dims.mfd_dim.map(|_| draw(dims.head_dim, cfg.dropout_fc)),
        }
    }
}

struct LstmStepCache {
    z: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_o: Vec<f64>,
    gate_g: Vec<f64>,
    cell: Vec<f64>,
    tanh_cell: Vec<f64>,
}

struct HeadCache {
    input: Vec<f64>,
    act: Vec<f64>,
    dropped: Vec<f64>,
}

struct ForwardCache {
    steps: Vec<LstmStepCache>,
    tweet: HeadCache,
    bk: Option<HeadCache>,
    mfd: Option<HeadCache>,
    concat: Vec<f64>,
    probs: [f64; 2],
}

/// Standard LSTM recurrence from a zero initial state; returns the final
/// hidden state.
pub fn lstm_forward(seq: &[Vec<f64>], p: &LstmParams) -> Result<Vec<f64>, ModelError> {
    if seq.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let mut h = vec![0.0; p.hidden_dim];
    let mut c = vec![0.0; p.hidden_dim];
    for x in seq {
        let (_, new_h, new_c) = lstm_step(x, &h, &c, p);
        h = new_h;
        c = new_c;
    }
    Ok(h)
}

fn lstm_step(
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmParams,
) -> (LstmStepCache, Vec<f64>, Vec<f64>) {
    let mut z = Vec::with_capacity(p.input_dim + p.hidden_dim);
    z.extend_from_slice(x);
    z.extend_from_slice(h_prev);
    let mut gate_i = p.w_input.matvec(&z);
    let mut gate_f = p.w_forget.matvec(&z);
    let mut gate_o = p.w_output.matvec(&z);
    let mut gate_g = p.w_cell.matvec(&z);
    for k in 0..p.hidden_dim {
        gate_i[k] = sigmoid(gate_i[k] + p.b_input[k]);
        gate_f[k] = sigmoid(gate_f[k] + p.b_forget[k]);
        gate_o[k] = sigmoid(gate_o[k] + p.b_output[k]);
        gate_g[k] = (gate_g[k] + p.b_cell[k]).tanh();
    }
    let cell: Vec<f64> = (0..p.hidden_dim)
        .map(|k| gate_f[k] * c_prev[k] + gate_i[k] * gate_g[k])
        .collect();
    let tanh_cell: Vec<f64> = cell.iter().map(|v| v.tanh()).collect();
    let hidden: Vec<f64> = (0..p.hidden_dim)
        .map(|k| gate_o[k] * tanh_cell[k])
        .collect();
    let cache = LstmStepCache {
        z,
        gate_i,
        gate_f,
        gate_o,
        gate_g,
        cell: cell.clone(),
        tanh_cell,
    };
    (cache, hidden, cell)
}

fn dense_head(head: &DenseParams, input: &[f64], mask: &[f64]) -> HeadCache {
    let mut act = head.weight.matvec(input);
    for (a, b) in act.iter_mut().zip(&head.bias) {
        *a = (*a + b).tanh();
    }
    let dropped: Vec<f64> = act.iter().zip(mask).map(|(a, m)| a * m).collect();
    HeadCache {
        input: input.to_vec(),
        act,
        dropped,
    }
}

impl ClassifierModel {
    fn check_row(&self, row: &FeatureRow) -> Result<(), ModelError> {
        if row.tweet.is_empty() {
            return Err(ModelError::EmptySequence);
        }
        let dims = self.params.dims();
        for v in &row.tweet {
            if v.len() != dims.input_dim {
                return Err(ModelError::DimensionMismatch(format!(
                    "tweet embedding has length {}, model expects {}",
                    v.len(),
                    dims.input_dim
                )));
            }
        }
        match (dims.bk_dim, &row.bk) {
            (Some(d), Some(v)) if v.len() != d => {
                return Err(ModelError::DimensionMismatch(format!(
                    "bk vector has length {}, model expects {d}",
                    v.len()
                )))
            }
            (Some(_), None) => return Err(ModelError::MissingFeature { flag: "BK" }),
            _ => {}
        }
        match (dims.mfd_dim, &row.mfd) {
            (Some(d), Some(v)) if v.len() != d => {
                return Err(ModelError::DimensionMismatch(format!(
                    "mfd vector has length {}, model expects {d}",
                    v.len()
                )))
            }
            (Some(_), None) => return Err(ModelError::MissingFeature { flag: "MFD" }),
            _ => {}
        }
        Ok(())
    }

    fn forward_cached(&self, row: &FeatureRow, masks: &DropoutMasks) -> ForwardCache {
        let p = &self.params;
        let mut h = vec![0.0; p.lstm.hidden_dim];
        let mut c = vec![0.0; p.lstm.hidden_dim];
        let mut steps = Vec::with_capacity(row.tweet.len());
        for (x, mask) in row.tweet.iter().zip(&masks.embed) {
            let masked: Vec<f64> = x.iter().zip(mask).map(|(v, m)| v * m).collect();
            let (cache, new_h, new_c) = lstm_step(&masked, &h, &c, &p.lstm);
            steps.push(cache);
            h = new_h;
            c = new_c;
        }
        let h_last_dropped: Vec<f64> = h.iter().zip(&masks.lstm).map(|(v, m)| v * m).collect();
        let tweet = dense_head(&p.tweet_head, &h_last_dropped, &masks.fc_tweet);
        let bk = p.bk_head.as_ref().map(|head| {
            dense_head(
                head,
                row.bk.as_ref().expect("checked by check_row"),
                masks.fc_bk.as_ref().expect("mask shape follows dims"),
            )
        });
        let mfd = p.mfd_head.as_ref().map(|head| {
            dense_head(
                head,
                row.mfd.as_ref().expect("checked by check_row"),
                masks.fc_mfd.as_ref().expect("mask shape follows dims"),
            )
        });
        let mut concat = tweet.dropped.clone();
        if let Some(head) = &bk {
            concat.extend_from_slice(&head.dropped);
        }
        if let Some(head) = &mfd {
            concat.extend_from_slice(&head.dropped);
        }
        let logits_vec = p.softmax.weight.matvec(&concat);
        let logits = [
            logits_vec[0] + p.softmax.bias[0],
            logits_vec[1] + p.softmax.bias[1],
        ];
        let probs = softmax2(logits);
        ForwardCache {
            steps,
            tweet,
            bk,
            mfd,
            concat,
            probs,
        }
    }

    /// Positive-class probability with the given dropout masks.
    pub fn forward_with_masks(
        &self,
        row: &FeatureRow,
        masks: &DropoutMasks,
    ) -> Result<f64, ModelError> {
        self.check_row(row)?;
        Ok(self.forward_cached(row, masks).probs[1])
    }

    /// Deterministic inference-mode probability of the positive class.
    pub fn prob_positive(&self, row: &FeatureRow) -> Result<f64, ModelError> {
        let masks = DropoutMasks::ones(row, self.params.dims());
        self.forward_with_masks(row, &masks)
    }

    /// Training-mode forward with masks sampled from `rng`.
    pub fn forward_train(&self, row: &FeatureRow, rng: &mut ChaCha8Rng) -> Result<f64, ModelError> {
        let masks = DropoutMasks::sample(row, self.params.dims(), &self.config, rng);
        self.forward_with_masks(row, &masks)
    }

    /// Mean cross-entropy over the batch plus the softmax L2 penalty,
    /// with masks held fixed.
    pub fn loss_with_masks(
        &self,
        batch: &[Example],
        masks: &[DropoutMasks],
        l2_lambda: f64,
    ) -> Result<f64, ModelError> {
        assert_eq!(batch.len(), masks.len());
        let mut total = 0.0;
        for (example, mask) in batch.iter().zip(masks) {
            self.check_row(&example.features)?;
            let cache = self.forward_cached(&example.features, mask);
            let p = cache.probs[usize::from(example.label)].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= p.ln();
        }
        Ok(total / batch.len() as f64 + l2_lambda * self.params.softmax.weight.frobenius_sq())
    }

    /// Exact analytic gradient of [`Self::loss_with_masks`].
    pub fn gradients_with_masks(
        &self,
        batch: &[Example],
        masks: &[DropoutMasks],
        l2_lambda: f64,
    ) -> Result<ClassifierParams, ModelError> {
        assert_eq!(batch.len(), masks.len());
        let p = &self.params;
        let dims = p.dims();
        let mut grads = ClassifierParams::zeros(dims);
        let scale = 1.0 / batch.len() as f64;

        for (example, mask) in batch.iter().zip(masks) {
            self.check_row(&example.features)?;
            let cache = self.forward_cached(&example.features, mask);

            // Softmax + cross-entropy: dL/dlogit = p - onehot(y).
            let mut dlogits = [cache.probs[0], cache.probs[1]];
            dlogits[usize::from(example.label)] -= 1.0;
            dlogits[0] *= scale;
            dlogits[1] *= scale;

            grads.softmax.weight.add_outer(&dlogits, &cache.concat, 1.0);
            grads.softmax.bias[0] += dlogits[0];
            grads.softmax.bias[1] += dlogits[1];
            let dconcat = p.softmax.weight.matvec_transpose(&dlogits);

            // Split the concat gradient back into head outputs.
            let head_dim = dims.head_dim;
            let mut offset = 0;
            let d_tweet = &dconcat[offset..offset + head_dim];
            offset += head_dim;
            let d_bk = cache.bk.as_ref().map(|_| {
                let s = &dconcat[offset..offset + head_dim];
                offset += head_dim;
                s
            });
            let d_mfd = cache
                .mfd
                .as_ref()
                .map(|_| &dconcat[offset..offset + head_dim]);

            // Tweet head: dropout -> tanh -> dense.
            let dh_last_dropped = backprop_head(
                &p.tweet_head,
                &cache.tweet,
                d_tweet,
                &mask.fc_tweet,
                &mut grads.tweet_head,
            );
            if let (Some(head), Some(cache_head), Some(d_out)) = (&p.bk_head, &cache.bk, d_bk) {
                let g = grads.bk_head.as_mut().expect("same shape as params");
                backprop_head(
                    head,
                    cache_head,
                    d_out,
                    mask.fc_bk.as_ref().expect("mask follows dims"),
                    g,
                );
            }
            if let (Some(head), Some(cache_head), Some(d_out)) = (&p.mfd_head, &cache.mfd, d_mfd) {
                let g = grads.mfd_head.as_mut().expect("same shape as params");
                backprop_head(
                    head,
                    cache_head,
                    d_out,
                    mask.fc_mfd.as_ref().expect("mask follows dims"),
                    g,
                );
            }

            // Through the LSTM-output dropout into BPTT.
            let dh_last: Vec<f64> = dh_last_dropped
                .iter()
                .zip(&mask.lstm)
                .map(|(d, m)| d * m)
                .collect();
            backprop_lstm(&p.lstm, &cache.steps, dh_last, &mut grads.lstm);
        }

        // d/dW of l2_lambda * ||W||^2 = 2 * l2_lambda * W.
        grads
            .softmax
            .weight
            .add_scaled(&p.softmax.weight, 2.0 * l2_lambda);
        Ok(grads)
    }

    /// Loss with fresh masks drawn from `rng`.
    pub fn loss(
        &self,
        batch: &[Example],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<f64, ModelError> {
        let dims = self.params.dims();
        let masks: Vec<DropoutMasks> = batch
            .iter()
            .map(|e| DropoutMasks::sample(&e.features, dims, cfg, rng))
            .collect();
        self.loss_with_masks(batch, &masks, cfg.l2_lambda)
    }

    /// Gradients with fresh masks drawn from `rng`.
    pub fn gradients(
        &self,
        batch: &[Example],
        cfg: &TrainConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<ClassifierParams, ModelError> {
        let dims = self.params.dims();
        let masks: Vec<DropoutMasks> = batch
            .iter()
            .map(|e| DropoutMasks::sample(&e.features, dims, cfg, rng))
            .collect();
        self.gradients_with_masks(batch, &masks, cfg.l2_lambda)
    }
}

/// Backprop through one dense head. Returns the gradient w.r.t. the head
/// input and accumulates weight/bias gradients.
fn backprop_head(
    head: &DenseParams,
    cache: &HeadCache,
    d_out: &[f64],
    mask: &[f64],
    grads: &mut DenseParams,
) -> Vec<f64> {
    // d_out is w.r.t. the dropped output; undo dropout, then tanh.
    let d_act: Vec<f64> = d_out
        .iter()
        .zip(mask)
        .zip(&cache.act)
        .map(|((d, m), a)| d * m * (1.0 - a * a))
        .collect();
    grads.weight.add_outer(&d_act, &cache.input, 1.0);
    add_scaled_vec(&mut grads.bias, &d_act, 1.0);
    head.weight.matvec_transpose(&d_act)
}

/// Backpropagation through time from the gradient at the last hidden
/// state.
fn backprop_lstm(
    p: &LstmParams,
    steps: &[LstmStepCache],
    dh_last: Vec<f64>,
    grads: &mut LstmParams,
) {
    let hidden = p.hidden_dim;
    let input = p.input_dim;
    let mut dh = dh_last;
    let mut dc = vec![0.0; hidden];
    for (t, step) in steps.iter().enumerate().rev() {
        let c_prev: Vec<f64> = if t == 0 {
            vec![0.0; hidden]
        } else {
            steps[t - 1].cell.clone()
        };
        let mut da_i = vec![0.0; hidden];
        let mut da_f = vec![0.0; hidden];
        let mut da_o = vec![0.0; hidden];
        let mut da_g = vec![0.0; hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let d_o = dh[k] * step.tanh_cell[k];
            let dck =
                dc[k] + dh[k] * step.gate_o[k] * (1.0 - step.tanh_cell[k] * step.tanh_cell[k]);
            let d_i = dck * step.gate_g[k];
            let d_g = dck * step.gate_i[k];
            let d_f = dck * c_prev[k];
            dc_prev[k] = dck * step.gate_f[k];
            da_i[k] = d_i * step.gate_i[k] * (1.0 - step.gate_i[k]);
            da_f[k] = d_f * step.gate_f[k] * (1.0 - step.gate_f[k]);
            da_o[k] = d_o * step.gate_o[k] * (1.0 - step.gate_o[k]);
            da_g[k] = d_g * (1.0 - step.gate_g[k] * step.gate_g[k]);
        }
        grads.w_input.add_outer(&da_i, &step.z, 1.0);
        grads.w_forget.add_outer(&da_f, &step.z, 1.0);
        grads.w_output.add_outer(&da_o, &step.z, 1.0);
        grads.w_cell.add_outer(&da_g, &step.z, 1.0);
        add_scaled_vec(&mut grads.b_input, &da_i, 1.0);
        add_scaled_vec(&mut grads.b_forget, &da_f, 1.0);
        add_scaled_vec(&mut grads.b_output, &da_o, 1.0);
        add_scaled_vec(&mut grads.b_cell, &da_g, 1.0);

        let mut dz = p.w_input.matvec_transpose(&da_i);
        add_scaled_vec(&mut dz, &p.w_forget.matvec_transpose(&da_f), 1.0);
        add_scaled_vec(&mut dz, &p.w_output.matvec_transpose(&da_o), 1.0);
        add_scaled_vec(&mut dz, &p.w_cell.matvec_transpose(&da_g), 1.0);
        dh = dz[input..].to_vec();
        dc = dc_prev;
    }
}

/// Infer model input widths from a dataset and flags.
fn infer_dims(dataset: &[Example], cfg: &TrainConfig) -> Result<ModelDims, ModelError> {
    let first = dataset.first().ok_or(ModelError::DegenerateLabels)?;
    let input_dim = first
        .features
        .tweet
        .first()
        .ok_or(ModelError::EmptySequence)?
        .len();
    let bk_dim = if cfg.features.bk {
        Some(
            first
                .features
                .bk
                .as_ref()
                .ok_or(ModelError::MissingFeature { flag: "BK" })?
                .len(),
        )
    } else {
        None
    };
    let mfd_dim = if cfg.features.mfd {
        Some(
            first
                .features
                .mfd
                .as_ref()
                .ok_or(ModelError::MissingFeature { flag: "MFD" })?
                .len(),
        )
    } else {
        None
    };
    Ok(ModelDims {
        input_dim,
        hidden_dim: cfg.hidden_dim,
        head_dim: cfg.head_dim,
        bk_dim,
        mfd_dim,
    })
}

/// Train one classifier with seeded uniform init and per-example SGD.
/// Identical `(dataset, config)` produce bitwise-identical parameters.
pub fn train(
    class: LabelClass,
    dataset: &[Example],
    cfg: &TrainConfig,
) -> Result<ClassifierModel, ModelError> {
    cfg.validate()?;
    let positives = dataset.iter().filter(|e| e.label).count();
    if dataset.is_empty() || positives == 0 || positives == dataset.len() {
        return Err(ModelError::DegenerateLabels);
    }
    let dims = infer_dims(dataset, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let params = ClassifierParams::init(dims, &mut rng);
    let mut model = ClassifierModel {
        class,
        params,
        config: cfg.clone(),
    };
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &idx in &order {
            let example = &dataset[idx];
            let masks = DropoutMasks::sample(&example.features, dims, cfg, &mut rng);
            let grads = model.gradients_with_masks(
                std::slice::from_ref(example),
                std::slice::from_ref(&masks),
                cfg.l2_lambda,
            )?;
            model.params.add_scaled(&grads, -cfg.learning_rate);
        }
    }
    Ok(model)
}

/// Merged prediction across the per-foundation classifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    /// Foundation flags at the 0.5 threshold; `non_moral` derived as
    /// all-foundations-false.
    pub labels: LabelSet,
    /// The trained Non-moral classifier's own verdict, when one is given.
    pub nonmoral_model: Option<bool>,
}

/// Run all five foundation classifiers (plus an optional trained
/// Non-moral one) on their feature rows and merge the flags.
pub fn predict(
    models: &BTreeMap<Foundation, ClassifierModel>,
    rows: &BTreeMap<Foundation, FeatureRow>,
    nonmoral: Option<(&ClassifierModel, &FeatureRow)>,
) -> Result<Prediction, ModelError> {
    let mut labels = LabelSet::default();
    for f in Foundation::ALL {
        let model = models.get(&f).ok_or(ModelError::MissingModel {
            foundation: f.name(),
        })?;
        let row = rows.get(&f).ok_or(ModelError::MissingModel {
            foundation: f.name(),
        })?;
        labels.set(f, model.prob_positive(row)? >= 0.5);
    }
    labels.non_moral = derive_non_moral(&labels);
    let nonmoral_model = match nonmoral {
        Some((model, row)) => Some(model.prob_positive(row)? >= 0.5),
        None => None,
    };
    Ok(Prediction {
        labels,
        nonmoral_model,
    })
}

/// Write a model as a versioned textual dump: magic, config, class, then
/// one shape-headed block per tensor. Floats print in shortest
/// round-trip form, so save/load is lossless.
pub fn save_model(model: &ClassifierModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let io_err = |source| ModelError::Io {
        path: display.clone(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = BufWriter::new(file);
    let mut write = |s: String| w.write_all(s.as_bytes()).map_err(io_err);
    write(format!("{MODEL_MAGIC}\n"))?;
    write(format!(
        "{}\n",
        serde_json::to_string(&model.config).expect("config serializes")
    ))?;
    write(format!("class {}\n", model.class.slug()))?;
    let dims = model.params.dims();
    for (name, tensor) in model.params.tensors() {
        let (rows, cols) = tensor_shape(name, dims, tensor.len());
        write(format!("tensor {name} {rows} {cols}\n"))?;
        for r in 0..rows {
            let row: Vec<String> = tensor[r * cols..(r + 1) * cols]
                .iter()
                .map(|v| format!("{v}"))
                .collect();
            write(format!("{}\n", row.join(" ")))?;
        }
    }
    write("end\n".to_string())?;
    w.flush().map_err(|source| ModelError::Io {
        path: display.clone(),
        source,
    })
}

fn tensor_shape(name: &str, dims: ModelDims, len: usize) -> (usize, usize) {
    let width = dims.input_dim + dims.hidden_dim;
    match name {
        n if n.starts_with("lstm.w_") => (dims.hidden_dim, width),
        n if n.starts_with("lstm.b_") => (1, dims.hidden_dim),
        "tweet_head.weight" => (dims.head_dim, dims.hidden_dim),
        "bk_head.weight" => (dims.head_dim, len / dims.head_dim),
        "mfd_head.weight" => (dims.head_dim, len / dims.head_dim),
        n if n.ends_with(".bias") && n != "softmax.bias" => (1, dims.head_dim),
        "softmax.weight" => (2, len / 2),
        "softmax.bias" => (1, 2),
        _ => (1, len),
    }
}

/// Load a model written by [`save_model`], rejecting shape mismatches.
pub fn load_model(path: impl AsRef<Path>) -> Result<ClassifierModel, ModelError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| ModelError::Io {
        path: display.clone(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for line in reader.lines() {
        lines.push(line.map_err(|source| ModelError::Io {
            path: display.clone(),
            source,
        })?);
    }
    let err = |line: usize, message: String| ModelError::Parse {
        path: display.clone(),
        line,
        message,
    };
    if lines.first().map(String::as_str) != Some(MODEL_MAGIC) {
        return Err(err(1, format!("expected magic {MODEL_MAGIC:?}")));
    }
    let config: TrainConfig = serde_json::from_str(
        lines
            .get(1)
            .ok_or_else(|| err(2, "missing config line".into()))?,
    )
    .map_err(|e| err(2, format!("bad config: {e}")))?;
    let class_line = lines
        .get(2)
        .ok_or_else(|| err(3, "missing class line".into()))?;
    let slug = class_line
        .strip_prefix("class ")
        .ok_or_else(|| err(3, format!("expected 'class <slug>', got {class_line:?}")))?;
    let class =
        LabelClass::from_slug(slug).ok_or_else(|| err(3, format!("unknown class {slug:?}")))?;

    let mut tensors: Vec<(String, usize, usize, Vec<f64>)> = Vec::new();
    let mut i = 3;
    while i < lines.len() {
        let line = &lines[i];
        if line == "end" {
            break;
        }
        let header: Vec<&str> = line.split_whitespace().collect();
        if header.len() != 4 || header[0] != "tensor" {
            return Err(err(i + 1, format!("expected tensor header, got {line:?}")));
        }
        let name = header[1].to_string();
        let rows: usize = header[2]
            .parse()
            .map_err(|e| err(i + 1, format!("bad rows: {e}")))?;
        let cols: usize = header[3]
            .parse()
            .map_err(|e| err(i + 1, format!("bad cols: {e}")))?;
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row_line = lines
                .get(i + 1 + r)
                .ok_or_else(|| err(i + 1 + r, "missing tensor row".into()))?;
            let values: Vec<f64> = row_line
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| err(i + 2 + r, format!("bad float {v:?}: {e}")))
                })
                .collect::<Result<_, _>>()?;
            if values.len() != cols {
                return Err(err(
                    i + 2 + r,
                    format!("expected {cols} values, found {}", values.len()),
                ));
            }
            data.extend(values);
        }
        tensors.push((name, rows, cols, data));
        i += 1 + rows;
    }

    build_model(class, config, tensors).map_err(|message| err(0, message))
}

fn build_model(
    class: LabelClass,
    config: TrainConfig,
    tensors: Vec<(String, usize, usize, Vec<f64>)>,
) -> Result<ClassifierModel, String> {
    let by_name: BTreeMap<String, (usize, usize, Vec<f64>)> = tensors
        .into_iter()
        .map(|(name, r, c, d)| (name, (r, c, d)))
        .collect();
    let get = |name: &str| -> Result<&(usize, usize, Vec<f64>), String> {
        by_name
            .get(name)
            .ok_or_else(|| format!("missing tensor {name}"))
    };
    let (hidden_dim, width) = {
        let (r, c, _) = get("lstm.w_input")?;
        (*r, *c)
    };
    if width <= hidden_dim {
        return Err(format!(
            "lstm width {width} not larger than hidden dim {hidden_dim}"
        ));
    }
    let input_dim = width - hidden_dim;
    let (head_dim, tweet_in) = {
        let (r, c, _) = get("tweet_head.weight")?;
        (*r, *c)
    };
    if tweet_in != hidden_dim {
        return Err(format!(
            "tweet head expects input {tweet_in}, lstm emits {hidden_dim}"
        ));
    }
    let bk_dim = by_name.get("bk_head.weight").map(|(_, c, _)| *c);
    let mfd_dim = by_name.get("mfd_head.weight").map(|(_, c, _)| *c);
    let dims = ModelDims {
        input_dim,
        hidden_dim,
        head_dim,
        bk_dim,
        mfd_dim,
    };
    let (sm_rows, sm_cols) = {
        let (r, c, _) = get("softmax.weight")?;
        (*r, *c)
    };
    if sm_rows != 2 || sm_cols != dims.concat_width() {
        return Err(format!(
            "softmax weight is {sm_rows}x{sm_cols}, expected 2x{}",
            dims.concat_width()
        ));
    }
    let mut params = ClassifierParams::zeros(dims);
    for (name, tensor) in params.tensors_mut() {
        let (rows, cols, data) = get(name)?;
        if rows * cols != tensor.len() || data.len() != tensor.len() {
            return Err(format!(
                "tensor {name} has {} values, expected {}",
                data.len(),
                tensor.len()
            ));
        }
        tensor.copy_from_slice(data);
    }
    Ok(ClassifierModel {
        class,
        params,
        config,
    })
}
