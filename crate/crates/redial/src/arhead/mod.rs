//! Addressee-recognition head and the discourse-coherence scorer built on it.
//!
//! The head scores every utterance pair (i, j) with j < i through two small
//! projection MLPs and a biaffine form, trains by softmax cross-entropy over
//! each turn's candidate addressees, and reads out either the gold
//! addressee's probability (the default coherence proxy) or plain 0/1
//! accuracy. Turn embeddings come from a backend [`Embedder`]; the head never
//! touches raw text.

mod checkpoint;
mod train;

pub use checkpoint::{load_model, save_model};
pub use train::{loss_and_grad, train, ArGradients, ArInstance, ARTrainConfig, TrainOutcome};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::corpus::{Dataset, DialogueContext, Turn};

#[derive(Debug, Error)]
pub enum ArError {
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("non-finite input vector for turn {turn}")]
    NonFinite { turn: usize },
    #[error("turn {turn} has no addressee candidates")]
    NoCandidates { turn: usize },
    #[error("gold reply_to {gold} is out of range for turn {turn}")]
    GoldOutOfRange { turn: usize, gold: usize },
    #[error("context has {turns} turn(s); coherence needs at least 2")]
    TooShort { turns: usize },
    #[error("turn {turn} is missing reply_to")]
    MissingReply { turn: usize },
    #[error("dataset has no trainable contexts (need t >= 2 with reply links)")]
    EmptyDataset,
    #[error("train config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("checkpoint {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format: {0}")]
    CheckpointFormat(String),
}

/// Layer sizes of the head: embedding input `d`, MLP hidden `h`, and
/// projection `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArDims {
    pub embed: usize,
    pub hidden: usize,
    pub proj: usize,
}

/// Dense row-major matrix. Small enough here that hand-rolled kernels keep
/// the gradient math transparent.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    pub(crate) fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut Vec<f64> {
        &mut self.data
    }

    /// y = self * x
    pub(crate) fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = vec![0.0; self.rows];
        for (r, y_r) in y.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *y_r = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        y
    }

    /// y = selfᵀ * x
    pub(crate) fn matvec_t(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.rows);
        let mut y = vec![0.0; self.cols];
        for (r, &x_r) in x.iter().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (y_c, a) in y.iter_mut().zip(row) {
                *y_c += a * x_r;
            }
        }
        y
    }
}

/// One projection branch: affine(d -> h), rectifier, affine(h -> p).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl Mlp {
    fn zeros(dims: ArDims) -> Self {
        Mlp {
            w1: Matrix::zeros(dims.hidden, dims.embed),
            b1: vec![0.0; dims.hidden],
            w2: Matrix::zeros(dims.proj, dims.hidden),
            b2: vec![0.0; dims.proj],
        }
    }

    /// Forward pass keeping pre- and post-rectifier activations for backprop.
    pub(crate) fn forward(&self, x: &[f64]) -> MlpActivations {
        let mut z1 = self.w1.matvec(x);
        for (z, b) in z1.iter_mut().zip(&self.b1) {
            *z += b;
        }
        let a1: Vec<f64> = z1.iter().map(|&z| z.max(0.0)).collect();
        let mut out = self.w2.matvec(&a1);
        for (o, b) in out.iter_mut().zip(&self.b2) {
            *o += b;
        }
        MlpActivations { z1, a1, out }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MlpActivations {
    pub z1: Vec<f64>,
    pub a1: Vec<f64>,
    pub out: Vec<f64>,
}

/// Parameters of the addressee-recognition head: sender and addressee
/// projection MLPs plus the (p+1) x p biaffine matrix whose last row is the
/// bias term for the appended constant 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ARModel {
    pub dims: ArDims,
    pub sender: Mlp,
    pub addressee: Mlp,
    pub biaffine: Matrix,
}

impl ARModel {
    /// All-zero parameters. Every pair scores 0, so addressee distributions
    /// are uniform; handy as a known-output baseline.
    pub fn zeroed(dims: ArDims) -> Self {
        ARModel {
            dims,
            sender: Mlp::zeros(dims),
            addressee: Mlp::zeros(dims),
            biaffine: Matrix::zeros(dims.proj + 1, dims.proj),
        }
    }

    /// Parameters drawn i.i.d. from uniform(-0.05, 0.05) under the given
    /// seed. Identical seeds yield bit-identical models.
    pub fn uniform_init(dims: ArDims, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeroed(dims);
        train::randomize(&mut model, &mut rng);
        model
    }

    /// Flat parameter tensors in checkpoint order.
    pub(crate) fn tensors(&self) -> [&[f64]; 9] {
        [
            self.sender.w1.data(),
            &self.sender.b1,
            self.sender.w2.data(),
            &self.sender.b2,
            self.addressee.w1.data(),
            &self.addressee.b1,
            self.addressee.w2.data(),
            &self.addressee.b2,
            self.biaffine.data(),
        ]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Vec<f64>; 9] {
        [
            self.sender.w1.data_mut(),
            &mut self.sender.b1,
            self.sender.w2.data_mut(),
            &mut self.sender.b2,
            self.addressee.w1.data_mut(),
            &mut self.addressee.b1,
            self.addressee.w2.data_mut(),
            &mut self.addressee.b2,
            self.biaffine.data_mut(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn param(&self, index: usize) -> f64 {
        let mut index = index;
        for tensor in self.tensors() {
            if index < tensor.len() {
                return tensor[index];
            }
            index -= tensor.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, index: usize, value: f64) {
        let mut index = index;
        for tensor in self.tensors_mut() {
            if index < tensor.len() {
                tensor[index] = value;
                return;
            }
            index -= tensor.len();
        }
        panic!("parameter index out of range");
    }
}

/// The coherence read-out: the gold addressee's predicted probability
/// (default) or hard 0/1 prediction accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoherenceProxy {
    #[default]
    Probability,
    Accuracy,
}

impl CoherenceProxy {
    pub fn parse(s: &str) -> Result<Self, ArError> {
        match s {
            "probability" => Ok(CoherenceProxy::Probability),
            "accuracy" => Ok(CoherenceProxy::Accuracy),
            other => Err(ArError::Config(format!("unknown coherence proxy {other:?}"))),
        }
    }
}

/// Pairwise link scores of one context: entry (i, j) is defined for
/// 1-based turn indices with j < i and holds the biaffine score of turn j
/// as the addressee of turn i.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    rows: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    /// Number of turns t (rows exist for turns 2..=t).
    pub fn turn_count(&self) -> usize {
        self.rows.len() + 1
    }

    /// Scores for turn `i` (1-based, i >= 2) over candidates j = 1..i-1;
    /// entry `[j-1]` is score(i <- j).
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i >= 2 && i <= self.turn_count(), "row index out of range");
        &self.rows[i - 2]
    }
}

fn check_vectors(turn_vectors: &[Vec<f64>], dim: usize) -> Result<(), ArError> {
    for (pos, vector) in turn_vectors.iter().enumerate() {
        if vector.len() != dim {
            return Err(ArError::DimMismatch {
                expected: dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(ArError::NonFinite { turn: pos + 1 });
        }
    }
    Ok(())
}

/// Computes the lower-triangular pairwise score matrix for one context's
/// turn vectors: score(i <- j) = [v_i^s; 1]ᵀ W_b v_j^a with v^s and v^a the
/// sender/addressee MLP projections.
pub fn score_matrix(turn_vectors: &[Vec<f64>], model: &ARModel) -> Result<ScoreMatrix, ArError> {
    check_vectors(turn_vectors, model.dims.embed)?;
    let t = turn_vectors.len();
    let proj = model.dims.proj;
    let senders: Vec<Vec<f64>> = turn_vectors
        .iter()
        .map(|x| model.sender.forward(x).out)
        .collect();
    // u_j = W_b v_j^a has p+1 entries; the last is the constant-1 term.
    let pointers: Vec<Vec<f64>> = turn_vectors
        .iter()
        .map(|x| model.biaffine.matvec(&model.addressee.forward(x).out))
        .collect();
    let mut rows = Vec::with_capacity(t.saturating_sub(1));
    for i in 2..=t {
        let vs = &senders[i - 1];
        let mut row = Vec::with_capacity(i - 1);
        for u in pointers.iter().take(i - 1) {
            let dot: f64 = vs.iter().zip(&u[..proj]).map(|(a, b)| a * b).sum();
            row.push(dot + u[proj]);
        }
        rows.push(row);
    }
    Ok(ScoreMatrix { rows })
}

pub(crate) fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax distribution over turn i's candidate addressees j = 1..i-1.
pub fn addressee_probs(scores: &ScoreMatrix, i: usize) -> Result<Vec<f64>, ArError> {
    if i < 2 || i > scores.turn_count() {
        return Err(ArError::NoCandidates { turn: i });
    }
    Ok(softmax(scores.row(i)))
}

/// Index (1-based) of the highest-scoring candidate; ties break toward the
/// smallest index.
pub(crate) fn argmax_candidate(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &score) in row.iter().enumerate().skip(1) {
        if score > row[best] {
            best = j;
        }
    }
    best + 1
}

/// Gold reply targets for turns 2..=t, or an error naming the first turn
/// without one.
pub(crate) fn gold_replies(context: &DialogueContext) -> Result<Vec<usize>, ArError> {
    context
        .turns
        .iter()
        .skip(1)
        .map(|turn| turn.reply_to.ok_or(ArError::MissingReply { turn: turn.index }))
        .collect()
}

/// Fraction of turns i >= 2 across the dataset whose argmax-scored
/// addressee equals the gold reply target. Single-turn contexts contribute
/// nothing.
pub fn accuracy(
    model: &ARModel,
    dataset: &Dataset,
    embedder: &dyn Embedder,
) -> Result<f64, ArError> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for context in &dataset.contexts {
        if context.len() < 2 {
            continue;
        }
        let gold = gold_replies(context)?;
        let vectors = embedder.embed_turns(context)?;
        let scores = score_matrix(&vectors, model)?;
        for (i, &g) in (2..=context.len()).zip(&gold) {
            if argmax_candidate(scores.row(i)) == g {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(ArError::EmptyDataset);
    }
    Ok(correct as f64 / total as f64)
}

/// Discourse-coherence score of one context: the mean over turns 2..=t of
/// the gold addressee's softmax probability (probability proxy) or of 0/1
/// argmax correctness (accuracy proxy).
pub fn coherence(
    context: &DialogueContext,
    model: &ARModel,
    embedder: &dyn Embedder,
    proxy: CoherenceProxy,
) -> Result<f64, ArError> {
    if context.len() < 2 {
        return Err(ArError::TooShort {
            turns: context.len(),
        });
    }
    let gold = gold_replies(context)?;
    let vectors = embedder.embed_turns(context)?;
    let scores = score_matrix(&vectors, model)?;
    let mut sum = 0.0;
    for (i, &g) in (2..=context.len()).zip(&gold) {
        let row = scores.row(i);
        if g == 0 || g >= i {
            return Err(ArError::GoldOutOfRange { turn: i, gold: g });
        }
        sum += match proxy {
            CoherenceProxy::Probability => softmax(row)[g - 1],
            CoherenceProxy::Accuracy => {
                if argmax_candidate(row) == g {
                    1.0
                } else {
                    0.0
                }
            }
        };
    }
    Ok(sum / (context.len() - 1) as f64)
}

/// Appends each generated response as turn t+1 and checks whether the head
/// assigns it to the intended target turn. Returns the fraction of correct
/// assignments.
pub fn response_addressee_accuracy(
    pairs: &[(DialogueContext, String)],
    model: &ARModel,
    embedder: &dyn Embedder,
) -> Result<f64, ArError> {
    if pairs.is_empty() {
        return Err(ArError::EmptyDataset);
    }
    let mut correct = 0usize;
    for (context, response) in pairs {
        let mut extended = context.clone();
        extended.turns.push(Turn {
            index: context.len() + 1,
            speaker: context.target_speaker.clone(),
            reply_to: Some(context.target_reply_to),
            text: response.clone(),
        });
        let vectors = embedder.embed_turns(&extended)?;
        let scores = score_matrix(&vectors, model)?;
        if argmax_candidate(scores.row(extended.len())) == context.target_reply_to {
            correct += 1;
        }
    }
    Ok(correct as f64 / pairs.len() as f64)
}
