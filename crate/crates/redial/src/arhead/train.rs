//! Cross-entropy loss, exact gradients, and mini-batch gradient descent for
//! the addressee-recognition head.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    check_vectors, gold_replies, softmax, ARModel, ArDims, ArError, Matrix, Mlp,
};
use crate::backends::Embedder;
use crate::corpus::{Dataset, DialogueContext};

/// One training instance: per-turn embedding vectors plus the gold reply
/// target for every turn i >= 2 (`gold[i - 2]` addresses turn i).
#[derive(Debug, Clone)]
pub struct ArInstance {
    pub turn_vectors: Vec<Vec<f64>>,
    pub gold: Vec<usize>,
}

impl ArInstance {
    pub fn new(turn_vectors: Vec<Vec<f64>>, gold: Vec<usize>) -> Self {
        ArInstance { turn_vectors, gold }
    }

    /// Embeds a context and pairs the vectors with its gold reply links.
    pub fn from_context(
        context: &DialogueContext,
        embedder: &dyn Embedder,
    ) -> Result<Self, ArError> {
        let gold = gold_replies(context)?;
        let turn_vectors = embedder.embed_turns(context)?;
        Ok(ArInstance { turn_vectors, gold })
    }

    fn validate(&self, dims: ArDims) -> Result<(), ArError> {
        let t = self.turn_vectors.len();
        if t < 2 {
            return Err(ArError::TooShort { turns: t });
        }
        check_vectors(&self.turn_vectors, dims.embed)?;
        if self.gold.len() != t - 1 {
            return Err(ArError::Config(format!(
                "expected {} gold replies for {t} turns, got {}",
                t - 1,
                self.gold.len()
            )));
        }
        for (i, &g) in (2..=t).zip(&self.gold) {
            if g == 0 || g >= i {
                return Err(ArError::GoldOutOfRange { turn: i, gold: g });
            }
        }
        Ok(())
    }
}

/// Gradients for every [`ARModel`] parameter, in the same layout.
#[derive(Debug, Clone)]
pub struct ArGradients {
    pub sender: Mlp,
    pub addressee: Mlp,
    pub biaffine: Matrix,
}

impl ArGradients {
    fn zeros(dims: ArDims) -> Self {
        let zero = ARModel::zeroed(dims);
        ArGradients {
            sender: zero.sender,
            addressee: zero.addressee,
            biaffine: zero.biaffine,
        }
    }

    fn tensors_mut(&mut self) -> [&mut Vec<f64>; 9] {
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

    fn tensors(&self) -> [&[f64]; 9] {
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

    fn scale(&mut self, factor: f64) {
        for tensor in self.tensors_mut() {
            for g in tensor.iter_mut() {
                *g *= factor;
            }
        }
    }
}

/// Backprop through one projection MLP given the upstream gradient on its
/// output vector, accumulating parameter gradients in place.
fn mlp_backward(
    mlp: &Mlp,
    grads: &mut Mlp,
    input: &[f64],
    z1: &[f64],
    a1: &[f64],
    d_out: &[f64],
) {
    let hidden = mlp.b1.len();
    let proj = mlp.b2.len();
    for r in 0..proj {
        let g = d_out[r];
        if g == 0.0 {
            continue;
        }
        for c in 0..hidden {
            let v = grads.w2.get(r, c) + g * a1[c];
            grads.w2.set(r, c, v);
        }
        grads.b2[r] += g;
    }
    // d_a1 = W2ᵀ d_out, masked by the rectifier.
    let d_a1 = mlp.w2.matvec_t(d_out);
    for r in 0..hidden {
        if z1[r] <= 0.0 {
            continue;
        }
        let g = d_a1[r];
        if g == 0.0 {
            continue;
        }
        for (c, x) in input.iter().enumerate() {
            let v = grads.w1.get(r, c) + g * x;
            grads.w1.set(r, c, v);
        }
        grads.b1[r] += g;
    }
}

fn loss_and_grad_counted(
    batch: &[ArInstance],
    model: &ARModel,
) -> Result<(f64, ArGradients, usize), ArError> {
    let dims = model.dims;
    let proj = dims.proj;
    let mut grads = ArGradients::zeros(dims);
    let mut nll_sum = 0.0;
    let mut turn_count = 0usize;

    for instance in batch {
        instance.validate(dims)?;
        let t = instance.turn_vectors.len();

        let sender_acts: Vec<_> = instance
            .turn_vectors
            .iter()
            .map(|x| model.sender.forward(x))
            .collect();
        let addressee_acts: Vec<_> = instance
            .turn_vectors
            .iter()
            .map(|x| model.addressee.forward(x))
            .collect();
        // u_j = W_b v_j^a (p+1 entries); y_i = Aᵀ v_i^s (p entries) where A
        // is the biaffine matrix without its bias row.
        let pointers: Vec<Vec<f64>> = addressee_acts
            .iter()
            .map(|a| model.biaffine.matvec(&a.out))
            .collect();
        let weighted_senders: Vec<Vec<f64>> = sender_acts
            .iter()
            .map(|s| {
                let mut y = vec![0.0; proj];
                for (r, &vs_r) in s.out.iter().enumerate() {
                    for (c, y_c) in y.iter_mut().enumerate() {
                        *y_c += model.biaffine.get(r, c) * vs_r;
                    }
                }
                y
            })
            .collect();

        let mut d_sender_out = vec![vec![0.0; proj]; t];
        let mut d_addressee_out = vec![vec![0.0; proj]; t];

        for (i, &g) in (2..=t).zip(&instance.gold) {
            let vs = &sender_acts[i - 1].out;
            let row: Vec<f64> = (0..i - 1)
                .map(|j| {
                    let u = &pointers[j];
                    vs.iter().zip(&u[..proj]).map(|(a, b)| a * b).sum::<f64>() + u[proj]
                })
                .collect();
            let probs = softmax(&row);
            nll_sum -= probs[g - 1].max(f64::MIN_POSITIVE).ln();
            turn_count += 1;

            for (j, &p) in probs.iter().enumerate() {
                let d_score = p - if j == g - 1 { 1.0 } else { 0.0 };
                if d_score == 0.0 {
                    continue;
                }
                let va = &addressee_acts[j].out;
                let u = &pointers[j];
                // d vs_i += d_score * (A v_j^a)   [first p entries of u_j]
                for (r, dv) in d_sender_out[i - 1].iter_mut().enumerate() {
                    *dv += d_score * u[r];
                }
                // d va_j += d_score * (Aᵀ vs_i + bias row)
                for (c, dv) in d_addressee_out[j].iter_mut().enumerate() {
                    *dv += d_score * (weighted_senders[i - 1][c] + model.biaffine.get(proj, c));
                }
                // d W_b += d_score * [vs_i; 1] va_jᵀ
                for r in 0..proj {
                    let factor = d_score * vs[r];
                    if factor == 0.0 {
                        continue;
                    }
                    for (c, &va_c) in va.iter().enumerate() {
                        let v = grads.biaffine.get(r, c) + factor * va_c;
                        grads.biaffine.set(r, c, v);
                    }
                }
                for (c, &va_c) in va.iter().enumerate() {
                    let v = grads.biaffine.get(proj, c) + d_score * va_c;
                    grads.biaffine.set(proj, c, v);
                }
            }
        }

        for pos in 0..t {
            mlp_backward(
                &model.sender,
                &mut grads.sender,
                &instance.turn_vectors[pos],
                &sender_acts[pos].z1,
                &sender_acts[pos].a1,
                &d_sender_out[pos],
            );
            mlp_backward(
                &model.addressee,
                &mut grads.addressee,
                &instance.turn_vectors[pos],
                &addressee_acts[pos].z1,
                &addressee_acts[pos].a1,
                &d_addressee_out[pos],
            );
        }
    }

    if turn_count == 0 {
        return Err(ArError::EmptyDataset);
    }
    grads.scale(1.0 / turn_count as f64);
    Ok((nll_sum / turn_count as f64, grads, turn_count))
}

/// Mean negative log-probability of the gold addressee over all turns
/// i >= 2 in the batch, plus exact gradients for every model parameter.
pub fn loss_and_grad(
    batch: &[ArInstance],
    model: &ARModel,
) -> Result<(f64, ArGradients), ArError> {
    let (loss, grads, _) = loss_and_grad_counted(batch, model)?;
    Ok((loss, grads))
}

/// Training hyperparameters. The head is small enough that plain seeded
/// mini-batch gradient descent keeps runs bit-reproducible.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ARTrainConfig {
    /// Embedding dimension; must match the embedder.
    pub dim: usize,
    pub hidden: usize,
    pub proj: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl ARTrainConfig {
    pub fn new(dim: usize) -> Self {
        ARTrainConfig {
            dim,
            hidden: 256,
            proj: 128,
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.1,
            seed: 0,
        }
    }

    pub fn dims(&self) -> ArDims {
        ArDims {
            embed: self.dim,
            hidden: self.hidden,
            proj: self.proj,
        }
    }

    pub fn validate(&self) -> Result<(), ArError> {
        if self.epochs < 1 {
            return Err(ArError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(ArError::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(ArError::Config("learning_rate must be positive".into()));
        }
        if self.dim == 0 || self.hidden == 0 || self.proj == 0 {
            return Err(ArError::Config("dims must all be positive".into()));
        }
        Ok(())
    }
}

pub(super) fn randomize(model: &mut ARModel, rng: &mut ChaCha8Rng) {
    for tensor in model.tensors_mut() {
        for value in tensor.iter_mut() {
            *value = rng.gen_range(-0.05..0.05);
        }
    }
}

/// A trained model plus the mean training loss recorded at each epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ARModel,
    pub epoch_losses: Vec<f64>,
}

/// Trains the head on every context with at least two turns. Parameters are
/// initialized from seeded uniform(-0.05, 0.05) and updated by mini-batch
/// gradient descent with seeded shuffling; identical seeds and inputs yield
/// bit-identical models.
pub fn train(
    dataset: &Dataset,
    embedder: &dyn Embedder,
    config: &ARTrainConfig,
) -> Result<TrainOutcome, ArError> {
    config.validate()?;
    if embedder.dim() != config.dim {
        return Err(ArError::DimMismatch {
            expected: config.dim,
            got: embedder.dim(),
        });
    }
    let mut instances = Vec::new();
    for context in &dataset.contexts {
        if context.len() < 2 {
            continue;
        }
        instances.push(ArInstance::from_context(context, embedder)?);
    }
    if instances.is_empty() {
        return Err(ArError::EmptyDataset);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ARModel::zeroed(config.dims());
    randomize(&mut model, &mut rng);

    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut turn_sum = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ArInstance> =
                chunk.iter().map(|&idx| instances[idx].clone()).collect();
            let (loss, grads, turns) = loss_and_grad_counted(&batch, &model)?;
            loss_sum += loss * turns as f64;
            turn_sum += turns;
            for (param, grad) in model.tensors_mut().into_iter().zip(grads.tensors()) {
                for (p, g) in param.iter_mut().zip(grad) {
                    *p -= config.learning_rate * g;
                }
            }
        }
        epoch_losses.push(loss_sum / turn_sum as f64);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
    })
}
