//! Prediction-based word embeddings: skip-gram and CBoW trained with negative
//! sampling, and mean-pooled document vectors.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cleanse::TokenSequence;
use crate::vectorize::Vocabulary;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("corpus has no documents or the vocabulary is empty")]
    EmptyCorpus,
    #[error("invalid embedding config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, EmbedError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedTrainConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    /// Initial learning rate, decayed linearly towards zero over training.
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub noise_power: f64,
}

impl Default for EmbedTrainConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            window: 5,
            negatives: 5,
            learning_rate: 0.025,
            epochs: 5,
            seed: 1,
            noise_power: 0.75,
        }
    }
}

impl EmbedTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(EmbedError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        Ok(())
    }
}

/// Word vectors: one input ("word") and one output ("context") row per
/// vocabulary token, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub input_vectors: Vec<f64>,
    pub output_vectors: Vec<f64>,
}

impl EmbeddingMatrix {
    /// Input rows uniform in `[-0.5/d, 0.5/d]`, output rows zero.
    pub fn initialize(vocab_size: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let half = 0.5 / dim as f64;
        let input_vectors = (0..vocab_size * dim)
            .map(|_| rng.random_range(-half..=half))
            .collect();
        Self {
            dim,
            input_vectors,
            output_vectors: vec![0.0; vocab_size * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.input_vectors.len() / self.dim
    }

    pub fn input_row(&self, i: usize) -> &[f64] {
        &self.input_vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn output_row(&self, i: usize) -> &[f64] {
        &self.output_vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes `token v1 ... vd` lines, one per vocabulary entry.
    pub fn write_text(&self, vocab: &Vocabulary, mut out: impl Write) -> io::Result<()> {
        for (i, token) in vocab.tokens().iter().enumerate() {
            write!(out, "{token}")?;
            for v in self.input_row(i) {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Training output: the matrix and the mean pair loss of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedEmbedding {
    pub matrix: EmbeddingMatrix,
    pub epoch_loss: Vec<f64>,
}

/// Unigram counts raised to `power`, stored as a cumulative distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDistribution {
    cumulative: Vec<f64>,
}

impl NoiseDistribution {
    pub fn new(counts: &[usize], power: f64) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(power)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cumulative: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cumulative.last_mut() {
            *last = 1.0;
        }
        Self { cumulative }
    }

    pub fn probability(&self, i: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.cumulative[i - 1] };
        self.cumulative[i] - prev
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }

    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-ln sigmoid(z)` without overflow.
fn neg_log_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGrads {
    pub center: Vec<f64>,
    pub context: Vec<f64>,
    pub negatives: Vec<Vec<f64>>,
}

/// Negative-sampling loss for one (center, context) pair:
/// `-ln s(u_ctx . v_c) - sum_neg ln s(-u_neg . v_c)`, with gradients for
/// every vector involved.
pub fn sgns_pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (f64, PairGrads) {
    let d = center.len();
    let score = dot(context, center);
    let mut loss = neg_log_sigmoid(score);
    // d/ds [-ln s(s)] = s(s) - 1
    let g_pos = sigmoid(score) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|u| g_pos * u).collect();
    let g_context: Vec<f64> = center.iter().map(|v| g_pos * v).collect();
    let mut g_negatives = Vec::with_capacity(negatives.len());
    for neg in negatives {
        let s = dot(neg, center);
        loss += neg_log_sigmoid(-s);
        let g = sigmoid(s);
        for k in 0..d {
            g_center[k] += g * neg[k];
        }
        g_negatives.push(center.iter().map(|v| g * v).collect());
    }
    (
        loss,
        PairGrads {
            center: g_center,
            context: g_context,
            negatives: g_negatives,
        },
    )
}

/// Mean of the input rows of in-vocabulary tokens; zero when none are known.
pub fn doc_embed(doc: &TokenSequence, emb: &EmbeddingMatrix, vocab: &Vocabulary) -> Vec<f64> {
    let mut out = vec![0.0; emb.dim];
    let mut n = 0usize;
    for i in doc.iter().filter_map(|t| vocab.index_of(t)) {
        for (o, v) in out.iter_mut().zip(emb.input_row(i)) {
            *o += v;
        }
        n += 1;
    }
    if n > 0 {
        for o in &mut out {
            *o /= n as f64;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Architecture {
    SkipGram,
    Cbow,
}

pub fn train_skipgram(
    docs: &[TokenSequence],
    vocab: &Vocabulary,
    config: &EmbedTrainConfig,
) -> Result<TrainedEmbedding> {
    train(docs, vocab, config, Architecture::SkipGram)
}

/// CBoW: the mean of the context input vectors predicts the center token.
/// The gradient with respect to that mean is added to every context row
/// (the word2vec convention).
pub fn train_cbow(
    docs: &[TokenSequence],
    vocab: &Vocabulary,
    config: &EmbedTrainConfig,
) -> Result<TrainedEmbedding> {
    train(docs, vocab, config, Architecture::Cbow)
}

struct Trainer<'a> {
    emb: EmbeddingMatrix,
    noise: NoiseDistribution,
    config: &'a EmbedTrainConfig,
    rng: ChaCha8Rng,
    hidden_grad: Vec<f64>,
}

impl Trainer<'_> {
    /// One positive `target` against `hidden`, plus sampled negatives.
    /// Updates output rows in place, accumulates into `hidden_grad`, returns
    /// the pair loss.
    fn contrast(&mut self, hidden: &[f64], target: usize, lr: f64) -> f64 {
        let d = self.emb.dim;
        self.hidden_grad.iter_mut().for_each(|g| *g = 0.0);
        let mut loss = 0.0;
        let update = |emb: &mut EmbeddingMatrix, hg: &mut [f64], row: usize, label: f64| {
            let out = &mut emb.output_vectors[row * d..(row + 1) * d];
            let s = dot(out, hidden);
            let l = if label > 0.5 {
                neg_log_sigmoid(s)
            } else {
                neg_log_sigmoid(-s)
            };
            let g = sigmoid(s) - label;
            for k in 0..d {
                hg[k] += g * out[k];
                out[k] -= lr * g * hidden[k];
            }
            l
        };
        loss += update(&mut self.emb, &mut self.hidden_grad, target, 1.0);
        for _ in 0..self.config.negatives {
            let neg = self.noise.sample(&mut self.rng);
            if neg == target {
                continue;
            }
            loss += update(&mut self.emb, &mut self.hidden_grad, neg, 0.0);
        }
        loss
    }

    fn apply_hidden_grad(&mut self, row: usize, lr: f64) {
        let d = self.emb.dim;
        let input = &mut self.emb.input_vectors[row * d..(row + 1) * d];
        for (v, g) in input.iter_mut().zip(&self.hidden_grad) {
            *v -= lr * g;
        }
    }
}

fn train(
    docs: &[TokenSequence],
    vocab: &Vocabulary,
    config: &EmbedTrainConfig,
    arch: Architecture,
) -> Result<TrainedEmbedding> {
    config.validate()?;
    if docs.is_empty() || vocab.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    let ids: Vec<Vec<usize>> = docs
        .iter()
        .map(|d| d.iter().filter_map(|t| vocab.index_of(t)).collect())
        .collect();
    let mut counts = vec![0usize; vocab.len()];
    for &i in ids.iter().flatten() {
        counts[i] += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(EmbedError::EmptyCorpus);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let emb = EmbeddingMatrix::initialize(vocab.len(), config.dim, &mut rng);
    let mut trainer = Trainer {
        emb,
        noise: NoiseDistribution::new(&counts, config.noise_power),
        config,
        rng,
        hidden_grad: vec![0.0; config.dim],
    };

    let tokens_per_epoch: usize = ids.iter().map(Vec::len).sum();
    let total = (tokens_per_epoch * config.epochs).max(1) as f64;
    let mut processed = 0usize;
    let mut epoch_loss = Vec::with_capacity(config.epochs);
    let d = config.dim;
    let mut hidden = vec![0.0; d];

    for _ in 0..config.epochs {
        let mut loss_sum = 0.0;
        let mut pairs = 0usize;
        for doc in &ids {
            for (pos, &center) in doc.iter().enumerate() {
                let lr = config.learning_rate * (1.0 - processed as f64 / total).max(1e-4);
                processed += 1;
                let lo = pos.saturating_sub(config.window);
                let hi = (pos + config.window + 1).min(doc.len());
                let context = (lo..hi).filter(|&j| j != pos).map(|j| doc[j]);
                match arch {
                    Architecture::SkipGram => {
                        for ctx in context {
                            hidden.copy_from_slice(trainer.emb.input_row(center));
                            loss_sum += trainer.contrast(&hidden, ctx, lr);
                            trainer.apply_hidden_grad(center, lr);
                            pairs += 1;
                        }
                    }
                    Architecture::Cbow => {
                        let context: Vec<usize> = context.collect();
                        if context.is_empty() {
                            continue;
                        }
                        hidden.iter_mut().for_each(|h| *h = 0.0);
                        for &c in &context {
                            for (h, v) in hidden.iter_mut().zip(trainer.emb.input_row(c)) {
                                *h += v;
                            }
                        }
                        let n = context.len() as f64;
                        hidden.iter_mut().for_each(|h| *h /= n);
                        loss_sum += trainer.contrast(&hidden, center, lr);
                        for &c in &context {
                            trainer.apply_hidden_grad(c, lr);
                        }
                        pairs += 1;
                    }
                }
            }
        }
        epoch_loss.push(if pairs > 0 { loss_sum / pairs as f64 } else { 0.0 });
    }
    Ok(TrainedEmbedding {
        matrix: trainer.emb,
        epoch_loss,
    })
}
