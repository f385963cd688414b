//! Frequency-based document representations: vocabulary, count vectors and
//! TF-IDF.
//!
//! TF-IDF uses raw term counts, smooth idf `ln((1 + n) / (1 + df)) + 1` and
//! L2 document normalization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cleanse::TokenSequence;

#[derive(Debug, Error, PartialEq)]
pub enum VectorizeError {
    #[error("corpus has no documents or no tokens")]
    EmptyCorpus,
    #[error("min_df must be at least 1")]
    InvalidMinDf,
    #[error("no token reaches min_df = {0}")]
    EmptyVocabulary(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("sparse entries must have strictly increasing indices below {dim} and non-zero finite values")]
    InvalidEntries { dim: usize },
}

pub type Result<T> = std::result::Result<T, VectorizeError>;

/// Token to index map with document frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyParts", into = "VocabularyParts")]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyParts {
    tokens: Vec<String>,
    df: Vec<usize>,
    n_docs: usize,
}

impl TryFrom<VocabularyParts> for Vocabulary {
    type Error = VectorizeError;

    fn try_from(parts: VocabularyParts) -> Result<Self> {
        Vocabulary::from_parts(parts.tokens, parts.df, parts.n_docs)
    }
}

impl From<Vocabulary> for VocabularyParts {
    fn from(v: Vocabulary) -> Self {
        Self {
            tokens: v.tokens,
            df: v.df,
            n_docs: v.n_docs,
        }
    }
}

impl Vocabulary {
    /// Rebuilds a vocabulary from its stored parts (used when loading models).
    pub fn from_parts(tokens: Vec<String>, df: Vec<usize>, n_docs: usize) -> Result<Self> {
        if tokens.len() != df.len() {
            return Err(VectorizeError::DimensionMismatch {
                expected: tokens.len(),
                actual: df.len(),
            });
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self {
            tokens,
            df,
            n_docs,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn df(&self, index: usize) -> usize {
        self.df[index]
    }

    pub fn document_frequencies(&self) -> &[usize] {
        &self.df
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    /// SHA-256 over the ordered token list, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for token in &self.tokens {
            hasher.update(token.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Keeps tokens whose document frequency is at least `min_df`; indices follow
/// first-occurrence order.
pub fn build_vocab(docs: &[TokenSequence], min_df: usize) -> Result<Vocabulary> {
    if min_df == 0 {
        return Err(VectorizeError::InvalidMinDf);
    }
    let mut order: Vec<&str> = Vec::new();
    let mut df: HashMap<&str, usize> = HashMap::new();
    let mut last_doc: HashMap<&str, usize> = HashMap::new();
    for (d, doc) in docs.iter().enumerate() {
        for token in doc.iter() {
            if last_doc.insert(token, d) == Some(d) {
                continue;
            }
            let count = df.entry(token).or_insert_with(|| {
                order.push(token);
                0
            });
            *count += 1;
        }
    }
    if order.is_empty() {
        return Err(VectorizeError::EmptyCorpus);
    }
    let (tokens, dfs): (Vec<String>, Vec<usize>) = order
        .into_iter()
        .filter(|t| df[t] >= min_df)
        .map(|t| (t.to_string(), df[t]))
        .unzip();
    if tokens.is_empty() {
        return Err(VectorizeError::EmptyVocabulary(min_df));
    }
    Vocabulary::from_parts(tokens, dfs, docs.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseVector {
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let ordered = entries.windows(2).all(|w| w[0].0 < w[1].0);
        let valid = entries
            .iter()
            .all(|&(i, v)| i < dim && v != 0.0 && v.is_finite());
        if !ordered || !valid {
            return Err(VectorizeError::InvalidEntries { dim });
        }
        Ok(Self { dim, entries })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    /// Drops exact zeros from a dense slice.
    pub fn from_dense(values: &[f64]) -> Self {
        Self {
            dim: values.len(),
            entries: values
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    /// Scaled by the largest magnitude first, so a single entry `v` has
    /// norm exactly `|v|` and large values do not overflow.
    pub fn l2_norm(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        if factor == 0.0 {
            return Self::zeros(self.dim);
        }
        Self {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, v)| (i, v * factor)).collect(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for &(i, v) in &self.entries {
            out[i] = v;
        }
        out
    }
}

/// Occurrence counts of in-vocabulary tokens; unknown tokens are ignored.
pub fn count_vectorize(doc: &TokenSequence, vocab: &Vocabulary) -> SparseVector {
    let mut indices: Vec<usize> = doc.iter().filter_map(|t| vocab.index_of(t)).collect();
    indices.sort_unstable();
    let mut entries: Vec<(usize, f64)> = Vec::new();
    for i in indices {
        match entries.last_mut() {
            Some((last, count)) if *last == i => *count += 1.0,
            _ => entries.push((i, 1.0)),
        }
    }
    SparseVector {
        dim: vocab.len(),
        entries,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfModel {
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn from_idf(idf: Vec<f64>) -> Self {
        Self { idf }
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }
}

/// Smooth idf over `docs`, counting document frequency for vocabulary tokens only.
pub fn fit_idf(docs: &[TokenSequence], vocab: &Vocabulary) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(VectorizeError::EmptyCorpus);
    }
    let mut df = vec![0usize; vocab.len()];
    let mut seen = vec![usize::MAX; vocab.len()];
    for (d, doc) in docs.iter().enumerate() {
        for i in doc.iter().filter_map(|t| vocab.index_of(t)) {
            if seen[i] != d {
                seen[i] = d;
                df[i] += 1;
            }
        }
    }
    let n = docs.len() as f64;
    let idf = df
        .iter()
        .map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0)
        .collect();
    Ok(TfidfModel { idf })
}

/// Weights counts by idf and L2-normalizes. Zero input stays zero.
pub fn tfidf_transform(counts: &SparseVector, model: &TfidfModel) -> Result<SparseVector> {
    if counts.dim != model.idf.len() {
        return Err(VectorizeError::DimensionMismatch {
            expected: model.idf.len(),
            actual: counts.dim,
        });
    }
    if counts.is_zero() {
        return Ok(counts.clone());
    }
    let weighted = SparseVector {
        dim: counts.dim,
        entries: counts
            .entries
            .iter()
            .map(|&(i, c)| (i, c * model.idf[i]))
            .collect(),
    };
    let norm = weighted.l2_norm();
    Ok(SparseVector {
        dim: weighted.dim,
        entries: weighted.entries.iter().map(|&(i, v)| (i, v / norm)).collect(),
    })
}
