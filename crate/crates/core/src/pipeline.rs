//! End-to-end training and inference: cleanse → vectorize → classify, or
//! cleanse → encoder. Also maps trained models to and from containers.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::classify::{self, Classifier, ClassifyError, LinearFitConfig, LinearModel, LossKind, NBModel};
use crate::cleanse::{tokenize, CleanseError, CleansingConfig, CleansingStep, TokenSequence};
use crate::container::{ContainerError, ModelContainer, Section};
use crate::corpus_io::{self, CorpusError, Label, SplitSpec, TweetRecord};
use crate::embed::{self, EmbedError, EmbedTrainConfig, EmbeddingMatrix};
use crate::encoder::{self, EncoderConfig, EncoderError, EncoderParams, EpochRecord, FineTuneConfig};
use crate::eval::{self, EvalError, MetricsReport};
use crate::optimize::{OptimizerConfig, OptimizerKind};
use crate::vectorize::{self, SparseVector, TfidfModel, VectorizeError, Vocabulary};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Cleanse(#[from] CleanseError),
    #[error(transparent)]
    Vectorize(#[from] VectorizeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error("{0}")]
    Incompatible(String),
    #[error("container is missing section `{0}`")]
    MissingSection(String),
    #[error("bad container metadata: {0}")]
    Metadata(String),
    #[error("unknown {what} `{value}`")]
    UnknownName { what: &'static str, value: String },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VectorizerKind {
    Count,
    Tfidf,
    Cbow,
    Skipgram,
}

impl VectorizerKind {
    pub const ALL: [VectorizerKind; 4] = [Self::Count, Self::Tfidf, Self::Cbow, Self::Skipgram];

    pub fn name(self) -> &'static str {
        match self {
            Self::Count => "count",
            Self::Tfidf => "tfidf",
            Self::Cbow => "cbow",
            Self::Skipgram => "skipgram",
        }
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, Self::Cbow | Self::Skipgram)
    }

    /// Classifiers averaged for this vectorizer in the comparison table.
    /// Naive Bayes needs non-negative features, so embedding vectorizers
    /// take logistic regression in that slot.
    pub fn classifier_suite(self) -> [ModelKind; 3] {
        if self.is_embedding() {
            [ModelKind::Logreg, ModelKind::Logreg, ModelKind::Svm]
        } else {
            [ModelKind::Nb, ModelKind::Logreg, ModelKind::Svm]
        }
    }
}

impl fmt::Display for VectorizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VectorizerKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "count" => Ok(Self::Count),
            "tfidf" | "tf-idf" => Ok(Self::Tfidf),
            "cbow" => Ok(Self::Cbow),
            "skipgram" | "skip-gram" => Ok(Self::Skipgram),
            _ => Err(PipelineError::UnknownName {
                what: "vectorizer",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Nb,
    Logreg,
    Svm,
    Encoder,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Nb => "nb",
            Self::Logreg => "logreg",
            Self::Svm => "svm",
            Self::Encoder => "encoder",
        }
    }

    /// Code stored in the container header.
    pub fn code(self) -> u32 {
        match self {
            Self::Nb => 1,
            Self::Logreg => 2,
            Self::Svm => 3,
            Self::Encoder => 4,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            1 => Ok(Self::Nb),
            2 => Ok(Self::Logreg),
            3 => Ok(Self::Svm),
            4 => Ok(Self::Encoder),
            _ => Err(ContainerError::UnknownModelKind(code).into()),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "nb" | "naive_bayes" => Ok(Self::Nb),
            "logreg" | "lr" => Ok(Self::Logreg),
            "svm" => Ok(Self::Svm),
            "encoder" | "bert" => Ok(Self::Encoder),
            _ => Err(PipelineError::UnknownName {
                what: "model",
                value: s.to_string(),
            }),
        }
    }
}

/// Every knob of a training run. `None` fields take the model's default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub vectorizer: VectorizerKind,
    pub model: ModelKind,
    pub val_fraction: f64,
    pub seed: u64,
    pub dedup: bool,
    pub min_df: usize,
    pub alpha: f64,
    pub l2: f64,
    pub learning_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub optimizer: Option<OptimizerKind>,
    pub dropout: f64,
    pub embed: EmbedTrainConfig,
    pub encoder: EncoderConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            vectorizer: VectorizerKind::Tfidf,
            model: ModelKind::Nb,
            val_fraction: 0.15,
            seed: 2,
            dedup: true,
            min_df: 1,
            alpha: 1.0,
            l2: 1e-4,
            learning_rate: None,
            epochs: None,
            batch_size: None,
            optimizer: None,
            dropout: 0.0,
            embed: EmbedTrainConfig::default(),
            encoder: EncoderConfig::default(),
        }
    }
}

impl TrainOptions {
    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            val_fraction: self.val_fraction,
            seed: self.seed,
            stratified: true,
        }
    }

    pub fn linear_config(&self, loss_kind: LossKind) -> LinearFitConfig {
        let base = LinearFitConfig::logistic();
        let kind = self.optimizer.unwrap_or(OptimizerKind::Adam);
        LinearFitConfig {
            loss_kind,
            l2: self.l2,
            optimizer: OptimizerConfig::new(kind, self.learning_rate.unwrap_or(base.optimizer.learning_rate)),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            seed: self.seed,
        }
    }

    pub fn fine_tune_config(&self) -> FineTuneConfig {
        let base = FineTuneConfig::default();
        FineTuneConfig {
            learning_rate: self.learning_rate.unwrap_or(base.learning_rate),
            dropout_rate: self.dropout,
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            optimizer: self.optimizer.unwrap_or(base.optimizer),
            val_fraction: self.val_fraction,
            split_seed: self.seed,
        }
    }

    fn vocab_min_df(&self) -> usize {
        if self.model == ModelKind::Encoder {
            1
        } else {
            self.min_df
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Featurizer {
    Count,
    Tfidf(TfidfModel),
    Embedding(EmbeddingMatrix),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Classic {
        featurizer: Featurizer,
        classifier: Classifier,
    },
    Encoder {
        params: EncoderParams,
        config: EncoderConfig,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: Label,
    /// Probability of the disaster class, or the raw margin for the SVM.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub options: TrainOptions,
    pub cleansing: CleansingConfig,
    pub vocab: Vocabulary,
    pub predictor: Predictor,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub val_metrics: Option<MetricsReport>,
    pub history: Vec<EpochRecord>,
    pub n_train: usize,
    pub n_val: usize,
}

/// Labeled check, optional dedup, then the stratified split.
pub fn split_records(
    records: &[TweetRecord],
    options: &TrainOptions,
) -> Result<(Vec<TweetRecord>, Vec<TweetRecord>)> {
    if let Some(r) = records.iter().find(|r| r.target.is_none()) {
        return Err(CorpusError::UnlabeledRecord(r.id).into());
    }
    let deduped;
    let records = if options.dedup {
        deduped = corpus_io::dedup(records).0;
        &deduped[..]
    } else {
        records
    };
    Ok(corpus_io::stratified_split(records, &options.split_spec())?)
}

fn labels(records: &[TweetRecord]) -> Vec<Label> {
    records.iter().map(|r| r.target.unwrap_or(0)).collect()
}

pub fn train(records: &[TweetRecord], cleansing: &CleansingConfig, options: &TrainOptions) -> Result<TrainOutcome> {
    let (train_set, val_set) = split_records(records, options)?;
    let (vocab, predictor, history) = if options.model == ModelKind::Encoder {
        let deduped = if options.dedup {
            corpus_io::dedup(records).0
        } else {
            records.to_vec()
        };
        let tuned = encoder::fine_tune(&deduped, Some(cleansing), &options.fine_tune_config(), &options.encoder)?;
        let predictor = Predictor::Encoder {
            params: tuned.params,
            config: tuned.config,
        };
        (tuned.vocab, predictor, tuned.history)
    } else {
        let tokens: Vec<TokenSequence> = train_set
            .iter()
            .map(|r| tokenize(&cleansing.cleanse(&r.text)))
            .collect();
        let vocab = vectorize::build_vocab(&tokens, options.min_df)?;
        let featurizer = match options.vectorizer {
            VectorizerKind::Count => Featurizer::Count,
            VectorizerKind::Tfidf => Featurizer::Tfidf(vectorize::fit_idf(&tokens, &vocab)?),
            VectorizerKind::Skipgram => {
                Featurizer::Embedding(embed::train_skipgram(&tokens, &vocab, &options.embed)?.matrix)
            }
            VectorizerKind::Cbow => Featurizer::Embedding(embed::train_cbow(&tokens, &vocab, &options.embed)?.matrix),
        };
        let x = tokens
            .iter()
            .map(|t| featurize(&featurizer, t, &vocab))
            .collect::<Result<Vec<_>>>()?;
        let y = labels(&train_set);
        let classifier = match options.model {
            ModelKind::Nb => {
                if options.vectorizer.is_embedding() {
                    return Err(PipelineError::Incompatible(
                        "naive bayes needs non-negative features; use count or tfidf".into(),
                    ));
                }
                Classifier::NaiveBayes(classify::nb_fit(&x, &y, options.alpha)?)
            }
            ModelKind::Logreg => Classifier::Linear(classify::linear_fit(&x, &y, &options.linear_config(LossKind::Logistic))?),
            ModelKind::Svm => Classifier::Linear(classify::linear_fit(&x, &y, &options.linear_config(LossKind::Hinge))?),
            ModelKind::Encoder => unreachable!("handled above"),
        };
        (vocab, Predictor::Classic { featurizer, classifier }, Vec::new())
    };
    let model = TrainedModel {
        options: options.clone(),
        cleansing: cleansing.clone(),
        vocab,
        predictor,
    };
    let val_metrics = if val_set.is_empty() {
        None
    } else {
        Some(model.evaluate(&val_set)?)
    };
    Ok(TrainOutcome {
        model,
        val_metrics,
        history,
        n_train: train_set.len(),
        n_val: val_set.len(),
    })
}

fn featurize(featurizer: &Featurizer, tokens: &TokenSequence, vocab: &Vocabulary) -> Result<SparseVector> {
    let counts = || vectorize::count_vectorize(tokens, vocab);
    Ok(match featurizer {
        Featurizer::Count => counts(),
        Featurizer::Tfidf(m) => vectorize::tfidf_transform(&counts(), m)?,
        Featurizer::Embedding(e) => SparseVector::from_dense(&embed::doc_embed(tokens, e, vocab)),
    })
}

impl TrainedModel {
    pub fn tokens(&self, text: &str) -> TokenSequence {
        tokenize(&self.cleansing.cleanse(text))
    }

    pub fn predict(&self, text: &str) -> Result<Prediction> {
        let tokens = self.tokens(text);
        match &self.predictor {
            Predictor::Classic { featurizer, classifier } => {
                let (label, score) = classifier.predict(&featurize(featurizer, &tokens, &self.vocab)?)?;
                Ok(Prediction { label, score })
            }
            Predictor::Encoder { params, config } => {
                let ids = encoder::encode_tokens(&tokens, &self.vocab, config.max_len);
                let prob = encoder::encoder_forward(&ids, params, config, None)?.1.prob;
                Ok(Prediction {
                    label: Label::from(prob >= 0.5),
                    score: prob,
                })
            }
        }
    }

    pub fn evaluate(&self, records: &[TweetRecord]) -> Result<MetricsReport> {
        if let Some(r) = records.iter().find(|r| r.target.is_none()) {
            return Err(CorpusError::UnlabeledRecord(r.id).into());
        }
        let preds = records
            .iter()
            .map(|r| self.predict(&r.text).map(|p| p.label))
            .collect::<Result<Vec<_>>>()?;
        Ok(eval::evaluate(&preds, &labels(records))?)
    }

    /// The validation part of `records` under this model's own split.
    pub fn validation_split(&self, records: &[TweetRecord]) -> Result<Vec<TweetRecord>> {
        Ok(split_records(records, &self.options)?.1)
    }

    /// Rebuilds the training vocabulary from `records` with the stored split
    /// and cleansing; a differing hash means the data is not what the model
    /// was trained on.
    pub fn check_vocab(&self, records: &[TweetRecord]) -> Result<Option<VocabMismatch>> {
        let (train_set, _) = split_records(records, &self.options)?;
        let tokens: Vec<TokenSequence> = train_set.iter().map(|r| self.tokens(&r.text)).collect();
        let found = match vectorize::build_vocab(&tokens, self.options.vocab_min_df()) {
            Ok(v) => v.content_hash(),
            Err(VectorizeError::EmptyVocabulary(_)) => String::new(),
            Err(e) => return Err(e.into()),
        };
        let expected = self.vocab.content_hash();
        Ok((found != expected).then_some(VocabMismatch { expected, found }))
    }

    pub fn kind(&self) -> ModelKind {
        self.options.model
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMismatch {
    pub expected: String,
    pub found: String,
}

impl fmt::Display for VocabMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "VocabMismatch: model vocabulary hash {} but data yields {}",
            self.expected,
            if self.found.is_empty() { "<empty>" } else { &self.found }
        )
    }
}

// ---- container mapping ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct CleansingMeta {
    steps: Vec<String>,
    stopwords: Vec<String>,
    abbreviations: BTreeMap<String, String>,
    emoji_ranges: Vec<[u32; 2]>,
}

impl From<&CleansingConfig> for CleansingMeta {
    fn from(c: &CleansingConfig) -> Self {
        let mut stopwords: Vec<String> = c.stopwords().iter().cloned().collect();
        stopwords.sort();
        Self {
            steps: c.steps().iter().map(|s| s.name().to_string()).collect(),
            stopwords,
            abbreviations: c.abbreviations().iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
            emoji_ranges: c.emoji_ranges().iter().map(|r| [*r.start(), *r.end()]).collect(),
        }
    }
}

impl CleansingMeta {
    fn into_config(self) -> Result<CleansingConfig> {
        let steps = self
            .steps
            .iter()
            .map(|s| s.parse::<CleansingStep>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(CleansingConfig::new(
            steps,
            self.abbreviations.into_iter().collect::<HashMap<_, _>>(),
            self.stopwords.into_iter().collect::<HashSet<_>>(),
            self.emoji_ranges.into_iter().map(|[a, b]| a..=b).collect(),
        )?)
    }
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &Value, key: &str) -> Result<T> {
    let v = meta
        .get(key)
        .ok_or_else(|| PipelineError::Metadata(format!("missing `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| PipelineError::Metadata(format!("`{key}`: {e}")))
}

fn take_section(container: &ModelContainer, name: &str) -> Result<Vec<f64>> {
    container
        .section(name)
        .map(|s| s.data.clone())
        .ok_or_else(|| PipelineError::MissingSection(name.to_string()))
}

impl TrainedModel {
    pub fn to_container(&self) -> Result<ModelContainer> {
        let mut sections = Vec::new();
        let mut classifier_meta = json!({});
        match &self.predictor {
            Predictor::Classic { featurizer, classifier } => {
                match featurizer {
                    Featurizer::Count => {}
                    Featurizer::Tfidf(m) => sections.push(Section::vector("tfidf.idf", m.idf().to_vec())),
                    Featurizer::Embedding(e) => {
                        let shape = vec![e.rows(), e.dim];
                        sections.push(Section::new("embedding.input", shape.clone(), e.input_vectors.clone())?);
                        sections.push(Section::new("embedding.output", shape, e.output_vectors.clone())?);
                    }
                }
                match classifier {
                    Classifier::NaiveBayes(nb) => {
                        classifier_meta = json!({ "alpha": nb.alpha });
                        sections.push(Section::vector("nb.class_log_prior", nb.class_log_prior.to_vec()));
                        let mut flp = nb.feature_log_prob[0].clone();
                        flp.extend_from_slice(&nb.feature_log_prob[1]);
                        sections.push(Section::new("nb.feature_log_prob", vec![2, nb.dim()], flp)?);
                    }
                    Classifier::Linear(m) => {
                        classifier_meta = json!({ "loss_kind": m.loss_kind, "l2": m.l2 });
                        sections.push(Section::vector("linear.weights", m.weights.clone()));
                        sections.push(Section::vector("linear.bias", vec![m.bias]));
                    }
                }
            }
            Predictor::Encoder { params, config } => {
                classifier_meta = json!({ "encoder_config": config });
                for t in params.tensors(config) {
                    sections.push(Section::new(format!("encoder.{}", t.name), t.shape, t.data.to_vec())?);
                }
            }
        }
        let metadata = json!({
            "created_by": concat!("dtwc-core ", env!("CARGO_PKG_VERSION")),
            "options": self.options,
            "cleansing": CleansingMeta::from(&self.cleansing),
            "vocab": self.vocab,
            "vocab_hash": self.vocab.content_hash(),
            "classifier": classifier_meta,
        });
        Ok(ModelContainer {
            kind: self.options.model.code(),
            metadata,
            sections,
        })
    }

    pub fn from_container(container: &ModelContainer) -> Result<Self> {
        let kind = ModelKind::from_code(container.kind)?;
        let meta = &container.metadata;
        let options: TrainOptions = meta_field(meta, "options")?;
        if options.model != kind {
            return Err(PipelineError::Metadata(format!(
                "header says {kind} but metadata says {}",
                options.model
            )));
        }
        let cleansing = meta_field::<CleansingMeta>(meta, "cleansing")?.into_config()?;
        let vocab: Vocabulary = meta_field(meta, "vocab")?;
        let hash: String = meta_field(meta, "vocab_hash")?;
        if hash != vocab.content_hash() {
            return Err(PipelineError::Metadata("stored vocabulary does not match its hash".into()));
        }
        let classifier_meta: Value = meta_field(meta, "classifier")?;
        let predictor = if kind == ModelKind::Encoder {
            let config: EncoderConfig = meta_field(&classifier_meta, "encoder_config")?;
            let names: Vec<String> = EncoderParams::zeros(&config)
                .tensors(&config)
                .into_iter()
                .map(|t| t.name)
                .collect();
            let tensors = names
                .into_iter()
                .map(|n| take_section(container, &format!("encoder.{n}")).map(|d| (n, d)))
                .collect::<Result<Vec<_>>>()?;
            Predictor::Encoder {
                params: EncoderParams::from_tensors(&config, tensors)?,
                config,
            }
        } else {
            let featurizer = match options.vectorizer {
                VectorizerKind::Count => Featurizer::Count,
                VectorizerKind::Tfidf => Featurizer::Tfidf(TfidfModel::from_idf(take_section(container, "tfidf.idf")?)),
                VectorizerKind::Cbow | VectorizerKind::Skipgram => {
                    let section = container
                        .section("embedding.input")
                        .ok_or_else(|| PipelineError::MissingSection("embedding.input".into()))?;
                    Featurizer::Embedding(EmbeddingMatrix {
                        dim: section.shape.get(1).copied().unwrap_or(0),
                        input_vectors: section.data.clone(),
                        output_vectors: take_section(container, "embedding.output")?,
                    })
                }
            };
            let classifier = if kind == ModelKind::Nb {
                let prior = take_section(container, "nb.class_log_prior")?;
                let flp = take_section(container, "nb.feature_log_prob")?;
                if prior.len() != 2 || flp.len() % 2 != 0 {
                    return Err(PipelineError::Metadata("malformed naive bayes sections".into()));
                }
                let (a, b) = flp.split_at(flp.len() / 2);
                Classifier::NaiveBayes(NBModel {
                    class_log_prior: [prior[0], prior[1]],
                    feature_log_prob: [a.to_vec(), b.to_vec()],
                    alpha: meta_field(&classifier_meta, "alpha")?,
                })
            } else {
                let bias = take_section(container, "linear.bias")?;
                Classifier::Linear(LinearModel {
                    weights: take_section(container, "linear.weights")?,
                    bias: bias.first().copied().unwrap_or(0.0),
                    loss_kind: meta_field(&classifier_meta, "loss_kind")?,
                    l2: meta_field(&classifier_meta, "l2")?,
                })
            };
            Predictor::Classic { featurizer, classifier }
        };
        Ok(Self {
            options,
            cleansing,
            vocab,
            predictor,
        })
    }
}
