//! Classical baselines: multinomial Naive Bayes, logistic regression and a
//! linear SVM trained with hinge-loss subgradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::Label;
use crate::optimize::{self, OptimizeError, OptimizerConfig, OptimizerState};
use crate::vectorize::SparseVector;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("training data must contain both classes")]
    SingleClassCorpus,
    #[error("smoothing alpha must be positive, got {0}")]
    NonPositiveAlpha(f64),
    #[error("dimension mismatch: model has {expected} features, input has {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    InvalidLabel(Label),
    #[error("multinomial naive Bayes needs non-negative features")]
    NegativeFeature,
    #[error("hinge-loss models expose a margin, not a probability")]
    NotProbabilistic,
    #[error("batch size and epochs must be at least 1")]
    InvalidSchedule,
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

fn check_training_set(x: &[SparseVector], y: &[Label]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(ClassifyError::LengthMismatch {
            features: x.len(),
            labels: y.len(),
        });
    }
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(ClassifyError::InvalidLabel(bad));
    }
    if !(y.contains(&0) && y.contains(&1)) {
        return Err(ClassifyError::SingleClassCorpus);
    }
    let dim = x[0].dim();
    if let Some(v) = x.iter().find(|v| v.dim() != dim) {
        return Err(ClassifyError::DimensionMismatch {
            expected: dim,
            actual: v.dim(),
        });
    }
    Ok(dim)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^{-m})` without overflow.
fn log1p_exp_neg(m: f64) -> f64 {
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

/// Label 1 iff `score >= threshold`; ties go to the Disaster class.
pub fn predict_label(score: f64, threshold: f64) -> Label {
    Label::from(score >= threshold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NBModel {
    pub class_log_prior: [f64; 2],
    /// Row per class, one column per feature.
    pub feature_log_prob: [Vec<f64>; 2],
    pub alpha: f64,
}

/// Multinomial NB with additive smoothing. Fractional feature values (e.g.
/// TF-IDF weights) are treated as weighted counts.
pub fn nb_fit(x: &[SparseVector], y: &[Label], alpha: f64) -> Result<NBModel> {
    if !(alpha > 0.0) {
        return Err(ClassifyError::NonPositiveAlpha(alpha));
    }
    if x.is_empty() {
        return Err(ClassifyError::SingleClassCorpus);
    }
    let dim = check_training_set(x, y)?;
    let mut counts = [vec![0.0; dim], vec![0.0; dim]];
    let mut docs = [0usize; 2];
    for (v, &label) in x.iter().zip(y) {
        docs[label as usize] += 1;
        for &(i, value) in v.entries() {
            if value < 0.0 {
                return Err(ClassifyError::NegativeFeature);
            }
            counts[label as usize][i] += value;
        }
    }
    let n = x.len() as f64;
    let class_log_prior = [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()];
    let feature_log_prob = counts.map(|row| {
        let total: f64 = row.iter().sum();
        let denom = (total + alpha * dim as f64).ln();
        row.iter().map(|c| (c + alpha).ln() - denom).collect()
    });
    Ok(NBModel {
        class_log_prior,
        feature_log_prob,
        alpha,
    })
}

impl NBModel {
    pub fn dim(&self) -> usize {
        self.feature_log_prob[0].len()
    }

    /// Normalized log posteriors `[ln P(0|x), ln P(1|x)]`.
    pub fn predict_log_proba(&self, x: &SparseVector) -> Result<[f64; 2]> {
        if x.dim() != self.dim() {
            return Err(ClassifyError::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        let joint = [0, 1].map(|c| self.class_log_prior[c] + x.dot(&self.feature_log_prob[c]));
        let max = joint[0].max(joint[1]);
        let log_norm = max + ((joint[0] - max).exp() + (joint[1] - max).exp()).ln();
        Ok(joint.map(|j| j - log_norm))
    }

    /// Posterior probability of the Disaster class.
    pub fn predict_proba(&self, x: &SparseVector) -> Result<f64> {
        Ok(self.predict_log_proba(x)?[1].exp())
    }
}

pub fn nb_predict_log_proba(model: &NBModel, x: &SparseVector) -> Result<[f64; 2]> {
    model.predict_log_proba(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Logistic,
    Hinge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub loss_kind: LossKind,
    pub l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFitConfig {
    pub loss_kind: LossKind,
    pub l2: f64,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl LinearFitConfig {
    pub fn logistic() -> Self {
        Self {
            loss_kind: LossKind::Logistic,
            l2: 1e-4,
            optimizer: OptimizerConfig::adam(0.01),
            epochs: 10,
            batch_size: 32,
            seed: 0,
        }
    }

    pub fn hinge() -> Self {
        Self {
            loss_kind: LossKind::Hinge,
            ..Self::logistic()
        }
    }
}

impl LinearModel {
    pub fn zeros(dim: usize, loss_kind: LossKind, l2: f64) -> Self {
        Self {
            weights: vec![0.0; dim],
            bias: 0.0,
            loss_kind,
            l2,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w . x + b`, checked for dimension.
    pub fn margin(&self, x: &SparseVector) -> Result<f64> {
        if x.dim() != self.dim() {
            return Err(ClassifyError::DimensionMismatch {
                expected: self.dim(),
                actual: x.dim(),
            });
        }
        Ok(x.dot(&self.weights) + self.bias)
    }

    pub fn predict_proba(&self, x: &SparseVector) -> Result<f64> {
        match self.loss_kind {
            LossKind::Logistic => Ok(sigmoid(self.margin(x)?)),
            LossKind::Hinge => Err(ClassifyError::NotProbabilistic),
        }
    }

    /// Probability for logistic models, margin for hinge models.
    pub fn score(&self, x: &SparseVector) -> Result<f64> {
        match self.loss_kind {
            LossKind::Logistic => self.predict_proba(x),
            LossKind::Hinge => self.margin(x),
        }
    }

    pub fn predict(&self, x: &SparseVector) -> Result<Label> {
        let threshold = match self.loss_kind {
            LossKind::Logistic => 0.5,
            LossKind::Hinge => 0.0,
        };
        Ok(predict_label(self.score(x)?, threshold))
    }

    /// Mean loss over `(x, y)` plus `(l2 / 2) ||w||^2`, and its (sub)gradient
    /// with respect to `[w..., b]`.
    pub fn objective(&self, x: &[SparseVector], y: &[Label]) -> (f64, Vec<f64>) {
        let dim = self.dim();
        let mut grad = vec![0.0; dim + 1];
        let mut loss = 0.0;
        for (v, &label) in x.iter().zip(y) {
            let z = if label == 1 { 1.0 } else { -1.0 };
            let m = z * (v.dot(&self.weights) + self.bias);
            let dm = match self.loss_kind {
                LossKind::Logistic => {
                    loss += log1p_exp_neg(m);
                    -sigmoid(-m)
                }
                LossKind::Hinge => {
                    loss += (1.0 - m).max(0.0);
                    if m < 1.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
            };
            let coeff = dm * z;
            for &(i, value) in v.entries() {
                grad[i] += coeff * value;
            }
            grad[dim] += coeff;
        }
        let n = x.len().max(1) as f64;
        for g in &mut grad {
            *g /= n;
        }
        loss /= n;
        let sq: f64 = self.weights.iter().map(|w| w * w).sum();
        loss += 0.5 * self.l2 * sq;
        for (g, w) in grad.iter_mut().zip(&self.weights) {
            *g += self.l2 * w;
        }
        (loss, grad)
    }
}

/// Mini-batch training with the given optimizer. Batches are drawn in a
/// shuffled order seeded by `config.seed`.
pub fn linear_fit(x: &[SparseVector], y: &[Label], config: &LinearFitConfig) -> Result<LinearModel> {
    if x.is_empty() {
        return Err(ClassifyError::SingleClassCorpus);
    }
    let dim = check_training_set(x, y)?;
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(ClassifyError::InvalidSchedule);
    }
    config.optimizer.validate()?;

    let mut model = LinearModel::zeros(dim, config.loss_kind, config.l2);
    let mut state = OptimizerState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut batch_x = Vec::with_capacity(config.batch_size);
    let mut batch_y = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(x[i].clone());
                batch_y.push(y[i]);
            }
            let (_, grad) = model.objective(&batch_x, &batch_y);
            let (gw, gb) = grad.split_at(dim);
            let mut bias = [model.bias];
            optimize::step(
                &mut [&mut model.weights[..], &mut bias[..]],
                &[gw, gb],
                &mut state,
                &config.optimizer,
            )?;
            model.bias = bias[0];
        }
    }
    Ok(model)
}

/// A fitted classical classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Classifier {
    NaiveBayes(NBModel),
    Linear(LinearModel),
}

impl Classifier {
    /// Score in the model's natural scale and the thresholded label.
    pub fn predict(&self, x: &SparseVector) -> Result<(Label, f64)> {
        match self {
            Classifier::NaiveBayes(m) => {
                let p = m.predict_proba(x)?;
                Ok((predict_label(p, 0.5), p))
            }
            Classifier::Linear(m) => {
                let s = m.score(x)?;
                Ok((m.predict(x)?, s))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sv(dense: &[f64]) -> SparseVector {
        SparseVector::from_dense(dense)
    }

    #[test]
    fn nb_smoothing_arithmetic() {
        let x = [sv(&[1.0, 0.0]), sv(&[0.0, 1.0])];
        let m = nb_fit(&x, &[0, 1], 1.0).unwrap();
        assert!((m.feature_log_prob[0][0].exp() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.feature_log_prob[1][0].exp() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.class_log_prior, [0.5f64.ln(); 2]);
        for row in &m.feature_log_prob {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn nb_errors() {
        let x = [sv(&[1.0]), sv(&[2.0])];
        assert_eq!(nb_fit(&x, &[0, 1], 0.0), Err(ClassifyError::NonPositiveAlpha(0.0)));
        assert_eq!(nb_fit(&x, &[1, 1], 1.0), Err(ClassifyError::SingleClassCorpus));
        assert_eq!(nb_fit(&[sv(&[-1.0]), sv(&[1.0])], &[0, 1], 1.0), Err(ClassifyError::NegativeFeature));
        let m = nb_fit(&x, &[0, 1], 1.0).unwrap();
        assert!(matches!(m.predict_log_proba(&sv(&[1.0, 1.0])), Err(ClassifyError::DimensionMismatch { .. })));
    }

    #[test]
    fn nb_zero_vector_gives_prior() {
        let x = [sv(&[1.0, 0.0]), sv(&[0.0, 1.0]), sv(&[1.0, 1.0])];
        let m = nb_fit(&x, &[0, 1, 1], 1.0).unwrap();
        let lp = m.predict_log_proba(&SparseVector::zeros(2)).unwrap();
        assert!((lp[0] - m.class_log_prior[0]).abs() < 1e-15);
        assert!((lp[1] - m.class_log_prior[1]).abs() < 1e-15);
    }

    #[test]
    fn nb_mirror_corpus_is_neutral() {
        let x = [sv(&[2.0, 1.0]), sv(&[1.0, 2.0])];
        let m = nb_fit(&x, &[0, 1], 1.0).unwrap();
        let p = m.predict_log_proba(&sv(&[1.0, 1.0])).unwrap();
        assert!((p[0].exp() - 0.5).abs() < 1e-15);
        assert!((p[1].exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn predict_label_rules() {
        assert_eq!(predict_label(0.5, 0.5), 1);
        let m = LinearModel::zeros(2, LossKind::Logistic, 0.0);
        assert_eq!(m.predict_proba(&SparseVector::zeros(2)).unwrap(), 0.5);
        assert_eq!(m.predict(&SparseVector::zeros(2)).unwrap(), 1);

        let biased = LinearModel { bias: 10.0, ..m.clone() };
        let p = biased.predict_proba(&SparseVector::zeros(2)).unwrap();
        assert!((p - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert_eq!(predict_label(p, 0.5), 1);
        assert_eq!(predict_label(p, 1.0), 0);

        let hinge = LinearModel::zeros(2, LossKind::Hinge, 0.0);
        assert_eq!(hinge.predict_proba(&SparseVector::zeros(2)), Err(ClassifyError::NotProbabilistic));
        assert!(matches!(m.margin(&SparseVector::zeros(3)), Err(ClassifyError::DimensionMismatch { .. })));
    }

    fn separable() -> (Vec<SparseVector>, Vec<Label>) {
        (
            vec![sv(&[2.0, 0.1]), sv(&[1.5, 0.3]), sv(&[0.2, 1.8]), sv(&[0.1, 2.2])],
            vec![1, 1, 0, 0],
        )
    }

    #[test]
    fn linear_fit_separates() {
        let (x, y) = separable();
        for base in [LinearFitConfig::logistic(), LinearFitConfig::hinge()] {
            let config = LinearFitConfig {
                epochs: 200,
                batch_size: 2,
                optimizer: OptimizerConfig::adam(0.05),
                ..base
            };
            let model = linear_fit(&x, &y, &config).unwrap();
            let correct = x.iter().zip(&y).filter(|(v, l)| model.predict(v).unwrap() == **l).count();
            assert_eq!(correct, 4, "{:?}", config.loss_kind);
            assert_eq!(model, linear_fit(&x, &y, &config).unwrap());
        }
    }

    #[test]
    fn heavy_regularization_shrinks_weights() {
        let (x, y) = separable();
        let config = LinearFitConfig {
            l2: 1e6,
            epochs: 100,
            optimizer: OptimizerConfig::sgd(1e-7, 0.0),
            ..LinearFitConfig::logistic()
        };
        let model = linear_fit(&x, &y, &config).unwrap();
        let norm: f64 = model.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-3, "{norm}");
        let p = model.predict_proba(&x[0]).unwrap();
        assert!((p - 0.5).abs() < 0.05);
    }

    #[test]
    fn linear_fit_errors() {
        let (x, _) = separable();
        assert_eq!(
            linear_fit(&x, &[1, 1, 1, 1], &LinearFitConfig::logistic()),
            Err(ClassifyError::SingleClassCorpus)
        );
        assert!(matches!(
            linear_fit(&x, &[1, 0], &LinearFitConfig::logistic()),
            Err(ClassifyError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn hinge_subgradient_is_zero_at_margin_one() {
        let model = LinearModel { weights: vec![1.0], bias: 0.0, loss_kind: LossKind::Hinge, l2: 0.0 };
        let (loss, grad) = model.objective(&[sv(&[1.0])], &[1]);
        assert_eq!(loss, 0.0);
        assert_eq!(grad, [0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn logistic_gradient_matches_finite_differences(
            w in prop::collection::vec(-1.0f64..1.0, 3),
            b in -1.0f64..1.0,
            rows in prop::collection::vec((prop::collection::vec(-2.0f64..2.0, 3), 0u8..2), 1..6),
            l2 in 0.0f64..0.5,
        ) {
            let x: Vec<SparseVector> = rows.iter().map(|(v, _)| sv(v)).collect();
            let y: Vec<Label> = rows.iter().map(|(_, l)| *l).collect();
            let model = LinearModel { weights: w.clone(), bias: b, loss_kind: LossKind::Logistic, l2 };
            let (_, grad) = model.objective(&x, &y);
            let h = 1e-6;
            for k in 0..4 {
                let shifted = |delta: f64| {
                    let mut m = model.clone();
                    if k < 3 { m.weights[k] += delta } else { m.bias += delta }
                    m.objective(&x, &y).0
                };
                let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
                let rel = (grad[k] - numeric).abs() / grad[k].abs().max(numeric.abs()).max(1e-6);
                prop_assert!(rel < 1e-6, "k={} analytic={} numeric={}", k, grad[k], numeric);
            }
        }

        #[test]
        fn nb_argmax_invariant_to_scaling(
            rows in prop::collection::vec((prop::collection::vec(0u8..3, 4), 0u8..2), 4..10),
            query in prop::collection::vec(0u8..4, 4),
            scale in 0.1f64..10.0,
        ) {
            // alternating labels over an even row count gives equal priors
            let mut x = Vec::new();
            let mut y = Vec::new();
            for (i, (v, _)) in rows.iter().enumerate() {
                let dense: Vec<f64> = v.iter().map(|&c| c as f64).collect();
                x.push(sv(&dense));
                y.push((i % 2) as Label);
            }
            if x.len() % 2 == 1 { x.pop(); y.pop(); }
            let m = nb_fit(&x, &y, 1.0).unwrap();
            prop_assert!((m.class_log_prior[0] - m.class_log_prior[1]).abs() < 1e-15);
            let q: Vec<f64> = query.iter().map(|&c| c as f64).collect();
            prop_assume!(q.iter().any(|&v| v > 0.0));
            let a = m.predict_log_proba(&sv(&q)).unwrap();
            let scaled: Vec<f64> = q.iter().map(|v| v * scale).collect();
            let b = m.predict_log_proba(&sv(&scaled)).unwrap();
            let diff = a[1] - a[0];
            prop_assume!(diff.abs() > 1e-9);
            prop_assert_eq!(diff > 0.0, b[1] - b[0] > 0.0);
        }

        #[test]
        fn predict_label_is_monotone(a in -10.0f64..10.0, b in -10.0f64..10.0, t in -5.0f64..5.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(predict_label(lo, t) <= predict_label(hi, t));
        }
    }
}
