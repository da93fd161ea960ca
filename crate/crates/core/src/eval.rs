//! Classification metrics, the logistic-regression baseline and benchmark
//! rows.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{LabeledDataset, NodeClassifier};
use crate::text::TfidfModel;

fn check_pair<A, B>(labels: &[A], other: &[B]) -> Result<()> {
    check_dims("metric inputs", labels.len(), other.len())?;
    if labels.is_empty() {
        return Err(Error::EmptyInput("metric inputs"));
    }
    Ok(())
}

pub fn accuracy(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    check_pair(labels, predictions)?;
    let hits = labels.iter().zip(predictions).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// F1 of `positive` against every other class. Zero when there is no true
/// positive.
pub fn f1(labels: &[usize], predictions: &[usize], positive: usize) -> Result<f64> {
    check_pair(labels, predictions)?;
    let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
    for (&l, &p) in labels.iter().zip(predictions) {
        match (l == positive, p == positive) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fne += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp as f64 / (2 * tp + fp + fne) as f64)
}

/// Unweighted mean of the per-class F1 over `n_classes` classes.
pub fn macro_f1(labels: &[usize], predictions: &[usize], n_classes: usize) -> Result<f64> {
    check_pair(labels, predictions)?;
    if n_classes == 0 {
        return Err(Error::EmptyInput("macro F1 classes"));
    }
    let mut total = 0.0;
    for c in 0..n_classes {
        total += f1(labels, predictions, c)?;
    }
    Ok(total / n_classes as f64)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half (the Mann–Whitney statistic), by one sort.
pub fn auroc(positive: &[bool], scores: &[f64]) -> Result<f64> {
    check_pair(positive, scores)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Config("AUROC scores contain NaN".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both positive and negative labels"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // twice the number of (positive, negative) pairs won, ties counting 1
    let mut twice_wins: u64 = 0;
    let mut neg_below: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_here, mut neg_here) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if positive[order[j]] {
                pos_here += 1;
            } else {
                neg_here += 1;
            }
            j += 1;
        }
        twice_wins += 2 * pos_here * neg_below + pos_here * neg_here;
        neg_below += neg_here;
        i = j;
    }
    Ok((twice_wins as f64 / 2.0) / (n_pos as f64 * n_neg as f64))
}

/// Mean recall over the classes that occur in `labels`.
pub fn balanced_accuracy(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    check_pair(labels, predictions)?;
    let n_classes = labels.iter().max().expect("non-empty") + 1;
    let mut seen = vec![0usize; n_classes];
    let mut hit = vec![0usize; n_classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        seen[l] += 1;
        if l == p {
            hit[l] += 1;
        }
    }
    let recalls: Vec<f64> = seen
        .iter()
        .zip(&hit)
        .filter(|(&s, _)| s > 0)
        .map(|(&s, &h)| h as f64 / s as f64)
        .collect();
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Anything that maps a document to class probabilities.
pub trait Scorer {
    fn class_probabilities(&self, tfidf: &TfidfModel, text: &str) -> Result<Vector>;
}

impl Scorer for NodeClassifier {
    fn class_probabilities(&self, tfidf: &TfidfModel, text: &str) -> Result<Vector> {
        Ok(self.predict(tfidf, text)?.1)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Logistic regression on TF-IDF features: one sigmoid unit for two
/// classes, a softmax layer otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    /// One row for binary tasks (weights of class 1), `C` rows otherwise.
    pub weights: Matrix,
    pub bias: Vector,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2_penalty: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            iterations: 500,
            learning_rate: 1.0,
            l2_penalty: 0.0,
        }
    }
}

impl LogisticModel {
    pub fn zeros(n_features: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        let rows = if n_classes == 2 { 1 } else { n_classes };
        Ok(LogisticModel {
            weights: Matrix::zeros(rows, n_features),
            bias: Vector::zeros(rows),
            n_classes,
        })
    }

    pub fn predict_proba(&self, x: &Vector) -> Result<Vector> {
        let z = linalg::axpy(1.0, &linalg::matvec(&self.weights, x)?, &self.bias)?;
        if self.n_classes == 2 {
            let p = sigmoid(z[0]);
            return Ok(Vector::from_slice(&[1.0 - p, p]));
        }
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| libm::exp(v - max)).collect();
        let s: f64 = e.iter().sum();
        Ok(Vector::from_vec(e.into_iter().map(|v| v / s).collect()))
    }

    /// Mean cross-entropy plus `l2_penalty · ‖weights‖² / 2`.
    pub fn loss(&self, xs: &[Vector], ys: &[usize], l2_penalty: f64) -> Result<f64> {
        check_pair(xs, ys)?;
        let mut total = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            total -= libm::log(self.predict_proba(x)?[y]);
        }
        let sq: f64 = self.weights.as_slice().iter().map(|w| w * w).sum();
        Ok(total / xs.len() as f64 + 0.5 * l2_penalty * sq)
    }

    /// Gradient of [`loss`](Self::loss) as `(weights, bias)`. For one sigmoid
    /// unit this is the mean of `(σ(w·x + b) − y) x`.
    pub fn grad(&self, xs: &[Vector], ys: &[usize], l2_penalty: f64) -> Result<(Matrix, Vector)> {
        check_pair(xs, ys)?;
        let (rows, cols) = self.weights.shape();
        let mut gw = Matrix::zeros(rows, cols);
        let mut gb = Vector::zeros(rows);
        for (x, &y) in xs.iter().zip(ys) {
            let p = self.predict_proba(x)?;
            let residual: Vec<f64> = if self.n_classes == 2 {
                vec![p[1] - if y == 1 { 1.0 } else { 0.0 }]
            } else {
                (0..rows).map(|c| p[c] - if c == y { 1.0 } else { 0.0 }).collect()
            };
            linalg::outer_acc(1.0, &residual, x.as_slice(), gw.as_mut_slice());
            for (g, r) in gb.as_mut_slice().iter_mut().zip(&residual) {
                *g += r;
            }
        }
        let inv_n = 1.0 / xs.len() as f64;
        for (g, w) in gw.as_mut_slice().iter_mut().zip(self.weights.as_slice()) {
            *g = *g * inv_n + l2_penalty * w;
        }
        gb.as_mut_slice().iter_mut().for_each(|g| *g *= inv_n);
        Ok((gw, gb))
    }
}

impl Scorer for LogisticModel {
    fn class_probabilities(&self, tfidf: &TfidfModel, text: &str) -> Result<Vector> {
        self.predict_proba(&tfidf.transform(text))
    }
}

/// Full-batch gradient descent from zero weights.
pub fn train_logistic(data: &LabeledDataset, tfidf: &TfidfModel, cfg: &LogisticConfig) -> Result<LogisticModel> {
    if data.is_empty() {
        return Err(Error::EmptyInput("logistic training data"));
    }
    if data.class_counts().iter().filter(|&&c| c > 0).count() < 2 {
        return Err(Error::Config("training labels cover fewer than 2 classes".into()));
    }
    if !(cfg.learning_rate > 0.0) || !(cfg.l2_penalty >= 0.0) {
        return Err(Error::Config(
            "logistic learning rate must be positive and l2 non-negative".into(),
        ));
    }
    let xs = tfidf.transform_all(&data.texts);
    let mut m = LogisticModel::zeros(tfidf.dim(), data.n_classes())?;
    for _ in 0..cfg.iterations {
        let (gw, gb) = m.grad(&xs, &data.labels, cfg.l2_penalty)?;
        for (w, g) in m.weights.as_mut_slice().iter_mut().zip(gw.as_slice()) {
            *w -= cfg.learning_rate * g;
        }
        m.bias = linalg::axpy(-cfg.learning_rate, &gb, &m.bias)?;
    }
    if !m.weights.is_finite() || !m.bias.is_finite() {
        return Err(Error::TrainingFailure { epoch: cfg.iterations });
    }
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Binary decision threshold on the positive-class probability.
    pub threshold: f64,
    /// Positive class for binary F1 and AUROC.
    pub positive: usize,
    /// Report macro F1 for multiclass tasks (otherwise F1 of `positive`).
    pub macro_f1: bool,
    /// Report mean one-vs-rest AUROC for multiclass tasks.
    pub one_vs_rest: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: 0.5,
            positive: 1,
            macro_f1: true,
            one_vs_rest: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub model: String,
    pub interpretable: bool,
    pub accuracy: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
    pub balanced_accuracy: f64,
}

/// Metrics from per-example class probabilities.
pub fn evaluate(
    name: &str,
    interpretable: bool,
    labels: &[usize],
    probs: &[Vector],
    opts: &EvalOptions,
) -> Result<EvalResult> {
    check_pair(labels, probs)?;
    let n_classes = probs[0].dim();
    if n_classes < 2 || probs.iter().any(|p| p.dim() != n_classes) {
        return Err(Error::Config(
            "every probability vector needs the same number (≥ 2) of classes".into(),
        ));
    }
    if let Some(&index) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::UnknownClass { index, n_classes });
    }
    let result = if n_classes == 2 {
        if opts.positive > 1 {
            return Err(Error::UnknownClass {
                index: opts.positive,
                n_classes,
            });
        }
        let negative = 1 - opts.positive;
        let preds: Vec<usize> = probs
            .iter()
            .map(|p| {
                if p[opts.positive] >= opts.threshold {
                    opts.positive
                } else {
                    negative
                }
            })
            .collect();
        let positive: Vec<bool> = labels.iter().map(|&l| l == opts.positive).collect();
        let scores: Vec<f64> = probs.iter().map(|p| p[opts.positive]).collect();
        EvalResult {
            model: name.into(),
            interpretable,
            accuracy: accuracy(labels, &preds)?,
            f1: f1(labels, &preds, opts.positive)?,
            auroc: Some(auroc(&positive, &scores)?),
            balanced_accuracy: balanced_accuracy(labels, &preds)?,
        }
    } else {
        let preds: Vec<usize> = probs.iter().map(|p| p.argmax().expect("non-empty")).collect();
        let f1 = if opts.macro_f1 {
            macro_f1(labels, &preds, n_classes)?
        } else {
            f1(labels, &preds, opts.positive)?
        };
        let auroc = if opts.one_vs_rest {
            let mut total = 0.0;
            for c in 0..n_classes {
                let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
                let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
                total += auroc(&positive, &scores)?;
            }
            Some(total / n_classes as f64)
        } else {
            None
        };
        EvalResult {
            model: name.into(),
            interpretable,
            accuracy: accuracy(labels, &preds)?,
            f1,
            auroc,
            balanced_accuracy: balanced_accuracy(labels, &preds)?,
        }
    };
    Ok(result)
}

/// One row per model, in the given order.
pub fn benchmark(
    models: &[(&str, bool, &dyn Scorer)],
    test: &LabeledDataset,
    tfidf: &TfidfModel,
    opts: &EvalOptions,
) -> Result<Vec<EvalResult>> {
    if test.is_empty() {
        return Err(Error::EmptyInput("benchmark test set"));
    }
    models
        .iter()
        .map(|&(name, interpretable, scorer)| {
            let probs = test
                .texts
                .iter()
                .map(|t| scorer.class_probabilities(tfidf, t))
                .collect::<Result<Vec<Vector>>>()
                .and_then(|probs| evaluate(name, interpretable, &test.labels, &probs, opts));
            probs.map_err(|e| e.context(format!("model {name}")))
        })
        .collect()
}
