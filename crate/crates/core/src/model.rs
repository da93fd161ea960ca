//! The ODE text classifier: linear encoder, ODE flow over `[0, 1]`, softmax
//! head on the terminal state. Trained by Adam with gradients through the
//! flow from the adjoint pass.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adjoint;
use crate::dynamics::{DynamicsParams, ParamGrad};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::odesolve::SolverConfig;
use crate::text::TfidfModel;

pub const DEFAULT_HIDDEN_DIM: usize = 64;

/// Integration window of the flow.
pub const T0: f64 = 0.0;
pub const T1: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct NodeClassifier {
    /// `d × |V|`.
    pub encoder: Matrix,
    pub encoder_bias: Vector,
    pub dynamics: DynamicsParams,
    /// `C × d`.
    pub head: Matrix,
    pub head_bias: Vector,
    pub solver: SolverConfig,
    pub label_names: Vec<String>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub h0: Vector,
    pub h1: Vector,
    pub logits: Vector,
    pub probs: Vector,
}

/// Gradient with the same layout as the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub encoder: Matrix,
    pub encoder_bias: Vector,
    pub dynamics: ParamGrad,
    pub head: Matrix,
    pub head_bias: Vector,
}

impl ModelGrad {
    fn zeros_like(m: &NodeClassifier) -> Self {
        let (d, v) = m.encoder.shape();
        ModelGrad {
            encoder: Matrix::zeros(d, v),
            encoder_bias: Vector::zeros(d),
            dynamics: ParamGrad::zeros(d),
            head: Matrix::zeros(m.n_classes(), d),
            head_bias: Vector::zeros(m.n_classes()),
        }
    }

    pub fn slices(&self) -> [&[f64]; 6] {
        [
            self.encoder.as_slice(),
            self.encoder_bias.as_slice(),
            self.dynamics.weight.as_slice(),
            self.dynamics.bias.as_slice(),
            self.head.as_slice(),
            self.head_bias.as_slice(),
        ]
    }

    fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.encoder.as_mut_slice(),
            self.encoder_bias.as_mut_slice(),
            self.dynamics.weight.as_mut_slice(),
            self.dynamics.bias.as_mut_slice(),
            self.head.as_mut_slice(),
            self.head_bias.as_mut_slice(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            l2_penalty: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        for (name, beta) in [("beta1", self.adam_beta1), ("beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::Config(format!("adam {name} must be in [0, 1), got {beta}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "adam eps must be positive, got {}",
                self.adam_eps
            )));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Config(format!(
                "l2 penalty must be non-negative, got {}",
                self.l2_penalty
            )));
        }
        Ok(())
    }
}

/// Texts with class indices into `label_names`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub texts: Vec<String>,
    pub labels: Vec<usize>,
    pub label_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(texts: Vec<String>, labels: Vec<usize>, label_names: Vec<String>) -> Result<Self> {
        check_dims("dataset texts vs labels", texts.len(), labels.len())?;
        if let Some(&index) = labels.iter().find(|&&l| l >= label_names.len()) {
            return Err(Error::UnknownClass {
                index,
                n_classes: label_names.len(),
            });
        }
        Ok(LabeledDataset {
            texts,
            labels,
            label_names,
        })
    }

    /// Maps raw label strings to class indices. With `order`, classes follow
    /// it and any other label is rejected. Otherwise labels that all parse as
    /// integers are ordered numerically (so `-1, 0, 1` become `0, 1, 2`), and
    /// any other label set lexicographically.
    pub fn from_raw_labels<S: AsRef<str>>(texts: Vec<String>, raw: &[S], order: Option<&[String]>) -> Result<Self> {
        let label_names: Vec<String> = match order {
            Some(names) => {
                let unique: BTreeSet<&str> = names.iter().map(String::as_str).collect();
                if unique.len() != names.len() {
                    return Err(Error::Config("label order lists a label twice".into()));
                }
                names.to_vec()
            }
            None => {
                let unique: BTreeSet<&str> = raw.iter().map(AsRef::as_ref).collect();
                let mut names: Vec<String> = unique.into_iter().map(String::from).collect();
                let numeric: Option<Vec<i64>> = names.iter().map(|n| n.trim().parse().ok()).collect();
                if let Some(keys) = numeric {
                    let mut keyed: Vec<(i64, String)> = keys.into_iter().zip(names).collect();
                    keyed.sort();
                    names = keyed.into_iter().map(|(_, n)| n).collect();
                }
                names
            }
        };
        let labels = raw
            .iter()
            .map(|l| {
                let l = l.as_ref();
                label_names
                    .iter()
                    .position(|n| n == l)
                    .ok_or_else(|| Error::Config(format!("label {l:?} is not one of {label_names:?}")))
            })
            .collect::<Result<Vec<usize>>>()?;
        Self::new(texts, labels, label_names)
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn softmax(logits: &Vector) -> Vector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| libm::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    Vector::from_vec(exps.into_iter().map(|e| e / sum).collect())
}

/// `-ln softmax(logits)[label]`, without forming the probability.
fn neg_log_prob(logits: &Vector, label: usize) -> f64 {
    let top = logits.argmax().expect("non-empty logits");
    let max = logits[top];
    // log1p keeps the precision of near-certain predictions
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != top)
        .map(|(_, z)| libm::exp(z - max))
        .sum();
    (max - logits[label]) + libm::log1p(rest)
}

impl NodeClassifier {
    /// All-zero parameters: uniform predictions and an identity flow.
    pub fn zeros(n_features: usize, hidden_dim: usize, label_names: Vec<String>, solver: SolverConfig) -> Result<Self> {
        Self::check_shape(n_features, hidden_dim, label_names.len())?;
        let c = label_names.len();
        Ok(NodeClassifier {
            encoder: Matrix::zeros(hidden_dim, n_features),
            encoder_bias: Vector::zeros(hidden_dim),
            dynamics: DynamicsParams::zeros(hidden_dim),
            head: Matrix::zeros(c, hidden_dim),
            head_bias: Vector::zeros(c),
            solver,
            label_names,
        })
    }

    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(
        n_features: usize,
        hidden_dim: usize,
        label_names: Vec<String>,
        solver: SolverConfig,
        seed: u64,
    ) -> Result<Self> {
        let mut m = Self::zeros(n_features, hidden_dim, label_names, solver)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for w in [&mut m.encoder, &mut m.dynamics.weight, &mut m.head] {
            let bound = 1.0 / libm::sqrt(w.cols() as f64);
            w.as_mut_slice()
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-bound..bound));
        }
        Ok(m)
    }

    fn check_shape(n_features: usize, hidden_dim: usize, n_classes: usize) -> Result<()> {
        if n_features == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        if hidden_dim == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        Ok(())
    }

    /// Checks the dimension chain `|V| → d → d → C` and finiteness.
    pub fn validate(&self) -> Result<()> {
        let (d, v) = self.encoder.shape();
        Self::check_shape(v, d, self.label_names.len())?;
        check_dims("encoder bias", d, self.encoder_bias.dim())?;
        check_dims("dynamics", d, self.dynamics.weight.rows())?;
        self.dynamics.check()?;
        check_dims("head input", d, self.head.cols())?;
        check_dims("head classes", self.n_classes(), self.head.rows())?;
        check_dims("head bias", self.n_classes(), self.head_bias.dim())?;
        self.solver.validate()?;
        if !self.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite())) {
            return Err(Error::Config("model parameters are not finite".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.encoder.cols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.rows()
    }

    pub fn n_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn param_slices(&self) -> [&[f64]; 6] {
        [
            self.encoder.as_slice(),
            self.encoder_bias.as_slice(),
            self.dynamics.weight.as_slice(),
            self.dynamics.bias.as_slice(),
            self.head.as_slice(),
            self.head_bias.as_slice(),
        ]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.encoder.as_mut_slice(),
            self.encoder_bias.as_mut_slice(),
            self.dynamics.weight.as_mut_slice(),
            self.dynamics.bias.as_mut_slice(),
            self.head.as_mut_slice(),
            self.head_bias.as_mut_slice(),
        ]
    }

    pub fn encode(&self, x: &Vector) -> Result<Vector> {
        check_dims("model input", self.n_features(), x.dim())?;
        linalg::axpy(1.0, &linalg::matvec(&self.encoder, x)?, &self.encoder_bias)
    }

    pub fn forward(&self, x: &Vector) -> Result<Forward> {
        let h0 = self.encode(x)?;
        let (h1, _) = self.dynamics.flow(&h0, T0, T1, &self.solver)?;
        let logits = linalg::axpy(1.0, &linalg::matvec(&self.head, &h1)?, &self.head_bias)?;
        let probs = softmax(&logits);
        Ok(Forward { h0, h1, logits, probs })
    }

    /// Mean cross-entropy plus `l2_penalty · Σθ² / 2`.
    pub fn loss(&self, batch: &[(Vector, usize)], l2_penalty: f64) -> Result<f64> {
        self.loss_of(batch.iter().map(|(x, y)| (x, *y)), l2_penalty)
    }

    fn loss_of<'a, I>(&self, batch: I, l2_penalty: f64) -> Result<f64>
    where
        I: ExactSizeIterator<Item = (&'a Vector, usize)>,
    {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyInput("loss batch"));
        }
        let mut total = 0.0;
        for (i, (x, y)) in batch.enumerate() {
            self.check_label(y)?;
            let f = self.forward(x).map_err(|e| e.context(format!("example {i}")))?;
            total += neg_log_prob(&f.logits, y);
        }
        Ok(total / n as f64 + 0.5 * l2_penalty * self.squared_norm())
    }

    fn squared_norm(&self) -> f64 {
        self.param_slices().iter().flat_map(|s| s.iter()).map(|x| x * x).sum()
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.n_classes() {
            return Err(Error::UnknownClass {
                index: label,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    /// Gradient of [`loss`](Self::loss).
    pub fn grad(&self, batch: &[(Vector, usize)], l2_penalty: f64) -> Result<ModelGrad> {
        Ok(self.loss_and_grad(batch.iter().map(|(x, y)| (x, *y)), l2_penalty)?.1)
    }

    /// Loss and gradient of a batch in one pass. Per-example terms are summed
    /// in batch order.
    pub fn loss_and_grad<'a, I>(&self, batch: I, l2_penalty: f64) -> Result<(f64, ModelGrad)>
    where
        I: ExactSizeIterator<Item = (&'a Vector, usize)>,
    {
        let n = batch.len();
        if n == 0 {
            return Err(Error::EmptyInput("gradient batch"));
        }
        let mut g = ModelGrad::zeros_like(self);
        let mut total = 0.0;
        for (i, (x, y)) in batch.enumerate() {
            self.check_label(y)?;
            total += self
                .accumulate_example(x, y, &mut g)
                .map_err(|e| e.context(format!("example {i}")))?;
        }
        let inv_n = 1.0 / n as f64;
        for (gs, ps) in g.slices_mut().into_iter().zip(self.param_slices()) {
            for (gv, pv) in gs.iter_mut().zip(ps) {
                *gv = *gv * inv_n + l2_penalty * pv;
            }
        }
        Ok((total * inv_n + 0.5 * l2_penalty * self.squared_norm(), g))
    }

    fn accumulate_example(&self, x: &Vector, y: usize, g: &mut ModelGrad) -> Result<f64> {
        let f = self.forward(x)?;
        let mut dlogits = f.probs.clone();
        dlogits[y] -= 1.0;
        linalg::outer_acc(1.0, dlogits.as_slice(), f.h1.as_slice(), g.head.as_mut_slice());
        for (gb, d) in g.head_bias.as_mut_slice().iter_mut().zip(dlogits.iter()) {
            *gb += d;
        }
        let dh1 = linalg::matvec_transpose(&self.head, &dlogits)?;
        let (dh0, dtheta) = self.flow_backward(&f.h1, &dh1)?;
        for (acc, v) in g
            .dynamics
            .weight
            .as_mut_slice()
            .iter_mut()
            .zip(dtheta.weight.as_slice())
        {
            *acc += v;
        }
        for (acc, v) in g.dynamics.bias.as_mut_slice().iter_mut().zip(dtheta.bias.iter()) {
            *acc += v;
        }
        linalg::outer_acc(1.0, dh0.as_slice(), x.as_slice(), g.encoder.as_mut_slice());
        for (gb, d) in g.encoder_bias.as_mut_slice().iter_mut().zip(dh0.iter()) {
            *gb += d;
        }
        Ok(neg_log_prob(&f.logits, y))
    }

    /// `(∂L/∂h0, ∂L/∂θ)` from `h1` and `∂L/∂h1`. A zero field needs no solve.
    pub(crate) fn flow_backward(&self, h1: &Vector, dh1: &Vector) -> Result<(Vector, ParamGrad)> {
        if self.dynamics.is_zero() {
            return Ok((dh1.clone(), ParamGrad::zeros(self.hidden_dim())));
        }
        adjoint::backward(&self.dynamics, h1, dh1, T0, T1, &self.solver)
    }

    /// Class with the highest probability (lowest index on ties) and the
    /// probabilities.
    pub fn predict_features(&self, x: &Vector) -> Result<(usize, Vector)> {
        let f = self.forward(x)?;
        let label = f.probs.argmax().expect("at least two classes");
        Ok((label, f.probs))
    }

    pub fn predict(&self, tfidf: &TfidfModel, text: &str) -> Result<(usize, Vector)> {
        self.predict_features(&tfidf.transform(text))
    }
}

/// Trains from `model` and returns the trained copy with the per-epoch mean
/// training loss. Mini-batches are reshuffled every epoch from a generator
/// seeded with `cfg.seed`.
pub fn train(
    model: &NodeClassifier,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    tfidf: &TfidfModel,
) -> Result<(NodeClassifier, Vec<f64>)> {
    train_with(model, data, cfg, tfidf, |_, _| {})
}

/// [`train`] that reports `(epoch, mean loss)` after every epoch.
pub fn train_with<F: FnMut(usize, f64)>(
    model: &NodeClassifier,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    tfidf: &TfidfModel,
    mut on_epoch: F,
) -> Result<(NodeClassifier, Vec<f64>)> {
    cfg.validate()?;
    model.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput("training data"));
    }
    check_dims("tfidf features vs model input", model.n_features(), tfidf.dim())?;
    check_dims("dataset classes vs model classes", model.n_classes(), data.n_classes())?;
    let present = data.class_counts().iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Config("training labels cover fewer than 2 classes".into()));
    }

    let features = tfidf.transform_all(&data.texts);
    let mut m = model.clone();
    let mut adam = Adam::new(&m, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let items = batch.iter().map(|&i| (&features[i], data.labels[i]));
            let (loss, g) = m.loss_and_grad(items, cfg.l2_penalty).map_err(|e| match e.root() {
                Error::Divergence { .. } | Error::StepLimit { .. } => Error::TrainingFailure { epoch },
                _ => e.context(format!("epoch {epoch}")),
            })?;
            if !loss.is_finite() {
                return Err(Error::TrainingFailure { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            adam.step(&mut m, &g);
        }
        let mean = epoch_loss / data.len() as f64;
        if !mean.is_finite() || !m.param_slices().iter().all(|s| s.iter().all(|x| x.is_finite())) {
            return Err(Error::TrainingFailure { epoch });
        }
        curve.push(mean);
        on_epoch(epoch, mean);
    }
    Ok((m, curve))
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: [Vec<f64>; 6],
    v: [Vec<f64>; 6],
}

impl Adam {
    fn new(model: &NodeClassifier, cfg: &TrainConfig) -> Self {
        let shapes = model.param_slices().map(|s| s.len());
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            m: shapes.map(|n| vec![0.0; n]),
            v: shapes.map(|n| vec![0.0; n]),
        }
    }

    fn step(&mut self, model: &mut NodeClassifier, g: &ModelGrad) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        let params = model.param_slices_mut();
        for (k, (p, gs)) in params.into_iter().zip(g.slices()).enumerate() {
            for (i, (pv, gv)) in p.iter_mut().zip(gs).enumerate() {
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *pv -= self.lr * (*m / c1) / (libm::sqrt(*v / c2) + self.eps);
            }
        }
    }
}
