//! Word-level saliency and 2D views of the learned vector field.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{NodeClassifier, T0, T1};
use crate::text::TfidfModel;

/// What a saliency score measures.
pub const SCORE_TAG: &str = "mean |d logit / d x| over documents";

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyReport {
    pub class: usize,
    pub class_name: String,
    /// Every vocabulary token with its score, highest first, ties in
    /// lexicographic order.
    pub entries: Vec<(String, f64)>,
    pub n_documents: usize,
    pub score: &'static str,
}

impl SaliencyReport {
    /// The first `min(k, |V|)` entries.
    pub fn top_k(&self, k: usize) -> &[(String, f64)] {
        &self.entries[..k.min(self.entries.len())]
    }
}

/// `∂ logit_class / ∂x` at `x`: head row back through the flow and encoder.
pub fn logit_gradient(m: &NodeClassifier, x: &Vector, class: usize) -> Result<Vector> {
    check_class(m, class)?;
    let f = m.forward(x)?;
    let row = Vector::from_slice(m.head.row(class));
    let (dh0, _) = m.flow_backward(&f.h1, &row)?;
    linalg::matvec_transpose(&m.encoder, &dh0)
}

fn check_class(m: &NodeClassifier, class: usize) -> Result<()> {
    if class >= m.n_classes() {
        return Err(Error::UnknownClass {
            index: class,
            n_classes: m.n_classes(),
        });
    }
    Ok(())
}

/// Mean absolute logit gradient per vocabulary word over `docs`.
///
/// Documents are aggregated in sorted text order with a running mean, so the
/// result does not depend on the order of `docs` and a gradient shared by
/// every document comes back unchanged.
pub fn saliency<S: AsRef<str>>(
    m: &NodeClassifier,
    tfidf: &TfidfModel,
    docs: &[S],
    class: usize,
) -> Result<SaliencyReport> {
    check_class(m, class)?;
    if docs.is_empty() {
        return Err(Error::EmptyInput("saliency documents"));
    }
    let mut sorted: Vec<&str> = docs.iter().map(AsRef::as_ref).collect();
    sorted.sort_unstable();

    let mut mean = vec![0.0; tfidf.dim()];
    for (k, doc) in sorted.iter().enumerate() {
        let g = logit_gradient(m, &tfidf.transform(doc), class).map_err(|e| e.context(format!("document {doc:?}")))?;
        let inv = 1.0 / (k + 1) as f64;
        for (acc, v) in mean.iter_mut().zip(g.iter()) {
            *acc += (v.abs() - *acc) * inv;
        }
    }

    let vocab = tfidf.vocab();
    let mut entries: Vec<(String, f64)> = mean
        .into_iter()
        .enumerate()
        .map(|(j, s)| (vocab.token(j).into(), s))
        .collect();
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(SaliencyReport {
        class,
        class_name: m.label_names[class].clone(),
        entries,
        n_documents: sorted.len(),
        score: SCORE_TAG,
    })
}

/// [`saliency`] over the documents the model assigns to `class`, or over all
/// of `docs` when it assigns none.
pub fn class_saliency<S: AsRef<str>>(
    m: &NodeClassifier,
    tfidf: &TfidfModel,
    docs: &[S],
    class: usize,
) -> Result<SaliencyReport> {
    check_class(m, class)?;
    let mut predicted = Vec::new();
    for doc in docs {
        if m.predict(tfidf, doc.as_ref())?.0 == class {
            predicted.push(doc.as_ref());
        }
    }
    if predicted.is_empty() {
        saliency(m, tfidf, docs, class)
    } else {
        saliency(m, tfidf, &predicted, class)
    }
}

/// A 2D slice of hidden space.
#[derive(Debug, Clone, PartialEq)]
pub enum Plane {
    /// Two hidden coordinates.
    Axes(usize, usize),
    /// Rows are the two spanning directions (`2 × d`).
    Projection(Matrix),
}

impl Default for Plane {
    fn default() -> Self {
        Plane::Axes(0, 1)
    }
}

impl Plane {
    /// The plane as a `2 × d` matrix `P`: a point `(x, y)` sits at
    /// `Pᵀ[x, y]` and a hidden vector `v` projects to `P v`.
    pub fn basis(&self, d: usize) -> Result<Matrix> {
        match self {
            Plane::Axes(i, j) => {
                if *i >= d || *j >= d || i == j {
                    return Err(Error::Config(format!(
                        "plane axes ({i}, {j}) must be two distinct coordinates below {d}"
                    )));
                }
                let mut p = Matrix::zeros(2, d);
                p.set(0, *i, 1.0);
                p.set(1, *j, 1.0);
                Ok(p)
            }
            Plane::Projection(p) => {
                if p.shape() != (2, d) {
                    return Err(Error::Config(format!(
                        "projection must be 2 x {d}, got {} x {}",
                        p.rows(),
                        p.cols()
                    )));
                }
                if !p.is_finite() {
                    return Err(Error::Config("projection is not finite".into()));
                }
                Ok(p.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Bounds {
    pub fn validate(&self) -> Result<()> {
        let all = [self.xmin, self.xmax, self.ymin, self.ymax];
        if !all.iter().all(|v| v.is_finite()) || !(self.xmin < self.xmax) || !(self.ymin < self.ymax) {
            return Err(Error::Config(format!(
                "bounds must be finite with xmin < xmax and ymin < ymax, got {:?}",
                all
            )));
        }
        Ok(())
    }
}

/// Default evaluation time; the field is autonomous so any value gives the
/// same arrows.
pub const DEFAULT_FIELD_TIME: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct VectorFieldGrid {
    pub basis: Matrix,
    pub n: usize,
    /// `(x, y, dx, dy)`, `y` in the outer loop and `x` in the inner one.
    pub rows: Vec<[f64; 4]>,
}

fn grid_coordinate(lo: f64, hi: f64, k: usize, n: usize) -> f64 {
    if k + 1 == n {
        hi
    } else {
        lo + (hi - lo) * k as f64 / (n - 1) as f64
    }
}

/// Evaluates the dynamics on an `n × n` grid over `bounds` in `plane`,
/// projecting each arrow back onto the plane.
pub fn vector_field(m: &NodeClassifier, plane: &Plane, bounds: Bounds, n: usize, t: f64) -> Result<VectorFieldGrid> {
    bounds.validate()?;
    if n < 2 {
        return Err(Error::Config(format!("grid size must be at least 2, got {n}")));
    }
    let d = m.hidden_dim();
    let basis = plane.basis(d)?;
    let mut rows = Vec::with_capacity(n * n);
    for iy in 0..n {
        let y = grid_coordinate(bounds.ymin, bounds.ymax, iy, n);
        for ix in 0..n {
            let x = grid_coordinate(bounds.xmin, bounds.xmax, ix, n);
            let h = linalg::matvec_transpose(&basis, &Vector::from_slice(&[x, y]))?;
            let dh = m.dynamics.eval(t, &h)?;
            let arrow = linalg::matvec(&basis, &dh)?;
            rows.push([x, y, arrow[0], arrow[1]]);
        }
    }
    if !rows.iter().all(|r| r.iter().all(|v| v.is_finite())) {
        return Err(Error::Divergence { t });
    }
    Ok(VectorFieldGrid { basis, n, rows })
}

/// Hidden-state path of each document from `t = 0` to `1`, projected onto
/// `plane` as `(t, x, y)` samples.
pub fn trajectories<S: AsRef<str>>(
    m: &NodeClassifier,
    tfidf: &TfidfModel,
    docs: &[S],
    plane: &Plane,
    n_samples: usize,
) -> Result<Vec<Vec<[f64; 3]>>> {
    let basis = plane.basis(m.hidden_dim())?;
    docs.iter()
        .enumerate()
        .map(|(i, doc)| {
            let h0 = m.encode(&tfidf.transform(doc.as_ref()))?;
            let path = m
                .dynamics
                .trajectory(&h0, T0, T1, &m.solver, n_samples)
                .map_err(|e| e.context(format!("trajectory of document {i}")))?;
            path.iter()
                .map(|(t, h)| {
                    let p = linalg::matvec(&basis, h)?;
                    Ok([*t, p[0], p[1]])
                })
                .collect()
        })
        .collect()
}
