//! Dense `f64` vectors and row-major matrices.
//!
//! Just enough arithmetic for the solver, the dynamics and the classifier
//! heads. Everything here is a pure function over borrowed inputs.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::error::{check_dims, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    pub fn from_slice(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }

    /// Standard basis vector `e_i` of length `dim`.
    pub fn basis(dim: usize, i: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.0[i] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> core::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Vector) -> Result<f64> {
        check_dims("dot", self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    pub fn scale(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|x| alpha * x).collect())
    }

    pub fn sub(&self, other: &Vector) -> Result<Vector> {
        axpy(-1.0, other, self)
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &x) in self.0.iter().enumerate() {
            match best {
                Some((_, b)) if x <= b => {}
                _ => best = Some((i, x)),
            }
        }
        best.map(|(i, _)| i)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dims("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_dims("Matrix::from_rows", cols, r.len())?;
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn scale(&self, alpha: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| alpha * x).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        t
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(dot(&self.data, &self.data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `m · v`.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    check_dims("matvec", m.cols, v.dim())?;
    let mut out = Vector::zeros(m.rows);
    matvec_into(m, v.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// `mᵀ · v`.
pub fn matvec_transpose(m: &Matrix, v: &Vector) -> Result<Vector> {
    check_dims("matvec_transpose", m.rows, v.dim())?;
    let mut out = Vector::zeros(m.cols);
    matvec_transpose_into(m, v.as_slice(), out.as_mut_slice());
    Ok(out)
}

/// `α·x + y`.
pub fn axpy(alpha: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    check_dims("axpy", x.dim(), y.dim())?;
    Ok(Vector(x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect()))
}

/// `a bᵀ`.
pub fn outer(a: &Vector, b: &Vector) -> Matrix {
    let mut m = Matrix::zeros(a.dim(), b.dim());
    outer_acc(1.0, a.as_slice(), b.as_slice(), m.as_mut_slice());
    m
}

pub fn norm2(v: &Vector) -> f64 {
    norm2_slice(v.as_slice())
}

// Slice kernels shared with the solver and the adjoint's flat state.

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2_slice(v: &[f64]) -> f64 {
    // scaled to avoid overflow on large entries
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let ss: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * libm::sqrt(ss)
}

pub(crate) fn matvec_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), v);
    }
}

pub(crate) fn matvec_transpose_into(m: &Matrix, v: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        for (o, &mij) in out.iter_mut().zip(m.row(i)) {
            *o += vi * mij;
        }
    }
}

/// `out += α · a bᵀ`, with `out` row-major `|a| × |b|`.
pub fn outer_acc(alpha: f64, a: &[f64], b: &[f64], out: &mut [f64]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        let s = alpha * ai;
        if s == 0.0 {
            continue;
        }
        for (o, &bj) in out[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *o += s * bj;
        }
    }
}
