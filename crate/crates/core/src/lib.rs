//! Interpretable text classification with a neural ODE.
//!
//! A document is featurized with TF-IDF, encoded linearly into a hidden
//! state `h(0)`, evolved under the learned field `dh/dt = ReLU(W h + b)` to
//! `h(1)`, and classified by a softmax head. Gradients through the flow use
//! the adjoint method. Saliency maps and vector-field samples expose what
//! the model learned.
//!
//! The crate is `no_std` and only needs `alloc`.

#![no_std]
// `!(x > 0.0)` style checks are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod adjoint;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod interpret;
pub mod linalg;
pub mod model;
pub mod odesolve;
pub mod text;

pub use error::{Error, Result};
