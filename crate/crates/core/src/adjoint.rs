//! Gradients through the ODE solve.
//!
//! [`backward`] is the continuous adjoint: it integrates the augmented
//! system `(h, a, ∂L/∂θ)` from `t1` back to `t0`, re-solving the state
//! alongside the adjoint instead of storing the forward trajectory.
//! [`backward_discrete`] differentiates an unrolled fixed-step RK4 solve in
//! reverse mode and keeps every step; it is the memory-heavy reference.

use alloc::vec;
use alloc::vec::Vec;

use crate::dynamics::{DynamicsParams, ParamGrad};
use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::odesolve::{self, BufferCensus, SolveStats, SolverConfig, Workspace};

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    /// `a(t) = ∂L/∂h(t)`.
    pub a: Vector,
    /// State re-integrated backward alongside `a`.
    pub h: Vector,
    pub grad_theta: ParamGrad,
}

#[derive(Debug, Clone)]
pub struct BackwardReport {
    /// Augmented state at `t0`.
    pub state: AdjointState,
    pub stats: SolveStats,
    /// Every buffer the backward pass allocated, measured after it finished.
    pub census: BufferCensus,
}

/// Returns `(∂L/∂h(t0), ∂L/∂θ)` given `h(t1)` and `∂L/∂h(t1)`.
pub fn backward(
    p: &DynamicsParams,
    h1: &Vector,
    dl_dh1: &Vector,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<(Vector, ParamGrad)> {
    let report = backward_report(p, h1, dl_dh1, t0, t1, cfg)?;
    Ok((report.state.a, report.state.grad_theta))
}

pub fn backward_report(
    p: &DynamicsParams,
    h1: &Vector,
    dl_dh1: &Vector,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<BackwardReport> {
    let d = p.dim();
    check_dims("adjoint backward (h1)", d, h1.dim())?;
    check_dims("adjoint backward (dL/dh1)", d, dl_dh1.dim())?;
    p.check()?;
    if !(t1 > t0) {
        return Err(Error::Config(alloc::format!(
            "adjoint backward pass needs t1 > t0, got [{t0}, {t1}]"
        )));
    }

    // layout: [h | a | dW (row-major) | db]
    let n = 3 * d + d * d;
    let mut y = vec![0.0; n];
    y[..d].copy_from_slice(h1.as_slice());
    y[d..2 * d].copy_from_slice(dl_dh1.as_slice());
    let mut scratch = vec![0.0; d];
    let mut kinks = p.kinks();
    let mut ws = Workspace::with_switches(n, d);

    let stats = {
        let mut rhs = |_t: f64, y: &[f64], out: &mut [f64]| {
            let (h, rest) = y.split_at(d);
            let a = &rest[..d];
            let (dh, rest) = out.split_at_mut(d);
            let (da, rest) = rest.split_at_mut(d);
            let (dw, db) = rest.split_at_mut(d * d);
            p.eval_into(h, dh);
            dw.fill(0.0);
            db.fill(0.0);
            p.vjp_into(h, a, -1.0, &mut scratch, da, dw, db);
        };
        // the parameter-gradient block does not steer the step size
        odesolve::integrate(
            &mut rhs,
            &mut kinks,
            &mut y,
            t1,
            t0,
            cfg,
            2 * d,
            &mut ws,
            |_, _, _, _, _| {},
        )
        .map_err(|e| e.context("adjoint backward pass"))?
    };

    let census = ws.census().merge(BufferCensus::of(&[&y, &scratch]));
    let state = AdjointState {
        h: Vector::from_slice(&y[..d]),
        a: Vector::from_slice(&y[d..2 * d]),
        grad_theta: ParamGrad {
            weight: Matrix::from_row_major(d, d, y[2 * d..2 * d + d * d].to_vec())?,
            bias: Vector::from_slice(&y[2 * d + d * d..]),
        },
    };
    Ok(BackwardReport { state, stats, census })
}

/// Reverse-mode gradient of an `n_steps` uniform RK4 solve from `h0`.
pub fn backward_discrete(
    p: &DynamicsParams,
    h0: &Vector,
    dl_dh1: &Vector,
    t0: f64,
    t1: f64,
    n_steps: usize,
) -> Result<(Vector, ParamGrad)> {
    let d = p.dim();
    check_dims("backward_discrete (h0)", d, h0.dim())?;
    check_dims("backward_discrete (dL/dh1)", d, dl_dh1.dim())?;
    if n_steps == 0 {
        return Err(Error::Config("backward_discrete needs at least one step".into()));
    }
    let dt = (t1 - t0) / n_steps as f64;

    let stages = |h: &Vector| -> Result<[Vector; 4]> {
        let k1 = p.eval(0.0, h)?;
        let u2 = linalg::axpy(0.5 * dt, &k1, h)?;
        let k2 = p.eval(0.0, &u2)?;
        let u3 = linalg::axpy(0.5 * dt, &k2, h)?;
        let k3 = p.eval(0.0, &u3)?;
        let u4 = linalg::axpy(dt, &k3, h)?;
        let k4 = p.eval(0.0, &u4)?;
        Ok([k1, k2, k3, k4])
    };

    let mut states: Vec<Vector> = Vec::with_capacity(n_steps + 1);
    states.push(h0.clone());
    for _ in 0..n_steps {
        let h = states.last().expect("non-empty");
        let [k1, k2, k3, k4] = stages(h)?;
        let mut next = h.clone();
        for i in 0..d {
            next[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        states.push(next);
    }

    let mut grad = ParamGrad::zeros(d);
    let mut accumulate = |u: &Vector, cot: &Vector| -> Result<Vector> {
        let g = p.vjp_params(0.0, u, cot)?;
        for (acc, x) in grad.weight.as_mut_slice().iter_mut().zip(g.weight.as_slice()) {
            *acc += x;
        }
        for (acc, x) in grad.bias.as_mut_slice().iter_mut().zip(g.bias.iter()) {
            *acc += x;
        }
        p.vjp_state(0.0, u, cot)
    };

    let mut a = dl_dh1.clone();
    for step in (0..n_steps).rev() {
        let h = &states[step];
        let [k1, k2, k3, _] = stages(h)?;
        let u2 = linalg::axpy(0.5 * dt, &k1, h)?;
        let u3 = linalg::axpy(0.5 * dt, &k2, h)?;
        let u4 = linalg::axpy(dt, &k3, h)?;

        let mut a_h = a.clone();
        let k4_bar = a.scale(dt / 6.0);
        let mut k3_bar = a.scale(dt / 3.0);
        let mut k2_bar = a.scale(dt / 3.0);
        let mut k1_bar = a.scale(dt / 6.0);

        let u4_bar = accumulate(&u4, &k4_bar)?;
        a_h = linalg::axpy(1.0, &u4_bar, &a_h)?;
        k3_bar = linalg::axpy(dt, &u4_bar, &k3_bar)?;

        let u3_bar = accumulate(&u3, &k3_bar)?;
        a_h = linalg::axpy(1.0, &u3_bar, &a_h)?;
        k2_bar = linalg::axpy(0.5 * dt, &u3_bar, &k2_bar)?;

        let u2_bar = accumulate(&u2, &k2_bar)?;
        a_h = linalg::axpy(1.0, &u2_bar, &a_h)?;
        k1_bar = linalg::axpy(0.5 * dt, &u2_bar, &k1_bar)?;

        let u1_bar = accumulate(h, &k1_bar)?;
        a = linalg::axpy(1.0, &u1_bar, &a_h)?;
    }
    Ok((a, grad))
}
