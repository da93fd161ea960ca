//! Explicit ODE integrators for `dh/dt = f(t, h)`.
//!
//! Fixed-step Euler and RK4, and adaptive Dormand–Prince 4(5) with an
//! elementary step-size controller. Integration runs in either time
//! direction. All stage buffers live in a [`Workspace`] allocated once per
//! solve, so the memory held by a solve is independent of how many steps it
//! takes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Vector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Euler,
    Rk4,
    Dopri45,
}

impl Method {
    /// Right-hand-side evaluations per step, `k` in the `O(N·k·n)` cost model.
    pub fn stages(self) -> usize {
        match self {
            Method::Euler => 1,
            Method::Rk4 => 4,
            Method::Dopri45 => 7,
        }
    }

    pub fn is_adaptive(self) -> bool {
        matches!(self, Method::Dopri45)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Euler => "euler",
            Method::Rk4 => "rk4",
            Method::Dopri45 => "dopri45",
        }
    }

    pub fn from_name(name: &str) -> Option<Method> {
        match name {
            "euler" => Some(Method::Euler),
            "rk4" => Some(Method::Rk4),
            "dopri45" | "dopri5" => Some(Method::Dopri45),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: f64,
    pub max_steps: usize,
    /// Number of uniform steps for Euler and RK4.
    pub fixed_step_count: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Dopri45,
            rtol: 1e-6,
            atol: 1e-8,
            initial_step: 0.1,
            max_steps: 10_000,
            fixed_step_count: 100,
        }
    }
}

impl SolverConfig {
    pub fn dopri45(rtol: f64, atol: f64) -> Self {
        SolverConfig {
            rtol,
            atol,
            ..Default::default()
        }
    }

    pub fn fixed(method: Method, steps: usize) -> Self {
        SolverConfig {
            method,
            fixed_step_count: steps,
            max_steps: steps.max(SolverConfig::default().max_steps),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol >= 1e-12) {
            return Err(Error::Config(format!("rtol {} below 1e-12", self.rtol)));
        }
        if !(self.atol >= 1e-14) {
            return Err(Error::Config(format!("atol {} below 1e-14", self.atol)));
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::Config(format!(
                "initial_step must be positive, got {}",
                self.initial_step
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.fixed_step_count == 0 {
            return Err(Error::Config("fixed_step_count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveStats {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub rhs_evaluations: usize,
}

/// Count of heap buffers owned by a solve and their total `f64` capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BufferCensus {
    pub buffers: usize,
    pub f64_slots: usize,
}

impl BufferCensus {
    pub fn of(buffers: &[&Vec<f64>]) -> Self {
        BufferCensus {
            buffers: buffers.len(),
            f64_slots: buffers.iter().map(|b| b.capacity()).sum(),
        }
    }

    pub fn merge(self, other: BufferCensus) -> Self {
        BufferCensus {
            buffers: self.buffers + other.buffers,
            f64_slots: self.f64_slots + other.f64_slots,
        }
    }
}

// Dormand–Prince 5(4), FSAL.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// 5th-order weights minus embedded 4th-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

/// Preallocated stage storage for one integration of an `n`-dimensional state.
#[derive(Debug)]
pub struct Workspace {
    k: [Vec<f64>; 7],
    stage: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
    // switching-surface values at the step start, trial end, and last
    // non-crossing trial
    s0: Vec<f64>,
    s1: Vec<f64>,
    s_lo: Vec<f64>,
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self::with_switches(n, 0)
    }

    pub fn with_switches(n: usize, m: usize) -> Self {
        Workspace {
            k: core::array::from_fn(|_| vec![0.0; n]),
            stage: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
            s0: vec![0.0; m],
            s1: vec![0.0; m],
            s_lo: vec![0.0; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.stage.len()
    }

    pub fn switch_dim(&self) -> usize {
        self.s0.len()
    }

    pub fn census(&self) -> BufferCensus {
        let mut bufs: Vec<&Vec<f64>> = self.k.iter().collect();
        bufs.extend([&self.stage, &self.y_new, &self.err, &self.s0, &self.s1, &self.s_lo]);
        BufferCensus::of(&bufs)
    }
}

/// One explicit step of `method` from `(t, y)` with signed size `dt`,
/// written to `ws.y_new`. Only `y[..active]` is read by `rhs`, so
/// intermediate stages skip the passive tail. For Dopri45, `ws.k[0]` must
/// already hold `f(t, y)` and the error estimate of the active components
/// lands in `ws.err`. Returns the number of rhs evaluations performed.
fn single_step<F>(method: Method, rhs: &mut F, t: f64, y: &[f64], dt: f64, ws: &mut Workspace, active: usize) -> usize
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let m = active;
    match method {
        Method::Euler => {
            rhs(t, y, &mut ws.k[0]);
            combine(&mut ws.y_new, y, dt, &ws.k, &[1.0]);
            1
        }
        Method::Rk4 => {
            rhs(t, y, &mut ws.k[0]);
            combine(&mut ws.stage[..m], y, dt, &ws.k, &[0.5]);
            rhs(t + 0.5 * dt, &ws.stage, &mut ws.k[1]);
            combine(&mut ws.stage[..m], y, dt, &ws.k, &[0.0, 0.5]);
            rhs(t + 0.5 * dt, &ws.stage, &mut ws.k[2]);
            combine(&mut ws.stage[..m], y, dt, &ws.k, &[0.0, 0.0, 1.0]);
            rhs(t + dt, &ws.stage, &mut ws.k[3]);
            combine(
                &mut ws.y_new,
                y,
                dt,
                &ws.k,
                &[1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0],
            );
            4
        }
        Method::Dopri45 => {
            for s in 1..7 {
                if s == 6 {
                    // stage 7 is evaluated at the 5th-order solution
                    combine(&mut ws.y_new, y, dt, &ws.k, &A[6][..6]);
                    ws.stage[..m].copy_from_slice(&ws.y_new[..m]);
                } else {
                    combine(&mut ws.stage[..m], y, dt, &ws.k, &A[s][..s]);
                }
                let (_, rest) = ws.k.split_at_mut(s);
                rhs(t + C[s] * dt, &ws.stage, &mut rest[0]);
            }
            ws.err[..m].fill(0.0);
            for (k, e) in ws.k.iter().zip(E) {
                for (o, v) in ws.err[..m].iter_mut().zip(k) {
                    *o += dt * e * v;
                }
            }
            6
        }
    }
}

/// `out = y + dt · Σ_j coef[j] · k[j]` over the length of `out`.
fn combine(out: &mut [f64], y: &[f64], dt: f64, k: &[Vec<f64>; 7], coef: &[f64]) {
    out.copy_from_slice(&y[..out.len()]);
    for (kj, c) in k.iter().zip(coef) {
        if *c != 0.0 {
            let w = dt * c;
            for (o, v) in out.iter_mut().zip(kj) {
                *o += w * v;
            }
        }
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], controlled: usize, rtol: f64, atol: f64) -> f64 {
    if controlled == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..controlled {
        let sc = atol + rtol * y[i].abs().max(y_new[i].abs());
        let r = err[i] / sc;
        acc += r * r;
    }
    libm::sqrt(acc / controlled as f64)
}

/// Surfaces `g_i(y) = 0` across which the right-hand side is only piecewise
/// smooth (for a ReLU field, the pre-activations). Adaptive steps are cut so
/// that a sign change of any `g_i` falls at a step boundary instead of inside
/// a step, where the embedded error estimate cannot see it. `values` may
/// only read the components the right-hand side reads.
pub trait Switches {
    fn count(&self) -> usize;
    fn values(&mut self, y: &[f64], out: &mut [f64]);
}

/// No switching surfaces: the right-hand side is smooth.
#[derive(Debug, Clone, Copy, Default)]
pub struct Smooth;

impl Switches for Smooth {
    fn count(&self) -> usize {
        0
    }
    fn values(&mut self, _y: &[f64], _out: &mut [f64]) {}
}

/// Switching surfaces given by a closure writing `count` values.
pub struct SwitchFn<G> {
    pub count: usize,
    pub f: G,
}

impl<G: FnMut(&[f64], &mut [f64])> Switches for SwitchFn<G> {
    fn count(&self) -> usize {
        self.count
    }
    fn values(&mut self, y: &[f64], out: &mut [f64]) {
        (self.f)(y, out)
    }
}

const MAX_EVENT_ITERATIONS: usize = 60;

/// Earliest sign change (positive vs non-positive) between `s0` and `s1`, as
/// `(index, step length to the linearly interpolated crossing)`. Crossings
/// within `min_len` of the step start are ignored.
fn earliest_crossing(s0: &[f64], s1: &[f64], len: f64, min_len: f64) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (&a, &b)) in s0.iter().zip(s1).enumerate() {
        if (a > 0.0) == (b > 0.0) {
            continue;
        }
        let at = len * (a / (a - b)).clamp(0.0, 1.0);
        if at <= min_len {
            continue;
        }
        if best.is_none_or(|(_, t)| at < t) {
            best = Some((i, at));
        }
    }
    best
}

/// Error norm of the trial held in `ws`, infinite if it is not finite.
fn error_norm_of(y: &[f64], ws: &Workspace, controlled: usize, cfg: &SolverConfig) -> f64 {
    let finite = ws.y_new.iter().all(|v| v.is_finite()) && ws.err[..controlled].iter().all(|v| v.is_finite());
    if finite {
        error_norm(y, &ws.y_new, &ws.err, controlled, cfg.rtol, cfg.atol)
    } else {
        f64::INFINITY
    }
}

/// Step length in `(lo, hi]` where surface `idx` is crossed, found by
/// Illinois regula falsi on the cubic Hermite interpolant of the Dopri45
/// trial of length `cur` held in `ws`. Points past `cur` are extrapolated.
/// Falls back to bisection when the interpolant does not bracket a crossing.
#[allow(clippy::too_many_arguments)]
fn locate_on_trial<S: Switches + ?Sized>(
    switches: &mut S,
    idx: usize,
    y0: &[f64],
    dir: f64,
    cur: f64,
    lo: f64,
    hi: f64,
    tol: f64,
    ws: &mut Workspace,
) -> f64 {
    let start_positive = ws.s0[idx] > 0.0;
    let mut g = |tau: f64, ws: &mut Workspace| -> f64 {
        if tau == 0.0 {
            return ws.s0[idx];
        }
        if tau == cur {
            return ws.s1[idx];
        }
        let th = tau / cur;
        let dt = dir * cur;
        let h00 = (2.0 * th - 3.0) * th * th + 1.0;
        let h10 = ((th - 2.0) * th + 1.0) * th * dt;
        let h01 = (3.0 - 2.0 * th) * th * th;
        let h11 = (th - 1.0) * th * th * dt;
        let m = y0.len();
        let parts = ws.stage[..m]
            .iter_mut()
            .zip(y0)
            .zip(&ws.k[0])
            .zip(&ws.y_new)
            .zip(&ws.k[6]);
        for ((((o, y0), f0), y1), f1) in parts {
            *o = h00 * y0 + h10 * f0 + h01 * y1 + h11 * f1;
        }
        switches.values(&ws.stage, &mut ws.s_lo);
        ws.s_lo[idx]
    };
    let crossed = |v: f64| (v > 0.0) != start_positive;
    let (mut a, mut b) = (lo, hi);
    let (mut ga, mut gb) = (g(a, ws), g(b, ws));
    if crossed(ga) || !crossed(gb) {
        return 0.5 * (lo + hi);
    }
    let mut side = 0i8;
    for _ in 0..MAX_EVENT_ITERATIONS {
        if b - a <= tol {
            break;
        }
        let mut tau = a + (b - a) * ga / (ga - gb);
        if !(tau > a && tau < b) {
            tau = 0.5 * (a + b);
        }
        let gt = g(tau, ws);
        if crossed(gt) {
            b = tau;
            gb = gt;
            if side == -1 {
                ga *= 0.5;
            }
            side = -1;
        } else {
            a = tau;
            ga = gt;
            if side == 1 {
                gb *= 0.5;
            }
            side = 1;
        }
    }
    b
}

fn step_factor(err: f64) -> f64 {
    if err == 0.0 {
        MAX_FACTOR
    } else {
        (SAFETY * libm::pow(err, -0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
    }
}

/// Core integration loop. `y` holds the initial state and receives the final
/// state. The first `active` components are the ones `rhs` and `switches`
/// may read and the only ones in the adaptive error norm; the rest are
/// passive accumulators. `on_accept(rhs, t_start, y_start, t_end, y_end)` fires after each
/// accepted step. Switching surfaces only affect Dopri45; fixed-step methods
/// keep their uniform grid.
#[allow(clippy::too_many_arguments)]
pub(crate) fn integrate<F, S, O>(
    rhs: &mut F,
    switches: &mut S,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    active: usize,
    ws: &mut Workspace,
    mut on_accept: O,
) -> Result<SolveStats>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: Switches + ?Sized,
    O: FnMut(&mut F, f64, &[f64], f64, &[f64]),
{
    cfg.validate()?;
    if !t0.is_finite() || !t1.is_finite() {
        return Err(Error::Config(format!("non-finite time span [{t0}, {t1}]")));
    }
    debug_assert_eq!(ws.dim(), y.len());
    debug_assert_eq!(ws.switch_dim(), switches.count());
    let mut stats = SolveStats::default();
    if t0 == t1 {
        return Ok(stats);
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Divergence { t: t0 });
    }

    match cfg.method {
        Method::Euler | Method::Rk4 => {
            let n_steps = cfg.fixed_step_count;
            if n_steps > cfg.max_steps {
                return Err(Error::StepLimit {
                    max_steps: cfg.max_steps,
                    t: t0,
                    stats,
                });
            }
            let dt = (t1 - t0) / n_steps as f64;
            for i in 0..n_steps {
                let t = t0 + i as f64 * dt;
                let t_next = if i + 1 == n_steps { t1 } else { t0 + (i + 1) as f64 * dt };
                stats.rhs_evaluations += single_step(cfg.method, rhs, t, y, t_next - t, ws, active);
                if !ws.y_new.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { t });
                }
                on_accept(rhs, t, y, t_next, &ws.y_new);
                y.copy_from_slice(&ws.y_new);
                stats.accepted_steps += 1;
            }
            Ok(stats)
        }
        Method::Dopri45 => {
            let dir = if t1 > t0 { 1.0 } else { -1.0 };
            let span = (t1 - t0).abs();
            let event_tol = 1e-12 * span.max(1.0);
            let has_switches = switches.count() > 0;
            let mut t = t0;
            let mut h = cfg.initial_step.min(span);
            rhs(t, y, &mut ws.k[0]);
            stats.rhs_evaluations += 1;
            if !ws.k[0].iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { t });
            }
            if has_switches {
                switches.values(y, &mut ws.s0);
            }

            let trial = |rhs: &mut F, y: &[f64], t: f64, len: f64, ws: &mut Workspace, stats: &mut SolveStats| -> f64 {
                stats.rhs_evaluations += single_step(Method::Dopri45, rhs, t, y, dir * len, ws, active);
                error_norm_of(y, ws, active, cfg)
            };

            loop {
                if stats.accepted_steps + stats.rejected_steps >= cfg.max_steps {
                    return Err(Error::StepLimit {
                        max_steps: cfg.max_steps,
                        t,
                        stats,
                    });
                }
                let remaining = (t1 - t).abs();
                let mut last = h >= remaining;
                if last {
                    h = remaining;
                }
                if t + dir * h == t {
                    return Err(Error::Divergence { t });
                }
                let mut err = trial(rhs, y, t, h, ws, &mut stats);
                let mut len = h;
                let mut next_h = h * step_factor(err);

                // a failed trial that crosses a surface is retried up to the
                // estimated crossing instead of being shrunk blindly
                let mut cut = None;
                if has_switches && err.is_finite() {
                    switches.values(&ws.y_new, &mut ws.s1);
                    let crossing = earliest_crossing(&ws.s0, &ws.s1, len, event_tol);
                    if err > 1.0 {
                        cut = crossing.map(|(_, at)| at).filter(|&at| at < SAFETY * len);
                    } else if let Some((mut idx, _)) = crossing {
                        // Shrink the step onto the first surface crossed.
                        // `lo` never crosses, `hi` does; `cur` is the length
                        // of the trial currently held in the workspace.
                        let (mut lo, mut hi, mut cur) = (0.0, len, len);
                        for _ in 0..MAX_EVENT_ITERATIONS {
                            if hi - lo <= event_tol {
                                break;
                            }
                            let tau = locate_on_trial(switches, idx, &y[..active], dir, cur, lo, hi, event_tol, ws);
                            if cur == hi && hi - tau <= event_tol {
                                break;
                            }
                            if tau == cur {
                                break;
                            }
                            trial(rhs, y, t, tau, ws, &mut stats);
                            stats.rejected_steps += 1;
                            cur = tau;
                            switches.values(&ws.y_new, &mut ws.s1);
                            match earliest_crossing(&ws.s0, &ws.s1, tau, event_tol) {
                                Some((j, _)) => {
                                    hi = tau;
                                    idx = j;
                                }
                                None => lo = tau,
                            }
                        }
                        if hi < len {
                            last = false;
                            len = hi;
                            if cur != hi {
                                trial(rhs, y, t, len, ws, &mut stats);
                                switches.values(&ws.y_new, &mut ws.s1);
                            }
                            err = error_norm_of(y, ws, active, cfg);
                        }
                    }
                }

                if err <= 1.0 {
                    let t_next = if last { t1 } else { t + dir * len };
                    on_accept(rhs, t, y, t_next, &ws.y_new);
                    y.copy_from_slice(&ws.y_new);
                    t = t_next;
                    // FSAL: last stage is f(t_next, y_new)
                    let (first, rest) = ws.k.split_at_mut(1);
                    first[0].copy_from_slice(&rest[5]);
                    if has_switches {
                        let (s0, s1) = (&mut ws.s0, &ws.s1);
                        s0.copy_from_slice(s1);
                    }
                    stats.accepted_steps += 1;
                    if !ws.k[0].iter().all(|v| v.is_finite()) {
                        return Err(Error::Divergence { t });
                    }
                    if last {
                        return Ok(stats);
                    }
                    h = next_h;
                } else {
                    stats.rejected_steps += 1;
                    next_h = if let Some(at) = cut {
                        at.max(len * MIN_FACTOR)
                    } else if err.is_finite() {
                        len * (SAFETY * libm::pow(err, -0.2)).clamp(MIN_FACTOR, 1.0)
                    } else {
                        len * MIN_FACTOR
                    };
                    h = next_h;
                }
            }
        }
    }
}

/// Integrates from `t0` to `t1` (either direction) and returns `h(t1)`.
pub fn solve<F>(rhs: F, h0: &Vector, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<(Vector, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    solve_switched(rhs, &mut Smooth, h0, t0, t1, cfg)
}

/// [`solve`] for a right-hand side that is smooth only between `switches`.
pub fn solve_switched<F, S>(
    mut rhs: F,
    switches: &mut S,
    h0: &Vector,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
) -> Result<(Vector, SolveStats)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: Switches + ?Sized,
{
    let mut y = h0.as_slice().to_vec();
    let n = y.len();
    let mut ws = Workspace::with_switches(n, switches.count());
    let stats = integrate(&mut rhs, switches, &mut y, t0, t1, cfg, n, &mut ws, |_, _, _, _, _| {})?;
    Ok((Vector::from_vec(y), stats))
}

/// `n_samples` states at uniformly spaced times from `t0` to `t1` inclusive.
///
/// Runs the same step sequence as [`solve`], so the final sample is
/// bit-identical to its result. Interior samples are produced by a partial
/// step of the same method from the start of the accepted step that
/// contains them.
pub fn dense_trajectory<F>(
    rhs: F,
    h0: &Vector,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    n_samples: usize,
) -> Result<Vec<(f64, Vector)>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    dense_trajectory_switched(rhs, &mut Smooth, h0, t0, t1, cfg, n_samples)
}

/// [`dense_trajectory`] with the step sequence of [`solve_switched`].
pub fn dense_trajectory_switched<F, S>(
    mut rhs: F,
    switches: &mut S,
    h0: &Vector,
    t0: f64,
    t1: f64,
    cfg: &SolverConfig,
    n_samples: usize,
) -> Result<Vec<(f64, Vector)>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
    S: Switches + ?Sized,
{
    if n_samples < 2 {
        return Err(Error::Config(format!("n_samples must be at least 2, got {n_samples}")));
    }
    let n = h0.dim();
    let times: Vec<f64> = (0..n_samples)
        .map(|k| {
            if k + 1 == n_samples {
                t1
            } else {
                t0 + (t1 - t0) * k as f64 / (n_samples - 1) as f64
            }
        })
        .collect();
    let mut out: Vec<(f64, Vector)> = Vec::with_capacity(n_samples);
    out.push((t0, h0.clone()));
    if t0 == t1 {
        for &t in &times[1..] {
            out.push((t, h0.clone()));
        }
        return Ok(out);
    }

    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let mut sample_ws = Workspace::new(n);
    let mut next = 1usize;
    let mut y = h0.as_slice().to_vec();
    let mut ws = Workspace::with_switches(n, switches.count());
    let method = cfg.method;
    integrate(
        &mut rhs,
        switches,
        &mut y,
        t0,
        t1,
        cfg,
        n,
        &mut ws,
        |rhs, ta, ya, tb, yb| {
            while next < times.len() - 1 {
                let ts = times[next];
                if dir * (ts - tb) > 0.0 {
                    break;
                }
                let state = if ts == tb {
                    yb.to_vec()
                } else {
                    if method == Method::Dopri45 {
                        rhs(ta, ya, &mut sample_ws.k[0]);
                    }
                    single_step(method, rhs, ta, ya, ts - ta, &mut sample_ws, n);
                    sample_ws.y_new.clone()
                };
                out.push((ts, Vector::from_vec(state)));
                next += 1;
            }
        },
    )?;
    out.push((t1, Vector::from_vec(y)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_rhs(_t: f64, h: &[f64], out: &mut [f64]) {
        out.copy_from_slice(h);
    }

    fn rotation(_t: f64, h: &[f64], out: &mut [f64]) {
        out[0] = -h[1];
        out[1] = h[0];
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_slice(x)
    }

    #[test]
    fn zero_dynamics_is_identity() {
        for method in [Method::Euler, Method::Rk4, Method::Dopri45] {
            let cfg = SolverConfig {
                method,
                ..Default::default()
            };
            let (h, _) = solve(|_, _, o: &mut [f64]| o.fill(0.0), &v(&[1.0, 2.0]), 0.0, 1.0, &cfg).unwrap();
            assert_eq!(h.as_slice(), &[1.0, 2.0]);
        }
    }

    #[test]
    fn exponential_growth() {
        let cfg = SolverConfig::dopri45(1e-8, 1e-10);
        let (h, stats) = solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg).unwrap();
        assert!((h[0] - core::f64::consts::E).abs() < 1e-7, "{}", h[0]);
        assert!(stats.rhs_evaluations >= stats.accepted_steps);
    }

    #[test]
    fn rotation_default_config() {
        let (h, _) = solve(rotation, &v(&[1.0, 0.0]), 0.0, 1.0, &SolverConfig::default()).unwrap();
        assert!((h[0] - libm::cos(1.0)).abs() < 1e-6);
        assert!((h[1] - libm::sin(1.0)).abs() < 1e-6);
    }

    #[test]
    fn tighter_tolerance_costs_more() {
        let (_, loose) = solve(rotation, &v(&[1.0, 0.0]), 0.0, 1.0, &SolverConfig::dopri45(1e-3, 1e-8)).unwrap();
        let (_, tight) = solve(
            rotation,
            &v(&[1.0, 0.0]),
            0.0,
            1.0,
            &SolverConfig::dopri45(1e-10, 1e-12),
        )
        .unwrap();
        assert!(tight.rhs_evaluations > loose.rhs_evaluations);
    }

    #[test]
    fn fixed_step_counts_are_exact() {
        let cfg = SolverConfig::fixed(Method::Rk4, 37);
        let (_, stats) = solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg).unwrap();
        assert_eq!(stats.accepted_steps, 37);
        assert_eq!(stats.rhs_evaluations, 4 * 37);
        let cfg = SolverConfig::fixed(Method::Euler, 11);
        let (_, stats) = solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg).unwrap();
        assert_eq!((stats.accepted_steps, stats.rhs_evaluations), (11, 11));
    }

    fn fixed_error(method: Method, steps: usize) -> f64 {
        let (h, _) = solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &SolverConfig::fixed(method, steps)).unwrap();
        (h[0] - core::f64::consts::E).abs()
    }

    #[test]
    fn convergence_orders() {
        let r = fixed_error(Method::Rk4, 10) / fixed_error(Method::Rk4, 20);
        assert!((12.0..=20.0).contains(&r), "rk4 ratio {r}");
        let r = fixed_error(Method::Euler, 1000) / fixed_error(Method::Euler, 2000);
        assert!((1.8..=2.2).contains(&r), "euler ratio {r}");
    }

    #[test]
    fn time_reversal() {
        let cfg = SolverConfig::dopri45(1e-10, 1e-12);
        let h0 = v(&[0.3, -1.2]);
        let f = |_t: f64, h: &[f64], o: &mut [f64]| {
            o[0] = libm::sin(h[1]) - 0.5 * h[0];
            o[1] = libm::cos(h[0]) * h[1];
        };
        let (h1, _) = solve(f, &h0, 0.0, 1.0, &cfg).unwrap();
        let (back, _) = solve(f, &h1, 1.0, 0.0, &cfg).unwrap();
        for i in 0..2 {
            assert!((back[i] - h0[i]).abs() <= 1e-6 * h0[i].abs());
        }
    }

    #[test]
    fn dopri_matches_fine_rk4() {
        let rtol = 1e-8;
        let cfg = SolverConfig::dopri45(rtol, 1e-12);
        let fine = SolverConfig::fixed(Method::Rk4, 100_000);
        for (rhs, h0) in [
            (exp_rhs as fn(f64, &[f64], &mut [f64]), v(&[1.0])),
            (rotation as fn(f64, &[f64], &mut [f64]), v(&[1.0, 0.0])),
        ] {
            let (a, _) = solve(rhs, &h0, 0.0, 1.0, &cfg).unwrap();
            let (b, _) = solve(rhs, &h0, 0.0, 1.0, &fine).unwrap();
            let scale = crate::linalg::norm2(&b);
            for i in 0..a.dim() {
                assert!((a[i] - b[i]).abs() <= 10.0 * rtol * scale);
            }
        }
    }

    #[test]
    fn step_limit_carries_stats() {
        let cfg = SolverConfig {
            max_steps: 3,
            ..SolverConfig::dopri45(1e-12, 1e-14)
        };
        match solve(rotation, &v(&[1.0, 0.0]), 0.0, 10.0, &cfg) {
            Err(Error::StepLimit { max_steps, stats, .. }) => {
                assert_eq!(max_steps, 3);
                assert_eq!(stats.accepted_steps + stats.rejected_steps, 3);
            }
            other => panic!("expected step limit, got {other:?}"),
        }
    }

    #[test]
    fn divergence_reports_time() {
        // finite-time blow-up at t = 1
        let f = |_t: f64, h: &[f64], o: &mut [f64]| o[0] = h[0] * h[0];
        assert!(matches!(
            solve(f, &v(&[1.0]), 0.0, 2.0, &SolverConfig::default()),
            Err(Error::Divergence { .. } | Error::StepLimit { .. })
        ));
        let f = |_t: f64, _h: &[f64], o: &mut [f64]| o[0] = f64::NAN;
        match solve(f, &v(&[1.0]), 0.5, 2.0, &SolverConfig::default()) {
            Err(Error::Divergence { t }) => assert_eq!(t, 0.5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SolverConfig {
            rtol: 1e-13,
            ..Default::default()
        };
        assert!(matches!(
            solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg),
            Err(Error::Config(_))
        ));
        let cfg = SolverConfig {
            max_steps: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dense_trajectory_zero_dynamics() {
        let traj = dense_trajectory(
            |_, _, o: &mut [f64]| o.fill(0.0),
            &v(&[1.0, 2.0]),
            0.0,
            1.0,
            &SolverConfig::default(),
            3,
        )
        .unwrap();
        let times: Vec<f64> = traj.iter().map(|(t, _)| *t).collect();
        assert_eq!(times, vec![0.0, 0.5, 1.0]);
        for (_, h) in &traj {
            assert_eq!(h.as_slice(), &[1.0, 2.0]);
        }
    }

    #[test]
    fn dense_trajectory_endpoint_matches_solve() {
        for cfg in [SolverConfig::default(), SolverConfig::fixed(Method::Rk4, 13)] {
            let (end, _) = solve(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg).unwrap();
            for n in [2, 7] {
                let traj = dense_trajectory(exp_rhs, &v(&[1.0]), 0.0, 1.0, &cfg, n).unwrap();
                assert_eq!(traj.len(), n);
                assert!((traj[n - 1].1[0] - end[0]).abs() <= 1e-9);
                assert_eq!(traj[0].1[0], 1.0);
            }
        }
    }

    #[test]
    fn dense_trajectory_rotation_samples() {
        let cfg = SolverConfig::dopri45(1e-8, 1e-10);
        let traj = dense_trajectory(rotation, &v(&[1.0, 0.0]), 0.0, 1.0, &cfg, 5).unwrap();
        for (t, h) in &traj {
            assert!((h[0] - libm::cos(*t)).abs() < 1e-6);
            assert!((h[1] - libm::sin(*t)).abs() < 1e-6);
        }
        let traj = dense_trajectory(rotation, &v(&[1.0, 0.0]), 1.0, 0.0, &cfg, 5).unwrap();
        for (t, h) in &traj {
            let (c, s) = (libm::cos(1.0 - *t), libm::sin(1.0 - *t));
            assert!((h[0] - c).abs() < 1e-6 && (h[1] + s).abs() < 1e-6);
        }
        assert!(dense_trajectory(rotation, &v(&[1.0, 0.0]), 0.0, 1.0, &cfg, 1).is_err());
    }

    #[test]
    fn workspace_census_is_fixed() {
        let ws = Workspace::new(5);
        assert_eq!(
            ws.census(),
            BufferCensus {
                buffers: 13,
                f64_slots: 50
            }
        );
        let ws = Workspace::with_switches(5, 2);
        assert_eq!(
            ws.census(),
            BufferCensus {
                buffers: 13,
                f64_slots: 56
            }
        );
    }

    #[test]
    fn switches_put_step_boundaries_on_kinks() {
        // x' = 1, y' = max(x - 0.3, 0): piecewise linear in t, so Dopri45 is
        // exact on each side of the kink at t = 0.3
        let kinked = |_t: f64, y: &[f64], out: &mut [f64]| {
            out[0] = 1.0;
            out[1] = (y[0] - 0.3).max(0.0);
        };
        let mut kink = SwitchFn {
            count: 1,
            f: |y: &[f64], out: &mut [f64]| out[0] = y[0] - 0.3,
        };
        let cfg = SolverConfig::default();
        let h0 = v(&[0.0, 0.0]);
        let (plain, _) = solve(kinked, &h0, 0.0, 1.0, &cfg).unwrap();
        let (cut, stats) = solve_switched(kinked, &mut kink, &h0, 0.0, 1.0, &cfg).unwrap();
        let exact = 0.5 * 0.7 * 0.7;
        assert!((cut[1] - exact).abs() < 1e-13, "{}", cut[1] - exact);
        assert!((plain[1] - exact).abs() > (cut[1] - exact).abs());
        assert!(stats.rejected_steps > 0);

        let traj = dense_trajectory_switched(kinked, &mut kink, &h0, 0.0, 1.0, &cfg, 11).unwrap();
        assert_eq!(traj[10].1, cut);
        assert!((traj[5].1[1] - 0.5 * 0.2 * 0.2).abs() < 1e-13);
    }
}
