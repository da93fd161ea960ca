//! Learned vector field `f(h, t; θ) = ReLU(W h + b)`.
//!
//! The field is autonomous; `t` is accepted for interface symmetry and
//! ignored. The ReLU derivative at exactly zero is taken to be 0.

use alloc::vec::Vec;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dims, Error, Result};
use crate::linalg::{self, Matrix, Vector};
use crate::odesolve::{self, SolveStats, SolverConfig, Switches};

const POWER_ITERATIONS: usize = 100;
const POWER_SEED: u64 = 0x5eed_0fd1;
const POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsParams {
    pub weight: Matrix,
    pub bias: Vector,
}

/// Gradient with respect to [`DynamicsParams`], same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Matrix,
    pub bias: Vector,
}

impl ParamGrad {
    pub fn zeros(d: usize) -> Self {
        ParamGrad {
            weight: Matrix::zeros(d, d),
            bias: Vector::zeros(d),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.weight.as_slice().iter().chain(self.bias.iter()).all(|&x| x == 0.0)
    }

    pub fn scale(&self, alpha: f64) -> ParamGrad {
        ParamGrad {
            weight: self.weight.scale(alpha),
            bias: self.bias.scale(alpha),
        }
    }
}

impl DynamicsParams {
    pub fn new(weight: Matrix, bias: Vector) -> Result<Self> {
        check_dims("DynamicsParams (square weight)", weight.rows(), weight.cols())?;
        check_dims("DynamicsParams (bias)", weight.rows(), bias.dim())?;
        Ok(DynamicsParams { weight, bias })
    }

    pub fn zeros(d: usize) -> Self {
        DynamicsParams {
            weight: Matrix::zeros(d, d),
            bias: Vector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.bias.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.weight.as_slice().iter().chain(self.bias.iter()).all(|&x| x == 0.0)
    }

    pub fn eval(&self, _t: f64, h: &Vector) -> Result<Vector> {
        check_dims("dynamics eval", self.dim(), h.dim())?;
        let mut out = Vector::zeros(self.dim());
        self.eval_into(h.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `aᵀ ∂f/∂h = Wᵀ (mask ⊙ a)`.
    pub fn vjp_state(&self, _t: f64, h: &Vector, a: &Vector) -> Result<Vector> {
        check_dims("vjp_state (h)", self.dim(), h.dim())?;
        check_dims("vjp_state (a)", self.dim(), a.dim())?;
        let d = self.dim();
        let mut masked = Vector::zeros(d);
        self.masked_cotangent(h.as_slice(), a.as_slice(), masked.as_mut_slice());
        let mut out = Vector::zeros(d);
        linalg::matvec_transpose_into(&self.weight, masked.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    /// `aᵀ ∂f/∂θ`: `dW = (mask ⊙ a) hᵀ`, `db = mask ⊙ a`.
    pub fn vjp_params(&self, _t: f64, h: &Vector, a: &Vector) -> Result<ParamGrad> {
        check_dims("vjp_params (h)", self.dim(), h.dim())?;
        check_dims("vjp_params (a)", self.dim(), a.dim())?;
        let d = self.dim();
        let mut g = ParamGrad::zeros(d);
        self.masked_cotangent(h.as_slice(), a.as_slice(), g.bias.as_mut_slice());
        linalg::outer_acc(1.0, g.bias.as_slice(), h.as_slice(), g.weight.as_mut_slice());
        Ok(g)
    }

    /// Upper estimate of the Lipschitz constant of `eval` in `h`.
    ///
    /// ReLU is 1-Lipschitz, so `‖W‖₂` bounds it. The spectral norm comes from
    /// power iteration on `WᵀW`; if that has not settled after the fixed
    /// iteration budget the Frobenius norm is returned instead.
    pub fn lipschitz_bound(&self) -> f64 {
        spectral_norm(&self.weight)
    }

    /// `h(t1)` for the flow started at `h(t0) = h0`. Adaptive steps end at
    /// the points where a pre-activation changes sign.
    pub fn flow(&self, h0: &Vector, t0: f64, t1: f64, cfg: &SolverConfig) -> Result<(Vector, SolveStats)> {
        self.check()?;
        check_dims("flow (h0)", self.dim(), h0.dim())?;
        odesolve::solve_switched(|_, h, out| self.eval_into(h, out), &mut self.kinks(), h0, t0, t1, cfg)
    }

    /// `n_samples` uniformly spaced states of [`flow`](Self::flow).
    pub fn trajectory(
        &self,
        h0: &Vector,
        t0: f64,
        t1: f64,
        cfg: &SolverConfig,
        n_samples: usize,
    ) -> Result<Vec<(f64, Vector)>> {
        self.check()?;
        check_dims("trajectory (h0)", self.dim(), h0.dim())?;
        odesolve::dense_trajectory_switched(
            |_, h, out| self.eval_into(h, out),
            &mut self.kinks(),
            h0,
            t0,
            t1,
            cfg,
            n_samples,
        )
    }

    /// Pre-activations `W h + b` of the leading `d` components, as switching
    /// surfaces for the solver.
    pub(crate) fn kinks(&self) -> Kinks<'_> {
        Kinks(self)
    }

    pub(crate) fn eval_into(&self, h: &[f64], out: &mut [f64]) {
        linalg::matvec_into(&self.weight, h, out);
        for (o, b) in out.iter_mut().zip(self.bias.iter()) {
            *o = (*o + b).max(0.0);
        }
    }

    /// `mask ⊙ a` where `mask_i = 1` iff `(W h + b)_i > 0`.
    pub(crate) fn masked_cotangent(&self, h: &[f64], a: &[f64], out: &mut [f64]) {
        for i in 0..self.dim() {
            let pre = linalg::dot(self.weight.row(i), h) + self.bias[i];
            out[i] = if pre > 0.0 { a[i] } else { 0.0 };
        }
    }

    /// Accumulates both VJPs for the adjoint system using `scratch` (len d)
    /// for the masked cotangent: `state_out = ±Wᵀ(m⊙a)`, `grad_w += ±(m⊙a)hᵀ`,
    /// `grad_b += ±m⊙a`, with sign `sign`.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn vjp_into(
        &self,
        h: &[f64],
        a: &[f64],
        sign: f64,
        scratch: &mut [f64],
        state_out: &mut [f64],
        grad_w: &mut [f64],
        grad_b: &mut [f64],
    ) {
        self.masked_cotangent(h, a, scratch);
        linalg::matvec_transpose_into(&self.weight, scratch, state_out);
        if sign != 1.0 {
            state_out.iter_mut().for_each(|x| *x *= sign);
        }
        linalg::outer_acc(sign, scratch, h, grad_w);
        for (g, m) in grad_b.iter_mut().zip(scratch.iter()) {
            *g += sign * m;
        }
    }

    pub(crate) fn check(&self) -> Result<()> {
        check_dims("dynamics weight", self.weight.rows(), self.weight.cols())?;
        check_dims("dynamics bias", self.weight.rows(), self.bias.dim())?;
        if !self.weight.is_finite() || !self.bias.is_finite() {
            return Err(Error::Config("dynamics parameters are not finite".into()));
        }
        Ok(())
    }
}

pub(crate) struct Kinks<'a>(&'a DynamicsParams);

impl Switches for Kinks<'_> {
    fn count(&self) -> usize {
        self.0.dim()
    }
    fn values(&mut self, y: &[f64], out: &mut [f64]) {
        let p = self.0;
        let h = &y[..p.dim()];
        linalg::matvec_into(&p.weight, h, out);
        for (o, b) in out.iter_mut().zip(p.bias.iter()) {
            *o += b;
        }
    }
}

fn spectral_norm(w: &Matrix) -> f64 {
    let (rows, cols) = w.shape();
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_SEED);
    let mut v = Vector::from_vec((0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let n = linalg::norm2(&v);
    v = v.scale(1.0 / n);

    let mut u = Vector::zeros(rows);
    let mut sigma = 0.0;
    let mut converged = false;
    for _ in 0..POWER_ITERATIONS {
        linalg::matvec_into(w, v.as_slice(), u.as_mut_slice());
        let next = linalg::norm2(&u);
        if next == 0.0 {
            // v fell in the null space; for a nonzero W fall back below
            sigma = 0.0;
            converged = w.as_slice().iter().all(|&x| x == 0.0);
            break;
        }
        converged = (next - sigma).abs() <= POWER_TOL * next;
        sigma = next;
        linalg::matvec_transpose_into(w, u.as_slice(), v.as_mut_slice());
        let vn = linalg::norm2(&v);
        v = v.scale(1.0 / vn);
    }
    if converged {
        sigma
    } else {
        w.frobenius_norm()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    fn v(x: &[f64]) -> Vector {
        Vector::from_slice(x)
    }

    fn params(rows: &[&[f64]], b: &[f64]) -> DynamicsParams {
        DynamicsParams::new(Matrix::from_rows(rows).unwrap(), v(b)).unwrap()
    }

    #[test]
    fn eval_examples() {
        let p = DynamicsParams::new(Matrix::identity(2), Vector::zeros(2)).unwrap();
        assert_eq!(p.eval(0.0, &v(&[1.0, -2.0])).unwrap().as_slice(), &[1.0, 0.0]);

        let p = params(&[&[0.0, 0.0], &[0.0, 0.0]], &[-1.0, -1.0]);
        assert_eq!(p.eval(0.3, &v(&[7.0, -4.0])).unwrap().as_slice(), &[0.0, 0.0]);

        let p = params(&[&[1.0, 1.0], &[0.0, 1.0]], &[0.0, -3.0]);
        assert_eq!(p.eval(0.0, &v(&[1.0, 1.0])).unwrap().as_slice(), &[2.0, 0.0]);

        assert!(p.eval(0.0, &v(&[1.0])).is_err());
        assert!(DynamicsParams::new(Matrix::zeros(2, 3), Vector::zeros(2)).is_err());
    }

    #[test]
    fn vjp_state_examples() {
        let p = DynamicsParams::new(Matrix::identity(2), Vector::zeros(2)).unwrap();
        let r = p.vjp_state(0.0, &v(&[1.0, -2.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(r.as_slice(), &[1.0, 0.0]);

        let p = DynamicsParams::zeros(3);
        let r = p.vjp_state(0.0, &v(&[1.0, 2.0, 3.0]), &v(&[4.0, 5.0, 6.0])).unwrap();
        assert_eq!(r.as_slice(), &[0.0; 3]);
        assert!(p.vjp_state(0.0, &v(&[1.0]), &v(&[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn vjp_params_examples() {
        let g = DynamicsParams::zeros(2)
            .vjp_params(0.0, &v(&[1.0, 1.0]), &v(&[1.0, 1.0]))
            .unwrap();
        assert!(g.is_zero());

        let p = DynamicsParams::new(Matrix::identity(2), Vector::zeros(2)).unwrap();
        let g = p.vjp_params(0.0, &v(&[2.0, -1.0]), &v(&[1.0, 1.0])).unwrap();
        assert_eq!(g.weight.as_slice(), &[2.0, -1.0, 0.0, 0.0]);
        assert_eq!(g.bias.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn lipschitz_examples() {
        assert_eq!(DynamicsParams::zeros(3).lipschitz_bound(), 0.0);
        let p = DynamicsParams::new(Matrix::identity(3).scale(2.0), Vector::zeros(3)).unwrap();
        assert!((p.lipschitz_bound() - 2.0).abs() < 1e-6);
        let p = params(&[&[3.0, 0.0], &[4.0, 0.0]], &[0.0, 0.0]);
        assert!((p.lipschitz_bound() - 5.0).abs() < 1e-4);
        // deterministic
        assert_eq!(p.lipschitz_bound(), p.lipschitz_bound());
    }

    // ---- finite-difference oracles ----

    struct Uniform(ChaCha8Rng);
    impl Uniform {
        fn new(seed: u64) -> Self {
            Uniform(ChaCha8Rng::seed_from_u64(seed))
        }
        fn uniform(&mut self) -> f64 {
            self.0.gen_range(-1.0..1.0)
        }
    }

    /// Random params and state with every pre-activation at least `margin`
    /// away from the ReLU kink.
    fn random_instance(rng: &mut Uniform, d: usize, margin: f64) -> (DynamicsParams, Vector) {
        loop {
            let w: Vec<f64> = (0..d * d).map(|_| rng.uniform()).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.uniform()).collect();
            let h: Vec<f64> = (0..d).map(|_| 2.0 * rng.uniform()).collect();
            let p = DynamicsParams::new(Matrix::from_row_major(d, d, w).unwrap(), v(&b)).unwrap();
            let pre = linalg::axpy(1.0, &linalg::matvec(&p.weight, &v(&h)).unwrap(), &p.bias).unwrap();
            if pre.iter().all(|z| z.abs() >= margin) {
                return (p, v(&h));
            }
        }
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    const FD_EPS: f64 = 1e-5;

    #[test]
    fn vjp_state_matches_finite_differences() {
        let mut rng = Uniform::new(42);
        for _ in 0..100 {
            let d = 4;
            let (p, h) = random_instance(&mut rng, d, 1e-3);
            for i in 0..d {
                let a = Vector::basis(d, i);
                let analytic = p.vjp_state(0.0, &h, &a).unwrap();
                for j in 0..d {
                    let mut hp = h.clone();
                    hp[j] += FD_EPS;
                    let mut hm = h.clone();
                    hm[j] -= FD_EPS;
                    let fd = (p.eval(0.0, &hp).unwrap()[i] - p.eval(0.0, &hm).unwrap()[i]) / (2.0 * FD_EPS);
                    assert!(rel_err(analytic[j], fd) < 1e-6, "{} vs {}", analytic[j], fd);
                }
            }
        }
    }

    #[test]
    fn vjp_params_matches_finite_differences() {
        let mut rng = Uniform::new(7);
        for _ in 0..100 {
            let d = 3;
            let (p, h) = random_instance(&mut rng, d, 1e-3);
            let a = v(&(0..d).map(|_| rng.uniform()).collect::<Vec<_>>());
            let g = p.vjp_params(0.0, &h, &a).unwrap();
            let objective = |q: &DynamicsParams| q.eval(0.0, &h).unwrap().dot(&a).unwrap();
            for k in 0..d * d {
                let mut qp = p.clone();
                qp.weight.as_mut_slice()[k] += FD_EPS;
                let mut qm = p.clone();
                qm.weight.as_mut_slice()[k] -= FD_EPS;
                let fd = (objective(&qp) - objective(&qm)) / (2.0 * FD_EPS);
                assert!(rel_err(g.weight.as_slice()[k], fd) < 1e-6);
            }
            for k in 0..d {
                let mut qp = p.clone();
                qp.bias[k] += FD_EPS;
                let mut qm = p.clone();
                qm.bias[k] -= FD_EPS;
                let fd = (objective(&qp) - objective(&qm)) / (2.0 * FD_EPS);
                assert!(rel_err(g.bias[k], fd) < 1e-6);
            }
        }
    }

    #[test]
    fn relu_is_positively_homogeneous_on_the_preactivation_path() {
        let mut rng = Uniform::new(3);
        for _ in 0..50 {
            let (p, h) = random_instance(&mut rng, 5, 0.0);
            let alpha = 0.1 + 3.0 * rng.uniform().abs();
            let scaled = DynamicsParams::new(p.weight.scale(alpha), p.bias.scale(alpha)).unwrap();
            let lhs = scaled.eval(0.0, &h).unwrap();
            let rhs = p.eval(0.0, &h).unwrap().scale(alpha);
            for i in 0..5 {
                assert!((lhs[i] - rhs[i]).abs() <= 1e-12 * (1.0 + rhs[i].abs()));
            }
        }
    }

    #[test]
    fn lipschitz_bound_holds_on_random_pairs() {
        let mut rng = Uniform::new(99);
        let mut instances = vec![];
        for d in [2, 3, 6] {
            for _ in 0..3 {
                instances.push(random_instance(&mut rng, d, 0.0).0);
            }
        }
        let mut checked = 0;
        for p in &instances {
            let l = p.lipschitz_bound();
            let d = p.dim();
            for _ in 0..112 {
                let h1 = v(&(0..d).map(|_| 3.0 * rng.uniform()).collect::<Vec<_>>());
                let h2 = v(&(0..d).map(|_| 3.0 * rng.uniform()).collect::<Vec<_>>());
                let lhs = linalg::norm2(&p.eval(0.0, &h1).unwrap().sub(&p.eval(0.0, &h2).unwrap()).unwrap());
                let rhs = l * linalg::norm2(&h1.sub(&h2).unwrap());
                assert!(lhs <= rhs * (1.0 + 1e-12));
                checked += 1;
            }
        }
        assert!(checked >= 1000);
    }
}
