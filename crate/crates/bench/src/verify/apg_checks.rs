use ialm_core::apg::{apg_solve, apg_solve_observed, ApgConfig, SmoothObjective};
use ialm_core::ialm::random_start;
use ialm_core::problem::BoxSet;
use ialm_core::qcqp::{eigen_range, generate, GeneratorConfig};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{Check, Faults};

/// `min x'Qx/2 + c'x` over a box.
#[derive(Debug, Clone)]
pub struct BoxQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub bounds: BoxSet,
}

impl SmoothObjective for BoxQp {
    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.c
    }
}

impl BoxQp {
    /// Norm of the projected-gradient map `x - P(x - grad/L)` scaled by `L`.
    fn kkt_error(&self, x: &DVector<f64>, l: f64) -> f64 {
        let step = self.bounds.project(&(x - self.grad(x) / l));
        (x - step).norm() * l
    }
}

/// Exact minimizer of a strongly convex box QP: a high-accuracy APG run
/// locates the active bounds, then the free coordinates are solved
/// exactly, repeating until the active set is stable. Returns `(x*, P*)`
/// once the projected-gradient residual is at rounding level.
pub fn exact_box_qp(qp: &BoxQp) -> Result<(DVector<f64>, f64), String> {
    let n = qp.c.len();
    let (mu, l) = eigen_range(&qp.q);
    if !(mu > 0.0) {
        return Err(format!("Q is not positive definite (lambda_min = {mu:e})"));
    }
    let prox = |x: &DVector<f64>, _t: f64| qp.bounds.project(x);
    let mut cfg = ApgConfig::new(l, mu, 1e-9 * (1.0 + qp.c.norm()));
    cfg.max_iters = 1_000_000;
    let mut x = apg_solve(qp, &prox, &cfg, &qp.bounds.project(&DVector::zeros(n)))
        .map_err(|e| e.to_string())?
        .x_hat;

    let tol = 1e-12 * (1.0 + qp.c.norm() + l * x.norm());
    for _ in 0..50 {
        if qp.kkt_error(&x, l) <= tol {
            return Ok((x.clone(), qp.value(&x)));
        }
        // bounds that a gradient step would leave the box through
        let trial = &x - qp.grad(&x) / l;
        let fixed: Vec<Option<f64>> = (0..n)
            .map(|i| {
                if trial[i] <= qp.bounds.lower[i] {
                    Some(qp.bounds.lower[i])
                } else if trial[i] >= qp.bounds.upper[i] {
                    Some(qp.bounds.upper[i])
                } else {
                    None
                }
            })
            .collect();
        let free: Vec<usize> = (0..n).filter(|&i| fixed[i].is_none()).collect();
        let mut next = DVector::from_fn(n, |i, _| fixed[i].unwrap_or(0.0));
        if !free.is_empty() {
            let qff = DMatrix::from_fn(free.len(), free.len(), |a, b| qp.q[(free[a], free[b])]);
            let full_rhs = -(&qp.c + &qp.q * &next);
            let rhs = DVector::from_fn(free.len(), |a, _| full_rhs[free[a]]);
            let sol = qff.cholesky().ok_or("free block is not positive definite")?.solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                next[i] = sol[a];
            }
        }
        // keep the exact solve only when it improves the residual
        let next = qp.bounds.project(&next);
        if qp.kkt_error(&next, l) < qp.kkt_error(&x, l) {
            x = next;
        } else {
            break;
        }
    }
    let err = qp.kkt_error(&x, l);
    if err <= tol {
        Ok((x.clone(), qp.value(&x)))
    } else {
        Err(format!("active-set refinement stalled at residual {err:e}"))
    }
}

const RATE_SEEDS: u64 = 10;
const RATE_ITERS: usize = 200;

/// Box QPs with condition number 100: `n = 50`, spectrum `[1, 100]`,
/// box `[-1, 1]^n`. Odd seeds have several active bounds at the solution;
/// even seeds have an interior solution, where the slowest mode is not
/// damped by the box.
pub(crate) fn rate_instance(seed: u64) -> BoxQp {
    let c_scale = if seed % 2 == 0 { 0.5 } else { 3.0 };
    let cfg = GeneratorConfig { c_scale, box_half_width: 1.0, ..GeneratorConfig::new(50, 0, seed) };
    let inst = generate(&cfg).expect("valid generator configuration");
    BoxQp { q: inst.q0, c: inst.c0, bounds: inst.bounds }
}

/// `P(x^k) - P* <= (1 - sqrt(mu/(gamma1 L)))^k (P(x^0) - P* + mu/2 |x^0 - x*|^2)`
/// for every `k <= 200`, with the claimed `(mu, L)` of the unperturbed
/// instance.
pub(crate) fn rate_bound(faults: Faults) -> Check {
    let (mu, l, gamma1): (f64, f64, f64) = (1.0, 100.0, 1.5);
    let rho = 1.0 - (mu / (gamma1 * l)).sqrt();
    let mut worst = f64::NEG_INFINITY;
    let mut worst_at = (0, 0);
    let mut violations = Vec::new();
    for seed in 0..RATE_SEEDS {
        let mut qp = rate_instance(seed);
        if faults.halve_mu {
            let n = qp.c.len();
            qp.q -= DMatrix::identity(n, n) * (0.5 * mu);
        }
        let (x_star, p_star) = match exact_box_qp(&qp) {
            Ok(r) => r,
            Err(e) => return (false, format!("seed {seed}: no exact reference: {e}")),
        };
        let prox = |x: &DVector<f64>, _t: f64| qp.bounds.project(x);
        // L_min = L: a smaller trial constant can land the prestep on x* exactly
        let mut cfg = ApgConfig::new(l, mu, f64::MIN_POSITIVE);
        cfg.max_iters = RATE_ITERS;
        let y0 = slow_start(&qp, &x_star);
        let mut initial = None;
        let mut violation: Option<String> = None;
        let res = apg_solve_observed(&qp, &prox, &cfg, &y0, &mut |it| {
            let gap = qp.value(it.x) - p_star;
            let base = *initial.get_or_insert_with(|| gap + 0.5 * mu * (it.x - &x_star).norm_squared());
            let bound = rho.powi(it.k as i32) * base;
            let slack = 1e-12 * (1.0 + p_star.abs());
            let tightness = gap / bound;
            if tightness > worst {
                worst = tightness;
                worst_at = (seed, it.k);
            }
            if gap > bound + slack && violation.is_none() {
                violation = Some(format!("seed {seed}, k = {}: gap {gap:.3e} > bound {bound:.3e}", it.k));
            }
        });
        if let Err(e) = res {
            return (false, format!("seed {seed}: APG failed: {e}"));
        }
        if let Some(v) = violation {
            violations.push(v);
        }
    }
    if !violations.is_empty() {
        return (false, format!("{} of {RATE_SEEDS} instances violate the bound; first: {}", violations.len(), violations[0]));
    }
    (
        true,
        format!(
            "{RATE_SEEDS} instances x {RATE_ITERS} iterations; max gap/bound = {worst:.3} at seed {}, k = {}",
            worst_at.0, worst_at.1
        ),
    )
}

/// `x*` displaced along the eigenvector of the smallest eigenvalue, so the
/// error sits in the slowest mode.
fn slow_start(qp: &BoxQp, x_star: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(qp.q.clone());
    let i = eig.eigenvalues.imin();
    qp.bounds.project(&(x_star + eig.eigenvectors.column(i) * 0.5))
}

fn ceil_plus(t: f64) -> f64 {
    t.ceil().max(0.0)
}

/// Evaluation budget of the APG with backtracking, written out from its
/// definition.
fn budget(l: f64, mu: f64, l_min: f64, gamma1: f64, eps_bar: f64, d_r: f64) -> f64 {
    let gl = gamma1 * l;
    let log_arg = d_r / eps_bar * (gl.sqrt() + l / l_min.sqrt()) * (2.0 * gl + mu).sqrt();
    (1.0 + ceil_plus((l / l_min).ln() / gamma1.ln())) * (1.0 + 2.0 * ceil_plus(2.0 * (gl / mu).sqrt() * log_arg.ln()))
}

/// Gradient and function evaluations until stationarity `1e-6` stay within
/// the budget computed from the supplied constants.
pub(crate) fn evaluation_budget() -> Check {
    let (mu, l, l_min, gamma1, eps_bar) = (1.0, 100.0, 1.0, 1.5, 1e-6);
    let mut worst = 0.0f64;
    for seed in 0..RATE_SEEDS {
        let qp = rate_instance(seed);
        let d_r = qp.bounds.diameter();
        let t = budget(l, mu, l_min, gamma1, eps_bar, d_r);
        let prox = |x: &DVector<f64>, _t: f64| qp.bounds.project(x);
        let mut cfg = ApgConfig::new(l_min, mu, eps_bar);
        cfg.max_iters = (10.0 * t) as usize;
        let y0 = random_start(&qp.bounds, seed, 0);
        let r = match apg_solve(&qp, &prox, &cfg, &y0) {
            Ok(r) => r,
            Err(e) => return (false, format!("seed {seed}: APG failed: {e}")),
        };
        if !r.converged {
            return (false, format!("seed {seed}: no convergence in {} iterations", r.iters));
        }
        let used = r.grad_evals.max(r.func_evals) as f64;
        if used > t {
            return (false, format!("seed {seed}: {used} evaluations > budget {t}"));
        }
        worst = worst.max(used / t);
    }
    (true, format!("{RATE_SEEDS} instances; max evaluations/budget = {worst:.3}"))
}
