//! Adaptive accelerated proximal gradient method for
//! `min P(x) = psi(x) + r(x)` with `psi` smooth and strongly convex.
//!
//! Step constants are found by backtracking (increase by `gamma1`, relax by
//! `gamma2` between iterations). Every iteration finishes with an extra prox
//! step from the accelerated iterate `x~` to a point `x^`, which yields an
//! explicit element of `dP(x^)` used as the stopping certificate.

use nalgebra::DVector;

use crate::error::ApgError;

/// Smooth part `psi` of a composite objective.
pub trait SmoothObjective {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn grad(&self, x: &DVector<f64>) -> DVector<f64>;
    fn value_and_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        (self.value(x), self.grad(x))
    }
}

/// Proximal map of the nonsmooth part: `prox(x, t) = argmin_u r(u) + |u-x|^2/(2t)`.
pub type ProxFn<'a> = &'a dyn Fn(&DVector<f64>, f64) -> DVector<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearch {
    /// Backtracking on the descent condition.
    Backtracking,
    /// `l_min` is a global Lipschitz constant of `grad psi`; every step uses
    /// it and no function values are evaluated.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApgConfig {
    pub l_min: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub eps_bar: f64,
    pub mu_psi: f64,
    pub max_iters: usize,
    pub line_search: LineSearch,
    /// Relative floating-point noise level of the stationarity certificate.
    /// The stopping test uses `max(eps_bar, noise_rel * scale)` where
    /// `scale = |grad psi(x~)| + L^ |x~|` bounds the magnitude of the terms
    /// whose difference forms the certificate. Zero disables the floor.
    pub noise_rel: f64,
    pub max_backtracks: usize,
    /// Give up (unconverged) once the best certificate has not improved for
    /// this many iterations; guards noise-limited runs.
    pub stall_iters: usize,
}

impl ApgConfig {
    pub fn new(l_min: f64, mu_psi: f64, eps_bar: f64) -> Self {
        Self {
            l_min,
            gamma1: 1.5,
            gamma2: 2.0,
            eps_bar,
            mu_psi,
            max_iters: 100_000,
            line_search: LineSearch::Backtracking,
            noise_rel: 0.0,
            max_backtracks: 200,
            stall_iters: usize::MAX,
        }
    }

    pub fn validate(&self) -> Result<(), ApgError> {
        if !(self.l_min > 0.0 && self.l_min.is_finite()) {
            return Err(ApgError::InvalidConfig("l_min must be positive"));
        }
        if !(self.gamma1 > 1.0) {
            return Err(ApgError::InvalidConfig("gamma1 must exceed 1"));
        }
        if !(self.gamma2 >= 1.0) {
            return Err(ApgError::InvalidConfig("gamma2 must be at least 1"));
        }
        if !(self.eps_bar > 0.0) {
            return Err(ApgError::InvalidConfig("eps_bar must be positive"));
        }
        if !(self.mu_psi > 0.0) {
            return Err(ApgError::InvalidConfig("mu_psi must be positive"));
        }
        if self.max_iters == 0 {
            return Err(ApgError::InvalidConfig("max_iters must be positive"));
        }
        if !(self.noise_rel >= 0.0) {
            return Err(ApgError::InvalidConfig("noise_rel must be nonnegative"));
        }
        Ok(())
    }

    /// Sets `max_iters` to ten times the worst-case evaluation budget.
    pub fn with_budget(mut self, l_psi: f64, d_r: f64) -> Self {
        let t = evaluation_budget(l_psi, self.mu_psi, self.l_min, self.gamma1, self.eps_bar, d_r);
        self.max_iters = t.saturating_mul(10).max(100);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApgResult {
    pub x_hat: DVector<f64>,
    pub x_tilde: DVector<f64>,
    pub l_hat: f64,
    /// Certified element of `dP(x_hat)`.
    pub element: DVector<f64>,
    pub stationarity: f64,
    pub grad_evals: usize,
    pub func_evals: usize,
    pub iters: usize,
    pub converged: bool,
}

/// Snapshot handed to observers after each iteration.
#[derive(Debug)]
pub struct ApgIterate<'a> {
    /// `k` of the accelerated iterate `x^k`; `0` is the prestep output.
    pub k: usize,
    pub x: &'a DVector<f64>,
    pub l_tilde: f64,
    /// Modified prox point and its step constant (absent for `k = 0`).
    pub x_hat: Option<&'a DVector<f64>>,
    pub l_hat: Option<f64>,
    pub stationarity: Option<f64>,
}

/// `prox(y - grad/L, 1/L)`, the exact minimizer of
/// `<grad, x> + (L/2)|x - y|^2 + r(x)`.
pub fn prox_grad_step(grad_at_y: &DVector<f64>, y: &DVector<f64>, l: f64, prox: ProxFn) -> DVector<f64> {
    prox(&(y - grad_at_y / l), 1.0 / l)
}

/// `grad psi(x_hat) - grad psi(x_tilde) - L_hat (x_hat - x_tilde)`.
pub fn stationarity_element(
    grad_x_hat: &DVector<f64>,
    grad_x_tilde: &DVector<f64>,
    x_hat: &DVector<f64>,
    x_tilde: &DVector<f64>,
    l_hat: f64,
) -> DVector<f64> {
    grad_x_hat - grad_x_tilde - (x_hat - x_tilde) * l_hat
}

/// Descent condition `psi(x) <= psi(y) + <grad psi(y), x-y> + (L/2)|x-y|^2`.
///
/// When the curvature term drops below the rounding level of the function
/// values the comparison is meaningless; the equivalent-for-quadratics
/// gradient form `<grad psi(x) - grad psi(y), x-y> <= L|x-y|^2` is used
/// instead. `grad_x` is only invoked in that regime.
fn descent_holds(
    psi_x: f64,
    psi_y: f64,
    grad_y: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    l: f64,
    grad_x: &mut dyn FnMut() -> DVector<f64>,
) -> bool {
    let d = x - y;
    let dn2 = d.norm_squared();
    if dn2 == 0.0 {
        return true;
    }
    let curvature = 0.5 * l * dn2;
    let noise = VALUE_NOISE * (psi_x.abs() + psi_y.abs() + grad_y.dot(&d).abs());
    if curvature > noise {
        psi_x <= psi_y + grad_y.dot(&d) + curvature
    } else {
        // Gradient differences are themselves rounded; allow for that.
        let gx = grad_x();
        let slack = 8.0 * f64::EPSILON * (gx.norm() + grad_y.norm()) * dn2.sqrt();
        (gx - grad_y).dot(&d) <= l * dn2 + slack
    }
}

const VALUE_NOISE: f64 = 1e-10;

fn finite(v: f64, g: &DVector<f64>) -> Result<(), ApgError> {
    if v.is_finite() && g.iter().all(|t| t.is_finite()) {
        Ok(())
    } else {
        Err(ApgError::NonFinite)
    }
}

/// Outcome of [`backtrack_until_descent`].
#[derive(Debug, Clone, PartialEq)]
pub struct Backtrack {
    pub x: DVector<f64>,
    pub l: f64,
    pub psi_x: f64,
    /// `grad psi(x)` when the line search had to evaluate it.
    pub grad_x: Option<DVector<f64>>,
    pub trials: usize,
    pub extra_grads: usize,
}

/// Increases `L` by `gamma1` (before each trial) until the prox-gradient point
/// from `anchor` satisfies the descent condition. The first trial uses
/// `gamma1 * l_start`.
pub fn backtrack_until_descent(
    psi: &dyn SmoothObjective,
    prox: ProxFn,
    anchor: &DVector<f64>,
    l_start: f64,
    cfg: &ApgConfig,
) -> Result<Backtrack, ApgError> {
    let (psi_y, grad_y) = psi.value_and_grad(anchor);
    finite(psi_y, &grad_y)?;
    backtrack_from(psi, prox, anchor, psi_y, &grad_y, l_start, cfg)
}

fn backtrack_from(
    psi: &dyn SmoothObjective,
    prox: ProxFn,
    anchor: &DVector<f64>,
    psi_y: f64,
    grad_y: &DVector<f64>,
    l_start: f64,
    cfg: &ApgConfig,
) -> Result<Backtrack, ApgError> {
    let mut l = l_start;
    let mut extra_grads = 0;
    for trials in 1..=cfg.max_backtracks {
        l *= cfg.gamma1;
        let x = prox_grad_step(grad_y, anchor, l, prox);
        let psi_x = psi.value(&x);
        if psi_x.is_nan() {
            return Err(ApgError::NonFinite);
        }
        let mut grad_x = None;
        let ok = descent_holds(psi_x, psi_y, grad_y, &x, anchor, l, &mut || {
            extra_grads += 1;
            grad_x.insert(psi.grad(&x)).clone()
        });
        if ok {
            return Ok(Backtrack { x, l, psi_x, grad_x, trials, extra_grads });
        }
    }
    Err(ApgError::BacktrackLimit(cfg.max_backtracks))
}

/// Runs the method from `y0` until the certified stationarity drops below
/// `eps_bar` or `max_iters` iterations pass.
pub fn apg_solve(
    psi: &dyn SmoothObjective,
    prox: ProxFn,
    cfg: &ApgConfig,
    y0: &DVector<f64>,
) -> Result<ApgResult, ApgError> {
    apg_solve_observed(psi, prox, cfg, y0, &mut |_| {})
}

/// [`apg_solve`] with a callback receiving every iterate.
pub fn apg_solve_observed(
    psi: &dyn SmoothObjective,
    prox: ProxFn,
    cfg: &ApgConfig,
    y0: &DVector<f64>,
    observer: &mut dyn FnMut(&ApgIterate),
) -> Result<ApgResult, ApgError> {
    cfg.validate()?;
    let fixed = cfg.line_search == LineSearch::Fixed;
    let mut grad_evals = 0usize;
    let mut func_evals = 0usize;

    // Prestep.
    let (mut x_cur, mut l_tilde, mut psi_cur) = if fixed {
        let g = psi.grad(y0);
        grad_evals += 1;
        finite(0.0, &g)?;
        (prox_grad_step(&g, y0, cfg.l_min, prox), cfg.l_min, f64::NAN)
    } else {
        let (py, gy) = psi.value_and_grad(y0);
        grad_evals += 1;
        func_evals += 1;
        finite(py, &gy)?;
        let bt = backtrack_from(psi, prox, y0, py, &gy, cfg.l_min / cfg.gamma1, cfg)?;
        func_evals += bt.trials;
        grad_evals += bt.extra_grads;
        (bt.x, bt.l, bt.psi_x)
    };
    observer(&ApgIterate {
        k: 0,
        x: &x_cur,
        l_tilde,
        x_hat: None,
        l_hat: None,
        stationarity: None,
    });

    let mut x_prev = x_cur.clone();
    let mut l_k = cfg.l_min.max(l_tilde / cfg.gamma2);
    let mut alpha_prev = 1.0f64;
    let mut best: Option<ApgResult> = None;
    let mut best_k = 0usize;
    let mut ran = 0usize;

    for k in 0..cfg.max_iters {
        // Accelerated step with backtracking on L~.
        let mut alpha;
        let mut trials = 0usize;
        let mut l_try = l_k / cfg.gamma1;
        let mut g_next: Option<DVector<f64>> = None;
        let x_next = loop {
            trials += 1;
            if trials > cfg.max_backtracks {
                return Err(ApgError::BacktrackLimit(cfg.max_backtracks));
            }
            l_try *= cfg.gamma1;
            if fixed {
                l_try = cfg.l_min;
            }
            alpha = (cfg.mu_psi / l_try).sqrt().min(1.0);
            let coef = alpha * (1.0 - alpha_prev) / (alpha_prev * (1.0 + alpha));
            let y = &x_cur + (&x_cur - &x_prev) * coef;
            if fixed {
                let gy = psi.grad(&y);
                grad_evals += 1;
                finite(0.0, &gy)?;
                break prox_grad_step(&gy, &y, l_try, prox);
            }
            let (py, gy) = psi.value_and_grad(&y);
            grad_evals += 1;
            func_evals += 1;
            finite(py, &gy)?;
            let x = prox_grad_step(&gy, &y, l_try, prox);
            let px = psi.value(&x);
            func_evals += 1;
            if px.is_nan() {
                return Err(ApgError::NonFinite);
            }
            g_next = None;
            let ok = descent_holds(px, py, &gy, &x, &y, l_try, &mut || {
                grad_evals += 1;
                g_next.insert(psi.grad(&x)).clone()
            });
            if ok {
                psi_cur = px;
                break x;
            }
        };
        l_tilde = l_try;

        // Modified prox step from x~ producing x^ and its certificate.
        let g_tilde = match g_next {
            Some(g) => g,
            None => {
                grad_evals += 1;
                psi.grad(&x_next)
            }
        };
        finite(0.0, &g_tilde)?;
        let (x_hat, l_hat, g_hat) = if fixed {
            (prox_grad_step(&g_tilde, &x_next, cfg.l_min, prox), cfg.l_min, None)
        } else {
            let bt = backtrack_from(psi, prox, &x_next, psi_cur, &g_tilde, l_tilde / cfg.gamma1, cfg)?;
            func_evals += bt.trials;
            grad_evals += bt.extra_grads;
            (bt.x, bt.l, bt.grad_x)
        };
        let g_hat = match g_hat {
            Some(g) => g,
            None => {
                grad_evals += 1;
                psi.grad(&x_hat)
            }
        };
        finite(0.0, &g_hat)?;
        let element = stationarity_element(&g_hat, &g_tilde, &x_hat, &x_next, l_hat);
        let stationarity = element.norm();

        x_prev = std::mem::replace(&mut x_cur, x_next);
        alpha_prev = alpha;
        l_k = cfg.l_min.max(l_tilde / cfg.gamma2);

        observer(&ApgIterate {
            k: k + 1,
            x: &x_cur,
            l_tilde,
            x_hat: Some(&x_hat),
            l_hat: Some(l_hat),
            stationarity: Some(stationarity),
        });

        let floor = cfg.noise_rel * (g_tilde.norm() + l_hat * x_cur.norm());
        let done = stationarity <= cfg.eps_bar.max(floor);
        let improves = best.as_ref().map_or(true, |b| stationarity < b.stationarity);
        if done || improves {
            best_k = k;
            best = Some(ApgResult {
                x_hat,
                x_tilde: x_cur.clone(),
                l_hat,
                element,
                stationarity,
                grad_evals,
                func_evals,
                iters: k + 1,
                converged: done,
            });
        }
        ran = k + 1;
        if done || k - best_k >= cfg.stall_iters {
            break;
        }
    }

    let mut out = best.expect("at least one iteration runs");
    out.grad_evals = grad_evals;
    out.func_evals = func_evals;
    if !out.converged {
        out.iters = ran;
    }
    Ok(out)
}

fn ceil_plus(t: f64) -> usize {
    if t.is_nan() || t <= 0.0 {
        0
    } else {
        t.ceil() as usize
    }
}

/// Worst-case number of evaluations of `psi` and `grad psi` needed to reach
/// stationarity `eps_bar` on a domain of diameter `d_r`.
pub fn evaluation_budget(l_psi: f64, mu_psi: f64, l_min: f64, gamma1: f64, eps_bar: f64, d_r: f64) -> usize {
    let per_iter = 1 + ceil_plus((l_psi / l_min).ln() / gamma1.ln());
    (per_iter).saturating_mul(1 + 2 * iteration_budget(l_psi, mu_psi, l_min, gamma1, eps_bar, d_r))
}

/// Iteration count after which stationarity `eps_bar` is guaranteed.
pub fn iteration_budget(l_psi: f64, mu_psi: f64, l_min: f64, gamma1: f64, eps_bar: f64, d_r: f64) -> usize {
    let gl = gamma1 * l_psi;
    let inner = d_r / eps_bar * (gl.sqrt() + l_psi / l_min.sqrt()) * (2.0 * gl + mu_psi).sqrt();
    ceil_plus(2.0 * (gl / mu_psi).sqrt() * inner.ln())
}

/// `(1 - sqrt(mu / (gamma1 L)))`, the linear rate of the objective gap.
pub fn rate_factor(l_psi: f64, mu_psi: f64, gamma1: f64) -> f64 {
    1.0 - (mu_psi / (gamma1 * l_psi)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    struct Quadratic {
        q: DMatrix<f64>,
        c: DVector<f64>,
    }

    impl SmoothObjective for Quadratic {
        fn value(&self, x: &DVector<f64>) -> f64 {
            0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
        }
        fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
            &self.q * x + &self.c
        }
    }

    struct Constant;
    impl SmoothObjective for Constant {
        fn value(&self, _: &DVector<f64>) -> f64 {
            3.0
        }
        fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::zeros(x.len())
        }
    }

    fn clamp(lo: f64, hi: f64) -> impl Fn(&DVector<f64>, f64) -> DVector<f64> {
        move |x, _| x.map(|t| t.clamp(lo, hi))
    }

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn diag_quadratic(d: &[f64], c: &[f64]) -> Quadratic {
        Quadratic {
            q: DMatrix::from_diagonal(&v(d)),
            c: v(c),
        }
    }

    #[test]
    fn prox_step_examples() {
        let p = clamp(-10.0, 10.0);
        assert_eq!(prox_grad_step(&v(&[0.0]), &v(&[3.0]), 1.0, &p), v(&[3.0]));
        assert_eq!(prox_grad_step(&v(&[4.0]), &v(&[4.0]), 1.0, &p), v(&[0.0]));
        let p = clamp(2.0, 10.0);
        assert_eq!(prox_grad_step(&v(&[4.0]), &v(&[4.0]), 1.0, &p), v(&[2.0]));
    }

    #[test]
    fn stationarity_element_examples() {
        let x = v(&[0.3, -1.0]);
        let z = stationarity_element(&v(&[1.0, 2.0]), &v(&[1.0, 2.0]), &x, &x, 5.0);
        assert_eq!(z.norm(), 0.0);
        // psi = x^2/2, x~ = 1, L^ = 1: x^ = 0 and the element vanishes.
        let e = stationarity_element(&v(&[0.0]), &v(&[1.0]), &v(&[0.0]), &v(&[1.0]), 1.0);
        assert_eq!(e, v(&[0.0]));
    }

    #[test]
    fn backtracking_examples() {
        let p = |x: &DVector<f64>, _t: f64| x.clone();
        let mut cfg = ApgConfig::new(1.0, 1.0, 1e-8);
        // Exact quadratic with curvature 4 started at 4/gamma1: first trial.
        let q = diag_quadratic(&[4.0], &[0.0]);
        let bt = backtrack_until_descent(&q, &p, &v(&[1.0]), 4.0 / 1.5, &cfg).unwrap();
        assert_eq!(bt.trials, 1);
        assert!((bt.l - 4.0).abs() < 1e-12);

        // Curvature 100 from 1/gamma1: accepted constant at most 150.
        let q = diag_quadratic(&[100.0], &[0.0]);
        let bt = backtrack_until_descent(&q, &p, &v(&[1.0]), 1.0 / 1.5, &cfg).unwrap();
        assert!(bt.l <= 150.0 && bt.l >= 100.0 / 1.5);
        let expect = (100.0f64.ln() / 1.5f64.ln()).ceil() as usize + 1;
        assert!(bt.trials <= expect);

        let bt = backtrack_until_descent(&Constant, &clamp(-1.0, 1.0), &v(&[0.5]), 1.0, &cfg).unwrap();
        assert_eq!(bt.trials, 1);
        assert_eq!(bt.x, v(&[0.5]));

        cfg.max_backtracks = 3;
        let q = diag_quadratic(&[1e9], &[0.0]);
        assert!(matches!(
            backtrack_until_descent(&q, &p, &v(&[1.0]), 1.0, &cfg),
            Err(ApgError::BacktrackLimit(3))
        ));
    }

    #[test]
    fn solves_to_origin() {
        let q = diag_quadratic(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]);
        let cfg = ApgConfig::new(1.0, 1.0, 1e-8);
        let r = apg_solve(&q, &clamp(-10.0, 10.0), &cfg, &v(&[7.0, -3.0, 9.5])).unwrap();
        assert!(r.converged);
        assert!(r.stationarity <= 1e-8);
        assert!(r.x_hat.norm() <= 1e-8);
    }

    #[test]
    fn fixed_step_uses_no_function_values() {
        let q = diag_quadratic(&[1.0, 10.0], &[1.0, -2.0]);
        let mut cfg = ApgConfig::new(10.0, 1.0, 1e-10);
        cfg.line_search = LineSearch::Fixed;
        let r = apg_solve(&q, &clamp(-10.0, 10.0), &cfg, &v(&[5.0, 5.0])).unwrap();
        assert!(r.converged);
        assert_eq!(r.func_evals, 0);
        assert!((r.x_hat - v(&[-1.0, 0.2])).norm() < 1e-9);
    }

    #[test]
    fn rejects_invalid_config() {
        let q = diag_quadratic(&[1.0], &[0.0]);
        let mut cfg = ApgConfig::new(1.0, 1.0, 1e-8);
        cfg.gamma1 = 1.0;
        assert!(apg_solve(&q, &clamp(-1.0, 1.0), &cfg, &v(&[0.0])).is_err());
    }

    #[test]
    fn not_converged_when_capped() {
        let q = diag_quadratic(&[1.0, 1000.0], &[3.0, 1.0]);
        let mut cfg = ApgConfig::new(1.0, 1.0, 1e-14);
        cfg.max_iters = 3;
        let r = apg_solve(&q, &clamp(-10.0, 10.0), &cfg, &v(&[5.0, 5.0])).unwrap();
        assert!(!r.converged);
        assert_eq!(r.iters, 3);
    }

    #[test]
    fn budget_formula() {
        // L = L_min: one evaluation group per iteration.
        let t = evaluation_budget(1.0, 1.0, 1.0, 1.5, 1.0, 1.0);
        let k = iteration_budget(1.0, 1.0, 1.0, 1.5, 1.0, 1.0);
        assert_eq!(t, 1 + 2 * k);
        let t2 = evaluation_budget(100.0, 1.0, 1.0, 1.5, 1e-6, 10.0);
        assert_eq!(t2 % 13, 0);
    }

    proptest! {
        #[test]
        fn certificate_properties(
            d in proptest::collection::vec(1.0f64..50.0, 3),
            c in proptest::collection::vec(-80.0f64..80.0, 3),
            y0 in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let q = diag_quadratic(&d, &c);
            let l_psi = d.iter().cloned().fold(0.0, f64::max);
            let mu = d.iter().cloned().fold(f64::INFINITY, f64::min);
            let cfg = ApgConfig::new(1.0, mu, 1e-9);
            let p = clamp(-1.0, 1.0);
            let mut ok = true;
            let mut l_ok = true;
            let r = apg_solve_observed(&q, &p, &cfg, &DVector::from_vec(y0), &mut |it| {
                if let (Some(xh), Some(lh), Some(s)) = (it.x_hat, it.l_hat, it.stationarity) {
                    ok &= s <= (l_psi + lh) * (xh - it.x).norm() * (1.0 + 1e-9) + 1e-12;
                    l_ok &= lh >= cfg.l_min && lh <= cfg.gamma1 * l_psi * (1.0 + 1e-12);
                }
                l_ok &= it.l_tilde >= cfg.l_min && it.l_tilde <= cfg.gamma1 * l_psi * (1.0 + 1e-12);
            }).unwrap();
            prop_assert!(ok);
            prop_assert!(l_ok);
            prop_assert!(r.converged);
            // The element lies in grad psi(x^) + N_box(x^): its reduction
            // against the cone matches the exact minimal-norm residual.
            let g = q.grad(&r.x_hat);
            for i in 0..3 {
                let xi = r.x_hat[i];
                let e = r.element[i];
                let n = e - g[i];
                if xi > -1.0 && xi < 1.0 { prop_assert!(n.abs() <= 1e-9 * (1.0 + g[i].abs())); }
                if xi <= -1.0 { prop_assert!(n <= 1e-9 * (1.0 + g[i].abs())); }
                if xi >= 1.0 { prop_assert!(n >= -1e-9 * (1.0 + g[i].abs())); }
            }
        }
    }
}
