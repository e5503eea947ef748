//! Saddle-point view of the augmented Lagrangian subproblem and the dual
//! cutting-plane searches that solve it.
//!
//! For fixed `beta > 0` and `z >= 0`, with `theta(x) = g(x) + z/beta`,
//!
//! ```text
//!   phi(x)    = F(x) + (beta/2) |[theta(x)]_+|^2
//!   Phi(x, y) = F(x) + beta (y'theta(x) - |y|^2/2),     y >= 0
//!   d(y)      = min_x Phi(x, y),   grad d(y) = beta (theta(x(y)) - y)
//! ```
//!
//! `d` is `beta`-strongly concave. An approximate minimizer `x^` of
//! `Phi(., y^)` yields either a certificate that `y^` is near the dual
//! maximizer or a cut through `y^`. For a single constraint the searches
//! bracket and bisect; for several constraints they run the ellipsoid method
//! inside a ball whose radius doubles until the search succeeds.
//!
//! Every inner solve minimizes `f + beta <y, g>` whose gradient has the
//! global Lipschitz constant `L_f + beta |y| L_g`, so the step size is fixed
//! and no function values are needed.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::apg::{apg_solve, ApgConfig, ApgResult, LineSearch, SmoothObjective};
use crate::error::DualCutError;
use crate::problem::{Oracles, ProblemConstants};

/// Radius doublings allowed before a search gives up.
pub const DEFAULT_DOUBLING_CAP: usize = 60;
/// The ellipsoid's log-determinant is recomputed from scratch this often.
const LOGDET_REFRESH: usize = 50;

#[derive(Clone)]
pub struct SaddleSubproblem<'a> {
    pub oracles: &'a dyn Oracles,
    pub constants: ProblemConstants,
    pub beta: f64,
    pub z: DVector<f64>,
}

impl std::fmt::Debug for SaddleSubproblem<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SaddleSubproblem")
            .field("beta", &self.beta)
            .field("z", &self.z)
            .field("constants", &self.constants)
            .finish()
    }
}

fn positive_part(v: &DVector<f64>) -> DVector<f64> {
    v.map(|t| t.max(0.0))
}

impl<'a> SaddleSubproblem<'a> {
    pub fn new(
        oracles: &'a dyn Oracles,
        constants: ProblemConstants,
        beta: f64,
        z: DVector<f64>,
    ) -> Result<Self, DualCutError> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(DualCutError::InvalidInput("beta must be positive"));
        }
        if z.len() != oracles.num_constraints() {
            return Err(DualCutError::InvalidInput("multiplier has the wrong length"));
        }
        if z.iter().any(|&t| !(t >= 0.0)) {
            return Err(DualCutError::InvalidInput("multiplier must be nonnegative"));
        }
        if !(constants.mu > 0.0) {
            return Err(DualCutError::InvalidInput("strong convexity modulus must be positive"));
        }
        if oracles.num_constraints() > 0 && !(constants.b_g > 0.0) {
            return Err(DualCutError::InvalidInput("B_g must be positive"));
        }
        Ok(Self { oracles, constants, beta, z })
    }

    pub fn m(&self) -> usize {
        self.z.len()
    }

    pub fn theta(&self, x: &DVector<f64>) -> DVector<f64> {
        self.oracles.g_value(x) + &self.z / self.beta
    }

    /// `F(x) + (beta/2)|[theta(x)]_+|^2`.
    pub fn phi_value(&self, x: &DVector<f64>) -> f64 {
        let t = positive_part(&self.theta(x));
        self.oracles.f_value(x) + self.oracles.h_value(x) + 0.5 * self.beta * t.norm_squared()
    }

    /// `Phi(x, y)`.
    pub fn saddle_value(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        let t = self.theta(x);
        self.oracles.f_value(x)
            + self.oracles.h_value(x)
            + self.beta * (y.dot(&t) - 0.5 * y.norm_squared())
    }

    /// Lipschitz constant of `grad_x Phi(., y)`.
    pub fn inner_lipschitz(&self, y: &DVector<f64>) -> f64 {
        self.constants.l_f + self.beta * y.norm() * self.constants.l_g
    }

    /// Smooth part of `Phi(., y)` as an APG objective.
    pub fn inner_objective<'s>(&'s self, y: &'s DVector<f64>) -> SaddleObjective<'s, 'a> {
        SaddleObjective { sub: self, y }
    }

    /// `|[theta]_+ - y|`, the dual certificate at `y`.
    pub fn dual_gap(theta: &DVector<f64>, y: &DVector<f64>) -> f64 {
        (positive_part(theta) - y).norm()
    }
}

/// `psi(x) = f(x) + beta y'theta(x) - beta |y|^2 / 2`.
pub struct SaddleObjective<'s, 'a> {
    sub: &'s SaddleSubproblem<'a>,
    y: &'s DVector<f64>,
}

impl SmoothObjective for SaddleObjective<'_, '_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let s = self.sub;
        let shift = self.y.dot(&(&s.z / s.beta)) - 0.5 * self.y.norm_squared();
        let mut v = s.oracles.f_value(x) + s.beta * shift;
        if s.m() > 0 {
            v += s.beta * self.y.dot(&s.oracles.g_value(x));
        }
        v
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let s = self.sub;
        let mut g = s.oracles.f_grad(x);
        if s.m() > 0 && self.y.iter().any(|&t| t != 0.0) {
            g += s.oracles.g_jacobian(x).tr_mul(self.y) * s.beta;
        }
        g
    }
}

/// How inner problems are solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerSettings {
    /// `Fixed` uses the global constant `L_f + beta |y| L_g` as step size.
    pub line_search: LineSearch,
    /// Starting constant for backtracking (ignored with `Fixed`).
    pub l_min: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Relative rounding level of the APG certificate; `None` picks `4 eps`.
    pub noise_rel: Option<f64>,
}

impl Default for InnerSettings {
    fn default() -> Self {
        Self { line_search: LineSearch::Fixed, l_min: 1.0, gamma1: 1.5, gamma2: 2.0, noise_rel: None }
    }
}

impl InnerSettings {
    pub fn noise_for(&self) -> f64 {
        self.noise_rel.unwrap_or(4.0 * f64::EPSILON)
    }
}

/// An approximate minimizer of `Phi(., y)` with what the searches need.
#[derive(Debug, Clone)]
pub struct InnerSolve {
    pub y: DVector<f64>,
    pub apg: ApgResult,
    pub theta: DVector<f64>,
    /// `|[theta(x^)]_+ - y|`.
    pub gap: f64,
    /// Frobenius norm of `J_g(x^)`.
    pub jac_norm: f64,
    pub jac: DMatrix<f64>,
}

impl InnerSolve {
    /// Accuracy to which this solve can certify a dual point: `delta`
    /// itself when the requested stationarity was met, otherwise the level
    /// implied by the stationarity actually reached.
    pub fn certifiable_delta(&self, delta: f64, eps_bar: f64, mu: f64) -> f64 {
        if self.apg.stationarity <= eps_bar {
            delta
        } else {
            delta.max(4.0 * self.jac_norm * self.apg.stationarity / mu)
        }
    }

    /// Element of `d phi(x^)`: `v + beta J'([theta]_+ - y)` where `v` is
    /// the APG certificate in `d_x Phi(x^, y)`.
    pub fn phi_element(&self, beta: f64) -> DVector<f64> {
        let mut e = self.apg.element.clone();
        if self.y.len() > 0 {
            e += self.jac.tr_mul(&(positive_part(&self.theta) - &self.y)) * beta;
        }
        e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchFlag {
    /// The acceptance test `|[theta(x^)]_+ - y^| <= 3 delta / 4` passed.
    Found,
    /// `y^` lies in a bracket of the dual maximizer (single constraint).
    Interval,
    /// The ellipsoid reached its volume floor without success.
    Exhausted,
}

#[derive(Debug, Clone)]
pub struct DualSearchResult {
    pub x_hat: DVector<f64>,
    pub y_hat: DVector<f64>,
    pub flag: SearchFlag,
    pub interval: Option<(f64, f64)>,
    /// The inner solve at `y_hat`.
    pub solve: InnerSolve,
    pub grad_evals: usize,
    pub func_evals: usize,
    pub inner_solves: usize,
    pub halvings: usize,
    pub ellipsoid_calls: usize,
    pub ellipsoid_iters: usize,
    /// Radius of the last ellipsoid run.
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutBranch {
    Nonneg,
    Norm,
    Objective,
    Found,
}

impl CutBranch {
    pub fn as_str(&self) -> &'static str {
        match self {
            CutBranch::Nonneg => "nonneg",
            CutBranch::Norm => "norm",
            CutBranch::Objective => "objective",
            CutBranch::Found => "found",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CutRecord {
    pub call: usize,
    pub iter: usize,
    pub branch: CutBranch,
    pub y_norm: f64,
    pub logdet: f64,
}

pub fn write_cut_trace<W: Write>(records: &[CutRecord], mut w: W) -> std::io::Result<()> {
    writeln!(w, "call,iter,branch,y_norm,logdet")?;
    for r in records {
        writeln!(w, "{},{},{},{:e},{:e}", r.call, r.iter, r.branch.as_str(), r.y_norm, r.logdet)?;
    }
    Ok(())
}

/// Positive root of `((mu + beta B_g^2)/mu)(eta + sqrt(2 eta B_d / beta)) = delta/4`.
pub fn eta_plus(delta: f64, beta: f64, mu: f64, b_g: f64, b_d: f64) -> f64 {
    // s = sqrt(eta) solves s^2 + p s - q = 0
    let p = (2.0 * b_d / beta).sqrt();
    let q = delta * mu / (4.0 * (mu + beta * b_g * b_g));
    let s = 2.0 * q / (p + (p * p + 4.0 * q).sqrt());
    s * s
}

/// Ellipsoid `{y : (y - c)' B^{-1} (y - c) <= 1}`, stored through a square
/// factor `B = L L'` so that `B` stays positive semidefinite however thin
/// the ellipsoid gets.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidState {
    pub center: DVector<f64>,
    pub factor: DMatrix<f64>,
    pub logdet: f64,
    pub iter: usize,
}

impl EllipsoidState {
    /// Ball of radius `b` around the origin.
    pub fn ball(m: usize, b: f64) -> Self {
        Self {
            center: DVector::zeros(m),
            factor: DMatrix::identity(m, m) * b,
            logdet: m as f64 * (b * b).ln(),
            iter: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// The shape matrix `B`.
    pub fn shape(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// Closed-form change of `log det B` per update.
    pub fn logdet_step(m: usize) -> f64 {
        let mf = m as f64;
        mf * (mf * mf / (mf * mf - 1.0)).ln() + ((mf - 1.0) / (mf + 1.0)).ln()
    }

    /// Central cut keeping `{y : <a, y - c> <= 0}`:
    ///
    /// ```text
    ///   c <- c - B a / ((m+1) sqrt(a'Ba))
    ///   B <- m^2/(m^2-1) (B - 2/(m+1) B a a' B / a'Ba)
    /// ```
    pub fn update(&mut self, a: &DVector<f64>) -> Result<(), DualCutError> {
        let m = self.dim();
        if m < 2 {
            return Err(DualCutError::InvalidInput("ellipsoid updates need m >= 2"));
        }
        if a.iter().all(|&t| t == 0.0) {
            return Err(DualCutError::InvalidInput("cut normal must be nonzero"));
        }
        // the update is invariant to the scale of `a`
        let a = a / a.amax();
        let lta = self.factor.tr_mul(&a);
        let aba = lta.norm_squared();
        if !(aba > 0.0 && aba.is_finite()) {
            return Err(DualCutError::ShapeCorrupted);
        }
        let mf = m as f64;
        let ba = &self.factor * &lta;
        self.center -= &ba / ((mf + 1.0) * aba.sqrt());
        // I - tau p p' = (I - kappa p p')^2 with p = L'a / |L'a|
        let p = lta / aba.sqrt();
        let kappa = 1.0 - (1.0 - 2.0 / (mf + 1.0)).sqrt();
        let lp = &self.factor * &p;
        self.factor -= (lp * p.transpose()) * kappa;
        self.factor *= mf / (mf * mf - 1.0).sqrt();
        self.logdet += Self::logdet_step(m);
        self.iter += 1;
        if self.iter % LOGDET_REFRESH == 0 {
            self.retriangularize()?;
        }
        if !self.center.iter().all(|t| t.is_finite()) {
            return Err(DualCutError::ShapeCorrupted);
        }
        Ok(())
    }

    /// Replaces the factor by the Cholesky factor of `B` (via QR of `L'`)
    /// and recomputes `log det B` from its diagonal.
    pub fn retriangularize(&mut self) -> Result<(), DualCutError> {
        let r = self.factor.transpose().qr().r();
        let logdet = 2.0 * r.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>();
        if !logdet.is_finite() && logdet != f64::NEG_INFINITY {
            return Err(DualCutError::ShapeCorrupted);
        }
        self.factor = r.transpose();
        self.logdet = logdet;
        Ok(())
    }

    /// `log det B` recomputed from the factor.
    pub fn exact_logdet(&self) -> f64 {
        let r = self.factor.transpose().qr().r();
        2.0 * r.diagonal().iter().map(|d| d.abs().ln()).sum::<f64>()
    }
}

/// Functional form of [`EllipsoidState::update`].
pub fn ellipsoid_update(state: &EllipsoidState, a: &DVector<f64>) -> Result<EllipsoidState, DualCutError> {
    let mut next = state.clone();
    next.update(a)?;
    Ok(next)
}

/// One dual search over a fixed subproblem. Inner solves are chained: each
/// starts from the previous solution (the first from `x_start`).
pub struct DualSearch<'a> {
    pub sub: SaddleSubproblem<'a>,
    pub settings: InnerSettings,
    pub doubling_cap: usize,
    x_start: DVector<f64>,
    grad_evals: usize,
    func_evals: usize,
    inner_solves: usize,
    trace: Option<Vec<CutRecord>>,
    ellipsoid_calls: usize,
    ellipsoid_iters: usize,
}

enum Bracket {
    Point(InnerSolve),
    Interval(f64, f64, InnerSolve),
}

impl<'a> DualSearch<'a> {
    pub fn new(sub: SaddleSubproblem<'a>, settings: InnerSettings, x_start: DVector<f64>) -> Self {
        Self {
            sub,
            settings,
            doubling_cap: DEFAULT_DOUBLING_CAP,
            x_start,
            grad_evals: 0,
            func_evals: 0,
            inner_solves: 0,
            trace: None,
            ellipsoid_calls: 0,
            ellipsoid_iters: 0,
        }
    }

    pub fn with_cut_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn cut_trace(&self) -> &[CutRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn grad_evals(&self) -> usize {
        self.grad_evals
    }

    pub fn func_evals(&self) -> usize {
        self.func_evals
    }

    pub fn inner_solves(&self) -> usize {
        self.inner_solves
    }

    fn mu(&self) -> f64 {
        self.sub.constants.mu
    }

    /// Minimizes `Phi(., y)` to stationarity `eps_bar` (or to the rounding
    /// floor, whichever is larger).
    pub fn solve_inner(&mut self, y: &DVector<f64>, eps_bar: f64) -> Result<InnerSolve, DualCutError> {
        if y.len() != self.sub.m() || y.iter().any(|&t| !(t >= 0.0)) {
            return Err(DualCutError::InvalidInput("dual point must be nonnegative with length m"));
        }
        let n = self.sub.oracles.dim();
        let l_psi = self.sub.inner_lipschitz(y);
        let s = &self.settings;
        let mut cfg = ApgConfig::new(
            if s.line_search == LineSearch::Fixed { l_psi } else { s.l_min },
            self.mu(),
            eps_bar,
        );
        cfg.gamma1 = s.gamma1;
        cfg.gamma2 = s.gamma2;
        cfg.line_search = s.line_search;
        cfg.noise_rel = s.noise_for();
        cfg = cfg.with_budget(l_psi, self.sub.constants.d_h);
        cfg.stall_iters = 50 + 10 * ((l_psi / self.mu()).sqrt().ceil() as usize);

        let oracles = self.sub.oracles;
        let prox = |x: &DVector<f64>, t: f64| oracles.h_prox(x, t);
        let psi = self.sub.inner_objective(y);
        let apg = apg_solve(&psi, &prox, &cfg, &self.x_start)?;
        self.grad_evals += apg.grad_evals;
        self.func_evals += apg.func_evals;
        self.inner_solves += 1;
        self.x_start = apg.x_hat.clone();

        let (theta, jac) = if self.sub.m() > 0 {
            let (g, jac) = oracles.g_value_and_jacobian(&apg.x_hat);
            (g + &self.sub.z / self.sub.beta, jac)
        } else {
            (DVector::zeros(0), DMatrix::zeros(0, n))
        };
        let gap = SaddleSubproblem::dual_gap(&theta, y);
        Ok(InnerSolve { y: y.clone(), apg, jac_norm: jac.norm(), jac, theta, gap })
    }

    fn accepts(&self, s: &InnerSolve, delta: f64, eps_bar: f64) -> bool {
        s.gap <= 0.75 * s.certifiable_delta(delta, eps_bar, self.mu())
    }

    fn result(&self, solve: InnerSolve, flag: SearchFlag, interval: Option<(f64, f64)>, halvings: usize, radius: f64) -> DualSearchResult {
        DualSearchResult {
            x_hat: solve.apg.x_hat.clone(),
            y_hat: solve.y.clone(),
            flag,
            interval,
            solve,
            grad_evals: self.grad_evals,
            func_evals: self.func_evals,
            inner_solves: self.inner_solves,
            halvings,
            ellipsoid_calls: self.ellipsoid_calls,
            ellipsoid_iters: self.ellipsoid_iters,
            radius,
        }
    }

    fn scalar(y: f64) -> DVector<f64> {
        DVector::from_element(1, y)
    }

    fn single_eps_bar(&self, delta: f64) -> f64 {
        self.mu() * delta / (4.0 * self.sub.constants.b_g)
    }

    fn bracket(&mut self, delta: f64) -> Result<Bracket, DualCutError> {
        if self.sub.m() != 1 {
            return Err(DualCutError::InvalidInput("interval search needs exactly one constraint"));
        }
        if !(delta > 0.0) {
            return Err(DualCutError::InvalidInput("delta must be positive"));
        }
        let eps_bar = self.single_eps_bar(delta);
        let s = self.solve_inner(&Self::scalar(0.0), eps_bar)?;
        if self.accepts(&s, delta, eps_bar) {
            return Ok(Bracket::Point(s));
        }
        let mut a = 0.0;
        let mut b = 1.0 / self.sub.beta;
        let mut s = self.solve_inner(&Self::scalar(b), eps_bar)?;
        let mut doublings = 0;
        while !self.accepts(&s, delta, eps_bar) && s.theta[0] - b > 0.0 {
            doublings += 1;
            if doublings > self.doubling_cap {
                return Err(DualCutError::DoublingCap(self.doubling_cap));
            }
            a = b;
            b *= 2.0;
            s = self.solve_inner(&Self::scalar(b), eps_bar)?;
        }
        if self.accepts(&s, delta, eps_bar) {
            Ok(Bracket::Point(s))
        } else {
            Ok(Bracket::Interval(a, b, s))
        }
    }

    /// Interval search for a single constraint: either a certified point
    /// (`Found`, `y^` in `{0, b}`) or a bracket `[a, b]` of the maximizer.
    pub fn intv_search(&mut self, delta: f64) -> Result<DualSearchResult, DualCutError> {
        match self.bracket(delta)? {
            Bracket::Point(s) => {
                let y = s.y[0];
                Ok(self.result(s, SearchFlag::Found, None, 0, y))
            }
            Bracket::Interval(a, b, s) => Ok(self.result(s, SearchFlag::Interval, Some((a, b)), 0, b)),
        }
    }

    /// Bisection on the bracket from [`Self::intv_search`].
    pub fn bisec(&mut self, delta: f64) -> Result<DualSearchResult, DualCutError> {
        let eps_bar = self.single_eps_bar(delta);
        let (mut a, mut b) = match self.bracket(delta)? {
            Bracket::Point(s) => (s.y[0], s.y[0]),
            Bracket::Interval(a, b, _) => (a, b),
        };
        let c = &self.sub.constants;
        let width = self.mu() * delta / (self.mu() + self.sub.beta * c.b_g * c.b_g);
        let mut halvings = 0;
        while b - a > width {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break; // bracket at floating-point resolution
            }
            let s = self.solve_inner(&Self::scalar(mid), eps_bar)?;
            halvings += 1;
            if self.accepts(&s, delta, eps_bar) {
                return Ok(self.result(s, SearchFlag::Found, Some((a, b)), halvings, b));
            }
            if s.theta[0] - mid > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        let s = self.solve_inner(&Self::scalar(0.5 * (a + b)), eps_bar)?;
        Ok(self.result(s, SearchFlag::Interval, Some((a, b)), halvings, b))
    }

    /// Inner tolerance of the ellipsoid search.
    pub fn multi_eps_bar(&self, delta: f64) -> f64 {
        let c = &self.sub.constants;
        let mu = self.mu();
        (mu * delta / (4.0 * c.b_g)).min(mu * mu * delta / (8.0 * c.b_g * (mu + self.sub.beta * c.b_g * c.b_g)))
    }

    /// Radius `eta` of the ball the search must localize, floored at the
    /// floating-point resolution of points of norm `b`.
    pub fn ellipsoid_eta(&self, delta: f64, b: f64) -> f64 {
        let c = &self.sub.constants;
        let beta = self.sub.beta;
        let b_d = beta * c.g_bound + self.sub.z.norm() + beta * b;
        let eta = eta_plus(delta, beta, self.mu(), c.b_g, b_d).min(b);
        eta.max(1e-300)
    }

    /// Ellipsoid method for `max_{y >= 0} d(y)` inside the ball of radius `b`.
    pub fn ellipsoid_search(&mut self, delta: f64, b: f64) -> Result<DualSearchResult, DualCutError> {
        let m = self.sub.m();
        if m < 2 {
            return Err(DualCutError::InvalidInput("ellipsoid search needs m >= 2"));
        }
        if !(delta > 0.0 && b > 0.0) {
            return Err(DualCutError::InvalidInput("delta and b must be positive"));
        }
        self.ellipsoid_calls += 1;
        let call = self.ellipsoid_calls;
        let eps_bar = self.multi_eps_bar(delta);
        let eta = self.ellipsoid_eta(delta, b);
        let target = m as f64 * (eta / 4.0).ln();
        let mut state = EllipsoidState::ball(m, b);
        let mut last: Option<InnerSolve> = None;

        while 0.5 * state.logdet > target {
            let y = state.center.clone();
            let (branch, a) = if let Some(i0) = argmin_negative(&y) {
                let mut a = DVector::zeros(m);
                a[i0] = -1.0;
                (CutBranch::Nonneg, a)
            } else if y.norm() > b {
                (CutBranch::Norm, y.clone())
            } else {
                let s = self.solve_inner(&y, eps_bar)?;
                if self.accepts(&s, delta, eps_bar) {
                    self.record(call, state.iter, CutBranch::Found, &y, state.logdet);
                    return Ok(self.result(s, SearchFlag::Found, None, 0, b));
                }
                let a = &y - &s.theta;
                last = Some(s);
                if a.iter().all(|&t| t == 0.0) {
                    break;
                }
                (CutBranch::Objective, a)
            };
            self.record(call, state.iter, branch, &y, state.logdet);
            match state.update(&a) {
                Ok(()) => self.ellipsoid_iters += 1,
                Err(DualCutError::ShapeCorrupted) => {
                    log::warn!("ellipsoid degenerated after {} cuts; treating it as exhausted", state.iter);
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        let s = match last {
            Some(s) => s,
            None => self.solve_inner(&DVector::zeros(m), eps_bar)?,
        };
        Ok(self.result(s, SearchFlag::Exhausted, None, 0, b))
    }

    fn record(&mut self, call: usize, iter: usize, branch: CutBranch, y: &DVector<f64>, logdet: f64) {
        if let Some(t) = self.trace.as_mut() {
            t.push(CutRecord { call, iter, branch, y_norm: y.norm(), logdet });
        }
    }

    /// Ellipsoid searches with radius `1/beta, 2/beta, 4/beta, ...` until one
    /// succeeds.
    pub fn stem(&mut self, delta: f64) -> Result<DualSearchResult, DualCutError> {
        let c = &self.sub.constants;
        let beta = self.sub.beta;
        if delta > 8.0 * (self.mu() + beta * c.b_g * c.b_g) / (beta * self.mu()) {
            return Err(DualCutError::InvalidInput("delta exceeds 8(mu + beta B_g^2)/(beta mu)"));
        }
        let mut b = 1.0 / beta;
        for _ in 0..=self.doubling_cap {
            let r = self.ellipsoid_search(delta, b)?;
            if r.flag == SearchFlag::Found {
                return Ok(r);
            }
            b *= 2.0;
        }
        Err(DualCutError::DoublingCap(self.doubling_cap))
    }

    /// Bisection for one constraint, ellipsoid search otherwise; with no
    /// constraints a single inner solve at tolerance `delta`.
    pub fn run(&mut self, delta: f64) -> Result<DualSearchResult, DualCutError> {
        match self.sub.m() {
            0 => {
                let s = self.solve_inner(&DVector::zeros(0), delta)?;
                Ok(self.result(s, SearchFlag::Found, None, 0, 0.0))
            }
            1 => self.bisec(delta),
            _ => self.stem(delta),
        }
    }
}

/// Index of the most negative coordinate (lowest index on ties), if any.
fn argmin_negative(y: &DVector<f64>) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in y.iter().enumerate() {
        if v < 0.0 && best.map_or(true, |j| v < y[j]) {
            best = Some(i);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{eval_aug_lagrangian, toys};
    use crate::qcqp::{build_oracles, reference_solve, toy_1d, toy_2d};
    use proptest::prelude::*;

    fn toy_constants() -> ProblemConstants {
        ProblemConstants { mu: 1.0, l_f: 1.0, l_g: 0.0, d_h: 20.0, b_g: 1.0, g_bound: 10.5 }
    }

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn phi_on_toy() {
        let o = toys::toy_1d();
        let sub = SaddleSubproblem::new(&o, toy_constants(), 1.0, v(&[0.0])).unwrap();
        assert!((sub.phi_value(&v(&[0.75])) + 0.4375).abs() < 1e-15);
        // strictly feasible with z = 0 gives F
        assert!((sub.phi_value(&v(&[0.2])) + 0.18).abs() < 1e-15);
    }

    #[test]
    fn inner_solve_on_toy() {
        let o = toys::toy_1d();
        let sub = SaddleSubproblem::new(&o, toy_constants(), 1.0, v(&[0.0])).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), v(&[3.0]));
        let s = search.solve_inner(&v(&[0.25]), 1e-10).unwrap();
        assert!((s.apg.x_hat[0] - 0.75).abs() < 1e-10);
        assert_eq!(s.apg.func_evals, 0);
        let s0 = search.solve_inner(&v(&[0.0]), 1e-10).unwrap();
        assert!((s0.apg.x_hat[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn bisection_on_toy() {
        let o = toys::toy_1d();
        let sub = SaddleSubproblem::new(&o, toy_constants(), 1.0, v(&[0.0])).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), v(&[0.0]));
        let delta = 1e-3;
        let r = search.bisec(delta).unwrap();
        // the exact dual certificate at y^: x(y) = 1 - y, theta = 0.5 - y
        let y = r.y_hat[0];
        assert!(((0.5 - y).max(0.0) - y).abs() <= delta);
        assert!((y - 0.25).abs() <= delta);
        // bracket bound on halvings
        let (a, b) = (0.0f64, 1.0f64);
        let bound = ((b - a) * 2.0 / delta).log2().ceil();
        assert!(r.halvings as f64 <= bound);
    }

    #[test]
    fn inactive_constraint_returns_zero() {
        let mut inst = toy_1d();
        inst.constraints[0].d = -100.0;
        let (o, c) = build_oracles(&inst).unwrap();
        let sub = SaddleSubproblem::new(&o, c, 1.0, v(&[0.0])).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), v(&[0.0]));
        let r = search.intv_search(1e-4).unwrap();
        assert_eq!(r.flag, SearchFlag::Found);
        assert_eq!(r.y_hat[0], 0.0);
        assert_eq!(r.inner_solves, 1);
    }

    #[test]
    fn interval_search_large_beta_brackets() {
        let (o, c) = build_oracles(&toy_1d()).unwrap();
        let beta = 1e6;
        let sub = SaddleSubproblem::new(&o, c, beta, v(&[0.0])).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), v(&[0.0]));
        let delta = 1e-3 / beta;
        let r = search.intv_search(delta).unwrap();
        // beta ybar -> z* = 0.5
        let ybar = 0.5 / (beta + 1.0);
        match r.flag {
            SearchFlag::Interval => {
                let (a, b) = r.interval.unwrap();
                assert!(a <= ybar && ybar <= b);
                assert!(b <= (2.0 * 0.5) / beta * 2.0);
            }
            SearchFlag::Found => assert!((r.y_hat[0] - ybar).abs() <= delta),
            SearchFlag::Exhausted => panic!("unexpected flag"),
        }
    }

    #[test]
    fn eta_plus_example() {
        let eta = eta_plus(1.0, 1.0, 1.0, 1.0, 2.0);
        let s = (-2.0 + 4.5f64.sqrt()) / 2.0;
        assert!((eta - s * s).abs() < 1e-15);
        assert!((eta - 3.680e-3).abs() < 1e-6);
        let resid = 2.0 * (eta + (2.0 * eta * 2.0).sqrt()) - 0.25;
        assert!(resid.abs() <= 1e-10 * 0.25);
        // B_d -> 0
        let lim = eta_plus(1.0, 1.0, 1.0, 1.0, 0.0);
        assert!((lim - 1.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn eta_plus_monotone_in_delta() {
        for k in 0..30 {
            let d = 1e-6 * 1.7f64.powi(k);
            assert!(eta_plus(2.0 * d, 3.0, 0.5, 2.0, 7.0) > eta_plus(d, 3.0, 0.5, 2.0, 7.0));
        }
    }

    #[test]
    fn ellipsoid_update_example() {
        let b = 2.0;
        let st = EllipsoidState::ball(2, b);
        let next = ellipsoid_update(&st, &v(&[-1.0, 0.0])).unwrap();
        assert!((&next.center - v(&[b / 3.0, 0.0])).norm() < 1e-15);
        let want = DMatrix::from_diagonal(&v(&[4.0 / 9.0 * b * b, 4.0 / 3.0 * b * b]));
        assert!((next.shape() - want).amax() < 1e-14);
        let ratio = ((next.logdet - st.logdet) / 2.0).exp();
        assert!((ratio - 4.0 / (3.0 * 3f64.sqrt())).abs() < 1e-12);
        assert!(ratio <= (-1.0f64 / 6.0).exp());
        // scale invariance
        let scaled = ellipsoid_update(&st, &v(&[-7.5, 0.0])).unwrap();
        assert!((&scaled.center - &next.center).norm() < 1e-15);
        assert!((scaled.shape() - next.shape()).amax() < 1e-14);
    }

    #[test]
    fn ellipsoid_rejects_bad_input() {
        let mut st = EllipsoidState::ball(2, 1.0);
        assert!(st.update(&v(&[0.0, 0.0])).is_err());
        st.factor[(0, 0)] = f64::NAN;
        assert!(matches!(st.update(&v(&[1.0, 0.0])), Err(DualCutError::ShapeCorrupted)));
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        assert_eq!(argmin_negative(&v(&[-1.0, -1.0, 0.5])), Some(0));
        assert_eq!(argmin_negative(&v(&[0.0, -1.0, -2.0])), Some(2));
        assert_eq!(argmin_negative(&v(&[0.0, 1.0])), None);
    }

    #[test]
    fn stem_on_toy_2d() {
        let inst = toy_2d();
        let (o, c) = build_oracles(&inst).unwrap();
        let reference = reference_solve(&inst).unwrap();
        let beta = 1.0;
        let sub = SaddleSubproblem::new(&o, c, beta, DVector::zeros(2)).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), DVector::zeros(2)).with_cut_trace();
        let delta = 1e-4;
        let r = search.stem(delta).unwrap();
        assert_eq!(r.flag, SearchFlag::Found);
        // the calls bound with |z| = 0
        let zs = reference.z.norm();
        let bound = (2.0 * zs).log2().ceil().max(0.0) as usize + 1;
        assert!(r.ellipsoid_calls <= bound, "{} > {bound}", r.ellipsoid_calls);
        assert!(!search.cut_trace().is_empty());
        let mut buf = Vec::new();
        write_cut_trace(search.cut_trace(), &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("call,iter,branch,y_norm,logdet\n"));
    }

    #[test]
    fn stem_inactive_constraints() {
        let mut inst = toy_2d();
        inst.constraints[0].d = -100.0;
        inst.constraints[1].d = -100.0;
        let (o, c) = build_oracles(&inst).unwrap();
        let sub = SaddleSubproblem::new(&o, c, 1.0, DVector::zeros(2)).unwrap();
        let mut search = DualSearch::new(sub, InnerSettings::default(), DVector::zeros(2));
        let r = search.stem(1e-4).unwrap();
        assert_eq!(r.flag, SearchFlag::Found);
        assert_eq!(r.ellipsoid_calls, 1);
        assert!(r.y_hat.norm() <= 1e-4);
    }

    #[test]
    fn phi_element_is_a_phi_subgradient() {
        // on the toy, d phi(x) = x - 1 + beta [x - 0.5 + z/beta]_+ at interior x
        let o = toys::toy_1d();
        let sub = SaddleSubproblem::new(&o, toy_constants(), 2.0, v(&[0.4])).unwrap();
        let mut search = DualSearch::new(sub.clone(), InnerSettings::default(), v(&[0.0]));
        let r = search.bisec(1e-6).unwrap();
        let x = r.x_hat[0];
        let exact = x - 1.0 + 2.0 * (x - 0.5 + 0.2f64).max(0.0);
        let e = r.solve.phi_element(2.0);
        assert!((e[0] - exact).abs() < 1e-9);
        assert!(e.norm() < 1e-4);
    }

    proptest! {
        #[test]
        fn phi_minus_aug_lagrangian_is_constant(x in -10.0f64..10.0, z in 0.0f64..5.0, beta in 0.01f64..100.0) {
            let o = toys::toy_1d();
            let sub = SaddleSubproblem::new(&o, toy_constants(), beta, v(&[z])).unwrap();
            let lhs = sub.phi_value(&v(&[x])) - eval_aug_lagrangian(&o, &v(&[x]), &v(&[z]), beta).unwrap();
            let rhs = z * z / (2.0 * beta);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs + sub.phi_value(&v(&[x])).abs()));
        }

        #[test]
        fn ellipsoid_volume_law(m in 2usize..8, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut st = EllipsoidState::ball(m, 1.0);
            for _ in 0..20 {
                let a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                let before = st.exact_logdet();
                st.update(&a).unwrap();
                let after = st.exact_logdet();
                prop_assert!((after - before - EllipsoidState::logdet_step(m)).abs() < 1e-10);
            }
            prop_assert!(EllipsoidState::logdet_step(m) / 2.0 <= -1.0 / (2.0 * (m as f64 + 1.0)));
        }
    }
}
