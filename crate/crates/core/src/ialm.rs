//! Inexact augmented Lagrangian outer loops.
//!
//! Every outer iteration approximately minimizes `L_{beta_k}(., z^k)`,
//! updates `z^{k+1} = [z^k + beta_k g(x^{k+1})]_+` and grows
//! `beta_{k+1} = sigma beta_k`. The subproblem is solved either by APG on the
//! augmented Lagrangian directly or through its saddle-point form with the
//! dual cutting-plane searches of [`crate::dualcut`].
//!
//! Because `d_x L_beta(x, z^k) = d_x L_0(x, z^{k+1})`, the subsolver's
//! stationarity certificate is also a dual residual certificate for the
//! updated pair; the outer stopping test is the exact eps-KKT check.

use std::io::Write;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::apg::{apg_solve, ApgConfig, LineSearch, SmoothObjective};
use crate::dualcut::{DualSearch, InnerSettings, SaddleSubproblem};
use crate::error::IalmError;
use crate::problem::{
    box_dres_element, is_eps_kkt, kkt_residuals, objective, BoxSet, KktResidual, Oracles, ProblemConstants,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subsolver {
    ApgDirect,
    CuttingPlane,
}

impl Subsolver {
    pub fn as_str(&self) -> &'static str {
        match self {
            Subsolver::ApgDirect => "apg",
            Subsolver::CuttingPlane => "cut",
        }
    }
}

/// Where each subproblem starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// Uniform draw from the box, seeded per outer iteration; two solves with
    /// the same seed see identical draws.
    Random { seed: u64 },
    /// The previous outer iterate.
    Warm,
}

/// Subproblem tolerance schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsSchedule {
    /// `eps_k = min{eps, sqrt(eps mu (sigma-1)/(8 sigma+1))}` for all k.
    Constant,
    /// Additionally capped by `24 B_g (mu + beta_k B_g^2)/mu`.
    Ceiling,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IalmConfig {
    pub beta0: f64,
    pub sigma: f64,
    pub eps: f64,
    pub max_outer: usize,
    /// Stop at the first eps-KKT iterate; otherwise run all `max_outer`
    /// iterations.
    pub stop_at_kkt: bool,
    pub subsolver: Subsolver,
    pub init_mode: InitMode,
    pub schedule: EpsSchedule,
    /// First iterate; the box projection of the origin when `None`.
    pub x0: Option<DVector<f64>>,
    /// Backtracking parameters of the direct APG subsolver.
    pub l_min: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Inner-solve settings of the cutting-plane subsolver.
    pub inner: InnerSettings,
}

impl IalmConfig {
    /// Library defaults: stop at eps-KKT, at most `outer_budget(.., 1) + 5`
    /// outer iterations.
    pub fn new(eps: f64, subsolver: Subsolver) -> Self {
        let (beta0, sigma) = (1.0, 10.0);
        Self {
            beta0,
            sigma,
            eps,
            max_outer: outer_budget(beta0, sigma, eps, 1.0) + 5,
            stop_at_kkt: true,
            subsolver,
            init_mode: InitMode::Warm,
            schedule: EpsSchedule::Constant,
            x0: None,
            l_min: 1.0,
            gamma1: 1.5,
            gamma2: 2.0,
            inner: InnerSettings::default(),
        }
    }

    /// Benchmark protocol: exactly five outer iterations from random starts.
    pub fn benchmark(eps: f64, subsolver: Subsolver, seed: u64) -> Self {
        Self { max_outer: 5, stop_at_kkt: false, init_mode: InitMode::Random { seed }, ..Self::new(eps, subsolver) }
    }

    pub fn validate(&self) -> Result<(), IalmError> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(IalmError::InvalidConfig("beta0 must be positive"));
        }
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return Err(IalmError::InvalidConfig("sigma must exceed 1"));
        }
        if !(self.eps > 0.0) {
            return Err(IalmError::InvalidConfig("eps must be positive"));
        }
        if self.max_outer == 0 {
            return Err(IalmError::InvalidConfig("max_outer must be positive"));
        }
        if !(self.l_min > 0.0 && self.gamma1 > 1.0 && self.gamma2 >= 1.0) {
            return Err(IalmError::InvalidConfig("need l_min > 0, gamma1 > 1, gamma2 >= 1"));
        }
        Ok(())
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta0 * self.sigma.powi(k as i32)
    }

    /// `min{eps, sqrt(eps mu (sigma-1)/(8 sigma+1))}`.
    pub fn eps_bar(&self, mu: f64) -> f64 {
        self.eps.min((self.eps * mu * (self.sigma - 1.0) / (8.0 * self.sigma + 1.0)).sqrt())
    }

    pub fn eps_k(&self, k: usize, c: &ProblemConstants) -> f64 {
        let base = self.eps_bar(c.mu);
        match self.schedule {
            EpsSchedule::Constant => base,
            EpsSchedule::Ceiling => {
                let beta = self.beta(k);
                base.min(24.0 * c.b_g * (c.mu + beta * c.b_g * c.b_g) / c.mu)
            }
        }
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterRecord {
    pub outer_iter: usize,
    pub beta: f64,
    pub grad_evals: usize,
    pub func_evals: usize,
    pub pres: f64,
    /// Norm of the minimal-norm element of `d_x L_0(x^{k+1}, z^{k+1})` when
    /// `h` is a box, else of the certified element.
    pub dres: f64,
    pub compl: f64,
    pub time_sec: f64,
    /// Norm of the subsolver's certified element of `d_x L_{beta_k}(x^{k+1}, z^k)`.
    pub dres_certified: f64,
    pub z_norm: f64,
    pub inner_solves: usize,
    /// The post-search APG refinement ran.
    pub refined: bool,
}

impl OuterRecord {
    pub fn residual(&self) -> KktResidual {
        KktResidual { pres: self.pres, dres: self.dres, compl: self.compl }
    }
}

/// Summary of one proximal-point round of the nonconvex wrapper.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxRound {
    /// `2 L_f |x^{k+1} - x^k|`.
    pub step: f64,
    pub outer_iters: usize,
    pub sub_converged: bool,
    pub sub_residual: KktResidual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IalmTrace {
    pub solver: Subsolver,
    pub records: Vec<OuterRecord>,
    /// Filled by the nonconvex wrapper only.
    pub rounds: Vec<ProxRound>,
}

pub const TRACE_HEADER: &str = "trial,solver,outer_iter,beta,grad_evals,func_evals,pres,dres,compl,time_sec";

impl IalmTrace {
    fn new(solver: Subsolver) -> Self {
        Self { solver, records: Vec::new(), rounds: Vec::new() }
    }

    pub fn total_grad_evals(&self) -> usize {
        self.records.iter().map(|r| r.grad_evals).sum()
    }

    pub fn total_func_evals(&self) -> usize {
        self.records.iter().map(|r| r.func_evals).sum()
    }

    pub fn total_time(&self) -> f64 {
        self.records.iter().map(|r| r.time_sec).sum()
    }

    /// Rows without header; `outer_iter` is 1-based.
    pub fn write_csv_rows<W: Write>(&self, trial: usize, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{:e},{},{},{:e},{:e},{:e},{:.6}",
                trial,
                self.solver.as_str(),
                r.outer_iter + 1,
                r.beta,
                r.grad_evals,
                r.func_evals,
                r.pres,
                r.dres,
                r.compl,
                r.time_sec
            )?;
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, trial: usize, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        self.write_csv_rows(trial, w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x_bar: DVector<f64>,
    pub z_bar: DVector<f64>,
    pub residual: KktResidual,
    pub converged: bool,
    pub outer_iters: usize,
}

pub fn multiplier_update(z: &DVector<f64>, beta: f64, gx: &DVector<f64>) -> DVector<f64> {
    (z + gx * beta).map(|t| t.max(0.0))
}

fn ceil_log_plus(x: f64, sigma: f64) -> usize {
    if !(x > 1.0) {
        return 0;
    }
    // guard exact powers of sigma against rounding up
    (x.ln() / sigma.ln() - 1e-12).ceil().max(0.0) as usize
}

/// Outer iterations after which an eps-KKT point is guaranteed, given the
/// optimal multiplier norm.
pub fn outer_budget(beta0: f64, sigma: f64, eps: f64, z_star_norm: f64) -> usize {
    let be = beta0 * eps;
    let a = ceil_log_plus(9.0 * z_star_norm * z_star_norm / be, sigma);
    let b = ceil_log_plus(8.0 * z_star_norm / be, sigma);
    let c = ceil_log_plus(4.0 / be, sigma);
    a.max(b).max(c) + 1
}

/// Upper bound on `|[g(x^{k+1})]_+|` when every subproblem is solved to
/// stationarity `eps_bar`.
pub fn feasibility_envelope(z_star_norm: f64, beta0: f64, sigma: f64, k: usize, eps_bar: f64, mu: f64) -> f64 {
    let beta = beta0 * sigma.powi(k as i32);
    4.0 * z_star_norm / beta + eps_bar * (sigma.sqrt() + 1.0) * (2.0 / (mu * (sigma - 1.0))).sqrt() / beta.sqrt()
}

/// Upper bound on `sum_i |z_i^{k+1} g_i(x^{k+1})|`.
pub fn complementarity_envelope(z_star_norm: f64, beta0: f64, sigma: f64, k: usize, eps_bar: f64, mu: f64) -> f64 {
    let beta = beta0 * sigma.powi(k as i32);
    9.0 * z_star_norm * z_star_norm / (2.0 * beta) + eps_bar * eps_bar * (8.0 * sigma + 1.0) / (2.0 * mu * (sigma - 1.0))
}

/// Upper bound on `|z^k|` given the subproblem tolerances `eps_t`, `t < k`.
pub fn multiplier_envelope(z_star_norm: f64, beta0: f64, sigma: f64, eps: &[f64], mu: f64) -> f64 {
    let s: f64 = eps.iter().enumerate().map(|(t, e)| beta0 * sigma.powi(t as i32) * e * e / mu).sum();
    2.0 * z_star_norm + (2.0 * s).sqrt()
}

/// Bound on the multiplier returned at eps-KKT termination, in terms of a
/// bound on the optimal multiplier norm.
pub fn output_multiplier_bound(sigma: f64, z_star_norm: f64) -> f64 {
    let w = (2.0 * sigma * sigma / (8.0 * sigma + 1.0)).sqrt();
    2.0 * z_star_norm + w * (3.0 * z_star_norm).max(2.0 * (2.0 * z_star_norm).sqrt()).max(2.0)
}

struct AugLagrangian<'a> {
    oracles: &'a dyn Oracles,
    z: &'a DVector<f64>,
    beta: f64,
}

impl AugLagrangian<'_> {
    fn shifted(&self, gx: DVector<f64>) -> DVector<f64> {
        (gx + self.z / self.beta).map(|t| t.max(0.0))
    }
}

impl SmoothObjective for AugLagrangian<'_> {
    fn value(&self, x: &DVector<f64>) -> f64 {
        let t = self.shifted(self.oracles.g_value(x));
        self.oracles.f_value(x) + 0.5 * self.beta * t.norm_squared() - self.z.norm_squared() / (2.0 * self.beta)
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let (gx, jac) = self.oracles.g_value_and_jacobian(x);
        self.oracles.f_grad(x) + jac.tr_mul(&self.shifted(gx)) * self.beta
    }

    fn value_and_grad(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let (gx, jac) = self.oracles.g_value_and_jacobian(x);
        let t = self.shifted(gx);
        let v = self.oracles.f_value(x) + 0.5 * self.beta * t.norm_squared()
            - self.z.norm_squared() / (2.0 * self.beta);
        (v, self.oracles.f_grad(x) + jac.tr_mul(&t) * self.beta)
    }
}

fn default_start(oracles: &dyn Oracles, cfg: &IalmConfig) -> Result<DVector<f64>, IalmError> {
    let n = oracles.dim();
    let x0 = match &cfg.x0 {
        Some(x) if x.len() != n => return Err(IalmError::InvalidConfig("x0 has the wrong length")),
        Some(x) => x.clone(),
        None => DVector::zeros(n),
    };
    Ok(match oracles.bounds() {
        Some(b) => b.project(&x0),
        None => x0,
    })
}

/// Uniform point of the box; the stream index separates outer iterations.
pub fn random_start(bounds: &BoxSet, seed: u64, outer_iter: usize) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(outer_iter as u64);
    DVector::from_fn(bounds.dim(), |i, _| rng.gen_range(bounds.lower[i]..=bounds.upper[i]))
}

fn subproblem_start(
    oracles: &dyn Oracles,
    cfg: &IalmConfig,
    k: usize,
    prev: &DVector<f64>,
) -> Result<DVector<f64>, IalmError> {
    match cfg.init_mode {
        InitMode::Warm => Ok(prev.clone()),
        InitMode::Random { seed } => {
            let b = oracles
                .bounds()
                .ok_or(IalmError::InvalidConfig("random starts need a box domain"))?;
            Ok(random_start(b, seed, k))
        }
    }
}

fn dres_element(oracles: &dyn Oracles, x: &DVector<f64>, z: &DVector<f64>, certified: &DVector<f64>) -> DVector<f64> {
    box_dres_element(oracles, x, z).unwrap_or_else(|_| certified.clone())
}

/// What a subsolver hands back for one outer iteration.
struct Subsolve {
    x: DVector<f64>,
    element: DVector<f64>,
    grad_evals: usize,
    func_evals: usize,
    inner_solves: usize,
    refined: bool,
}

fn outer_loop(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    cfg: &IalmConfig,
    mut subsolve: impl FnMut(usize, f64, &DVector<f64>, &DVector<f64>) -> Result<Subsolve, IalmError>,
) -> Result<(Solution, IalmTrace), IalmError> {
    cfg.validate()?;
    constants.validate()?;
    if !(constants.mu > 0.0) {
        return Err(IalmError::InvalidConfig("the objective must be strongly convex (mu > 0)"));
    }
    let mut x = default_start(oracles, cfg)?;
    let mut z = DVector::zeros(oracles.num_constraints());
    let mut trace = IalmTrace::new(cfg.subsolver);
    let mut best: Option<Solution> = None;

    for k in 0..cfg.max_outer {
        let start = Instant::now();
        let beta = cfg.beta(k);
        let x_start = subproblem_start(oracles, cfg, k, &x)?;
        let s = subsolve(k, beta, &z, &x_start)?;
        x = s.x;
        let gx = oracles.g_value(&x);
        z = multiplier_update(&z, beta, &gx);
        let element = dres_element(oracles, &x, &z, &s.element);
        let residual = kkt_residuals(oracles, &x, &z, &element);
        trace.records.push(OuterRecord {
            outer_iter: k,
            beta,
            grad_evals: s.grad_evals,
            func_evals: s.func_evals,
            pres: residual.pres,
            dres: residual.dres,
            compl: residual.compl,
            time_sec: start.elapsed().as_secs_f64(),
            dres_certified: s.element.norm(),
            z_norm: z.norm(),
            inner_solves: s.inner_solves,
            refined: s.refined,
        });
        log::debug!("outer {k}: beta {beta:e} pres {:.3e} dres {:.3e} compl {:.3e}", residual.pres, residual.dres, residual.compl);

        let converged = is_eps_kkt(&residual, cfg.eps);
        let current = Solution { x_bar: x.clone(), z_bar: z.clone(), residual, converged, outer_iters: k + 1 };
        let keep = match &best {
            None => true,
            Some(b) => converged || (!b.converged && residual.max() <= b.residual.max()),
        };
        if keep {
            best = Some(current);
        }
        if converged && cfg.stop_at_kkt {
            break;
        }
    }
    let mut sol = best.expect("max_outer is positive");
    sol.outer_iters = trace.records.len();
    Ok((sol, trace))
}

/// Noise-aware stall guard shared by all inner APG runs.
fn stall_iters(l: f64, mu: f64) -> usize {
    50 + 10 * ((l / mu).sqrt().ceil() as usize)
}

/// iALM with APG applied directly to each augmented Lagrangian subproblem.
pub fn ialm_solve_apg(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    cfg: &IalmConfig,
) -> Result<(Solution, IalmTrace), IalmError> {
    let mut cfg = cfg.clone();
    cfg.subsolver = Subsolver::ApgDirect;
    let c = *constants;
    let eps_bar = cfg.eps_bar(c.mu);
    let noise = cfg.inner.noise_for();
    let run = cfg.clone();
    outer_loop(oracles, constants, &cfg, |_, beta, z, x_start| {
        // global smoothness bound, used only to size the iteration cap
        let l_psi = c.l_f + beta * c.b_g * c.b_g + c.l_g * (z.norm() + beta * c.g_bound);
        let mut apg = ApgConfig::new(run.l_min, c.mu, eps_bar);
        apg.gamma1 = run.gamma1;
        apg.gamma2 = run.gamma2;
        apg.line_search = LineSearch::Backtracking;
        apg.noise_rel = noise;
        apg = apg.with_budget(l_psi, c.d_h);
        apg.stall_iters = stall_iters(l_psi, c.mu);
        let psi = AugLagrangian { oracles, z, beta };
        let prox = |x: &DVector<f64>, t: f64| oracles.h_prox(x, t);
        let r = apg_solve(&psi, &prox, &apg, x_start)?;
        if !r.converged {
            log::warn!("APG subsolve stopped at stationarity {:.3e} (target {eps_bar:.3e})", r.stationarity);
        }
        Ok(Subsolve {
            x: r.x_hat,
            element: r.element,
            grad_evals: r.grad_evals,
            func_evals: r.func_evals,
            inner_solves: 1,
            refined: false,
        })
    })
}

/// Whether the post-search APG refinement applies at this `beta`.
pub fn refinement_applies(m: usize, mu: f64, beta: f64, b_g: f64) -> bool {
    let a = mu / (4.0 * beta * b_g * b_g);
    if m == 1 {
        a > 1.0
    } else {
        a.min(mu * mu / (8.0 * beta * b_g * b_g * (mu + beta * b_g * b_g))) > 1.0
    }
}

/// iALM whose subproblems are solved through the dual cutting-plane searches.
pub fn ialm_solve_cutting_plane(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    cfg: &IalmConfig,
) -> Result<(Solution, IalmTrace), IalmError> {
    let m = oracles.num_constraints();
    if m == 0 {
        return Err(IalmError::InvalidConfig("the cutting-plane solver needs at least one constraint"));
    }
    let mut cfg = cfg.clone();
    cfg.subsolver = Subsolver::CuttingPlane;
    let c = *constants;
    let run = cfg.clone();
    outer_loop(oracles, constants, &cfg, |k, beta, z, x_start| {
        let eps_k = run.eps_k(k, &c);
        let delta = eps_k / (3.0 * beta * c.b_g);
        let sub = SaddleSubproblem::new(oracles, c, beta, z.clone())?;
        let mut search = DualSearch::new(sub, run.inner, x_start.clone());
        let found = search.run(delta)?;
        let refined = refinement_applies(m, c.mu, beta, c.b_g);
        let solve = if refined { search.solve_inner(&found.y_hat, eps_k / 3.0)? } else { found.solve };
        Ok(Subsolve {
            element: solve.phi_element(beta),
            x: solve.apg.x_hat,
            grad_evals: search.grad_evals(),
            func_evals: search.func_evals(),
            inner_solves: search.inner_solves(),
            refined,
        })
    })
}

pub fn ialm_solve(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    cfg: &IalmConfig,
) -> Result<(Solution, IalmTrace), IalmError> {
    match cfg.subsolver {
        Subsolver::ApgDirect => ialm_solve_apg(oracles, constants, cfg),
        Subsolver::CuttingPlane => ialm_solve_cutting_plane(oracles, constants, cfg),
    }
}

/// `f(x) + weight |x - center|^2` with the constraints and `h` of `inner`.
pub struct ProxTermOracles<'a> {
    pub inner: &'a dyn Oracles,
    pub weight: f64,
    pub center: DVector<f64>,
}

impl Oracles for ProxTermOracles<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        self.inner.f_value(x) + self.weight * (x - &self.center).norm_squared()
    }
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.f_grad(x) + (x - &self.center) * (2.0 * self.weight)
    }
    fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        self.inner.g_value(x)
    }
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.inner.g_jacobian(x)
    }
    fn g_value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.inner.g_value_and_jacobian(x)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.inner.h_value(x)
    }
    fn h_prox(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.inner.h_prox(x, t)
    }
    fn bounds(&self) -> Option<&BoxSet> {
        self.inner.bounds()
    }
}

fn residual_on(oracles: &dyn Oracles, x: &DVector<f64>, z: &DVector<f64>, fallback: f64) -> KktResidual {
    match box_dres_element(oracles, x, z) {
        Ok(e) => kkt_residuals(oracles, x, z, &e),
        Err(_) => {
            let mut r = kkt_residuals(oracles, x, z, &DVector::zeros(0));
            r.dres = fallback;
            r
        }
    }
}

/// Convex (not necessarily strongly convex) objectives: solves the problem
/// with `f + eps/(4 D_h)|x - x0|^2` to eps/2 with the cutting-plane iALM.
/// The returned residual is measured on the original problem; the trace is
/// that of the perturbed run.
pub fn solve_convex(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    eps: f64,
    x0: &DVector<f64>,
    cfg: &IalmConfig,
) -> Result<(Solution, IalmTrace), IalmError> {
    if !(eps > 0.0) {
        return Err(IalmError::InvalidConfig("eps must be positive"));
    }
    if x0.len() != oracles.dim() || oracles.h_value(x0).is_infinite() {
        return Err(IalmError::InvalidConfig("x0 must lie in the domain of h"));
    }
    let c = *constants;
    let shift = eps / (2.0 * c.d_h);
    let pert = ProxTermOracles { inner: oracles, weight: eps / (4.0 * c.d_h), center: x0.clone() };
    let pc = ProblemConstants { mu: c.mu + shift, l_f: c.l_f + shift, ..c };
    let half = 0.5 * eps;
    let mut sub_cfg = cfg.clone();
    sub_cfg.eps = half;
    if sub_cfg.x0.is_none() {
        sub_cfg.x0 = Some(x0.clone());
    }
    let (sol, trace) = ialm_solve_cutting_plane(&pert, &pc, &sub_cfg)?;
    let fallback = sol.residual.dres + shift * (&sol.x_bar - x0).norm();
    let residual = residual_on(oracles, &sol.x_bar, &sol.z_bar, fallback);
    let converged = is_eps_kkt(&residual, eps);
    Ok((Solution { residual, converged, ..sol }, trace))
}

/// Multiplier bound for the proximal-point subproblems:
/// `(F(x_feas) - F* + L_f D_h^2) / min_i(-g_i(x_feas))`.
pub fn proximal_multiplier_bound(f_feas: f64, f_star: f64, l_f: f64, d_h: f64, min_slack: f64) -> f64 {
    (f_feas - f_star + l_f * d_h * d_h) / min_slack
}

/// Inputs of [`solve_nonconvex`] beyond the problem and configuration.
#[derive(Debug, Clone)]
pub struct NonconvexStart {
    pub x_bar0: DVector<f64>,
    /// Strictly feasible point (Slater).
    pub x_feas: DVector<f64>,
    /// Lower bound on the optimal value. When `None`, the smoothness bound
    /// `F(x_feas) - |grad f(x_feas)| D_h - L_f D_h^2/2` is used.
    pub f_lower: Option<f64>,
}

/// Parameters derived by the nonconvex wrapper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonconvexPlan {
    pub b_z: f64,
    pub b_z_bar: f64,
    /// Subproblem tolerance.
    pub eps_tilde: f64,
    /// Cap on proximal-point rounds.
    pub max_rounds: usize,
}

pub fn nonconvex_plan(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    eps: f64,
    sigma: f64,
    start: &NonconvexStart,
) -> Result<NonconvexPlan, IalmError> {
    let c = constants;
    let gf = oracles.g_value(&start.x_feas);
    let worst = gf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if oracles.h_value(&start.x_feas).is_infinite() || !(worst < 0.0) {
        return Err(IalmError::NotSlater(worst));
    }
    let f_feas = objective(oracles, &start.x_feas);
    let f_lower = start.f_lower.unwrap_or_else(|| {
        f_feas - oracles.f_grad(&start.x_feas).norm() * c.d_h - 0.5 * c.l_f * c.d_h * c.d_h
    });
    let b_z = proximal_multiplier_bound(f_feas, f_lower, c.l_f, c.d_h, -worst);
    let b_z_bar = output_multiplier_bound(sigma, b_z);
    let eps_tilde = (0.5 * eps).min(eps * eps / (64.0 * c.l_f * (c.d_h + 2.0 * b_z_bar)));
    let f0 = objective(oracles, &start.x_bar0);
    let infeas = oracles.g_value(&start.x_bar0).map(|t| t.max(0.0)).norm();
    let k = 64.0 * c.l_f * (f0 - f_lower + c.l_f * c.d_h * c.d_h + b_z_bar * infeas) / (eps * eps);
    let max_rounds = if k.is_finite() && k < 1e9 { k.ceil().max(1.0) as usize } else { 1_000_000_000 };
    Ok(NonconvexPlan { b_z, b_z_bar, eps_tilde, max_rounds })
}

/// Proximal-point wrapper for objectives with curvature bounded below by
/// `-L_f`: each round solves `min F + L_f|x - x^k|^2 s.t. g <= 0` with the
/// cutting-plane iALM (strong convexity modulus `L_f`) and stops once a
/// round is eps/2-KKT with `2 L_f |x^{k+1} - x^k| <= eps/2`.
pub fn solve_nonconvex(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    eps: f64,
    start: &NonconvexStart,
    cfg: &IalmConfig,
) -> Result<(Solution, IalmTrace), IalmError> {
    if !(eps > 0.0) {
        return Err(IalmError::InvalidConfig("eps must be positive"));
    }
    let plan = nonconvex_plan(oracles, constants, eps, cfg.sigma, start)?;
    solve_nonconvex_with(oracles, constants, eps, start, cfg, &plan)
}

/// [`solve_nonconvex`] with an explicit plan (tolerance and round cap).
pub fn solve_nonconvex_with(
    oracles: &dyn Oracles,
    constants: &ProblemConstants,
    eps: f64,
    start: &NonconvexStart,
    cfg: &IalmConfig,
    plan: &NonconvexPlan,
) -> Result<(Solution, IalmTrace), IalmError> {
    let c = *constants;
    if !(c.l_f > 0.0) {
        return Err(IalmError::InvalidConfig("L_f must be positive"));
    }
    let pc = ProblemConstants { mu: c.l_f, l_f: 3.0 * c.l_f, ..c };
    let mut sub_cfg = cfg.clone();
    sub_cfg.eps = plan.eps_tilde;
    sub_cfg.stop_at_kkt = true;
    // the subproblem multipliers are bounded by b_z
    sub_cfg.max_outer = sub_cfg.max_outer.max(outer_budget(cfg.beta0, cfg.sigma, plan.eps_tilde, plan.b_z) + 1);
    let mut x_bar = start.x_bar0.clone();
    let mut trace = IalmTrace::new(Subsolver::CuttingPlane);
    let mut last: Option<Solution> = None;

    for _ in 0..plan.max_rounds {
        let pert = ProxTermOracles { inner: oracles, weight: c.l_f, center: x_bar.clone() };
        sub_cfg.x0 = Some(x_bar.clone());
        let (sol, sub_trace) = ialm_solve_cutting_plane(&pert, &pc, &sub_cfg)?;
        let step = 2.0 * c.l_f * (&sol.x_bar - &x_bar).norm();
        let sub_ok = is_eps_kkt(&sol.residual, 0.5 * eps);
        trace.rounds.push(ProxRound {
            step,
            outer_iters: sub_trace.records.len(),
            sub_converged: sol.converged,
            sub_residual: sol.residual,
        });
        trace.records.extend(sub_trace.records);
        log::debug!("proximal round {}: step {step:.3e}", trace.rounds.len());
        x_bar = sol.x_bar.clone();
        let done = sub_ok && step <= 0.5 * eps;
        let residual = residual_on(oracles, &sol.x_bar, &sol.z_bar, sol.residual.dres + step);
        last = Some(Solution {
            converged: done && is_eps_kkt(&residual, eps),
            residual,
            outer_iters: trace.records.len(),
            ..sol
        });
        if done {
            break;
        }
    }
    Ok((last.expect("at least one round"), trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{eval_aug_lagrangian, toys};
    use crate::qcqp::{build_oracles, generate, reference_solve, toy_1d, toy_2d, GeneratorConfig};

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    #[test]
    fn multiplier_update_examples() {
        assert_eq!(multiplier_update(&v(&[0.0]), 3.0, &v(&[-0.2])), v(&[0.0]));
        assert_eq!(multiplier_update(&v(&[1.0, 0.0]), 2.0, &v(&[-1.0, 0.5])), v(&[0.0, 1.0]));
        // KKT pair of the toy is a fixed point
        let (o, _) = build_oracles(&toy_1d()).unwrap();
        let z = v(&[0.5]);
        assert_eq!(multiplier_update(&z, 7.0, &o.g_value(&v(&[0.5]))), z);
    }

    #[test]
    fn outer_budget_examples() {
        assert_eq!(outer_budget(1.0, 10.0, 1e-4, 1.0), 6);
        assert_eq!(outer_budget(1e4, 10.0, 1e-4, 1.0), 2);
        assert_eq!(outer_budget(1.0, 10.0, 1e-4, 0.0), 6);
        assert_eq!(outer_budget(1e5, 10.0, 1e-4, 0.0), 1);
    }

    #[test]
    fn multiplier_bound_example() {
        assert_eq!(proximal_multiplier_bound(10.0, 0.0, 5.0, 1.0, 0.5), 30.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = IalmConfig::new(1e-4, Subsolver::ApgDirect);
        assert!(cfg.validate().is_ok());
        cfg.sigma = 1.0;
        assert!(cfg.validate().is_err());
        let cfg = IalmConfig { beta0: 0.0, ..IalmConfig::new(1e-4, Subsolver::ApgDirect) };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn aug_lagrangian_objective_matches_problem_module() {
        let o = toys::toy_1d();
        let z = v(&[0.3]);
        let f = AugLagrangian { oracles: &o, z: &z, beta: 2.5 };
        for x in [-1.0, 0.2, 0.9] {
            let x = v(&[x]);
            let want = eval_aug_lagrangian(&o, &x, &z, 2.5).unwrap();
            assert!((f.value(&x) - want).abs() < 1e-14);
            let (val, g) = f.value_and_grad(&x);
            assert_eq!(val, f.value(&x));
            assert_eq!(g, f.grad(&x));
        }
    }

    fn check_toy(solver: Subsolver) {
        let inst = toy_2d();
        let (o, c) = build_oracles(&inst).unwrap();
        let reference = reference_solve(&inst).unwrap();
        let cfg = IalmConfig::new(1e-6, solver);
        let (sol, trace) = ialm_solve(&o, &c, &cfg).unwrap();
        assert!(sol.converged, "{:?}", sol.residual);
        assert!(is_eps_kkt(&sol.residual, 1e-6));
        assert!((&sol.x_bar - &reference.x).norm() < 1e-4);
        for (k, r) in trace.records.iter().enumerate() {
            assert_eq!(r.beta, cfg.beta0 * cfg.sigma.powi(k as i32));
            assert!(r.dres <= r.dres_certified + 1e-12 * r.beta, "{r:?}");
        }
        assert!(sol.outer_iters <= outer_budget(cfg.beta0, cfg.sigma, cfg.eps, reference.z.norm()));
    }

    #[test]
    fn apg_solver_on_toy() {
        check_toy(Subsolver::ApgDirect);
    }

    #[test]
    fn cutting_plane_on_toy() {
        check_toy(Subsolver::CuttingPlane);
    }

    #[test]
    fn cutting_plane_single_constraint() {
        let (o, c) = build_oracles(&toy_1d()).unwrap();
        let (sol, _) = ialm_solve_cutting_plane(&o, &c, &IalmConfig::new(1e-8, Subsolver::CuttingPlane)).unwrap();
        assert!(sol.converged);
        assert!((sol.x_bar[0] - 0.5).abs() < 1e-6);
        assert!((sol.z_bar[0] - 0.5).abs() < 1e-5);
    }

    #[test]
    fn envelopes_hold_on_toy() {
        let inst = toy_2d();
        let (o, c) = build_oracles(&inst).unwrap();
        let zs = reference_solve(&inst).unwrap().z.norm();
        let cfg = IalmConfig { stop_at_kkt: false, max_outer: 6, ..IalmConfig::new(1e-6, Subsolver::ApgDirect) };
        let eps_bar = cfg.eps_bar(c.mu);
        let (_, trace) = ialm_solve_apg(&o, &c, &cfg).unwrap();
        for (k, r) in trace.records.iter().enumerate() {
            assert!(r.pres <= feasibility_envelope(zs, cfg.beta0, cfg.sigma, k, eps_bar, c.mu));
            assert!(r.compl <= complementarity_envelope(zs, cfg.beta0, cfg.sigma, k, eps_bar, c.mu));
            assert!(r.z_norm <= multiplier_envelope(zs, cfg.beta0, cfg.sigma, &vec![eps_bar; k + 1], c.mu));
        }
    }

    #[test]
    fn benchmark_mode_runs_all_iterations() {
        let inst = generate(&GeneratorConfig::new(10, 2, 3)).unwrap();
        let (o, c) = build_oracles(&inst).unwrap();
        let cfg = IalmConfig::benchmark(1e-4, Subsolver::ApgDirect, 11);
        let (sol, trace) = ialm_solve(&o, &c, &cfg).unwrap();
        assert_eq!(trace.records.len(), 5);
        assert_eq!(sol.outer_iters, 5);
        let mut buf = Vec::new();
        trace.write_csv(0, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with(TRACE_HEADER));
        assert!(text.lines().nth(1).unwrap().starts_with("0,apg,1,1e0,"));
    }

    #[test]
    fn random_starts_are_reproducible() {
        let b = BoxSet::uniform(4, -1.0, 2.0);
        assert_eq!(random_start(&b, 5, 2), random_start(&b, 5, 2));
        assert_ne!(random_start(&b, 5, 2), random_start(&b, 5, 3));
        assert!(b.contains(&random_start(&b, 9, 0)));
    }

    #[test]
    fn convex_wrapper_on_toy() {
        let (o, c) = build_oracles(&toy_2d()).unwrap();
        let eps = 1e-4;
        let x0 = DVector::zeros(2);
        let (sol, trace) = solve_convex(&o, &c, eps, &x0, &IalmConfig::new(eps, Subsolver::CuttingPlane)).unwrap();
        assert!(sol.converged, "{:?}", sol.residual);
        let last = trace.records.last().unwrap();
        let shift = eps / (2.0 * c.d_h);
        assert!(sol.residual.dres <= last.dres + shift * (&sol.x_bar - &x0).norm() + 1e-15);
        assert!(shift * (&sol.x_bar - &x0).norm() <= 0.5 * eps);
    }

    #[test]
    fn nonconvex_wrapper_converges_at_fixed_point() {
        let (o, c) = build_oracles(&toy_1d()).unwrap();
        let start = NonconvexStart { x_bar0: v(&[0.5]), x_feas: v(&[0.0]), f_lower: Some(-0.375) };
        let eps = 1e-2;
        let cfg = IalmConfig::new(eps, Subsolver::CuttingPlane);
        let (sol, trace) = solve_nonconvex(&o, &c, eps, &start, &cfg).unwrap();
        assert!(sol.converged);
        assert!(trace.rounds.len() <= 2);
        assert!(trace.rounds.iter().any(|r| r.step <= 0.5 * eps));
    }

    #[test]
    fn nonconvex_rejects_infeasible_slater_point() {
        let (o, c) = build_oracles(&toy_1d()).unwrap();
        let start = NonconvexStart { x_bar0: v(&[0.0]), x_feas: v(&[1.0]), f_lower: None };
        let cfg = IalmConfig::new(1e-2, Subsolver::CuttingPlane);
        assert!(matches!(solve_nonconvex(&o, &c, 1e-2, &start, &cfg), Err(IalmError::NotSlater(_))));
    }
}
