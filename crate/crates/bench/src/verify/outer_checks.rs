use ialm_core::ialm::{
    ialm_solve, nonconvex_plan, solve_convex, solve_nonconvex_with, IalmConfig, NonconvexStart, Subsolver,
};
use ialm_core::problem::{box_dres_element, kkt_residuals, objective, KktResidual, Oracles};
use ialm_core::qcqp::{
    build_oracles, build_oracles_with, generate, reference_solve, toy_1d, toy_2d, Curvature, GeneratorConfig,
    QcqpInstance,
};
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::Check;

/// Tiny instances with active constraints, small enough for the exact
/// reference solver.
pub(crate) fn reference_instances() -> Vec<QcqpInstance> {
    let gen = |n: usize, m: usize, rank: usize, seed: u64| {
        let cfg = GeneratorConfig { rank, spectrum: (0.5, 5.0), c_scale: 3.0, ..GeneratorConfig::new(n, m, seed) };
        generate(&cfg).expect("valid configuration")
    };
    vec![toy_1d(), toy_2d(), gen(3, 1, 1, 31), gen(4, 2, 2, 32), gen(5, 3, 2, 33)]
}

/// KKT residuals recomputed from scratch with the box min-norm element.
fn certify(oracles: &dyn Oracles, x: &DVector<f64>, z: &DVector<f64>) -> Result<KktResidual, String> {
    if z.iter().any(|&v| v < 0.0) {
        return Err("negative multiplier".into());
    }
    let element = box_dres_element(oracles, x, z).map_err(|e| e.to_string())?;
    Ok(kkt_residuals(oracles, x, z, &element))
}

/// Every logged outer iteration of both solvers obeys
/// `pres <= 4|z*|/beta_k + eps_bar (sqrt(sigma)+1) sqrt(2/(mu(sigma-1))) / sqrt(beta_k)` and
/// `compl <= 9|z*|^2/(2 beta_k) + eps_bar^2 (8 sigma+1) / (2 mu (sigma-1))`.
pub(crate) fn envelopes() -> Check {
    let mut worst_p = 0.0f64;
    let mut worst_c = 0.0f64;
    let mut rows = 0;
    for (idx, inst) in reference_instances().iter().enumerate() {
        let reference = match reference_solve(inst) {
            Ok(r) if r.certified => r,
            Ok(_) => return (false, format!("instance {idx}: reference not certified")),
            Err(e) => return (false, format!("instance {idx}: {e}")),
        };
        let (oracles, c) = build_oracles(inst).expect("strongly convex");
        let zs = reference.z.norm();
        for solver in [Subsolver::ApgDirect, Subsolver::CuttingPlane] {
            let cfg = IalmConfig { max_outer: 7, stop_at_kkt: false, ..IalmConfig::new(1e-6, solver) };
            let s = cfg.sigma;
            let eps_bar = cfg.eps_bar(c.mu);
            let trace = match ialm_solve(&oracles, &c, &cfg) {
                Ok((_, t)) => t,
                Err(e) => return (false, format!("instance {idx}, {}: {e}", solver.as_str())),
            };
            for r in &trace.records {
                let beta = r.beta;
                let env_p = 4.0 * zs / beta
                    + eps_bar * (s.sqrt() + 1.0) * (2.0 / (c.mu * (s - 1.0))).sqrt() / beta.sqrt();
                let env_c = 9.0 * zs * zs / (2.0 * beta) + eps_bar * eps_bar * (8.0 * s + 1.0) / (2.0 * c.mu * (s - 1.0));
                rows += 1;
                worst_p = worst_p.max(r.pres / env_p);
                worst_c = worst_c.max(r.compl / env_c);
                if r.pres > env_p || r.compl > env_c {
                    return (
                        false,
                        format!(
                            "instance {idx}, {}, outer {}: pres {:.3e} (env {env_p:.3e}), compl {:.3e} (env {env_c:.3e})",
                            solver.as_str(),
                            r.outer_iter + 1,
                            r.pres,
                            r.compl
                        ),
                    );
                }
            }
        }
    }
    (true, format!("{rows} outer iterations; max pres/envelope {worst_p:.3}, max compl/envelope {worst_c:.3}"))
}

/// Cutting-plane iALM at eps = 1e-6 lands within 1e-3 of `x*` and 1e-5 of
/// the optimal value.
pub(crate) fn reference_agreement() -> Check {
    let mut worst_x = 0.0f64;
    let mut worst_f = 0.0f64;
    for (idx, inst) in reference_instances().iter().enumerate() {
        let reference = match reference_solve(inst) {
            Ok(r) if r.certified => r,
            Ok(_) => return (false, format!("instance {idx}: reference not certified")),
            Err(e) => return (false, format!("instance {idx}: {e}")),
        };
        let (oracles, c) = build_oracles(inst).expect("strongly convex");
        let sol = match ialm_solve(&oracles, &c, &IalmConfig::new(1e-6, Subsolver::CuttingPlane)) {
            Ok((s, _)) => s,
            Err(e) => return (false, format!("instance {idx}: {e}")),
        };
        let dx = (&sol.x_bar - &reference.x).norm();
        let df = (objective(&oracles, &sol.x_bar) - reference.f).abs();
        worst_x = worst_x.max(dx);
        worst_f = worst_f.max(df);
        if dx > 1e-3 || df > 1e-5 {
            return (false, format!("instance {idx}: |x - x*| = {dx:.2e}, |F - F*| = {df:.2e}"));
        }
    }
    (true, format!("5 instances; max |x - x*| = {worst_x:.2e}, max |F - F*| = {worst_f:.2e}"))
}

/// `Q0` with its spectrum rewritten by `edit` (eigenvalues ascending).
fn respectrum(inst: &mut QcqpInstance, edit: impl Fn(&mut [f64])) {
    let eig = SymmetricEigen::new(inst.q0.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut vals: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    edit(&mut vals);
    let mut lambda = DVector::zeros(vals.len());
    for (k, &i) in order.iter().enumerate() {
        lambda[i] = vals[k];
    }
    let q = &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
    inst.q0 = (&q + q.transpose()) * 0.5;
}

/// Convex instance with a rank-deficient `Q0`: n = 50, m = 2, the two
/// smallest eigenvalues set to zero.
pub(crate) fn convex_instance() -> QcqpInstance {
    let cfg = GeneratorConfig { spectrum: (1.0, 10.0), box_half_width: 1.0, ..GeneratorConfig::new(50, 2, 41) };
    let mut inst = generate(&cfg).expect("valid configuration");
    respectrum(&mut inst, |v| {
        v[0] = 0.0;
        v[1] = 0.0;
    });
    inst
}

pub(crate) fn convex_wrapper() -> Check {
    let eps = 1e-3;
    let inst = convex_instance();
    let (oracles, c) = match build_oracles_with(&inst, Curvature::Convex) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let x0 = DVector::zeros(inst.n());
    let (sol, trace) = match solve_convex(&oracles, &c, eps, &x0, &IalmConfig::new(eps, Subsolver::CuttingPlane)) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let res = match certify(&oracles, &sol.x_bar, &sol.z_bar) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let detail = format!(
        "|z| = {:.2e}, {} outer iterations, {} gradient evaluations; pres {:.2e}, dres {:.2e}, compl {:.2e}",
        sol.z_bar.norm(),
        trace.records.len(),
        trace.total_grad_evals(),
        res.pres,
        res.dres,
        res.compl
    );
    (res.max() <= eps, detail)
}

/// Nonconvex instance: n = 20, m = 2, one eigenvalue of `Q0` at `-0.4 L_f`.
/// The box `[-0.5, 0.5]^n` is small enough to keep the proximal-point
/// multiplier bound moderate and large enough for a constraint to bind at
/// the solution. `x = 0` is strictly feasible since every `d_j < 0`.
pub(crate) fn nonconvex_instance() -> QcqpInstance {
    let cfg = GeneratorConfig {
        rank: 10,
        spectrum: (0.5, 1.0),
        c_scale: 0.1,
        d_range: (-0.1, -0.05),
        box_half_width: 0.5,
        ..GeneratorConfig::new(20, 2, 43)
    };
    let mut inst = generate(&cfg).expect("valid configuration");
    respectrum(&mut inst, |v| {
        let top = v[v.len() - 1];
        v[0] = -0.4 * top;
    });
    inst
}

pub(crate) fn nonconvex_wrapper() -> Check {
    let eps = 1e-2;
    let inst = nonconvex_instance();
    let (oracles, c) = match build_oracles_with(&inst, Curvature::Any) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let lam_min = SymmetricEigen::new(inst.q0.clone()).eigenvalues.min();
    if !(lam_min < 0.0 && -lam_min <= 0.5 * c.l_f) {
        return (false, format!("instance curvature {lam_min:e} outside (-L_f/2, 0)"));
    }
    let zero = DVector::zeros(inst.n());
    let start = NonconvexStart { x_bar0: zero.clone(), x_feas: zero, f_lower: None };
    let cfg = IalmConfig::new(eps, Subsolver::CuttingPlane);
    let plan = match nonconvex_plan(&oracles, &c, eps, cfg.sigma, &start) {
        Ok(p) => p,
        Err(e) => return (false, e.to_string()),
    };
    let (sol, trace) = match solve_nonconvex_with(&oracles, &c, eps, &start, &cfg, &plan) {
        Ok(r) => r,
        Err(e) => return (false, e.to_string()),
    };
    let rounds = trace.rounds.len();
    let min_step = trace.rounds.iter().map(|r| r.step).fold(f64::INFINITY, f64::min);
    let res = match certify(&oracles, &sol.x_bar, &sol.z_bar) {
        Ok(r) => r,
        Err(e) => return (false, e),
    };
    let passed = rounds <= plan.max_rounds && min_step <= 0.5 * eps && res.max() <= eps;
    let detail = format!(
        "|z| = {:.2e}, lambda_min = {lam_min:.2} (L_f = {:.2}), eps~ = {:.1e}, {rounds} rounds (cap {}), min 2 L_f |dx| = {min_step:.2e}; \
         pres {:.2e}, dres {:.2e}, compl {:.2e}",
        sol.z_bar.norm(), c.l_f, plan.eps_tilde, plan.max_rounds, res.pres, res.dres, res.compl
    );
    (passed, detail)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_instances_have_active_constraints() {
        for (idx, inst) in reference_instances().iter().enumerate() {
            let r = reference_solve(inst).unwrap();
            assert!(r.certified, "instance {idx}");
            assert!(r.z.amax() > 1e-3, "instance {idx}: z* = {}", r.z);
        }
    }

    #[test]
    fn convex_instance_is_rank_deficient() {
        let ev = SymmetricEigen::new(convex_instance().q0).eigenvalues;
        let zeros = ev.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn nonconvex_instance_has_one_negative_eigenvalue() {
        let ev = SymmetricEigen::new(nonconvex_instance().q0).eigenvalues;
        assert_eq!(ev.iter().filter(|&&v| v < 0.0).count(), 1);
    }
}
