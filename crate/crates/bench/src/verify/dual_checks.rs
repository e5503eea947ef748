use ialm_core::dualcut::{DualSearch, EllipsoidState, InnerSettings, InnerSolve, SaddleSubproblem};
use ialm_core::problem::{Oracles, ProblemConstants};
use ialm_core::qcqp::{build_oracles, generate, GeneratorConfig, QcqpOracles};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Check;

const CHAINS: usize = 10;
const CUTS_PER_CHAIN: usize = 100;

fn logdet(b: &DMatrix<f64>) -> Option<f64> {
    let chol = b.clone().cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Per-cut log-determinant decrement and volume ratio of the central-cut
/// ellipsoid update, checked against an explicit rank-one update of the
/// shape matrix. 1000 cuts per dimension, in chains restarted from the
/// unit ball every 100 cuts.
pub(crate) fn ellipsoid_law() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst_step = 0.0f64;
    let mut worst_shape = 0.0f64;
    for m in [2usize, 3, 5, 10] {
        let mf = m as f64;
        let expected = mf * (mf * mf / (mf * mf - 1.0)).ln() + ((mf - 1.0) / (mf + 1.0)).ln();
        let vol_cap = -1.0 / (2.0 * (mf + 1.0));
        if (EllipsoidState::logdet_step(m) - expected).abs() > 1e-12 {
            return (false, format!("m = {m}: closed-form step {} != {expected}", EllipsoidState::logdet_step(m)));
        }
        for _ in 0..CHAINS {
            let mut state = EllipsoidState::ball(m, 1.0);
            for cut in 0..CUTS_PER_CHAIN {
                let a = DVector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
                let b = state.shape();
                let ba = &b * &a;
                let aba = a.dot(&ba);
                let center = &state.center - &ba / ((mf + 1.0) * aba.sqrt());
                let shape = (&b - &ba * ba.transpose() * (2.0 / ((mf + 1.0) * aba))) * (mf * mf / (mf * mf - 1.0));

                let before = logdet(&b);
                if let Err(e) = state.update(&a) {
                    return (false, format!("m = {m}, cut {cut}: {e}"));
                }
                let after = logdet(&state.shape());
                let (Some(before), Some(after)) = (before, after) else {
                    return (false, format!("m = {m}, cut {cut}: shape not positive definite"));
                };
                let step = after - before;
                let err = (step - expected).abs();
                worst_step = worst_step.max(err);
                if err > 1e-10 {
                    return (false, format!("m = {m}, cut {cut}: logdet step {step} vs {expected}"));
                }
                if step / 2.0 > vol_cap {
                    return (false, format!("m = {m}: volume ratio e^{} above e^{vol_cap}", step / 2.0));
                }
                let scale = b.amax();
                let shape_err = (&state.shape() - &shape).amax() / scale;
                let center_err = (&state.center - &center).amax() / scale.sqrt();
                worst_shape = worst_shape.max(shape_err).max(center_err);
                if shape_err.max(center_err) > 1e-9 {
                    return (false, format!("m = {m}, cut {cut}: update differs from rank-one formula by {shape_err:e}"));
                }
            }
        }
    }
    (
        true,
        format!(
            "m in {{2,3,5,10}}, {} cuts each; max logdet-step error {worst_step:.1e}, max relative shape/center error {worst_shape:.1e}",
            CHAINS * CUTS_PER_CHAIN
        ),
    )
}

/// Tiny QCQPs for the dual-function checks: `(n, m)` in `{(2,1), (3,1), (3,2)}`.
fn tiny_instances() -> Vec<(QcqpOracles, ProblemConstants)> {
    [(2usize, 1usize, 1u64), (3, 1, 2), (3, 2, 3)]
        .iter()
        .map(|&(n, m, seed)| {
            let cfg = GeneratorConfig { rank: 1, spectrum: (1.0, 10.0), box_half_width: 2.0, ..GeneratorConfig::new(n, m, seed) };
            build_oracles(&generate(&cfg).expect("valid configuration")).expect("strongly convex")
        })
        .collect()
}

fn inner_settings() -> InnerSettings {
    InnerSettings { noise_rel: Some(0.0), ..InnerSettings::default() }
}

/// Solves `min_x Phi(x, y)` to stationarity `1e-12`.
fn solve_at(search: &mut DualSearch, y: &DVector<f64>) -> Result<InnerSolve, String> {
    search.solve_inner(y, 1e-12).map_err(|e| e.to_string())
}

fn random_y(rng: &mut ChaCha8Rng, m: usize, lo: f64, hi: f64, zero_prob: f64) -> DVector<f64> {
    DVector::from_fn(m, |_, _| if rng.gen_bool(zero_prob) { 0.0 } else { rng.gen_range(lo..hi) })
}

/// `grad d(y) = beta (theta(x(y)) - y)` against central differences of
/// `d(y) = Phi(x(y), y)`.
pub(crate) fn gradient_identity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (idx, (oracles, constants)) in tiny_instances().iter().enumerate() {
        let m = oracles.num_constraints();
        for beta in [1.0, 10.0] {
            let z = random_y(&mut rng, m, 0.0, 1.0, 0.0);
            let sub = match SaddleSubproblem::new(oracles, *constants, beta, z) {
                Ok(s) => s,
                Err(e) => return (false, format!("instance {idx}: {e}")),
            };
            let x0 = DVector::zeros(oracles.dim());
            let mut search = DualSearch::new(sub, inner_settings(), x0);
            for _ in 0..10 {
                let y = random_y(&mut rng, m, 0.1, 2.0, 0.0);
                let res = (|| -> Result<(DVector<f64>, DVector<f64>), String> {
                    let at = solve_at(&mut search, &y)?;
                    let analytic = (&at.theta - &y) * beta;
                    let mut fd = DVector::zeros(m);
                    for i in 0..m {
                        let h = 1e-5 * y[i].max(1.0);
                        let mut yp = y.clone();
                        let mut ym = y.clone();
                        yp[i] += h;
                        ym[i] -= h;
                        let xp = solve_at(&mut search, &yp)?.apg.x_hat;
                        let xm = solve_at(&mut search, &ym)?.apg.x_hat;
                        let dp = search.sub.saddle_value(&xp, &yp);
                        let dm = search.sub.saddle_value(&xm, &ym);
                        fd[i] = (dp - dm) / (2.0 * h);
                    }
                    Ok((analytic, fd))
                })();
                let (analytic, fd) = match res {
                    Ok(r) => r,
                    Err(e) => return (false, format!("instance {idx}: {e}")),
                };
                let rel = (&fd - &analytic).norm() / analytic.norm().max(1e-6 * beta);
                worst = worst.max(rel);
                count += 1;
                if rel > 1e-4 {
                    return (false, format!("instance {idx}, beta {beta}: fd {fd} vs analytic {analytic} (rel {rel:.2e})"));
                }
            }
        }
    }
    (true, format!("{count} points on 3 instances; max relative error {worst:.2e}"))
}

const PAIRS: usize = 100;

/// For pairs `y1, y2 >= 0`:
/// `beta <y1 - y2, theta(x(y1)) - theta(x(y2))> <= -mu |x(y1) - x(y2)|^2` and
/// `|x(y1) - x(y2)| <= (beta B_g / mu) |y1 - y2|`.
pub(crate) fn monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let mut worst_mono = f64::NEG_INFINITY;
    let mut worst_lip = 0.0f64;
    for (idx, (oracles, c)) in tiny_instances().iter().enumerate() {
        let m = oracles.num_constraints();
        let beta = [1.0, 10.0, 100.0][idx % 3];
        let z = random_y(&mut rng, m, 0.0, 1.0, 0.0);
        let sub = match SaddleSubproblem::new(oracles, *c, beta, z) {
            Ok(s) => s,
            Err(e) => return (false, format!("instance {idx}: {e}")),
        };
        let mut search = DualSearch::new(sub, inner_settings(), DVector::zeros(oracles.dim()));
        for pair in 0..PAIRS {
            let y1 = random_y(&mut rng, m, 0.0, 3.0, 0.2);
            let y2 = random_y(&mut rng, m, 0.0, 3.0, 0.2);
            let (s1, s2) = match (solve_at(&mut search, &y1), solve_at(&mut search, &y2)) {
                (Ok(a), Ok(b)) => (a, b),
                (Err(e), _) | (_, Err(e)) => return (false, format!("instance {idx}: {e}")),
            };
            let dx = &s1.apg.x_hat - &s2.apg.x_hat;
            let dy = &y1 - &y2;
            let lhs = beta * dy.dot(&(&s1.theta - &s2.theta));
            let rhs = -c.mu * dx.norm_squared();
            let scale = beta * dy.norm() * (&s1.theta - &s2.theta).norm() + c.mu * dx.norm_squared();
            let tol = 1e-8 * scale + 1e-12;
            if lhs > rhs + tol {
                return (false, format!("instance {idx}, pair {pair}: monotonicity {lhs:e} > {rhs:e}"));
            }
            if scale > 1e-9 {
                worst_mono = worst_mono.max((lhs - rhs) / scale);
            }
            let lip = beta * c.b_g / c.mu * dy.norm();
            if dx.norm() > lip * (1.0 + 1e-8) + 1e-12 {
                return (false, format!("instance {idx}, pair {pair}: |dx| {:e} > {lip:e}", dx.norm()));
            }
            if lip > 0.0 {
                worst_lip = worst_lip.max(dx.norm() / lip);
            }
        }
    }
    (
        true,
        format!(
            "{} pairs on 3 instances; max normalized monotonicity slack {worst_mono:.2e}, max |dx|/bound {worst_lip:.3}",
            3 * PAIRS
        ),
    )
}
