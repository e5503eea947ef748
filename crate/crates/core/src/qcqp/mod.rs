//! Convex quadratically constrained quadratic programs
//!
//! ```text
//!   min  x'Q0 x/2 + c0'x
//!   s.t. x'Qj x/2 + cj'x + dj <= 0,  j = 1..m,   l <= x <= u
//! ```
//!
//! with seeded random generation, oracle construction, a plain-text file
//! format and an exact reference solver for tiny instances.

mod format;
mod reference;

pub use format::{parse, serialize};
pub use reference::{reference_solve, ReferenceSolution};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::QcqpError;
use crate::problem::{BoxSet, Oracles, ProblemConstants};

/// One quadratic constraint `x'Qx/2 + c'x + d <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadConstraint {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub d: f64,
}

impl QuadConstraint {
    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x) + self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcqpInstance {
    pub q0: DMatrix<f64>,
    pub c0: DVector<f64>,
    pub constraints: Vec<QuadConstraint>,
    pub bounds: BoxSet,
    pub seed: u64,
}

impl QcqpInstance {
    pub fn n(&self) -> usize {
        self.c0.len()
    }

    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    /// Shape and sign checks: symmetric matrices, `d_j < 0`, `l < 0 < u`.
    pub fn validate(&self) -> Result<(), QcqpError> {
        let n = self.n();
        let bad = |msg: String| Err(QcqpError::InvalidInstance(msg));
        if self.q0.shape() != (n, n) {
            return bad(format!("Q0 has shape {:?}, expected ({n}, {n})", self.q0.shape()));
        }
        if !is_symmetric(&self.q0) {
            return bad("Q0 is not symmetric".into());
        }
        if self.bounds.dim() != n {
            return bad(format!("box has dimension {}, expected {n}", self.bounds.dim()));
        }
        for i in 0..n {
            if !(self.bounds.lower[i] < 0.0 && 0.0 < self.bounds.upper[i]) {
                return bad(format!("box must contain the origin strictly (coordinate {i})"));
            }
        }
        for (j, con) in self.constraints.iter().enumerate() {
            if con.q.shape() != (n, n) || con.c.len() != n {
                return bad(format!("constraint {} has mismatched dimensions", j + 1));
            }
            if !is_symmetric(&con.q) {
                return bad(format!("Q{} is not symmetric", j + 1));
            }
            if !(con.d < 0.0) {
                return bad(format!("d{} must be negative, got {}", j + 1, con.d));
            }
        }
        Ok(())
    }
}

fn is_symmetric(a: &DMatrix<f64>) -> bool {
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= 1e-12 * scale
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n: usize,
    pub m: usize,
    /// Rank of every `Qj` (must be below `n`).
    pub rank: usize,
    pub seed: u64,
    /// `(lambda_min, lambda_max)` of `Q0`; both endpoints are attained.
    pub spectrum: (f64, f64),
    /// Standard deviation of the entries of `c0` and `cj`.
    pub c_scale: f64,
    /// Interval the `dj` are drawn from.
    pub d_range: (f64, f64),
    /// The box is `[-box_half_width, box_half_width]^n`.
    pub box_half_width: f64,
}

impl GeneratorConfig {
    pub fn new(n: usize, m: usize, seed: u64) -> Self {
        Self {
            n,
            m,
            rank: (n / 2).max(1),
            seed,
            spectrum: (1.0, 100.0),
            c_scale: 1.0,
            d_range: (-1.0, -0.1),
            box_half_width: 10.0,
        }
    }

    pub fn validate(&self) -> Result<(), QcqpError> {
        let bad = |msg: &str| Err(QcqpError::InvalidConfig(msg.to_string()));
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.m > 0 && !(1 <= self.rank && self.rank < self.n) {
            return bad("constraint rank must satisfy 1 <= rank < n");
        }
        let (lo, hi) = self.spectrum;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("spectrum must satisfy 0 < lambda_min <= lambda_max");
        }
        let (dl, dh) = self.d_range;
        if !(dl <= dh && dh < 0.0) {
            return bad("d_range must be a negative interval");
        }
        if !(self.c_scale >= 0.0) || !(self.box_half_width > 0.0) {
            return bad("c_scale must be nonnegative and the box nonempty");
        }
        Ok(())
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Deterministic random instance: `Q0 = U diag(lambda) U'` with log-uniform
/// spectrum, `Qj = Mj Mj'` of the configured rank scaled to unit spectral
/// norm, Gaussian linear terms and uniform negative offsets.
pub fn generate(cfg: &GeneratorConfig) -> Result<QcqpInstance, QcqpError> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let u = gaussian_matrix(&mut rng, n, n).qr().q();
    let (lo, hi) = cfg.spectrum;
    let mut lambda: Vec<f64> = (0..n)
        .map(|_| (lo.ln() + (hi.ln() - lo.ln()) * rng.gen::<f64>()).exp())
        .collect();
    lambda[0] = lo;
    if n > 1 {
        lambda[n - 1] = hi;
    }
    let q0 = &u * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * u.transpose();
    let q0 = (&q0 + q0.transpose()) * 0.5;
    let c0 = gaussian_vector(&mut rng, n, cfg.c_scale);

    let mut constraints = Vec::with_capacity(cfg.m);
    for _ in 0..cfg.m {
        let mfac = gaussian_matrix(&mut rng, n, cfg.rank);
        let gram = mfac.transpose() * &mfac;
        let top = SymmetricEigen::new(gram).eigenvalues.max();
        let q = &mfac * mfac.transpose() / top;
        let q = (&q + q.transpose()) * 0.5;
        let c = gaussian_vector(&mut rng, n, cfg.c_scale);
        let d = rng.gen_range(cfg.d_range.0..=cfg.d_range.1);
        constraints.push(QuadConstraint { q, c, d });
    }

    Ok(QcqpInstance {
        q0,
        c0,
        constraints,
        bounds: BoxSet::uniform(n, -cfg.box_half_width, cfg.box_half_width),
        seed: cfg.seed,
    })
}

/// Which curvature of `f` the caller relies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Curvature {
    /// `lambda_min(Q0) > 0` is required.
    StronglyConvex,
    /// `Q0` positive semidefinite; `mu` is reported as zero if tiny.
    Convex,
    /// No requirement; `mu` is reported as `max(lambda_min, 0)`.
    Any,
}

/// Oracles of a QCQP; `h` is the box indicator.
#[derive(Debug, Clone)]
pub struct QcqpOracles {
    inst: QcqpInstance,
}

impl QcqpOracles {
    pub fn instance(&self) -> &QcqpInstance {
        &self.inst
    }
}

impl Oracles for QcqpOracles {
    fn dim(&self) -> usize {
        self.inst.n()
    }
    fn num_constraints(&self) -> usize {
        self.inst.m()
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.inst.q0 * x)) + self.inst.c0.dot(x)
    }
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.inst.q0 * x + &self.inst.c0
    }
    fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.inst.m(), self.inst.constraints.iter().map(|c| c.value(x)))
    }
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.g_value_and_jacobian(x).1
    }
    fn g_value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (n, m) = (self.inst.n(), self.inst.m());
        let mut g = DVector::zeros(m);
        let mut jac = DMatrix::zeros(m, n);
        for (j, con) in self.inst.constraints.iter().enumerate() {
            let qx = &con.q * x;
            g[j] = 0.5 * x.dot(&qx) + con.c.dot(x) + con.d;
            jac.set_row(j, &(qx + &con.c).transpose());
        }
        (g, jac)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.inst.bounds.indicator(x)
    }
    fn h_prox(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        self.inst.bounds.project(x)
    }
    fn bounds(&self) -> Option<&BoxSet> {
        Some(&self.inst.bounds)
    }
}

/// Extreme eigenvalues of a symmetric matrix.
pub fn eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymmetricEigen::new(a.clone()).eigenvalues;
    (ev.min(), ev.max())
}

fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    let (lo, hi) = eigen_range(a);
    lo.abs().max(hi.abs())
}

/// Oracles plus `(mu, L_f, L_g, D_h, B_g, G)` for a strongly convex instance.
pub fn build_oracles(inst: &QcqpInstance) -> Result<(QcqpOracles, ProblemConstants), QcqpError> {
    build_oracles_with(inst, Curvature::StronglyConvex)
}

pub fn build_oracles_with(
    inst: &QcqpInstance,
    curvature: Curvature,
) -> Result<(QcqpOracles, ProblemConstants), QcqpError> {
    inst.validate()?;
    let (lo, hi) = eigen_range(&inst.q0);
    let scale = lo.abs().max(hi.abs()).max(f64::MIN_POSITIVE);
    let mu = match curvature {
        Curvature::StronglyConvex if lo <= 0.0 => return Err(QcqpError::NotStronglyConvex(lo)),
        Curvature::Convex if lo < -1e-10 * scale => return Err(QcqpError::NotStronglyConvex(lo)),
        _ => lo.max(0.0),
    };
    let r = inst.bounds.radius();
    let norms: Vec<f64> = inst.constraints.iter().map(|c| spectral_norm(&c.q)).collect();
    let l_g = norms.iter().map(|a| a * a).sum::<f64>().sqrt();
    let b_g = inst
        .constraints
        .iter()
        .zip(&norms)
        .map(|(c, a)| (a * r + c.c.norm()).powi(2))
        .sum::<f64>()
        .sqrt();
    let g_bound = inst
        .constraints
        .iter()
        .zip(&norms)
        .map(|(c, a)| (0.5 * a * r * r + c.c.norm() * r + c.d.abs()).powi(2))
        .sum::<f64>()
        .sqrt();
    let constants = ProblemConstants {
        mu,
        l_f: lo.abs().max(hi.abs()),
        l_g,
        d_h: inst.bounds.diameter(),
        b_g,
        g_bound,
    };
    Ok((QcqpOracles { inst: inst.clone() }, constants))
}

/// The 1-D instance `min x^2/2 - x  s.t. x - 1/2 <= 0`, `x in [-10, 10]`,
/// with solution `x* = 1/2`, `z* = 1/2`.
pub fn toy_1d() -> QcqpInstance {
    QcqpInstance {
        q0: DMatrix::from_element(1, 1, 1.0),
        c0: DVector::from_element(1, -1.0),
        constraints: vec![QuadConstraint {
            q: DMatrix::zeros(1, 1),
            c: DVector::from_element(1, 1.0),
            d: -0.5,
        }],
        bounds: BoxSet::uniform(1, -10.0, 10.0),
        seed: 0,
    }
}

/// The 2-D instance `min |x|^2/2 - 2(x1 + x2)` subject to
/// `x1 + x2 - 1 <= 0` and `x1^2/2 - 2 <= 0` on `[-10, 10]^2`, with solution
/// `x* = (1/2, 1/2)`, `z* = (3/2, 0)`, `f* = -7/4`.
pub fn toy_2d() -> QcqpInstance {
    QcqpInstance {
        q0: DMatrix::identity(2, 2),
        c0: DVector::from_row_slice(&[-2.0, -2.0]),
        constraints: vec![
            QuadConstraint {
                q: DMatrix::zeros(2, 2),
                c: DVector::from_row_slice(&[1.0, 1.0]),
                d: -1.0,
            },
            QuadConstraint {
                q: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                c: DVector::zeros(2),
                d: -2.0,
            },
        ],
        bounds: BoxSet::uniform(2, -10.0, 10.0),
        seed: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GeneratorConfig { rank: 2, ..GeneratorConfig::new(4, 1, 7) };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = generate(&GeneratorConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(generate(&cfg).unwrap(), other);
    }

    #[test]
    fn generated_structure() {
        let cfg = GeneratorConfig { rank: 3, ..GeneratorConfig::new(8, 3, 11) };
        let inst = generate(&cfg).unwrap();
        let (lo, hi) = eigen_range(&inst.q0);
        assert!((lo - 1.0).abs() < 1e-10 && (hi - 100.0).abs() < 1e-8);
        for con in &inst.constraints {
            let ev = SymmetricEigen::new(con.q.clone()).eigenvalues;
            let rank = ev.iter().filter(|&&t| t > 1e-10).count();
            assert_eq!(rank, 3);
            assert!(ev.min() > -1e-12);
            assert!((ev.max() - 1.0).abs() < 1e-12);
            assert!(con.d < 0.0);
        }
        let (o, _) = build_oracles(&inst).unwrap();
        assert!(o.g_value(&DVector::zeros(8)).iter().all(|&g| g < 0.0));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GeneratorConfig { rank: 4, ..GeneratorConfig::new(4, 1, 0) }).is_err());
        assert!(generate(&GeneratorConfig { d_range: (-1.0, 0.5), ..GeneratorConfig::new(4, 1, 0) }).is_err());
        assert!(generate(&GeneratorConfig { spectrum: (0.0, 1.0), ..GeneratorConfig::new(4, 1, 0) }).is_err());
    }

    #[test]
    fn toy_constants() {
        let (_, c) = build_oracles(&toy_1d()).unwrap();
        assert_eq!(c.mu, 1.0);
        assert_eq!(c.l_f, 1.0);
        assert!(c.b_g <= 1.0 + 1e-15);
        assert!(c.g_bound <= 10.5 + 1e-12);
        assert_eq!(c.d_h, 20.0);
    }

    #[test]
    fn rejects_indefinite_in_strong_mode() {
        let mut inst = toy_2d();
        inst.q0[(1, 1)] = -0.5;
        assert!(matches!(build_oracles(&inst), Err(QcqpError::NotStronglyConvex(_))));
        let (_, c) = build_oracles_with(&inst, Curvature::Any).unwrap();
        assert_eq!(c.mu, 0.0);
        assert_eq!(c.l_f, 1.0);
    }

    #[test]
    fn constant_bounds_hold_on_samples() {
        let inst = generate(&GeneratorConfig::new(6, 3, 5)).unwrap();
        let (o, c) = build_oracles(&inst).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let x = DVector::from_fn(6, |_, _| rng.gen_range(-10.0..=10.0));
            let (g, jac) = o.g_value_and_jacobian(&x);
            assert!(jac.norm() <= c.b_g * (1.0 + 1e-12));
            assert!(g.norm() <= c.g_bound * (1.0 + 1e-12));
        }
        let (lo, hi) = eigen_range(&inst.q0);
        assert!(c.mu <= lo * (1.0 + 1e-12) && hi <= c.l_f * (1.0 + 1e-12));
    }

    proptest! {
        #[test]
        fn gradients_match_finite_differences(seed in 0u64..500, pick in proptest::collection::vec(-10.0f64..10.0, 5)) {
            let inst = generate(&GeneratorConfig::new(5, 2, seed)).unwrap();
            let (o, _) = build_oracles(&inst).unwrap();
            let x = DVector::from_vec(pick);
            let h = 1e-5;
            let grad = o.f_grad(&x);
            let jac = o.g_jacobian(&x);
            for i in 0..5 {
                let mut e = DVector::zeros(5);
                e[i] = h;
                let fd = (o.f_value(&(&x + &e)) - o.f_value(&(&x - &e))) / (2.0 * h);
                prop_assert!((fd - grad[i]).abs() <= 1e-5 * (1.0 + grad.norm()));
                let gd = (o.g_value(&(&x + &e)) - o.g_value(&(&x - &e))) / (2.0 * h);
                for j in 0..2 {
                    prop_assert!((gd[j] - jac[(j, i)]).abs() <= 1e-5 * (1.0 + jac.row(j).norm()));
                }
            }
        }

        #[test]
        fn slater_origin(seed in 0u64..1000) {
            let inst = generate(&GeneratorConfig::new(3, 3, seed)).unwrap();
            prop_assert!(inst.constraints.iter().all(|c| c.value(&DVector::zeros(3)) < 0.0));
        }
    }
}
