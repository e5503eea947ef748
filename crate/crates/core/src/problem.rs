//! Problem oracles, Lagrangian evaluations and KKT residuals for
//!
//! ```text
//!   min  F(x) = f(x) + h(x)   s.t.  g(x) <= 0
//! ```
//!
//! with `f` smooth, `h` a closed convex term with an exact prox (a box
//! indicator in practice) and `g` a vector of smooth convex constraints.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::error::ProblemError;

/// First-order oracles for `f`, `g` and `h`.
///
/// Implementations must be pure: the same input always yields the same
/// output, and evaluation is safe from several threads at once.
pub trait Oracles: Send + Sync {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;

    fn f_value(&self, x: &DVector<f64>) -> f64;
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64>;

    fn g_value(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `g`, one row per constraint (`m x n`).
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;

    /// Value and Jacobian together; override when they share work.
    fn g_value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (self.g_value(x), self.g_jacobian(x))
    }

    /// `h(x)`, `+inf` outside the domain.
    fn h_value(&self, x: &DVector<f64>) -> f64;
    /// `argmin_u h(u) + |u - x|^2 / (2t)`.
    fn h_prox(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;

    /// The box when `h` is a box indicator. Enables normal-cone residuals
    /// and random starting points.
    fn bounds(&self) -> Option<&BoxSet> {
        None
    }
}

impl<O: Oracles + ?Sized> Oracles for &O {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn num_constraints(&self) -> usize {
        (**self).num_constraints()
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        (**self).f_value(x)
    }
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).f_grad(x)
    }
    fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        (**self).g_value(x)
    }
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).g_jacobian(x)
    }
    fn g_value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (**self).g_value_and_jacobian(x)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        (**self).h_value(x)
    }
    fn h_prox(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        (**self).h_prox(x, t)
    }
    fn bounds(&self) -> Option<&BoxSet> {
        (**self).bounds()
    }
}

/// Axis-aligned box `{x : lower <= x <= upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self, ProblemError> {
        if lower.len() != upper.len() {
            return Err(ProblemError::Dimension {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(ProblemError::InvalidBox);
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^n`.
    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: DVector::from_element(n, lo),
            upper: DVector::from_element(n, hi),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(xi, (l, u))| *l <= *xi && *xi <= *u)
    }

    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(xi, (l, u))| xi.clamp(*l, *u)),
        )
    }

    pub fn indicator(&self, x: &DVector<f64>) -> f64 {
        if self.contains(x) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    /// `|u - l|`.
    pub fn diameter(&self) -> f64 {
        (&self.upper - &self.lower).norm()
    }

    /// `|max(|l|, |u|)|`, the largest norm of a point in the box.
    pub fn radius(&self) -> f64 {
        self.lower
            .iter()
            .zip(self.upper.iter())
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Minimum-norm element of `v + N(x)`, where `N` is the normal cone of
    /// the box at `x`: components pushing outward at an active bound are
    /// cancelled by the cone.
    pub fn normal_cone_reduce(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let mut r = v.clone();
        for i in 0..x.len() {
            let (l, u) = (self.lower[i], self.upper[i]);
            let at_lower = x[i] <= l;
            let at_upper = x[i] >= u;
            r[i] = match (at_lower, at_upper) {
                (true, true) => 0.0,
                (true, false) => v[i].min(0.0),
                (false, true) => v[i].max(0.0),
                (false, false) => v[i],
            };
        }
        r
    }
}

type ScalarFn = Box<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Closure-backed oracles with a box indicator as `h`.
pub struct OracleBundle {
    n: usize,
    m: usize,
    f: ScalarFn,
    f_grad: VectorFn,
    g: VectorFn,
    g_jac: MatrixFn,
    domain: BoxSet,
}

impl OracleBundle {
    pub fn new(
        domain: BoxSet,
        m: usize,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        f_grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        g_jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n: domain.dim(),
            m,
            f: Box::new(f),
            f_grad: Box::new(f_grad),
            g: Box::new(g),
            g_jac: Box::new(g_jac),
            domain,
        }
    }
}

impl std::fmt::Debug for OracleBundle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OracleBundle")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl Oracles for OracleBundle {
    fn dim(&self) -> usize {
        self.n
    }
    fn num_constraints(&self) -> usize {
        self.m
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f_grad)(x)
    }
    fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.g)(x)
    }
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        (self.g_jac)(x)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.domain.indicator(x)
    }
    fn h_prox(&self, x: &DVector<f64>, _t: f64) -> DVector<f64> {
        self.domain.project(x)
    }
    fn bounds(&self) -> Option<&BoxSet> {
        Some(&self.domain)
    }
}

/// Per-oracle call counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OracleCounts {
    pub f_value: usize,
    pub f_grad: usize,
    pub g_value: usize,
    pub g_jacobian: usize,
}

/// Wrapper that counts every call to `f`/`g` oracles.
#[derive(Debug)]
pub struct CountingOracles<O> {
    inner: O,
    f_value: AtomicUsize,
    f_grad: AtomicUsize,
    g_value: AtomicUsize,
    g_jacobian: AtomicUsize,
}

impl<O: Oracles> CountingOracles<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            f_value: AtomicUsize::new(0),
            f_grad: AtomicUsize::new(0),
            g_value: AtomicUsize::new(0),
            g_jacobian: AtomicUsize::new(0),
        }
    }

    pub fn counts(&self) -> OracleCounts {
        OracleCounts {
            f_value: self.f_value.load(Ordering::Relaxed),
            f_grad: self.f_grad.load(Ordering::Relaxed),
            g_value: self.g_value.load(Ordering::Relaxed),
            g_jacobian: self.g_jacobian.load(Ordering::Relaxed),
        }
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Oracles> Oracles for CountingOracles<O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn num_constraints(&self) -> usize {
        self.inner.num_constraints()
    }
    fn f_value(&self, x: &DVector<f64>) -> f64 {
        self.f_value.fetch_add(1, Ordering::Relaxed);
        self.inner.f_value(x)
    }
    fn f_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.f_grad.fetch_add(1, Ordering::Relaxed);
        self.inner.f_grad(x)
    }
    fn g_value(&self, x: &DVector<f64>) -> DVector<f64> {
        self.g_value.fetch_add(1, Ordering::Relaxed);
        self.inner.g_value(x)
    }
    fn g_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.g_jacobian.fetch_add(1, Ordering::Relaxed);
        self.inner.g_jacobian(x)
    }
    fn g_value_and_jacobian(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        self.g_value.fetch_add(1, Ordering::Relaxed);
        self.g_jacobian.fetch_add(1, Ordering::Relaxed);
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

/// Structural constants of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Strong convexity modulus of `f`.
    pub mu: f64,
    /// Lipschitz constant of `grad f`.
    pub l_f: f64,
    /// Lipschitz constant of the Jacobian of `g`.
    pub l_g: f64,
    /// Diameter of `dom(h)`.
    pub d_h: f64,
    /// Bound on `|J_g(x)|` over `dom(h)`.
    pub b_g: f64,
    /// Bound on `|g(x)|` over `dom(h)`.
    pub g_bound: f64,
}

impl ProblemConstants {
    pub fn validate(&self) -> Result<(), ProblemError> {
        let fields = [
            ("mu", self.mu),
            ("l_f", self.l_f),
            ("l_g", self.l_g),
            ("d_h", self.d_h),
            ("b_g", self.b_g),
            ("g_bound", self.g_bound),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ProblemError::InvalidConstant(name, v));
            }
        }
        if self.mu > self.l_f * (1.0 + 1e-12) {
            return Err(ProblemError::InvalidConstant("mu", self.mu));
        }
        Ok(())
    }
}

/// Primal, dual and complementarity residuals of a candidate KKT pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResidual {
    pub pres: f64,
    pub dres: f64,
    pub compl: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.pres.max(self.dres).max(self.compl)
    }
}

fn positive_part(v: &DVector<f64>) -> DVector<f64> {
    v.map(|t| t.max(0.0))
}

/// `F(x) = f(x) + h(x)`.
pub fn objective(oracles: &dyn Oracles, x: &DVector<f64>) -> f64 {
    oracles.f_value(x) + oracles.h_value(x)
}

/// Ordinary Lagrangian `F(x) + z'g(x)`.
pub fn eval_lagrangian0(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<f64, ProblemError> {
    let h = oracles.h_value(x);
    if !h.is_finite() {
        return Err(ProblemError::OutsideDomain);
    }
    Ok(oracles.f_value(x) + h + z.dot(&oracles.g_value(x)))
}

/// Augmented Lagrangian `F(x) + (beta/2)|[g(x) + z/beta]_+|^2 - |z|^2/(2 beta)`.
pub fn eval_aug_lagrangian(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
    beta: f64,
) -> Result<f64, ProblemError> {
    if !(beta > 0.0) {
        return Err(ProblemError::NonPositiveBeta(beta));
    }
    let shifted = positive_part(&(oracles.g_value(x) + z / beta));
    Ok(objective(oracles, x) + 0.5 * beta * shifted.norm_squared()
        - z.norm_squared() / (2.0 * beta))
}

/// `grad f(x) + J_g(x)' z`, the smooth part of a subgradient of `L0(., z)`.
pub fn lagrangian0_smooth_grad(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> DVector<f64> {
    let mut v = oracles.f_grad(x);
    if z.len() > 0 {
        v += oracles.g_jacobian(x).tr_mul(z);
    }
    v
}

/// Smooth part of a subgradient of `L_beta(., z)`: `grad f + J' [z + beta g]_+`.
/// Equals [`lagrangian0_smooth_grad`] at the updated multiplier.
pub fn aug_lagrangian_smooth_grad(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
    beta: f64,
) -> DVector<f64> {
    let (gx, jac) = oracles.g_value_and_jacobian(x);
    let w = positive_part(&(z + gx * beta));
    oracles.f_grad(x) + jac.tr_mul(&w)
}

/// Residuals of `(x, z)` given an element of `d_x L0(x, z)`.
pub fn kkt_residuals(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
    dres_element: &DVector<f64>,
) -> KktResidual {
    let gx = oracles.g_value(x);
    KktResidual {
        pres: positive_part(&gx).norm(),
        dres: dres_element.norm(),
        compl: z.iter().zip(gx.iter()).map(|(zi, gi)| (zi * gi).abs()).sum(),
    }
}

/// Element of `d_x L0(x, z)` with minimal norm for box-constrained problems.
pub fn box_dres_element(
    oracles: &dyn Oracles,
    x: &DVector<f64>,
    z: &DVector<f64>,
) -> Result<DVector<f64>, ProblemError> {
    let b = oracles.bounds().ok_or(ProblemError::NotABox)?;
    Ok(b.normal_cone_reduce(x, &lagrangian0_smooth_grad(oracles, x, z)))
}

pub fn is_eps_kkt(res: &KktResidual, eps: f64) -> bool {
    res.pres <= eps && res.dres <= eps && res.compl <= eps
}

/// `|F(x) - f_star| <= eps` and `|[g(x)]_+| <= eps`.
pub fn check_eps_optimal(oracles: &dyn Oracles, x: &DVector<f64>, f_star: f64, eps: f64) -> bool {
    let pres = positive_part(&oracles.g_value(x)).norm();
    (objective(oracles, x) - f_star).abs() <= eps && pres <= eps
}

#[cfg(test)]
pub(crate) mod toys {
    use super::*;

    /// `min x^2/2 - x  s.t. x - 0.5 <= 0`, `x in [-10, 10]`.
    pub fn toy_1d() -> OracleBundle {
        OracleBundle::new(
            BoxSet::uniform(1, -10.0, 10.0),
            1,
            |x| 0.5 * x[0] * x[0] - x[0],
            |x| DVector::from_element(1, x[0] - 1.0),
            |x| DVector::from_element(1, x[0] - 0.5),
            |_| DMatrix::from_element(1, 1, 1.0),
        )
    }

    /// `f = x^2/2`, `g = x - 1`, no effective domain restriction.
    pub fn half_square() -> OracleBundle {
        OracleBundle::new(
            BoxSet::uniform(1, -1e6, 1e6),
            1,
            |x| 0.5 * x[0] * x[0],
            |x| x.clone(),
            |x| DVector::from_element(1, x[0] - 1.0),
            |_| DMatrix::from_element(1, 1, 1.0),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::toys::*;
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    #[test]
    fn lagrangian_values() {
        let o = half_square();
        assert_eq!(eval_lagrangian0(&o, &v(&[2.0]), &v(&[3.0])).unwrap(), 5.0);
        assert_eq!(eval_lagrangian0(&o, &v(&[2.0]), &v(&[0.0])).unwrap(), 2.0);
        assert_eq!(eval_aug_lagrangian(&o, &v(&[2.0]), &v(&[0.0]), 1.0).unwrap(), 2.5);
        assert_eq!(eval_aug_lagrangian(&o, &v(&[2.0]), &v(&[2.0]), 2.0).unwrap(), 5.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let o = toy_1d();
        assert!(matches!(
            eval_aug_lagrangian(&o, &v(&[0.0]), &v(&[0.0]), 0.0),
            Err(ProblemError::NonPositiveBeta(_))
        ));
        assert!(matches!(
            eval_lagrangian0(&o, &v(&[11.0]), &v(&[0.0])),
            Err(ProblemError::OutsideDomain)
        ));
    }

    #[test]
    fn toy_kkt_residuals() {
        let o = toy_1d();
        let x = v(&[0.5]);
        let z = v(&[0.5]);
        let r = kkt_residuals(&o, &x, &z, &box_dres_element(&o, &x, &z).unwrap());
        assert_eq!(r, KktResidual { pres: 0.0, dres: 0.0, compl: 0.0 });
        assert!(is_eps_kkt(&r, 1e-4));

        let x = v(&[1.0]);
        let z = v(&[0.0]);
        let r = kkt_residuals(&o, &x, &z, &box_dres_element(&o, &x, &z).unwrap());
        assert_eq!(r, KktResidual { pres: 0.5, dres: 0.0, compl: 0.0 });
        assert!(!is_eps_kkt(&KktResidual { pres: 2e-4, dres: 0.0, compl: 0.0 }, 1e-4));
        assert!(is_eps_kkt(&KktResidual { pres: 0.0, dres: 9.9e-5, compl: 3.01e-11 }, 1e-4));
    }

    #[test]
    fn eps_optimal() {
        let o = toy_1d();
        assert!(check_eps_optimal(&o, &v(&[0.5]), -0.375, 1e-6));
        let off = v(&[0.5 + 1e-3]);
        assert!(!check_eps_optimal(&o, &off, -0.375, 1e-8));
        assert!(check_eps_optimal(&o, &off, -0.375, 1e-2));
    }

    #[test]
    fn normal_cone_reduction() {
        let b = BoxSet::uniform(3, -1.0, 1.0);
        let x = v(&[-1.0, 1.0, 0.0]);
        // At the lower bound a positive component is stationary-compatible.
        let r = b.normal_cone_reduce(&x, &v(&[2.0, 2.0, 3.0]));
        assert_eq!(r, v(&[0.0, 2.0, 3.0]));
        let r = b.normal_cone_reduce(&x, &v(&[-2.0, -2.0, 0.0]));
        assert_eq!(r, v(&[-2.0, 0.0, 0.0]));
    }

    #[test]
    fn counting_wrapper_counts_each_call() {
        let o = CountingOracles::new(toy_1d());
        let x = v(&[0.1]);
        o.f_value(&x);
        o.f_grad(&x);
        o.f_grad(&x);
        o.g_value(&x);
        o.g_value_and_jacobian(&x);
        assert_eq!(
            o.counts(),
            OracleCounts { f_value: 1, f_grad: 2, g_value: 2, g_jacobian: 1 }
        );
    }

    #[test]
    fn constants_validation() {
        let c = ProblemConstants { mu: 1.0, l_f: 2.0, l_g: 0.0, d_h: 1.0, b_g: 1.0, g_bound: 1.0 };
        assert!(c.validate().is_ok());
        assert!(ProblemConstants { mu: 3.0, ..c }.validate().is_err());
        assert!(ProblemConstants { b_g: f64::NAN, ..c }.validate().is_err());
    }

    proptest! {
        #[test]
        fn aug_lagrangian_inactive_branch(x in -10.0f64..0.0, z in 0.0f64..5.0, beta in 0.1f64..10.0) {
            // g(x) = x - 0.5 <= -z/beta whenever x <= 0.5 - z/beta.
            let o = toy_1d();
            let x = x.min(0.5 - z / beta - 1e-9);
            prop_assume!(x >= -10.0);
            let xv = v(&[x]);
            let zv = v(&[z]);
            let lhs = eval_aug_lagrangian(&o, &xv, &zv, beta).unwrap();
            let rhs = objective(&o, &xv) - z * z / (2.0 * beta);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn aug_subgradient_identity(x in -10.0f64..10.0, z in 0.0f64..5.0, beta in 0.1f64..100.0) {
            let o = toy_1d();
            let xv = v(&[x]);
            let zv = v(&[z]);
            let znext = (zv.clone() + o.g_value(&xv) * beta).map(|t| t.max(0.0));
            let a = aug_lagrangian_smooth_grad(&o, &xv, &zv, beta);
            let b = lagrangian0_smooth_grad(&o, &xv, &znext);
            prop_assert!((a - b).norm() <= 1e-12 * (1.0 + z + beta));
        }

        #[test]
        fn box_projection_nonexpansive(
            u in proptest::collection::vec(-20.0f64..20.0, 4),
            w in proptest::collection::vec(-20.0f64..20.0, 4),
        ) {
            let b = BoxSet::uniform(4, -10.0, 10.0);
            let (u, w) = (DVector::from_vec(u), DVector::from_vec(w));
            prop_assert!((b.project(&u) - b.project(&w)).norm() <= (u - w).norm() + 1e-15);
        }
    }
}
