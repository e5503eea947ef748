//! Numerical checks of the solvers' guarantees: APG rate and budget,
//! ellipsoid volume law, dual-function identities, outer-loop envelopes,
//! agreement with exact references, benchmark ratios and the convex /
//! nonconvex wrappers.
//!
//! Every check reports instead of panicking; a failure is a `passed = false`
//! entry with a description of the worst violation.

mod apg_checks;
mod bench_checks;
mod dual_checks;
mod outer_checks;

use std::fmt;
use std::time::Instant;

pub use apg_checks::{exact_box_qp, BoxQp};
pub use bench_checks::BenchRuns;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Desk-scale benchmarks (n <= 200).
    Fast,
    /// Benchmarks at n = 1000, m in {1, 2, 5}.
    Full,
}

/// Deliberate corruptions used to check that the suite can fail.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Faults {
    /// The rate-bound instances get half the curvature the APG is told
    /// about: the true modulus is `mu/2` while `mu` is still supplied.
    pub halve_mu: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:>2} {} ({:.1} s): {}", self.id, self.name, self.seconds, self.detail)
    }
}

/// Outcome of one check body: pass flag and detail line.
pub(crate) type Check = (bool, String);

pub const CRITERIA: [(usize, &str); 12] = [
    (1, "APG rate bound"),
    (2, "APG evaluation budget"),
    (3, "ellipsoid update law"),
    (4, "dual gradient identity"),
    (5, "dual monotonicity and Lipschitz bound"),
    (6, "outer-loop feasibility and complementarity envelopes"),
    (7, "cutting-plane iALM matches exact reference"),
    (8, "m=1 benchmark ratios"),
    (9, "cutting-plane m-scaling"),
    (10, "benchmark final residuals"),
    (11, "convex wrapper"),
    (12, "nonconvex wrapper"),
];

pub fn verify_suite(level: Level) -> Vec<CriterionResult> {
    verify_with(level, Faults::default(), &CRITERIA.map(|(id, _)| id))
}

/// Runs the selected criteria in order. Benchmark runs are shared between
/// criteria 8-10.
pub fn verify_with(level: Level, faults: Faults, ids: &[usize]) -> Vec<CriterionResult> {
    let mut runs = BenchRuns::new(level);
    CRITERIA
        .iter()
        .filter(|(id, _)| ids.contains(id))
        .map(|&(id, name)| {
            let start = Instant::now();
            let (passed, detail) = match id {
                1 => apg_checks::rate_bound(faults),
                2 => apg_checks::evaluation_budget(),
                3 => dual_checks::ellipsoid_law(),
                4 => dual_checks::gradient_identity(),
                5 => dual_checks::monotonicity(),
                6 => outer_checks::envelopes(),
                7 => outer_checks::reference_agreement(),
                8 => runs.ratios(),
                9 => runs.m_scaling(),
                10 => runs.final_residuals(),
                11 => outer_checks::convex_wrapper(),
                12 => outer_checks::nonconvex_wrapper(),
                _ => unreachable!("criterion ids come from CRITERIA"),
            };
            let r = CriterionResult { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() };
            log::info!("{r}");
            r
        })
        .collect()
}

/// `a / b` rendered for details, guarding a zero denominator.
pub(crate) fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        f64::INFINITY
    } else {
        a / b
    }
}
