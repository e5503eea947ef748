use std::path::PathBuf;

use ialm_core::ialm::{IalmConfig, InitMode, Subsolver};
use ialm_core::qcqp::{generate, GeneratorConfig, QcqpInstance};
use ialm_core::QcqpError;

use crate::BenchError;

/// Environment variable holding the number of worker threads.
pub const THREADS_ENV: &str = "IALM_BENCH_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchInit {
    /// Fresh uniform draw from the box for every subproblem.
    Random,
    /// Each subproblem starts from the previous outer iterate.
    Warm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub n: usize,
    pub m_list: Vec<usize>,
    pub trials: usize,
    /// Trial `t` (0-based) uses instance seed `base_seed + t`.
    pub base_seed: u64,
    pub eps: f64,
    pub beta0: f64,
    pub sigma: f64,
    pub max_outer: usize,
    pub solvers: Vec<Subsolver>,
    pub init: BenchInit,
    /// `None` writes to stdout.
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n: 200,
            m_list: vec![1],
            trials: 5,
            base_seed: 0,
            eps: 1e-4,
            beta0: 1.0,
            sigma: 10.0,
            max_outer: 5,
            solvers: vec![Subsolver::ApgDirect, Subsolver::CuttingPlane],
            init: BenchInit::Random,
            output_path: None,
            format: OutputFormat::Csv,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |msg: &str| Err(BenchError::Config(msg.to_string()));
        if self.m_list.is_empty() {
            return bad("at least one constraint count is required");
        }
        if self.m_list.iter().any(|&m| m == 0) {
            return bad("constraint counts must be positive");
        }
        if self.n < 2 {
            return bad("n must be at least 2 (constraint matrices are rank-deficient)");
        }
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive");
        }
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return bad("beta0 must be positive");
        }
        if !(self.sigma > 1.0 && self.sigma.is_finite()) {
            return bad("sigma must exceed 1");
        }
        if self.max_outer == 0 {
            return bad("max_outer must be positive");
        }
        if self.solvers.is_empty() {
            return bad("no solver selected");
        }
        Ok(())
    }

    pub fn instance_seed(&self, trial: usize) -> u64 {
        self.base_seed.wrapping_add(trial as u64)
    }

    /// Solver configuration for one trial. All solvers of a trial share the
    /// same initialization draws.
    pub fn ialm_config(&self, solver: Subsolver, instance_seed: u64) -> IalmConfig {
        let mut cfg = IalmConfig::benchmark(self.eps, solver, init_seed(instance_seed));
        cfg.beta0 = self.beta0;
        cfg.sigma = self.sigma;
        cfg.max_outer = self.max_outer;
        if self.init == BenchInit::Warm {
            cfg.init_mode = InitMode::Warm;
        }
        cfg
    }
}

/// Seed of the starting-point stream, decorrelated from the instance stream
/// that uses `instance_seed` directly.
pub fn init_seed(instance_seed: u64) -> u64 {
    instance_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03
}

/// The benchmark instance family: `Q0` with spectrum `[1, 100]`, rank-`n/2`
/// constraints, box `[-10, 10]^n`.
pub fn bench_instance(n: usize, m: usize, seed: u64) -> Result<QcqpInstance, QcqpError> {
    generate(&GeneratorConfig::new(n, m, seed))
}
