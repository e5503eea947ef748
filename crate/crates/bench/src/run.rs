use std::io::Write;

use ialm_core::ialm::{ialm_solve, IalmTrace, OuterRecord, Subsolver};
use ialm_core::qcqp::build_oracles;
use rayon::prelude::*;

use crate::config::{bench_instance, BenchConfig, THREADS_ENV};
use crate::BenchError;

pub const CSV_HEADER: &str = "m,trial,solver,outer_iter,beta,grad_evals,func_evals,pres,dres,compl,time_sec,status";

/// One solver run on one trial instance.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub m: usize,
    /// 1-based.
    pub trial: usize,
    pub seed: u64,
    pub solver: Subsolver,
    /// The trace, or the failure message.
    pub result: Result<IalmTrace, String>,
}

impl TrialOutcome {
    pub fn failed(&self) -> bool {
        self.result.is_err()
    }

    pub fn records(&self) -> &[OuterRecord] {
        self.result.as_ref().map(|t| t.records.as_slice()).unwrap_or(&[])
    }
}

/// Ordered results of a benchmark batch.
#[derive(Debug, Clone)]
pub struct BenchReport {
    pub outcomes: Vec<TrialOutcome>,
}

impl BenchReport {
    pub fn any_failed(&self) -> bool {
        self.outcomes.iter().any(TrialOutcome::failed)
    }

    pub fn group(&self, m: usize, solver: Subsolver) -> impl Iterator<Item = &TrialOutcome> {
        self.outcomes.iter().filter(move |o| o.m == m && o.solver == solver)
    }
}

fn run_trial(cfg: &BenchConfig, m: usize, t: usize) -> Vec<TrialOutcome> {
    let seed = cfg.instance_seed(t);
    let built = bench_instance(cfg.n, m, seed).and_then(|inst| build_oracles(&inst));
    cfg.solvers
        .iter()
        .map(|&solver| {
            let result = match &built {
                Ok((oracles, constants)) => {
                    let ialm = cfg.ialm_config(solver, seed);
                    ialm_solve(oracles, constants, &ialm).map(|(_, trace)| trace).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.to_string()),
            };
            if let Err(msg) = &result {
                log::warn!("m={m} trial={} solver={}: {msg}", t + 1, solver.as_str());
            }
            TrialOutcome { m, trial: t + 1, seed, solver, result }
        })
        .collect()
}

fn thread_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()).filter(|&n| n > 0)
}

/// Runs every (m, trial) pair, in parallel when several threads are
/// available. Results come back in (m, trial, solver) order regardless of
/// completion order. Solver failures are recorded, not propagated.
pub fn run_trials(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> =
        cfg.m_list.iter().flat_map(|&m| (0..cfg.trials).map(move |t| (m, t))).collect();
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
    let nested: Vec<Vec<TrialOutcome>> =
        pool.install(|| jobs.par_iter().map(|&(m, t)| run_trial(cfg, m, t)).collect());
    Ok(BenchReport { outcomes: nested.into_iter().flatten().collect() })
}

/// Status cells must not break the column structure.
fn sanitize(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], ";")
}

pub fn write_csv<W: Write>(report: &BenchReport, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for o in &report.outcomes {
        let solver = o.solver.as_str();
        match &o.result {
            Ok(trace) => {
                for r in &trace.records {
                    writeln!(
                        w,
                        "{},{},{},{},{:e},{},{},{:e},{:e},{:e},{:.6},ok",
                        o.m,
                        o.trial,
                        solver,
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
            }
            Err(msg) => writeln!(w, "{},{},{},,,,,,,,,error: {}", o.m, o.trial, solver, sanitize(msg))?,
        }
    }
    Ok(())
}
