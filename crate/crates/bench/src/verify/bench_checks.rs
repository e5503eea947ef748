use ialm_core::ialm::Subsolver;

use super::{ratio, Check, Level};
use crate::config::{BenchConfig, BenchInit};
use crate::run::{run_trials, BenchReport};

/// Benchmark batches behind criteria 8-10, run on first use.
#[derive(Debug)]
pub struct BenchRuns {
    level: Level,
    table: Option<Result<BenchReport, String>>,
    scaling: Option<Result<BenchReport, String>>,
}

const EPS: f64 = 1e-4;

impl BenchRuns {
    pub fn new(level: Level) -> Self {
        Self { level, table: None, scaling: None }
    }

    /// m = 1, both solvers. Trials start at seed 1: the seed-0 instance has
    /// an inactive constraint, which makes the subproblems independent of
    /// beta and the growth ratio meaningless.
    pub fn table_config(level: Level) -> BenchConfig {
        let (n, trials) = match level {
            Level::Fast => (200, 3),
            Level::Full => (1000, 5),
        };
        BenchConfig { n, m_list: vec![1], trials, base_seed: 1, init: BenchInit::Random, ..BenchConfig::default() }
    }

    /// Cutting-plane solver only, m = 1 against m = 5 at matched n.
    pub fn scaling_config(level: Level) -> BenchConfig {
        let (n, m_list, trials) = match level {
            Level::Fast => (100, vec![1, 5], 2),
            Level::Full => (1000, vec![1, 2, 5], 5),
        };
        BenchConfig {
            n,
            m_list,
            trials,
            base_seed: 1,
            solvers: vec![Subsolver::CuttingPlane],
            ..BenchConfig::default()
        }
    }

    fn table(&mut self) -> Result<&BenchReport, String> {
        let level = self.level;
        self.table
            .get_or_insert_with(|| run_trials(&Self::table_config(level)).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn scaling(&mut self) -> Result<&BenchReport, String> {
        let level = self.level;
        self.scaling
            .get_or_insert_with(|| run_trials(&Self::scaling_config(level)).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(Clone::clone)
    }

    /// APG-based solver: consecutive per-subproblem gradient counts grow by
    /// a factor in [2, 4.5]. Cutting-plane solver: counts over outer
    /// iterations 2-5 stay within a factor 3.
    pub fn ratios(&mut self) -> Check {
        let report = match self.table() {
            Ok(r) => r,
            Err(e) => return (false, e),
        };
        let mut apg_ratios = Vec::new();
        let mut cut_spread = Vec::new();
        for o in &report.outcomes {
            let Ok(trace) = &o.result else {
                return (false, format!("trial {} {}: failed", o.trial, o.solver.as_str()));
            };
            let grads: Vec<f64> = trace.records.iter().map(|r| r.grad_evals as f64).collect();
            if grads.len() < 5 {
                return (false, format!("trial {}: only {} outer iterations", o.trial, grads.len()));
            }
            match o.solver {
                Subsolver::ApgDirect => {
                    for w in grads.windows(2) {
                        apg_ratios.push((o.trial, ratio(w[1], w[0])));
                    }
                }
                Subsolver::CuttingPlane => {
                    let tail = &grads[1..5];
                    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
                    cut_spread.push((o.trial, ratio(hi, lo)));
                }
            }
        }
        let fmt = |v: &[(usize, f64)]| v.iter().map(|(_, r)| format!("{r:.2}")).collect::<Vec<_>>().join(" ");
        let apg_ok = !apg_ratios.is_empty() && apg_ratios.iter().all(|&(_, r)| (2.0..=4.5).contains(&r));
        let cut_ok = !cut_spread.is_empty() && cut_spread.iter().all(|&(_, r)| r < 3.0);
        (
            apg_ok && cut_ok,
            format!("APG growth ratios [{}] (need 2..4.5); cutting-plane max/min over iters 2-5 [{}] (need < 3)", fmt(&apg_ratios), fmt(&cut_spread)),
        )
    }

    /// Mean per-subproblem gradient count of the cutting-plane solver at
    /// m = 5 is at least 4x that at m = 1.
    pub fn m_scaling(&mut self) -> Check {
        let report = match self.scaling() {
            Ok(r) => r,
            Err(e) => return (false, e),
        };
        let mean = |m: usize| -> Option<f64> {
            let mut total = 0.0;
            let mut count = 0usize;
            for o in report.group(m, Subsolver::CuttingPlane) {
                for r in o.result.as_ref().ok()?.records.iter() {
                    total += r.grad_evals as f64;
                    count += 1;
                }
            }
            (count > 0).then(|| total / count as f64)
        };
        match (mean(1), mean(5)) {
            (Some(a), Some(b)) => {
                let f = ratio(b, a);
                (f >= 4.0, format!("mean gradients per subproblem: m=1 {a:.0}, m=5 {b:.0}; factor {f:.1} (need >= 4)"))
            }
            _ => (false, "a scaling run failed".into()),
        }
    }

    /// Every run of criteria 8 and 9 ends eps-KKT at eps = 1e-4.
    pub fn final_residuals(&mut self) -> Check {
        let mut worst = 0.0f64;
        let mut runs = 0;
        for which in 0..2 {
            let report = match if which == 0 { self.table() } else { self.scaling() } {
                Ok(r) => r,
                Err(e) => return (false, e),
            };
            for o in &report.outcomes {
                let last = match &o.result {
                    Ok(t) => t.records.last(),
                    Err(e) => return (false, format!("m={} trial {} {}: {e}", o.m, o.trial, o.solver.as_str())),
                };
                let Some(last) = last else {
                    return (false, "empty trace".into());
                };
                runs += 1;
                let r = last.residual();
                worst = worst.max(r.max());
                if r.max() > EPS {
                    return (
                        false,
                        format!(
                            "m={} trial {} {}: pres {:.2e}, dres {:.2e}, compl {:.2e}",
                            o.m,
                            o.trial,
                            o.solver.as_str(),
                            r.pres,
                            r.dres,
                            r.compl
                        ),
                    );
                }
            }
        }
        (true, format!("{runs} runs; worst final residual {worst:.2e}"))
    }
}
