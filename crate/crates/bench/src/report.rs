use std::fmt::Write as _;
use std::io::Write;

use ialm_core::ialm::Subsolver;

use crate::run::{BenchReport, TrialOutcome};

pub const SUMMARY_HEADER: &str =
    "m,solver,trials,failures,total_grad_evals,total_func_evals,total_time_sec,final_pres,final_dres,final_compl";

/// Aggregate of one (m, solver) group. Final residuals are the worst
/// last-iteration values over the successful trials.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub m: usize,
    pub solver: Subsolver,
    pub trials: usize,
    pub failures: usize,
    pub total_grad_evals: usize,
    pub total_func_evals: usize,
    pub total_time: f64,
    pub final_pres: f64,
    pub final_dres: f64,
    pub final_compl: f64,
}

fn groups(report: &BenchReport) -> Vec<(usize, Subsolver)> {
    let mut out: Vec<(usize, Subsolver)> = Vec::new();
    for o in &report.outcomes {
        if !out.contains(&(o.m, o.solver)) {
            out.push((o.m, o.solver));
        }
    }
    out
}

pub fn summarize(report: &BenchReport) -> Vec<GroupSummary> {
    groups(report)
        .into_iter()
        .map(|(m, solver)| {
            let mut s = GroupSummary {
                m,
                solver,
                trials: 0,
                failures: 0,
                total_grad_evals: 0,
                total_func_evals: 0,
                total_time: 0.0,
                final_pres: 0.0,
                final_dres: 0.0,
                final_compl: 0.0,
            };
            for o in report.group(m, solver) {
                s.trials += 1;
                let Ok(trace) = &o.result else {
                    s.failures += 1;
                    continue;
                };
                s.total_grad_evals += trace.total_grad_evals();
                s.total_func_evals += trace.total_func_evals();
                s.total_time += trace.total_time();
                if let Some(last) = trace.records.last() {
                    s.final_pres = s.final_pres.max(last.pres);
                    s.final_dres = s.final_dres.max(last.dres);
                    s.final_compl = s.final_compl.max(last.compl);
                }
            }
            s
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(summary: &[GroupSummary], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for s in summary {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.3},{:e},{:e},{:e}",
            s.m,
            s.solver.as_str(),
            s.trials,
            s.failures,
            s.total_grad_evals,
            s.total_func_evals,
            s.total_time,
            s.final_pres,
            s.final_dres,
            s.final_compl
        )?;
    }
    Ok(())
}

fn solver_title(s: Subsolver) -> &'static str {
    match s {
        Subsolver::ApgDirect => "APG-based iALM",
        Subsolver::CuttingPlane => "cutting-plane iALM",
    }
}

fn beta_cell(beta: f64) -> String {
    let p = beta.log10();
    if beta > 0.0 && (p - p.round()).abs() < 1e-9 && p.round() >= 2.0 {
        format!("1e{}", p.round())
    } else {
        format!("{beta}")
    }
}

/// One table per `m`, one block of rows per trial, solvers side by side.
pub fn render_markdown(report: &BenchReport) -> String {
    let mut out = String::new();
    let mut ms: Vec<usize> = report.outcomes.iter().map(|o| o.m).collect();
    ms.dedup();
    for m in ms {
        let rows: Vec<&TrialOutcome> = report.outcomes.iter().filter(|o| o.m == m).collect();
        // every trial runs the same solver list
        let solvers: Vec<Subsolver> =
            rows.iter().filter(|o| o.trial == rows[0].trial).map(|o| o.solver).collect();
        let _ = writeln!(out, "## m = {m}\n");
        let mut header = String::from("| out.Iter | beta |");
        let mut rule = String::from("|---|---|");
        for s in &solvers {
            let tag = solver_title(*s);
            let _ = write!(header, " #grad ({tag}) | #func | pres | dres | compl |");
            rule.push_str("---|---|---|---|---|");
        }
        let _ = writeln!(out, "{header}\n{rule}");
        let mut trials: Vec<usize> = rows.iter().map(|o| o.trial).collect();
        trials.dedup();
        for t in trials {
            let per: Vec<&TrialOutcome> = rows.iter().copied().filter(|o| o.trial == t).collect();
            let mut banner = format!("| **trial {t}** | |");
            for o in &per {
                match &o.result {
                    Ok(tr) => {
                        let _ = write!(banner, " total time = {:.1} s | | | | |", tr.total_time());
                    }
                    Err(e) => {
                        let _ = write!(banner, " failed: {} | | | | |", e.replace('|', "/"));
                    }
                }
            }
            let _ = writeln!(out, "{banner}");
            let depth = per.iter().map(|o| o.records().len()).max().unwrap_or(0);
            for k in 0..depth {
                let beta = per.iter().find_map(|o| o.records().get(k)).map(|r| r.beta).unwrap_or(f64::NAN);
                let mut line = format!("| {} | {} |", k + 1, beta_cell(beta));
                for o in &per {
                    match o.records().get(k) {
                        Some(r) => {
                            let _ = write!(
                                line,
                                " {} | {} | {:.2e} | {:.2e} | {:.2e} |",
                                r.grad_evals, r.func_evals, r.pres, r.dres, r.compl
                            );
                        }
                        None => line.push_str(" | | | | |"),
                    }
                }
                let _ = writeln!(out, "{line}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn render_summary_markdown(summary: &[GroupSummary]) -> String {
    let mut out = String::from(
        "## Summary\n\n| m | solver | trials | failures | #grad | #func | time (s) | pres | dres | compl |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    for s in summary {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {:.1} | {:.2e} | {:.2e} | {:.2e} |",
            s.m,
            s.solver.as_str(),
            s.trials,
            s.failures,
            s.total_grad_evals,
            s.total_func_evals,
            s.total_time,
            s.final_pres,
            s.final_dres,
            s.final_compl
        );
    }
    out
}
