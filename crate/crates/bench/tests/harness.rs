use std::path::PathBuf;
use std::process::Command;

use ialm_bench::config::{bench_instance, BenchConfig};
use ialm_bench::report::SUMMARY_HEADER;
use ialm_bench::run::write_csv;
use ialm_bench::{run_trials, write_report, OutputFormat, CSV_HEADER};
use ialm_core::ialm::{ialm_solve, Subsolver};
use ialm_core::problem::CountingOracles;
use ialm_core::qcqp::build_oracles;

fn tiny_config() -> BenchConfig {
    BenchConfig { n: 8, m_list: vec![1, 2], trials: 1, base_seed: 7, ..BenchConfig::default() }
}

fn csv_of(cfg: &BenchConfig) -> String {
    let report = run_trials(cfg).unwrap();
    assert!(!report.any_failed());
    let mut buf = Vec::new();
    write_csv(&report, &mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

/// Drops the wall-time column, which is the only nondeterministic field.
fn without_time(csv: &str) -> Vec<Vec<String>> {
    let time_col = CSV_HEADER.split(',').position(|c| c == "time_sec").unwrap();
    csv.lines()
        .map(|l| l.split(',').enumerate().filter(|&(i, _)| i != time_col).map(|(_, c)| c.to_string()).collect())
        .collect()
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/tiny.csv")
}

#[test]
fn csv_headers_are_pinned() {
    assert_eq!(CSV_HEADER, "m,trial,solver,outer_iter,beta,grad_evals,func_evals,pres,dres,compl,time_sec,status");
    assert_eq!(
        SUMMARY_HEADER,
        "m,solver,trials,failures,total_grad_evals,total_func_evals,total_time_sec,final_pres,final_dres,final_compl"
    );
}

/// Set `UPDATE_GOLDEN=1` to regenerate the golden file.
#[test]
fn tiny_benchmark_matches_golden_file() {
    let csv = csv_of(&tiny_config());
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(golden_path().parent().unwrap()).unwrap();
        std::fs::write(golden_path(), &csv).unwrap();
    }
    let golden = std::fs::read_to_string(golden_path()).unwrap();
    assert_eq!(csv.lines().next(), golden.lines().next());
    let (got, want) = (without_time(&csv), without_time(&golden));
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(&want).skip(1) {
        assert_eq!(g.len(), w.len());
        for (a, b) in g.iter().zip(w) {
            match (a.parse::<f64>(), b.parse::<f64>()) {
                // counts compare exactly, residuals to rounding
                (Ok(x), Ok(y)) if a.contains('e') => {
                    assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-12), "{g:?} vs {w:?}")
                }
                _ => assert_eq!(a, b, "{g:?} vs {w:?}"),
            }
        }
    }
}

#[test]
fn rerun_is_identical_except_wall_time() {
    let cfg = BenchConfig { n: 20, m_list: vec![1], trials: 1, base_seed: 7, ..BenchConfig::default() };
    assert_eq!(without_time(&csv_of(&cfg)), without_time(&csv_of(&cfg)));
}

#[test]
fn rows_follow_m_trial_solver_order() {
    let cfg = BenchConfig { trials: 2, ..tiny_config() };
    let csv = csv_of(&cfg);
    let keys: Vec<(usize, usize, String, usize)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].parse().unwrap(), c[1].parse().unwrap(), c[2].to_string(), c[3].parse().unwrap())
        })
        .collect();
    let mut expected = Vec::new();
    for m in [1, 2] {
        for t in [1, 2] {
            for s in ["apg", "cut"] {
                for k in 1..=5 {
                    expected.push((m, t, s.to_string(), k));
                }
            }
        }
    }
    assert_eq!(keys, expected);
}

#[test]
fn markdown_has_one_table_per_m() {
    let report = run_trials(&tiny_config()).unwrap();
    let mut buf = Vec::new();
    write_report(&report, OutputFormat::Markdown, &mut buf).unwrap();
    let md = String::from_utf8(buf).unwrap();
    assert!(md.contains("## m = 1") && md.contains("## m = 2") && md.contains("## Summary"));
    assert_eq!(md.matches("**trial 1**").count(), 2);
}

/// Every `grad psi` evaluation calls `f_grad` exactly once; each outer
/// iteration adds one more for the dual residual.
#[test]
fn reported_gradient_counts_match_counting_oracles() {
    let inst = bench_instance(10, 2, 3).unwrap();
    let (oracles, constants) = build_oracles(&inst).unwrap();
    let cfg = BenchConfig::default();
    for solver in [Subsolver::ApgDirect, Subsolver::CuttingPlane] {
        let counting = CountingOracles::new(&oracles);
        let (_, trace) = ialm_solve(&counting, &constants, &cfg.ialm_config(solver, 3)).unwrap();
        let counts = counting.counts();
        assert_eq!(counts.f_grad, trace.total_grad_evals() + trace.records.len(), "{}", solver.as_str());
        if solver == Subsolver::CuttingPlane {
            assert_eq!(trace.total_func_evals(), 0);
            assert_eq!(counts.f_value, 0);
        } else {
            assert_eq!(counts.f_value, trace.total_func_evals());
        }
    }
}

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ialm-bench"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ialm-bench-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn cli_config_errors_exit_2() {
    for args in [&["--trials", "0"][..], &["--m", "0"], &["--eps", "-1"], &["--solver", "nope"]] {
        let out = cli().args(args).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
    let out = cli().args(["--n", "6", "--trials", "1", "--out", "/nonexistent-dir/x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn cli_writes_csv_and_summary() {
    let out = scratch("run.csv");
    let status = cli()
        .args(["--n", "6", "--m", "1", "--m", "2", "--trials", "1", "--seed", "3", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 5);
    let summary = std::fs::read_to_string(ialm_bench::summary_path(&out)).unwrap();
    assert_eq!(summary.lines().next(), Some(SUMMARY_HEADER));
    assert_eq!(summary.lines().count(), 1 + 4);
}

#[test]
fn cli_markdown_output() {
    let out = scratch("run.md");
    let status =
        cli().args(["--n", "6", "--trials", "1", "--solver", "cut", "--format", "markdown", "--out"]).arg(&out).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let md = std::fs::read_to_string(&out).unwrap();
    assert!(md.contains("cutting-plane iALM") && !md.contains("APG-based iALM"));
}

/// Understating the curvature of the rate-bound instances must trip the
/// rate check and nothing else.
#[test]
fn halved_curvature_fails_only_the_rate_check() {
    use ialm_bench::verify::{verify_with, Faults, Level};
    let results = verify_with(Level::Fast, Faults { halve_mu: true }, &[1, 2, 3, 4, 5, 6, 7]);
    assert_eq!(results.len(), 7);
    for r in &results {
        assert_eq!(r.passed, r.id != 1, "{r}");
    }
}
