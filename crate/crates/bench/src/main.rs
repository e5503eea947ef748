use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ialm_bench::verify::{verify_suite, Level};
use ialm_bench::{run_benchmark, BenchConfig, BenchInit, OutputFormat};
use ialm_core::ialm::Subsolver;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SolverArg {
    Apg,
    Cut,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Warm,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LevelArg {
    Fast,
    Full,
}

/// Benchmark the APG-based and cutting-plane iALM on random QCQPs.
///
/// The worker thread count is read from IALM_BENCH_THREADS.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// Problem dimension.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Number of constraints; repeat for several groups.
    #[arg(long = "m", default_values_t = [1])]
    m: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Seed of the first trial; trial t uses seed + t.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
    #[arg(long, default_value_t = 1.0)]
    beta0: f64,
    #[arg(long, default_value_t = 10.0)]
    sigma: f64,
    /// Outer iterations per run.
    #[arg(long, default_value_t = 5)]
    outer: usize,
    #[arg(long, value_enum, default_value_t = SolverArg::Both)]
    solver: SolverArg,
    #[arg(long, value_enum, default_value_t = InitArg::Random)]
    init: InitArg,
    /// Output file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    format: FormatArg,
    /// Run the verification suite instead of a benchmark.
    #[arg(long, value_enum)]
    verify: Option<LevelArg>,
}

impl Cli {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            n: self.n,
            m_list: self.m.clone(),
            trials: self.trials,
            base_seed: self.seed,
            eps: self.eps,
            beta0: self.beta0,
            sigma: self.sigma,
            max_outer: self.outer,
            solvers: match self.solver {
                SolverArg::Apg => vec![Subsolver::ApgDirect],
                SolverArg::Cut => vec![Subsolver::CuttingPlane],
                SolverArg::Both => vec![Subsolver::ApgDirect, Subsolver::CuttingPlane],
            },
            init: match self.init {
                InitArg::Random => BenchInit::Random,
                InitArg::Warm => BenchInit::Warm,
            },
            output_path: self.out.clone(),
            format: match self.format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Markdown => OutputFormat::Markdown,
            },
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };

    if let Some(level) = cli.verify {
        let level = match level {
            LevelArg::Fast => Level::Fast,
            LevelArg::Full => Level::Full,
        };
        let results = verify_suite(level);
        for r in &results {
            println!("{r}");
        }
        return if results.iter().all(|r| r.passed) { ExitCode::SUCCESS } else { ExitCode::from(1) };
    }

    match run_benchmark(&cli.config()) {
        Ok(report) if report.any_failed() => ExitCode::from(1),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
