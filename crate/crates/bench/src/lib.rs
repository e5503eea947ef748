//! Benchmark harness for the iALM solvers on random QCQPs, plus the
//! verification suite that checks the solvers' guarantees numerically.

pub mod config;
pub mod report;
pub mod run;
pub mod verify;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use config::{BenchConfig, BenchInit, OutputFormat};
pub use run::{run_trials, BenchReport, TrialOutcome, CSV_HEADER};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError {
    let path = path.to_path_buf();
    move |source| BenchError::Io { path, source }
}

fn create(path: &Path) -> Result<BufWriter<File>, BenchError> {
    File::create(path).map(BufWriter::new).map_err(io(path))
}

/// Path of the per-group summary written next to a CSV report.
pub fn summary_path(out: &Path) -> PathBuf {
    out.with_extension("summary.csv")
}

/// Writes the report in the configured format: the per-iteration CSV plus
/// a summary CSV next to it, or one markdown file with the tables and the
/// summary.
pub fn write_report<W: Write>(report: &BenchReport, format: OutputFormat, mut w: W) -> std::io::Result<()> {
    let summary = report::summarize(report);
    match format {
        OutputFormat::Csv => run::write_csv(report, &mut w)?,
        OutputFormat::Markdown => {
            write!(w, "{}", report::render_markdown(report))?;
            write!(w, "{}", report::render_summary_markdown(&summary))?;
        }
    }
    w.flush()
}

/// Runs the benchmark and writes its reports. Output files are opened
/// before any solver runs, so an unwritable path fails fast.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    cfg.validate()?;
    let files = match (&cfg.output_path, cfg.format) {
        (None, _) => None,
        (Some(p), OutputFormat::Csv) => Some((p.clone(), create(p)?, Some((summary_path(p), create(&summary_path(p))?)))),
        (Some(p), OutputFormat::Markdown) => Some((p.clone(), create(p)?, None)),
    };
    let report = run_trials(cfg)?;
    match files {
        None => write_report(&report, cfg.format, std::io::stdout().lock()).map_err(io(Path::new("<stdout>")))?,
        Some((path, main, summary)) => {
            write_report(&report, cfg.format, main).map_err(io(&path))?;
            if let Some((spath, mut sw)) = summary {
                report::write_summary_csv(&report::summarize(&report), &mut sw)
                    .and_then(|_| sw.flush())
                    .map_err(io(&spath))?;
            }
        }
    }
    Ok(report)
}
