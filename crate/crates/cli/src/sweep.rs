use crate::config::{SuiteFile, Variant};
use crate::error::{CliError, Result};
use crate::report::{build_report, to_csv, to_text, ReportRow};
use crate::run::{execute, sweep_stem, RunOutput};
use rayon::prelude::*;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub struct SweepOutput {
    pub runs: Vec<(Variant, RunOutput)>,
    pub rows: Vec<ReportRow>,
    pub text: PathBuf,
    pub csv: PathBuf,
}

/// Runs every expanded config on `jobs` threads, then writes
/// `report.txt` and `report.csv` under `out_dir` and the run logs under
/// `out_dir/runs`.
pub fn run_suite(suite: &SuiteFile, jobs: usize, out_dir: &Path) -> Result<SweepOutput> {
    let expanded = suite.expand()?;
    let runs_dir = out_dir.join("runs");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    let runs: Vec<(Variant, RunOutput)> = pool.install(|| {
        expanded
            .par_iter()
            .map(|r| {
                let stem = sweep_stem(&r.config, r.variant == Variant::Regularized);
                execute(&r.config, &runs_dir, &stem).map(|o| (r.variant, o))
            })
            .collect::<Result<_>>()
    })?;

    let summaries: Vec<_> = runs.iter().map(|(v, o)| (*v, o.summary.clone())).collect();
    let rows = build_report(&summaries);
    let text = out_dir.join("report.txt");
    let csv = out_dir.join("report.csv");
    fs::write(&text, to_text(&rows)).map_err(|e| CliError::io(&text, e))?;
    fs::write(&csv, to_csv(&rows)?).map_err(|e| CliError::io(&csv, e))?;
    Ok(SweepOutput {
        runs,
        rows,
        text,
        csv,
    })
}
