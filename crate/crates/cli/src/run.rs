use crate::error::{CliError, Result};
use mi_lab::trainer::{train, RunConfig, RunSummary};
use std::fs;
use std::path::{Path, PathBuf};

/// Where one run's outputs went.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub csv: PathBuf,
    pub json: PathBuf,
}

/// File stem for a run inside a sweep.
pub fn sweep_stem(config: &RunConfig, regularized: bool) -> String {
    let name = config.estimator.name();
    if regularized {
        format!("{name}-re-l{}-s{}", config.lambda(), config.train.seed)
    } else {
        format!("{name}-s{}", config.train.seed)
    }
}

/// Trains `config` and writes `<stem>.csv` and `<stem>.json` under `out_dir`.
pub fn execute(config: &RunConfig, out_dir: &Path, stem: &str) -> Result<RunOutput> {
    let outcome = train(config)?;
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let csv = out_dir.join(format!("{stem}.csv"));
    let json = out_dir.join(format!("{stem}.json"));
    let file = fs::File::create(&csv).map_err(|e| CliError::io(&csv, e))?;
    outcome.log.write_csv(std::io::BufWriter::new(file))?;
    let summary = RunSummary::new(config, &outcome.log);
    fs::write(&json, summary.to_json()? + "\n").map_err(|e| CliError::io(&json, e))?;
    Ok(RunOutput { summary, csv, json })
}
