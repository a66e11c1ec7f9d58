use clap::{Parser, Subcommand};
use mi_lab_cli::config::{load_run, load_suite};
use mi_lab_cli::error::{CliError, Result};
use mi_lab_cli::plot::{load_chart, render_svg};
use mi_lab_cli::run::execute;
use mi_lab_cli::sweep::run_suite;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mi-lab",
    version,
    about = "Train and compare variational mutual information estimators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write its CSV log and JSON summary.
    Run {
        config: PathBuf,
        /// Overrides the seed in the file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "MI_LAB_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Run a suite of estimators, variants, λ values and seeds, then report.
    Sweep {
        suite: PathBuf,
        /// Parallel runs; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, env = "MI_LAB_OUT", default_value = "out")]
        out: PathBuf,
    },
    /// Draw columns of one or more CSV logs as an SVG line chart.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Comma-separated column names.
        #[arg(long, value_delimiter = ',', required = true)]
        cols: Vec<String>,
        /// Overlay an exponential moving average with this weight.
        #[arg(long)]
        ema: Option<f64>,
        /// Output file; defaults to `<first csv stem>.svg` in `MI_LAB_OUT`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for a run that finished but recorded a divergence event.
const DIVERGED: u8 = 3;

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let mut rc = load_run(&config)?;
            if let Some(s) = seed {
                rc.train.seed = s;
            }
            let stem = config
                .file_stem()
                .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
            let o = execute(&rc, &out, &format!("{stem}-s{}", rc.train.seed))?;
            println!("{}", o.csv.display());
            println!("{}", o.json.display());
            match o.summary.converged_estimate {
                Some(e) => println!("estimate {e:.6} (true {:.6})", o.summary.true_mi),
                None => println!("estimate n/a (true {:.6})", o.summary.true_mi),
            }
            if let Some(a) = o.summary.accuracy {
                println!("accuracy {a:.4}");
            }
            if let Some(at) = o.summary.divergence_iteration {
                eprintln!("diverged at iteration {at}");
                return Ok(DIVERGED);
            }
            Ok(0)
        }
        Command::Sweep { suite, jobs, out } => {
            let suite = load_suite(&suite)?;
            let jobs =
                jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let o = run_suite(&suite, jobs, &out)?;
            print!(
                "{}",
                std::fs::read_to_string(&o.text).map_err(|e| CliError::io(&o.text, e))?
            );
            println!("{}", o.csv.display());
            Ok(0)
        }
        Command::Plot {
            csv,
            cols,
            ema,
            out,
        } => {
            let chart = load_chart(&csv, &cols, ema)?;
            let path = match out {
                Some(p) => p,
                None => {
                    let dir = PathBuf::from(
                        std::env::var_os("MI_LAB_OUT").unwrap_or_else(|| "out".into()),
                    );
                    let stem = csv[0]
                        .file_stem()
                        .map_or_else(|| "plot".into(), |s| s.to_os_string());
                    dir.join(stem).with_extension("svg")
                }
            };
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            }
            std::fs::write(&path, render_svg(&chart)).map_err(|e| CliError::io(&path, e))?;
            println!("{}", path.display());
            Ok(0)
        }
    }
}
