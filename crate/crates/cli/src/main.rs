use std::path::PathBuf;
use std::process::ExitCode;

use bnt::data::{load_csv, Cell};
use bnt::experiment::{emit_report, render_table, run_experiment, summary_csv, ExperimentConfig, ReportFormat};
use bnt::metrics::compute_metrics;
use bnt::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bnt", version, about = "Tree-then-network regression benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Run the repeated train/test protocol described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// Directory for report files; without it the report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Overrides the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score predictions against observed responses (last column of each CSV).
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Number of model inputs, used by adjusted R-squared.
        #[arg(long, default_value_t = 0)]
        d: usize,
    },
}

fn last_column(path: &PathBuf) -> Result<Vec<f64>, Error> {
    let raw = load_csv(path)?;
    let j = raw.n_cols() - 1;
    raw.rows
        .iter()
        .enumerate()
        .map(|(i, r)| match r[j] {
            Cell::Number(v) => Ok(v),
            _ => Err(Error::BadResponse(format!("{}: row {} is not numeric", path.display(), i + 2))),
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v}"))
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            format,
            out,
            jobs,
            seed,
        } => {
            let mut cfg = match ExperimentConfig::from_file(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let rows = match pool.install(|| run_experiment(&cfg)) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let fmt = match format {
                Format::Table => ReportFormat::Table,
                Format::Csv => ReportFormat::Csv,
            };
            match &out {
                Some(dir) => match emit_report(&rows, fmt, dir) {
                    Ok(paths) => {
                        for p in paths {
                            eprintln!("wrote {}", p.display());
                        }
                    }
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(1);
                    }
                },
                None => match fmt {
                    ReportFormat::Table => print!("{}", render_table(&rows)),
                    ReportFormat::Csv => match summary_csv(&rows) {
                        Ok(s) => print!("{s}"),
                        Err(e) => {
                            eprintln!("error: {e}");
                            return ExitCode::from(1);
                        }
                    },
                },
            }
            if rows.iter().any(|r| r.n_failed > 0) {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Metrics { pred, truth, d } => {
            let result = last_column(&pred)
                .and_then(|p| last_column(&truth).map(|t| (p, t)))
                .and_then(|(p, t)| compute_metrics(&t, &p, d));
            match result {
                Ok(m) => {
                    println!("n,mae,mape,rmse,r2,adj_r2");
                    println!(
                        "{},{},{},{},{},{}",
                        m.n,
                        m.mae,
                        fmt_opt(m.mape),
                        m.rmse,
                        fmt_opt(m.r2),
                        fmt_opt(m.adj_r2)
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
