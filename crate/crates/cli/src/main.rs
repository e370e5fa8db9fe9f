//! `mbrl-lab`: run the counterexample certificates, evaluate losses on
//! datasets, draw samples and sweep headline quantities into CSV/SVG.
//!
//! Exit codes: 0 on success, 1 when a certificate fails, 2 on bad input.

mod counterexample;
mod eval_loss;
mod inputs;
mod output;
mod sweep;
mod svg;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mbrl_core::mdp_core::occupancy;
use mbrl_core::sampling::{sample_trajectories, sample_tuples};

use crate::output::{rows_to_csv, to_json, Format, Sink};

#[derive(Debug, Parser)]
#[command(name = "mbrl-lab", version, about = "Losses, diagnostics and counterexamples for model-based RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a registered instance and check every certificate.
    Counterexample {
        /// prop1, prop1-variant, prop2 or bisim-degenerate.
        name: String,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        trajectories: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long = "p-b", default_value_t = 0.0)]
        p_b: f64,
        /// Directory for `<name>.json`, `<name>.csv` and the run sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Evaluate a loss for a model on a dataset.
    EvalLoss {
        #[command(flatten)]
        args: eval_loss::EvalArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Tabulate a headline quantity over a grid and plot it.
    Sweep {
        #[arg(value_enum)]
        experiment: sweep::Experiment,
        #[arg(long)]
        from: Option<usize>,
        #[arg(long)]
        to: Option<usize>,
        /// Explicit grid points, overriding --from/--to.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        trajectories: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for `<experiment>.csv`, `.svg` and the run sidecar.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Draw a dataset and write it as JSONL.
    Sample {
        #[command(flatten)]
        model: inputs::ModelArgs,
        /// Trajectories (episodic) or tuples (discounted).
        #[arg(long, visible_alias = "trajectories", default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Some certificate did not hold; maps to exit code 1.
#[derive(Debug, thiserror::Error)]
#[error("{0} certificate(s) failed")]
struct CertificateFailure(usize);

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("MBRL_LAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("MBRL_LAB_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Counterexample {
            name,
            samples,
            trajectories,
            seed,
            horizon,
            p_b,
            out,
            format,
        } => {
            let params = counterexample::Params {
                samples,
                trajectories,
                seed,
                horizon,
                p_b,
            };
            let report = counterexample::run(&name, &params)?;
            let sink = Sink::new(out.as_deref(), format)?;
            sink.emit(&name, "json", &to_json(&report)?)?;
            sink.emit(&name, "csv", &rows_to_csv(&report.headline())?)?;
            sink.sidecar(&name)?;
            let failed: Vec<_> = report.certificates.iter().filter(|c| !c.passed).collect();
            for c in &failed {
                eprintln!(
                    "FAILED {}: expected {}, computed {} (diff {:e}, tolerance {:e})",
                    c.name,
                    c.expected,
                    c.computed,
                    (c.computed - c.expected).abs(),
                    c.tolerance
                );
            }
            if !failed.is_empty() {
                return Err(CertificateFailure(failed.len()).into());
            }
        }
        Command::EvalLoss { args, out, format } => {
            let report = eval_loss::run(&args)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let stem = "eval-loss";
            let sink = Sink::new(out.as_deref(), format)?;
            sink.emit(stem, "json", &to_json(&report)?)?;
            sink.emit(stem, "csv", &rows_to_csv(&report.headline())?)?;
            sink.sidecar(stem)?;
        }
        Command::Sweep {
            experiment,
            from,
            to,
            grid,
            trajectories,
            seed,
            out,
            format,
        } => {
            let points = sweep::grid(experiment, from, to, &grid)?;
            let table = sweep::run(experiment, &points, trajectories, seed)?;
            let stem = experiment.stem();
            let sink = Sink::new(out.as_deref(), format)?;
            sink.emit(stem, "csv", &table.csv()?)?;
            sink.emit(stem, "json", &table.json()?)?;
            if out.is_some() {
                sink.emit(stem, "svg", &table.svg())?;
            }
            sink.sidecar(stem)?;
        }
        Command::Sample {
            model,
            samples,
            seed,
            out,
        } => {
            let resolved = inputs::resolve(&model)?;
            let m = &resolved.model;
            let data = if m.is_episodic() {
                sample_trajectories(m, &resolved.pi_d, samples, seed)?
            } else {
                sample_tuples(m, &occupancy(m, &resolved.pi_d)?, samples, seed)?
            };
            match out {
                Some(path) => {
                    if path.is_dir() {
                        bail!("--out {} is a directory; sample writes a single JSONL file", path.display());
                    }
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    data.write_jsonl(std::io::BufWriter::new(file))?;
                    eprintln!("wrote {}", path.display());
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    data.write_jsonl(&mut lock)?;
                    lock.flush()?;
                }
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let certificate = err.chain().any(|e| {
        e.is::<CertificateFailure>()
            || matches!(
                e.downcast_ref::<mbrl_core::Error>(),
                Some(mbrl_core::Error::CertificateMismatch { .. })
            )
    });
    if certificate {
        1
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
