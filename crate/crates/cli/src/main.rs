use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use retrosmc_core::forward::ForwardError;
use retrosmc_core::pipeline::{
    bench_context, conformance_corpus, config_from_value, execute_run, export_vectors, load_bench_config, load_run_config, run_bench,
    serve_check, write_bench_csv, write_benchmark, BenchConfig, PipelineError,
};
use retrosmc_core::wire::{Endpoint, RemoteModel, SERVER_ENV};

#[derive(Parser)]
#[command(name = "retrosmc", version, about = "Surrogate-assisted SMC search for retrosynthesis routes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search routes for one target and write a run directory.
    Run {
        /// JSON run configuration.
        config: PathBuf,
        /// Override a top-level config key, e.g. `--set seed=3`.
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Run the rediscovery benchmark and print one CSV row per run plus the mean.
    Bench {
        /// JSON bench configuration; defaults apply when absent.
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_override)]
        overrides: Vec<(String, String)>,
    },
    /// Write key, reactant count vector, cluster id and γ for every route of a run.
    ExportVectors {
        run_dir: PathBuf,
        /// Output CSV; standard output when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Write a seeded synthetic catalog, template library and ground truths.
    GenBenchmark {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short)]
        output: PathBuf,
    },
    /// Check a model server against the built-in toy chemistry.
    ServeCheck {
        /// `host:port` or `stdio:<command>`; falls back to the environment.
        #[arg(long)]
        server: Option<String>,
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        timeout_secs: u64,
    },
}

fn parse_override(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.to_string())),
        _ => Err(format!("expected KEY=VALUE, got {s:?}")),
    }
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| PipelineError::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, overrides } => {
            let cfg = load_run_config(&config, &overrides)?;
            let summary = execute_run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Bench { config, overrides } => {
            let cfg: BenchConfig = match &config {
                Some(p) => load_bench_config(p, &overrides)?,
                None => config_from_value(json!({}), &overrides)?,
            };
            let ctx = bench_context(&cfg)?;
            let rows = run_bench(&ctx, &cfg)?;
            let mut w = writer(cfg.output.as_deref())?;
            write_bench_csv(&rows, &mut w)?;
            w.flush()?;
        }
        Command::ExportVectors { run_dir, output } => {
            let mut w = writer(output.as_deref())?;
            let n = export_vectors(&run_dir, &mut w)?;
            w.flush()?;
            log::info!("exported {n} routes");
        }
        Command::GenBenchmark { seed, output } => {
            let b = retrosmc_core::synth::generate(seed, Default::default()).map_err(|e| PipelineError::Config(e.to_string()))?;
            write_benchmark(&output, &b)?;
            println!(
                "{}",
                json!({"output": output, "catalog": b.catalog.len(), "templates": b.library.len(), "truths": b.truths.len(), "corpus": b.corpus.len()})
            );
        }
        Command::ServeCheck { server, cases, seed, timeout_secs } => {
            let endpoint = match server {
                Some(s) => Endpoint::parse(&s).map_err(|e| PipelineError::Config(e.to_string()))?,
                None => match Endpoint::from_env() {
                    Some(e) => e.map_err(|e| PipelineError::Config(e.to_string()))?,
                    None => return Err(PipelineError::Config(format!("no server given and {SERVER_ENV} is unset")).into()),
                },
            };
            let (library, sets) = conformance_corpus(seed, cases)?;
            let remote = RemoteModel::connect(endpoint, 0, Duration::from_secs(timeout_secs))?;
            let report = serve_check(&remote, &library, &sets)?;
            for m in &report.mismatches {
                eprintln!("mismatch: {m}");
            }
            println!(
                "{}",
                json!({"cases": report.cases, "mismatches": report.mismatches.len(), "malformed_line_handled": report.malformed_ok})
            );
            if !report.mismatches.is_empty() || !report.malformed_ok {
                bail!(PipelineError::Protocol(format!("{} of {} cases differ", report.mismatches.len(), report.cases)));
            }
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    if let Some(f) = err.downcast_ref::<ForwardError>() {
        return if matches!(f, ForwardError::Transport(_) | ForwardError::Protocol(_)) { 4 } else { 1 };
    }
    if err.downcast_ref::<io::Error>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
