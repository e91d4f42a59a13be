//! Command-line front end: `generate`, `run` and `bench`.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bench::{evaluate, generate, run_suite, Dataset, CSV_HEADER};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::pipeline::{run_method, Method};

#[derive(Debug, Parser)]
#[command(name = "reliprop", version, about = "Reliable label propagation on noisy affinity graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Path to a `key = value` config file.
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset bundle.
    Generate(Common),
    /// Run one method on a dataset bundle.
    Run {
        #[command(flatten)]
        common: Common,
        /// Override the config method.
        #[arg(long)]
        method: Option<Method>,
    },
    /// Run every method over noise ratios and seeds, writing a results CSV.
    Bench(Common),
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn write(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

pub fn cmd_generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let dataset = generate(&cfg.synth_spec())?;
    let dir = &cfg.out_dir;
    let mut paths = dataset.write_bundle(dir)?.to_vec();
    let echo = dir.join("config.echo");
    write(&echo, &cfg.echo())?;
    paths.push(echo);
    Ok(paths)
}

/// Summary line plus the files written.
pub fn cmd_run(cfg: &RunConfig, method: Method) -> Result<(String, Vec<PathBuf>)> {
    let dataset = Dataset::read_bundle(&cfg.data_dir())?;
    let out = run_method(&dataset, method, &cfg.pipeline, cfg.seed)?;
    let report = evaluate(&out.decision, &dataset)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    let mut emit = |name: String, body: String| -> Result<()> {
        let p = dir.join(name);
        write(&p, &body)?;
        files.push(p);
        Ok(())
    };
    emit(format!("labels_{method}.txt"), out.decision.to_labels_text())?;
    emit(
        format!("metrics_{method}.csv"),
        format!(
            "{CSV_HEADER}\n{}\n",
            report.csv_row("bundle", &method.to_string(), cfg.seed)
        ),
    )?;
    if out.propagation.is_some() {
        let log: String = out.log().iter().map(|r| format!("{r}\n")).collect();
        emit(format!("iterations_{method}.log"), log)?;
        emit(format!("confidence_{method}.txt"), out.confidence_dump())?;
    }
    emit(format!("config_{method}.echo"), cfg.echo())?;
    let summary = format!(
        "method={method} seed={} threshold={:.6} {report}",
        cfg.seed, out.decision.threshold
    );
    Ok((summary, files))
}

/// Writes `bench.csv`; fails only if every cell failed.
pub fn cmd_bench(cfg: &RunConfig) -> Result<PathBuf> {
    let result = run_suite(
        &cfg.suite_specs(),
        &cfg.methods,
        &cfg.seeds(),
        &cfg.pipeline,
        cfg.record_runtime,
    )?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("bench.csv");
    write(&path, &result.to_csv())?;
    write(&cfg.out_dir.join("bench.echo"), &cfg.echo())?;
    for c in &result.cells {
        if let Err(e) = &c.result {
            eprintln!("cell {},{},{} failed: {e}", c.spec, c.method, c.seed);
        }
    }
    if result.succeeded() == 0 {
        let first = result.cells.iter().find_map(|c| c.result.as_ref().err());
        let msg = first.map_or("no cells".to_string(), Clone::clone);
        return Err(if msg.starts_with("numerical failure") {
            Error::Numerical(msg)
        } else {
            Error::Data(format!("every bench cell failed; first error: {msg}"))
        });
    }
    Ok(path)
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Generate(common) => load(common).and_then(|cfg| {
            with_pool(cfg.workers, || cmd_generate(&cfg)).map(|paths| {
                for p in paths {
                    println!("{}", p.display());
                }
            })
        }),
        Command::Run { common, method } => load(common).and_then(|cfg| {
            let m = method.unwrap_or(cfg.method);
            with_pool(cfg.workers, || cmd_run(&cfg, m)).map(|(summary, _)| println!("{summary}"))
        }),
        Command::Bench(common) => load(common).and_then(|cfg| {
            with_pool(cfg.workers, || cmd_bench(&cfg)).map(|p| println!("{}", p.display()))
        }),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
