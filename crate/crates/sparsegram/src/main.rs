use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sparsegram::pipeline::{self, write_json};
use sparsegram::RunConfig;

#[derive(Parser)]
#[command(name = "sparsegram", version, about = "Sparse node scheduling for controllability-Gramian maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the relaxed problem, round, compare with the oracle when enabled.
    Solve(Common),
    /// Enumerate all binary schedules only.
    Oracle(Common),
    /// Evaluate a schedule CSV against a config.
    Check {
        #[command(flatten)]
        common: Common,
        /// Schedule file as written by `solve`.
        #[arg(long)]
        schedule: PathBuf,
        /// Write the check report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Config files (TOML).
    #[arg(required = true)]
    configs: Vec<PathBuf>,
    /// Override a config value, e.g. `--set grid.N=64`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Override `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Configs processed in parallel.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Print nothing but errors.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn load(&self, path: &Path) -> Result<(RunConfig, PathBuf)> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("solver.seed={seed}"));
        }
        let cfg = RunConfig::load(path, &overrides)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((cfg, base))
    }
}

fn summarize_run(path: &Path, report: &pipeline::RunReport) -> String {
    let mut lines = vec![path.display().to_string()];
    for s in &report.solutions {
        lines.push(format!(
            "  {:<18} J = {:.12e}  converged {}  iterations {}  binary fraction {:.4}",
            s.method.name(),
            s.objective,
            s.converged,
            s.iterations,
            s.discreteness_fraction
        ));
        if let Some(r) = &s.rounded {
            lines.push(format!("  {:<18} J = {:.12e}", "  rounded", r.objective));
        }
    }
    if let Some(o) = &report.oracle {
        lines.push(format!(
            "  {:<18} J = {:.12e}  ({} feasible of {})",
            "oracle", o.best_value, o.num_feasible, o.num_enumerated
        ));
    }
    for e in report.equivalence.iter().flatten() {
        lines.push(format!(
            "  {} gap {:.3e} ({})",
            e.method.name(),
            e.relative_gap,
            if e.equivalent { "equivalent" } else { "not equivalent" }
        ));
    }
    lines.join("\n")
}

fn run_one(command: &Command, path: &Path) -> Result<Option<String>> {
    match command {
        Command::Solve(c) => {
            let (cfg, base) = c.load(path)?;
            let report = pipeline::run(&cfg, &base)?;
            Ok(Some(summarize_run(path, &report)))
        }
        Command::Oracle(c) => {
            let (cfg, base) = c.load(path)?;
            let report = pipeline::run_oracle(&cfg, &base)?;
            Ok(Some(summarize_run(path, &report)))
        }
        Command::Check { common, schedule, out } => {
            let (cfg, _) = common.load(path)?;
            let report = pipeline::check(&cfg, schedule)?;
            match out {
                Some(out) => {
                    write_json(out, &report)?;
                    Ok(Some(format!(
                        "{}: J = {:.12e}, supported {}, PMP gap {:.3e}",
                        path.display(),
                        report.objective,
                        report.supported,
                        report.pmp.maximum_condition_gap
                    )))
                }
                None => Ok(Some(serde_json::to_string_pretty(&report)?)),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match &cli.command {
        Command::Solve(c) | Command::Oracle(c) => c,
        Command::Check { common, .. } => common,
    };
    let configs = &common.configs;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<Option<String>>>>> = Mutex::new((0..configs.len()).map(|_| None).collect());
    let jobs = common.jobs.clamp(1, configs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= configs.len() {
                    break;
                }
                let path = &configs[i];
                let out = run_one(&cli.command, path).with_context(|| format!("{}", path.display()));
                results.lock().expect("no worker panicked")[i] = Some(out);
            });
        }
    });

    let mut failed = false;
    for result in results.into_inner().expect("no worker panicked").into_iter().flatten() {
        match result {
            Ok(Some(text)) if !common.quiet => println!("{text}"),
            Ok(_) => {}
            Err(err) => {
                failed = true;
                eprintln!("error: {err:#}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
