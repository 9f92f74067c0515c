//! Command-line front end: simulate a scene, check its gradients, benchmark
//! the adjoint solvers, or identify parameters. Every command accepts a TOML
//! config path or the name of a bundled scene.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use diffcloth::app::{run_benchmark, run_gradcheck, run_optimize, run_simulate, scenes, BenchOptions, Method, SceneConfig};

#[derive(Parser)]
#[command(name = "diffcloth", version, about = "Differentiable cloth simulation with frictional contact")]
struct Cli {
    /// Directory for frames, CSV reports and the run manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the forward simulation and write frames and diagnostics.
    Simulate {
        /// Config file or bundled scene name.
        config: String,
    },
    /// Compare adjoint gradients against central finite differences.
    Gradcheck {
        config: String,
        /// Relative finite-difference step, overriding the config.
        #[arg(long)]
        fd_step: Option<f64>,
    },
    /// Time the Jacobi adjoint solver against the direct solver.
    Benchmark {
        config: String,
        /// Grid resolutions, overriding the config.
        #[arg(long, value_delimiter = ',')]
        resolutions: Option<Vec<usize>>,
        /// Adjoint tolerances, overriding the config.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Recover scene parameters from a synthetic target trajectory.
    Optimize {
        config: String,
        /// Name of an `[optimize.<task>]` table in the config.
        #[arg(long)]
        task: String,
        /// `lbfgsb` or `es`.
        #[arg(long, default_value = "lbfgsb")]
        method: Method,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the bundled scenes.
    Scenes,
}

fn load(arg: &str) -> Result<SceneConfig> {
    scenes::resolve(arg).with_context(|| format!("loading `{arg}`"))
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Simulate { config } => {
            let cfg = load(&config)?;
            let r = run_simulate(&cfg, out)?;
            let last = r.rows.last().context("empty simulation")?;
            println!("{}: {} steps, final area ratio {:.4}, kinetic energy {:.3e} J", cfg.name, cfg.steps, last.area_ratio, last.kinetic_energy_j);
            println!("contact-law violations: {} (max {:.2e}); unconverged steps: {}", r.law_violations, r.max_law_violation, r.unconverged_steps);
            if let Some((lo, hi)) = r.settled_area_range {
                println!("settled area ratio in [{lo:.4}, {hi:.4}], within band: {}", r.area_band_ok);
            }
            Ok(r.law_violations == 0)
        }
        Command::Gradcheck { config, fd_step } => {
            let cfg = load(&config)?;
            let r = run_gradcheck(&cfg, fd_step, out)?;
            r.write_csv(std::io::stdout().lock())?;
            println!("descent check: {}", if r.descent_ok { "ok" } else { "FAILED" });
            println!("gradcheck {}", if r.passed { "passed" } else { "FAILED" });
            Ok(r.passed)
        }
        Command::Benchmark { config, resolutions, epsilons } => {
            let cfg = load(&config)?;
            let mut opts = cfg.benchmark.as_ref().map(BenchOptions::from).context("config has no [benchmark] table")?;
            if let Some(r) = resolutions {
                opts.resolutions = r;
            }
            if let Some(e) = epsilons {
                opts.epsilons = e;
            }
            let r = run_benchmark(&cfg, &opts, out)?;
            r.write_csv(std::io::stdout().lock())?;
            Ok(true)
        }
        Command::Optimize { config, task, method, seed } => {
            let cfg = load(&config)?;
            let r = run_optimize(&cfg, &task, method, seed, out)?;
            r.write_summary(std::io::stdout().lock())?;
            println!(
                "{}: loss {:.3e} of initial after {} forward steps, {} evaluations",
                method.name(),
                r.result.loss,
                r.forward_steps,
                r.result.evaluations
            );
            Ok(true)
        }
        Command::Scenes => {
            for name in scenes::names() {
                println!("{name}");
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
