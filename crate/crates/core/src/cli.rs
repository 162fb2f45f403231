//! The `ddbranch` command line.
//!
//! Exit codes: 0 on success, 2 for configuration or usage errors, 3 for
//! failures while running.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_config_with, RunConfig};
use crate::conjugacy::ConjugacyEvaluator;
use crate::exec::{try_map_indexed, Execution};
use crate::experiments::{normalized_error_histogram, rate_experiment, ExperimentSettings, Scope};
use crate::offspring::uniform_grid;
use crate::output;
use crate::simulate::{horizon, simulate_coupled_with, stream_key, SimOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "ddbranch", version, about = "Density-dependent branching process experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `simulate.seed` and `experiment.master_seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory. Without it `conjugacy` and `simulate` print CSV to stdout.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Per-key override, e.g. `--set model.rho=1.5`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the offspring family against the standing assumptions.
    Validate {
        /// Emit CSV instead of aligned text.
        #[arg(long)]
        csv: bool,
    },
    /// Tabulate H, H', H'' and the semiconjugacy residual.
    Conjugacy,
    /// Simulate coupled (Z, Y) paths.
    Simulate,
    /// Run the error-rate experiment over the K grid.
    Experiment {
        /// Run replicates on one thread.
        #[arg(long)]
        sequential: bool,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            EXIT_RUNTIME
        }
    }
}

/// Config file plus `--seed`, `--out` and `--set`, in that order of precedence
/// (later wins).
pub fn load_config(global: &GlobalArgs) -> Result<RunConfig, String> {
    let text = match &global.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?,
        None => String::new(),
    };
    let mut sets = Vec::new();
    if let Some(seed) = global.seed {
        sets.push(format!("simulate.seed={seed}"));
        sets.push(format!("experiment.master_seed={seed}"));
    }
    if let Some(out) = &global.out {
        sets.push(format!("experiment.output_dir={}", toml_string(&out.to_string_lossy())));
    }
    sets.extend(global.set.iter().cloned());
    let origin = global
        .config
        .as_ref()
        .map(|p| format!("{}: ", p.display()))
        .unwrap_or_default();
    parse_config_with(&text, &sets).map_err(|e| format!("{origin}{e}"))
}

fn toml_string(s: &str) -> String {
    toml::Value::String(s.to_string()).to_string()
}

fn execute(cli: &Cli) -> Result<(), Failure> {
    let config = load_config(&cli.global).map_err(Failure::Config)?;
    let model = config.offspring_model().map_err(|e| Failure::Config(e.to_string()))?;
    let out_dir = cli.global.out.as_deref();

    match &cli.command {
        Command::Validate { csv } => {
            let v = &config.validate;
            let report = model.validate_assumptions(&uniform_grid(v.x_max, v.step), v.t_max, v.tol)?;
            let body = if *csv { output::validate_csv(&report) } else { output::validate_text(&report) };
            match out_dir {
                Some(dir) => {
                    let name = if *csv { "validate.csv" } else { "validate.txt" };
                    let path = dir.join(name);
                    write(&path, &body)?;
                    println!(
                        "wrote {} (a1_ok={}, a3_ok={})",
                        path.display(),
                        report.a1_ok,
                        report.a3_ok
                    );
                }
                None => print_stdout(&body)?,
            }
        }
        Command::Conjugacy => {
            let c = &config.conjugacy;
            let evaluator = ConjugacyEvaluator::build(&model, c.x_max, c.step, c.tol)?;
            let body = output::conjugacy_csv(&evaluator);
            match out_dir {
                Some(dir) => {
                    let path = dir.join("conjugacy.csv");
                    write(&path, &body)?;
                    let worst = evaluator.residuals().iter().fold(0.0f64, |a, &r| a.max(r));
                    println!(
                        "wrote {} ({} points, max residual {}, invertible up to {})",
                        path.display(),
                        evaluator.grid().len(),
                        output::num(worst),
                        output::num(evaluator.invertible_upper())
                    );
                }
                None => print_stdout(&body)?,
            }
        }
        Command::Simulate => {
            let s = &config.simulate;
            let steps = match s.steps {
                Some(n) => n as usize,
                None => (horizon(s.k, model.rho())?.n1 as usize).max(1),
            };
            let opts = SimOptions {
                z0: s.z0,
                population_cap: s.population_cap,
            };
            let paths = try_map_indexed(s.replicates as usize, Execution::default(), |r| {
                simulate_coupled_with(&model, s.k, steps, &opts, s.seed, stream_key(s.k, r as u64))
            })?;
            let body = output::simulate_csv(&paths);
            match out_dir {
                Some(dir) => {
                    let path = dir.join("simulate.csv");
                    write(&path, &body)?;
                    let extinct = paths.iter().filter(|p| p.z[steps] == 0).count();
                    println!(
                        "wrote {} ({} replicates x {} steps, K={}, {} with Z extinct)",
                        path.display(),
                        paths.len(),
                        steps,
                        s.k,
                        extinct
                    );
                }
                None => print_stdout(&body)?,
            }
        }
        Command::Experiment { sequential } => {
            let e = &config.experiment;
            let c = &config.conjugacy;
            let evaluator = ConjugacyEvaluator::build(&model, c.x_max, c.step, c.tol)?;
            let settings = ExperimentSettings {
                c: e.c,
                quantile_levels: e.quantile_levels.clone(),
                w_extra_generations: e.w_extra_generations,
                sim: SimOptions {
                    z0: config.simulate.z0,
                    population_cap: config.simulate.population_cap,
                },
                execution: if *sequential { Execution::Sequential } else { Execution::Parallel },
            };
            let run = rate_experiment(
                &model,
                &evaluator,
                &e.k_grid,
                e.replicates as usize,
                e.master_seed,
                &settings,
            )?;
            let dir = Path::new(&e.output_dir);
            let errors = dir.join("errors.csv");
            write(&errors, &output::errors_csv(&run.samples))?;
            println!("wrote {} ({} samples)", errors.display(), run.samples.len());

            let rates = dir.join("rate_report.csv");
            write(&rates, &output::rate_report_csv(&run.report))?;
            let slope = |arm| {
                run.report
                    .slope(Scope::Surviving, e.quantile_levels[0], arm)
                    .map(|f| output::num(f.slope))
                    .unwrap_or_else(|| "undefined".into())
            };
            println!(
                "wrote {} (surviving q{} slopes: new {}, legacy {})",
                rates.display(),
                output::num(e.quantile_levels[0]),
                slope(crate::experiments::Arm::New),
                slope(crate::experiments::Arm::Legacy)
            );

            let hist = dir.join("normalized_error_hist.csv");
            let bins = normalized_error_histogram(&run.samples, &e.k_grid);
            write(&hist, &output::histogram_csv(&bins))?;
            println!("wrote {} ({} bins)", hist.display(), bins.len());
        }
    }
    Ok(())
}

fn write(path: &Path, body: &str) -> Result<(), Failure> {
    output::write_atomic(path, body).map_err(|e| Failure::Runtime(format!("writing {}: {e}", path.display())))
}

fn print_stdout(body: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}
