//! Command-line entry point. Exit codes: 0 ok, 1 invalid input, 2 blow-up.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use clbf_smpc::barrier::{profile_curves, BarrierSpec};
use clbf_smpc::clbf::compute_coefficients;
use clbf_smpc::regions::{region_grid_scan, GridSpec};
use clbf_smpc::scenario::ScenarioConfig;
use clbf_smpc::sim::{monte_carlo, run_scenario, write_trace_csv, write_trace_json, Outcome};

#[derive(Parser)]
#[command(version, about = "CLBF-constrained stochastic MPC for a wheeled robot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct Common {
    /// Scenario TOML; the bundled case study when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one closed-loop trace.
    Run(Common),
    /// Monte Carlo batch with consecutive seeds.
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Rasterize the X_phi / X_L regions over the scene.
    Regions {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 240)]
        nx: usize,
        #[arg(long, default_value_t = 200)]
        ny: usize,
        #[arg(long, default_value_t = 8)]
        thetas: usize,
    },
    /// Barrier value against F for constant and scheduled decay rates.
    BarrierProfile {
        #[command(flatten)]
        common: Common,
        /// Zero-based obstacle index; the last obstacle when omitted.
        #[arg(long)]
        obstacle: Option<usize>,
        #[arg(long, default_value_t = 501)]
        points: usize,
    },
    /// Check the scenario's parameter inequalities.
    Validate(Common),
}

enum Failure {
    Invalid(String),
    BlowUp(String),
}

impl From<clbf_smpc::Error> for Failure {
    fn from(e: clbf_smpc::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let mut config = match &common.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::case_study(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> clbf_smpc::Result<()>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
            write(&mut file)?;
            file.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock)?;
        }
    }
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T, out: &mut dyn Write) -> clbf_smpc::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(common) => {
            let config = load(&common)?;
            let trace = run_scenario(&config)?;
            emit(common.out.as_deref(), |w| match common.format {
                Format::Csv => write_trace_csv(&trace.records, w),
                Format::Json => write_trace_json(&trace, &config, w),
            })?;
            let s = &trace.summary;
            eprintln!(
                "final position norm {:.4}, collision events {}, statuses {:?}",
                s.final_position_norm, s.collision_events, s.status_counts
            );
            if let Outcome::BlowUp { step } = trace.outcome {
                return Err(Failure::BlowUp(format!("state became non-finite at step {step}")));
            }
        }
        Command::Mc { common, runs } => {
            let mut config = load(&common)?;
            if let Some(n) = runs {
                config.runs = n;
            }
            let mc = monte_carlo(&config)?;
            emit(common.out.as_deref(), |w| match common.format {
                Format::Json => to_json(&mc, w),
                Format::Csv => {
                    writeln!(w, "# seed,final_position_norm,min_margin,collision_events,converged,blew_up")?;
                    for r in &mc.runs {
                        writeln!(
                            w,
                            "{},{},{},{},{},{}",
                            r.seed,
                            r.final_position_norm,
                            r.min_margin.unwrap_or(f64::NAN),
                            r.collision_events,
                            r.converged as u8,
                            r.blew_up as u8
                        )?;
                    }
                    Ok(())
                }
            })?;
            eprintln!(
                "{} runs: {} with collisions, {} converged, {} blow-ups",
                mc.runs.len(),
                mc.collisions,
                mc.converged,
                mc.blow_ups
            );
            if mc.blow_ups > 0 {
                return Err(Failure::BlowUp(format!("{} runs blew up", mc.blow_ups)));
            }
        }
        Command::Regions { common, nx, ny, thetas } => {
            let config = load(&common)?;
            let scenario = config.build()?;
            let grid = GridSpec {
                nx,
                ny,
                thetas: GridSpec::uniform_thetas(thetas),
                ..GridSpec::scene()
            };
            if nx == 0 || ny == 0 || thetas == 0 {
                return Err(Failure::Invalid("grid dimensions must be positive".into()));
            }
            let raster = region_grid_scan(&scenario.assembly, &scenario.system, &scenario.mpc.input_box, &grid);
            emit(common.out.as_deref(), |w| match common.format {
                Format::Csv => raster.write_csv(w),
                Format::Json => to_json(&raster, w),
            })?;
            eprintln!(
                "{} cells: {} in D, {} in X_phi, {} in X_L",
                raster.cells.len(),
                raster.count(|c| c.in_d),
                raster.count(|c| c.in_x_phi),
                raster.count(|c| c.in_x_l)
            );
        }
        Command::BarrierProfile { common, obstacle, points } => {
            let config = load(&common)?;
            let index = obstacle.unwrap_or(config.barriers.len().saturating_sub(1));
            let spec: &BarrierSpec = config
                .barriers
                .get(index)
                .ok_or_else(|| Failure::Invalid(format!("no obstacle with index {index}")))?;
            let curves = profile_curves(spec, points)?;
            emit(common.out.as_deref(), |w| match common.format {
                Format::Csv => curves.write_csv(w),
                Format::Json => to_json(&curves, w),
            })?;
        }
        Command::Validate(common) => {
            let config = load(&common)?;
            let mut problems: Vec<String> = config.clf_violations().iter().map(|v| format!("clf: {v}")).collect();
            for (i, b) in config.barriers.iter().enumerate() {
                if let Err(e) = b.validate() {
                    problems.push(format!("barrier {i}: {e}"));
                }
            }
            let c2 = config.clbf.c2.unwrap_or(config.clf.p1);
            match compute_coefficients(&config.barriers, config.clbf.c1, c2, &config.clbf.k_lambda) {
                Ok(c) => println!(
                    "lambda = {:?}\nkappa = {} in ({}, {})",
                    c.lambda, c.kappa, c.kappa_window.0, c.kappa_window.1
                ),
                Err(e) => problems.push(format!("coefficients: {e}")),
            }
            if let Err(e) = config.build() {
                problems.push(format!("scenario: {e}"));
            }
            if !problems.is_empty() {
                return Err(Failure::Invalid(problems.join("\n")));
            }
            println!("all parameter checks passed");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::BlowUp(msg)) => {
            eprintln!("blow-up: {msg}");
            ExitCode::from(2)
        }
    }
}
