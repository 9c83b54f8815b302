//! Closed-loop Euler-Maruyama simulation under sample-and-hold MPC, Monte
//! Carlo batches and trace export.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::{MpcController, OcpStatus};
use crate::regions::region_membership;
use crate::scenario::{Scenario, ScenarioConfig};
use crate::sde::{euler_maruyama_step, NoiseStream, ScalarField};

/// State at `t` and the input held from `t` until the next record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub state: Vec<f64>,
    pub input: Vec<f64>,
    pub w_c: f64,
    pub status: OcpStatus,
    pub in_d: bool,
    pub in_d_relaxed: bool,
    pub in_x_phi: bool,
    pub in_x_l: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// The state became non-finite during this step; the trace stops before it.
    BlowUp { step: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub final_position_norm: f64,
    /// Per obstacle: smallest distance between the robot and the centre.
    pub min_distance: Vec<f64>,
    /// Smallest `F_i - l_D_i` over records and obstacles; negative iff a collision occurred.
    pub min_margin: Option<f64>,
    /// Records inside some unsafe set.
    pub collision_events: usize,
    /// Records per status, indexed by status code.
    pub status_counts: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<Record>,
    pub summary: TraceSummary,
    pub outcome: Outcome,
}

impl Trace {
    pub fn collided(&self) -> bool {
        self.summary.collision_events > 0
    }
}

fn summarize(records: &[Record], scenario: &Scenario) -> TraceSummary {
    let barriers = scenario.assembly.barriers();
    let mut min_distance = vec![f64::INFINITY; barriers.len()];
    let mut min_margin: Option<f64> = None;
    let mut status_counts = [0; 4];
    for r in records {
        let x = DVector::from_column_slice(&r.state);
        for (i, b) in barriers.iter().enumerate() {
            let f = b.spec().level(&x);
            min_distance[i] = min_distance[i].min(f.sqrt());
            let m = f - b.spec().l_d;
            min_margin = Some(min_margin.map_or(m, |v| v.min(m)));
        }
        status_counts[r.status.code() as usize] += 1;
    }
    TraceSummary {
        final_position_norm: records.last().map_or(f64::NAN, |r| r.state[0].hypot(r.state[1])),
        min_distance,
        min_margin,
        collision_events: records.iter().filter(|r| r.in_d).count(),
        status_counts,
    }
}

/// Simulates one run of a built scenario with the given noise seed.
pub fn simulate(scenario: &Scenario, config: &ScenarioConfig, seed: u64) -> Result<Trace> {
    let mut controller = MpcController::new(scenario.system.clone(), scenario.assembly.clone(), scenario.mpc.clone())?;
    let sys = &scenario.system;
    let assembly = &scenario.assembly;
    let input_box = &scenario.mpc.input_box;
    let dt = config.dt();
    let steps = config.steps();
    let mut noise = NoiseStream::new(seed);
    let mut x = scenario.initial_state.clone();
    let mut records = Vec::with_capacity(steps + 1);
    let mut held = (input_box.mean(), OcpStatus::Optimal);
    let mut outcome = Outcome::Completed;

    for j in 0..=steps {
        if j % config.substeps == 0 {
            let out = controller.step(&x);
            held = (out.input, out.status);
        }
        let flags = region_membership(assembly, sys, input_box, &x);
        if flags.in_d {
            warn!("state {:?} entered an unsafe set at t = {}", x.as_slice(), j as f64 * dt);
        }
        records.push(Record {
            t: j as f64 * dt,
            state: x.as_slice().to_vec(),
            input: held.0.as_slice().to_vec(),
            w_c: assembly.value(&x),
            status: held.1,
            in_d: flags.in_d,
            in_d_relaxed: flags.in_d_relaxed,
            in_x_phi: flags.in_x_phi,
            in_x_l: flags.in_x_l,
        });
        if j == steps {
            break;
        }
        let w = noise.draw(sys.state_dim());
        match euler_maruyama_step(sys, &x, &held.0, dt, &w) {
            Ok(next) => x = next,
            Err(Error::NonFiniteState) => {
                warn!("simulation blew up at step {}", j + 1);
                outcome = Outcome::BlowUp { step: j + 1 };
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let summary = summarize(&records, scenario);
    Ok(Trace {
        records,
        summary,
        outcome,
    })
}

/// One run with the scenario's own seed.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Trace> {
    simulate(&config.build()?, config, config.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub seed: u64,
    pub final_position_norm: f64,
    pub min_distance: Vec<f64>,
    pub min_margin: Option<f64>,
    pub collision_events: usize,
    pub converged: bool,
    pub blew_up: bool,
    /// Largest component-wise excess of an applied input over the box.
    pub input_excess: f64,
    pub status_counts: [usize; 4],
}

/// Counts of per-run minimum clearance `sqrt(F) - sqrt(l_D)` to the nearest unsafe disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Unit-width bins covering the data.
    pub fn unit_bins(values: &[f64]) -> Self {
        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        if finite.is_empty() {
            return Self {
                edges: Vec::new(),
                counts: Vec::new(),
            };
        }
        let lo = finite.iter().copied().fold(f64::INFINITY, f64::min).floor();
        let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max).floor() + 1.0;
        let n = (hi - lo) as usize;
        let mut counts = vec![0; n];
        for v in finite {
            counts[((v - lo) as usize).min(n - 1)] += 1;
        }
        Self {
            edges: (0..=n).map(|k| lo + k as f64).collect(),
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: Vec<RunStats>,
    /// Runs with at least one collision event.
    pub collisions: usize,
    pub converged: usize,
    pub blow_ups: usize,
    pub clearance_histogram: Histogram,
}

impl MonteCarloSummary {
    pub fn converged_fraction(&self) -> f64 {
        self.converged as f64 / self.runs.len() as f64
    }
}

fn run_stats(trace: &Trace, scenario: &Scenario, config: &ScenarioConfig, seed: u64) -> RunStats {
    let b = &scenario.mpc.input_box;
    let input_excess = trace
        .records
        .iter()
        .flat_map(|r| r.input.iter().enumerate().map(|(k, u)| (b.u_min[k] - u).max(u - b.u_max[k])))
        .fold(f64::NEG_INFINITY, f64::max);
    RunStats {
        seed,
        final_position_norm: trace.summary.final_position_norm,
        min_distance: trace.summary.min_distance.clone(),
        min_margin: trace.summary.min_margin,
        collision_events: trace.summary.collision_events,
        converged: trace.outcome == Outcome::Completed && trace.summary.final_position_norm <= config.convergence_radius,
        blew_up: trace.outcome != Outcome::Completed,
        input_excess,
        status_counts: trace.summary.status_counts,
    }
}

/// `config.runs` independent runs with seeds `seed, seed + 1, ...`.
pub fn monte_carlo(config: &ScenarioConfig) -> Result<MonteCarloSummary> {
    let scenario = config.build()?;
    let runs = (0..config.runs as u64)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i);
            let trace = simulate(&scenario, config, seed)?;
            let stats = run_stats(&trace, &scenario, config, seed);
            info!(
                "run {i}: final norm {:.3}, collisions {}, statuses {:?}",
                stats.final_position_norm, stats.collision_events, stats.status_counts
            );
            Ok(stats)
        })
        .collect::<Result<Vec<_>>>()?;
    let clearance: Vec<f64> = runs
        .iter()
        .map(|r| {
            r.min_distance
                .iter()
                .zip(&config.barriers)
                .map(|(d, b)| d - b.l_d.sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(MonteCarloSummary {
        collisions: runs.iter().filter(|r| r.collision_events > 0).count(),
        converged: runs.iter().filter(|r| r.converged).count(),
        blow_ups: runs.iter().filter(|r| r.blew_up).count(),
        clearance_histogram: Histogram::unit_bins(&clearance),
        runs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

pub const TRACE_CSV_HEADER: &str = "# t,x,y,theta,v,omega,W_c,status,in_D,in_D_relaxed";

/// JSON document: the trace plus the scenario that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub scenario: ScenarioConfig,
    #[serde(flatten)]
    pub trace: Trace,
}

pub fn write_trace_csv<W: Write>(records: &[Record], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_CSV_HEADER}")?;
    for r in records {
        write!(out, "{}", r.t)?;
        for v in r.state.iter().chain(&r.input) {
            write!(out, ",{v}")?;
        }
        writeln!(out, ",{},{},{},{}", r.w_c, r.status.code(), r.in_d as u8, r.in_d_relaxed as u8)?;
    }
    Ok(())
}

pub fn write_trace_json<W: Write>(trace: &Trace, scenario: &ScenarioConfig, out: W) -> Result<()> {
    let doc = TraceDocument {
        scenario: scenario.clone(),
        trace: trace.clone(),
    };
    serde_json::to_writer_pretty(out, &doc)?;
    Ok(())
}

pub fn read_trace_json(text: &str) -> Result<TraceDocument> {
    Ok(serde_json::from_str(text)?)
}

pub fn export_trace(trace: &Trace, scenario: &ScenarioConfig, path: &Path, format: Format) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    match format {
        Format::Csv => write_trace_csv(&trace.records, &mut file)?,
        Format::Json => write_trace_json(trace, scenario, &mut file)?,
    }
    file.flush()?;
    Ok(())
}
