//! Solving a problem with the settings shared by all verbs.

use std::time::{Duration, Instant};

use anyhow::Result;
use nalgebra::DVector;
use serde::Serialize;
use spock_core::oracle::{feasibility_report, FeasibilityReport};
use spock_core::solver::{SolveOptions, Spock};
use spock_core::{Raocp, Solution, SpockParams, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Spock,
    Cp,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Spock => "spock",
            Algorithm::Cp => "cp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iters: usize,
    /// Size of the rayon pool; `None` uses the global pool.
    pub threads: Option<usize>,
    pub time_limit: Option<Duration>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = SpockParams::<f64>::default();
        RunConfig {
            algorithm: Algorithm::Spock,
            eps_abs: d.eps_abs,
            eps_rel: d.eps_rel,
            max_iters: d.max_iters,
            threads: None,
            time_limit: None,
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> SpockParams<f64> {
        SpockParams {
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_iters: self.max_iters,
            time_limit: self.time_limit,
            ..SpockParams::default()
        }
    }
}

pub struct RunOutcome {
    pub solution: Solution<f64>,
    pub report: FeasibilityReport,
    pub alpha: f64,
    /// Setup (preconditioning, factorizations, norm bound) plus iterations.
    pub wall: Duration,
}

impl RunOutcome {
    pub fn converged(&self) -> bool {
        self.solution.status.termination == Termination::Converged
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new().num_threads(n).build()?.install(f)),
    }
}

pub fn solve(p: &Raocp<f64>, cfg: &RunConfig) -> Result<RunOutcome> {
    with_threads(cfg.threads, || -> Result<RunOutcome> {
        let start = Instant::now();
        let spock = Spock::new(p, cfg.params())?;
        let solution = match cfg.algorithm {
            Algorithm::Spock => spock.spock_solve(SolveOptions::default())?,
            Algorithm::Cp => spock.cp_solve(SolveOptions::default())?,
        };
        let wall = start.elapsed();
        let report = feasibility_report(&spock, &solution, &p.x0);
        Ok(RunOutcome { solution, report, alpha: spock.alpha, wall })
    })?
}

pub fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::Converged => "converged",
        Termination::MaxIters => "max_iters",
        Termination::Stalled => "stalled",
        Termination::TimeLimit => "time_limit",
        Termination::Cancelled => "cancelled",
    }
}

/// FNV-1a over the bit patterns of a vector, used to compare iterate streams.
pub fn bits_hash(v: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for x in v {
        for b in x.to_bits().to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[derive(Debug, Clone, Serialize)]
pub struct FeasibilityJson {
    pub dynamics: f64,
    pub boxes: f64,
    pub soc_distance: f64,
    pub kernel: f64,
    pub dual_cone: f64,
    pub risk_bound: f64,
    pub epigraph: f64,
    pub epigraph_rel: f64,
}

impl From<&FeasibilityReport> for FeasibilityJson {
    fn from(r: &FeasibilityReport) -> Self {
        FeasibilityJson {
            dynamics: r.dynamics,
            boxes: r.boxes,
            soc_distance: r.soc_distance,
            kernel: r.kernel,
            dual_cone: r.dual_cone,
            risk_bound: r.risk_bound,
            epigraph: r.epigraph,
            epigraph_rel: r.epigraph_rel,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StatusJson {
    pub algorithm: Algorithm,
    pub termination: &'static str,
    pub iterations: usize,
    pub xi1: f64,
    pub xi2: f64,
    pub k0: usize,
    pub k1: usize,
    pub k2: usize,
    pub stalled_steps: usize,
    pub operator_calls: usize,
    pub alpha: f64,
    pub solve_s: f64,
    pub wall_s: f64,
}

/// Written by `spock solve`.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionFile {
    pub cost: f64,
    pub status: StatusJson,
    pub feasibility: FeasibilityJson,
    pub stage_costs: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
}

impl SolutionFile {
    pub fn new(p: &Raocp<f64>, cfg: &RunConfig, out: &RunOutcome) -> Self {
        let s = &out.solution;
        let st = &s.status;
        let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.as_slice().to_vec()).collect();
        SolutionFile {
            cost: s.cost,
            status: StatusJson {
                algorithm: cfg.algorithm,
                termination: termination_name(st.termination),
                iterations: st.iterations,
                xi1: st.xi1,
                xi2: st.xi2,
                k0: st.k0,
                k1: st.k1,
                k2: st.k2,
                stalled_steps: st.stalled_steps,
                operator_calls: st.operator_calls,
                alpha: out.alpha,
                solve_s: st.elapsed.as_secs_f64(),
                wall_s: out.wall.as_secs_f64(),
            },
            feasibility: (&out.report).into(),
            stage_costs: p.stage_expected_costs(&s.states, &s.inputs),
            states: rows(&s.states),
            inputs: rows(&s.inputs),
        }
    }
}
