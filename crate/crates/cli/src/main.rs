use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spock_cli::bench::{self, DEFAULT_TIME_LIMIT};
use spock_cli::format::{self, Meta};
use spock_cli::gen::{self, RandomOptions, SuiteBounds};
use spock_cli::ncs::{ncs_problem, NcsParams, Shape};
use spock_cli::run::{self, Algorithm, RunConfig, SolutionFile};
use spock_cli::scaling;
use spock_core::SpockParams;

#[derive(Parser)]
#[command(name = "spock", version, about = "Risk-averse optimal control on scenario trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SolverFlags {
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum, default_value_t = Algorithm::Spock)]
    algorithm: Algorithm,
    /// Worker threads; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    time_limit_s: Option<f64>,
}

impl SolverFlags {
    fn config(&self, default_limit: Option<Duration>) -> RunConfig {
        let d = SpockParams::<f64>::default();
        RunConfig {
            algorithm: self.algorithm,
            eps_abs: self.eps_abs.unwrap_or(d.eps_abs),
            eps_rel: self.eps_rel.unwrap_or(d.eps_rel),
            max_iters: self.max_iters.unwrap_or(d.max_iters),
            threads: self.threads,
            time_limit: self.time_limit_s.map(Duration::from_secs_f64).or(default_limit),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Up to `1e5` variables.
    Paper,
    /// Up to `1e4` variables.
    Desk,
    /// At most 200 nodes and six states.
    Tiny,
    /// Single regulation instance for stage-cost profiles.
    Fig4,
}

#[derive(Args, Clone)]
struct NcsFlags {
    /// Scenario parameter: `n^2` scenarios in either shape.
    #[arg(long, default_value_t = 4)]
    n: usize,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    nu: Option<usize>,
    #[arg(long)]
    sample_time: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    #[arg(long, default_value_t = 0.1)]
    phi0: f64,
    /// Use reduced sizes for unset dimensions.
    #[arg(long)]
    desk_scale: bool,
}

impl NcsFlags {
    fn params(&self, shape: Shape) -> NcsParams {
        let base = if self.desk_scale { NcsParams::desk() } else { NcsParams::default() };
        NcsParams {
            n: self.n,
            shape,
            horizon: self.horizon.unwrap_or(base.horizon),
            nx: self.nx.unwrap_or(base.nx),
            nu: self.nu.unwrap_or(base.nu),
            sample_time: self.sample_time.unwrap_or(base.sample_time),
            theta: self.theta,
            phi0: self.phi0,
            ..base
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a suite of random problems to a directory.
    GenerateRandom {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Preset::Paper)]
        preset: Preset,
        /// Same as `--preset desk`.
        #[arg(long)]
        desk_scale: bool,
        #[arg(long)]
        risk_neutral: bool,
        #[arg(long)]
        unconstrained: bool,
        #[arg(long, default_value = "suite")]
        out: PathBuf,
    },
    /// Write one networked-control problem.
    GenerateNcs {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Shape::HighInitial)]
        shape: Shape,
        #[command(flatten)]
        ncs: NcsFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve a problem file; exits nonzero unless the solver converged.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Solution JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve every problem of a directory with both algorithms.
    Bench {
        dir: PathBuf,
        #[command(flatten)]
        solver: SolverFlags,
        /// Run only the algorithm given by `--algorithm`.
        #[arg(long)]
        single: bool,
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        /// Performance profile CSV; defaults to `<out>.profile.csv`.
        #[arg(long)]
        profile_out: Option<PathBuf>,
    },
    /// Time matched high-initial/two-stage NCS pairs across thread counts.
    Scaling {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 5)]
        count: usize,
        #[command(flatten)]
        ncs: NcsFlags,
        /// Thread counts; defaults to 1 and all cores.
        #[arg(long = "thread-counts", value_delimiter = ',')]
        thread_counts: Vec<usize>,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long, default_value = "scaling.csv")]
        out: PathBuf,
    },
    /// Solve a problem and write the expected cost of each stage.
    ProfileEmit {
        /// Problem file; without it the fig4 preset is generated from `--seed`.
        file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverFlags,
        #[arg(long, default_value = "stage_costs.csv")]
        out: PathBuf,
    },
}

fn random_options(preset: Preset, risk_neutral: bool, unconstrained: bool) -> RandomOptions {
    let bounds = match preset {
        Preset::Paper | Preset::Fig4 => SuiteBounds::paper(),
        Preset::Desk => SuiteBounds::desk(),
        Preset::Tiny => SuiteBounds::tiny(),
    };
    let max_nodes = (preset == Preset::Tiny).then_some(200);
    RandomOptions { bounds, risk_neutral, unconstrained, max_nodes }
}

fn print_outcome(cfg: &RunConfig, o: &run::RunOutcome) {
    let st = &o.solution.status;
    let f = &o.report;
    println!(
        "{}: {} after {} iterations in {:.3} s (xi1 {:.3e}, xi2 {:.3e}, alpha {:.6e})",
        cfg.algorithm.name(),
        run::termination_name(st.termination),
        st.iterations,
        o.wall.as_secs_f64(),
        st.xi1,
        st.xi2,
        o.alpha
    );
    println!("cost {:.12e}", o.solution.cost);
    if cfg.algorithm == Algorithm::Spock {
        println!("steps: K0 {} K1 {} K2 {} stalled {}", st.k0, st.k1, st.k2, st.stalled_steps);
    }
    println!(
        "feasibility: dynamics {:.2e} boxes {:.2e} soc {:.2e} kernel {:.2e} dual cone {:.2e} risk {:.2e} epigraph {:.2e} (rel {:.2e})",
        f.dynamics, f.boxes, f.soc_distance, f.kernel, f.dual_cone, f.risk_bound, f.epigraph, f.epigraph_rel
    );
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    std::fs::write(path, s).with_context(|| format!("writing {}", path.display()))
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Cmd::GenerateRandom { seed, count, preset, desk_scale, risk_neutral, unconstrained, out } => {
            std::fs::create_dir_all(&out)?;
            let preset = if desk_scale && preset == Preset::Paper { Preset::Desk } else { preset };
            let problems: Vec<(spock_core::Raocp64, Meta)> = if preset == Preset::Fig4 {
                (0..count as u64).map(|k| gen::fig4_problem(seed + k)).collect::<Result<_>>()?
            } else {
                gen::random_suite(seed, count, &random_options(preset, risk_neutral, unconstrained))?
            };
            for (k, (p, meta)) in problems.iter().enumerate() {
                let path = out.join(format!("{k:04}.raocp"));
                format::save(&path, p, meta)?;
                println!("{} nodes {} variables {}", path.display(), p.tree.num_nodes(), p.num_variables());
            }
        }
        Cmd::GenerateNcs { seed, shape, ncs, out } => {
            let (p, meta) = ncs_problem(seed, &ncs.params(shape))?;
            format::save(&out, &p, &meta)?;
            println!("{} nodes {} variables {}", out.display(), p.tree.num_nodes(), p.num_variables());
        }
        Cmd::Solve { file, solver, out } => {
            let (p, _) = format::load(&file)?;
            let cfg = solver.config(None);
            let o = run::solve(&p, &cfg)?;
            print_outcome(&cfg, &o);
            if let Some(path) = out {
                write_json(&path, &SolutionFile::new(&p, &cfg, &o))?;
            }
            if !o.converged() {
                return Ok(ExitCode::from(1));
            }
        }
        Cmd::Bench { dir, solver, single, out, profile_out } => {
            let files = bench::suite_files(&dir)?;
            let cfg = solver.config(Some(DEFAULT_TIME_LIMIT));
            let algs = if single { vec![cfg.algorithm] } else { vec![Algorithm::Spock, Algorithm::Cp] };
            let records = bench::bench(&files, &algs, &cfg)?;
            for r in &records {
                println!("{} {} {} {} it {:.3} s", r.problem, r.solver, r.status, r.iterations, r.time_s);
            }
            bench::write_csv(&out, &records)?;
            let profile_out = profile_out.unwrap_or_else(|| out.with_extension("profile.csv"));
            bench::write_csv(&profile_out, &bench::performance_profile(&records))?;
        }
        Cmd::Scaling { seed, count, ncs, thread_counts, solver, out } => {
            let threads = if thread_counts.is_empty() {
                let max = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
                let mut t = vec![1, max];
                t.dedup();
                t
            } else {
                thread_counts
            };
            let seeds: Vec<u64> = (seed..seed + count as u64).collect();
            let records = scaling::scaling(&seeds, &ncs.params(Shape::HighInitial), &threads, &solver.config(None))?;
            bench::write_csv(&out, &records)?;
            let s = scaling::summarize(&records);
            println!(
                "threads {}: median high-initial {:.3} s, two-stage {:.3} s; alpha gap {:.2e}; deterministic {}; all converged {}",
                s.max_threads, s.median_high_initial_s, s.median_two_stage_s, s.alpha_gap, s.deterministic, s.all_converged
            );
        }
        Cmd::ProfileEmit { file, seed, solver, out } => {
            let (p, _) = match file {
                Some(f) => format::load(&f)?,
                None => gen::fig4_problem(seed)?,
            };
            let cfg = solver.config(None);
            let o = run::solve(&p, &cfg)?;
            print_outcome(&cfg, &o);
            let costs = p.stage_expected_costs(&o.solution.states, &o.solution.inputs);
            let mut w = csv::Writer::from_path(&out)?;
            w.write_record(["stage", "expected_cost"])?;
            for (t, c) in costs.iter().enumerate() {
                w.write_record([t.to_string(), c.to_string()])?;
            }
            w.flush()?;
            if !o.converged() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
