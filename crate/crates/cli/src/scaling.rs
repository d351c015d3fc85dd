//! Solve time against thread count and branching shape on matched NCS pairs.

use anyhow::Result;
use serde::Serialize;

use crate::ncs::{ncs_problem, NcsParams, Shape};
use crate::run::{self, bits_hash, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRecord {
    pub seed: u64,
    pub shape: &'static str,
    pub scenarios: usize,
    pub threads: usize,
    pub alpha: f64,
    pub status: &'static str,
    pub iterations: usize,
    pub time_s: f64,
    pub cost: f64,
    /// Hash of the final primal-dual iterate.
    pub iterate_hash: u64,
}

/// Solves the high-initial and two-stage instance of each seed at each
/// thread count. Both shapes share the plant of the seed.
pub fn scaling(seeds: &[u64], base: &NcsParams, threads: &[usize], cfg: &RunConfig) -> Result<Vec<ScalingRecord>> {
    let mut out = Vec::new();
    for &seed in seeds {
        for shape in [Shape::HighInitial, Shape::TwoStage] {
            let (p, _) = ncs_problem(seed, &NcsParams { shape, ..base.clone() })?;
            for &t in threads {
                let o = run::solve(&p, &RunConfig { threads: Some(t), ..cfg.clone() })?;
                let s = &o.solution;
                let mut iterate = s.z.clone();
                iterate.extend_from_slice(&s.eta);
                out.push(ScalingRecord {
                    seed,
                    shape: shape.name(),
                    scenarios: p.tree.num_leaves(),
                    threads: t,
                    alpha: o.alpha,
                    status: run::termination_name(s.status.termination),
                    iterations: s.status.iterations,
                    time_s: o.wall.as_secs_f64(),
                    cost: s.cost,
                    iterate_hash: bits_hash(&iterate),
                });
            }
        }
    }
    Ok(out)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingSummary {
    pub max_threads: usize,
    pub median_high_initial_s: f64,
    pub median_two_stage_s: f64,
    /// Largest `|alpha_high - alpha_two|` over the seeds.
    pub alpha_gap: f64,
    /// Every instance produced the same iterate at every thread count.
    pub deterministic: bool,
    pub all_converged: bool,
}

pub fn summarize(records: &[ScalingRecord]) -> ScalingSummary {
    let max_threads = records.iter().map(|r| r.threads).max().unwrap_or(1);
    let times = |shape: &str| -> Vec<f64> {
        records.iter().filter(|r| r.shape == shape && r.threads == max_threads).map(|r| r.time_s).collect()
    };
    let mut alpha_gap: f64 = 0.0;
    let mut deterministic = true;
    for a in records {
        for b in records.iter().filter(|b| b.seed == a.seed) {
            if a.shape != b.shape {
                alpha_gap = alpha_gap.max((a.alpha - b.alpha).abs());
            } else if a.iterate_hash != b.iterate_hash {
                deterministic = false;
            }
        }
    }
    ScalingSummary {
        max_threads,
        median_high_initial_s: median(&mut times(Shape::HighInitial.name())),
        median_two_stage_s: median(&mut times(Shape::TwoStage.name())),
        alpha_gap,
        deterministic,
        all_converged: records.iter().all(|r| r.status == "converged"),
    }
}
