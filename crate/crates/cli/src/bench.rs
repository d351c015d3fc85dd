//! Suite benchmarks and Dolan-More performance profiles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::format;
use crate::run::{self, Algorithm, RunConfig};

pub const DEFAULT_TIME_LIMIT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub problem: String,
    pub solver: String,
    pub status: String,
    pub iterations: usize,
    pub time_s: f64,
    pub cost: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub variables: usize,
    /// Peak resident set size of the process in kB, if the platform reports it.
    pub peak_rss_kb: Option<u64>,
}

impl BenchRecord {
    pub fn solved(&self) -> bool {
        self.status == "converged"
    }
}

/// `VmHWM` from `/proc/self/status`.
pub fn peak_rss_kb() -> Option<u64> {
    let s = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = s.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// Resets the peak RSS counter so the next reading covers one solve only.
fn reset_peak_rss() {
    let _ = std::fs::write("/proc/self/clear_refs", "5");
}

/// Problem files of a suite directory in name order.
pub fn suite_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "raocp"))
        .collect();
    v.sort();
    Ok(v)
}

/// Solves every file with every algorithm; solver failures become records.
pub fn bench(files: &[PathBuf], algorithms: &[Algorithm], base: &RunConfig) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for f in files {
        let (p, _) = format::load(f)?;
        let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for &alg in algorithms {
            let cfg = RunConfig { algorithm: alg, ..base.clone() };
            reset_peak_rss();
            let rec = match run::solve(&p, &cfg) {
                Ok(o) => {
                    let st = &o.solution.status;
                    BenchRecord {
                        problem: name.clone(),
                        solver: alg.name().into(),
                        status: run::termination_name(st.termination).into(),
                        iterations: st.iterations,
                        time_s: o.wall.as_secs_f64(),
                        cost: o.solution.cost,
                        xi1: st.xi1,
                        xi2: st.xi2,
                        variables: p.num_variables(),
                        peak_rss_kb: peak_rss_kb(),
                    }
                }
                Err(e) => BenchRecord {
                    problem: name.clone(),
                    solver: alg.name().into(),
                    status: format!("error: {e}"),
                    iterations: 0,
                    time_s: f64::INFINITY,
                    cost: f64::NAN,
                    xi1: f64::NAN,
                    xi2: f64::NAN,
                    variables: p.num_variables(),
                    peak_rss_kb: peak_rss_kb(),
                },
            };
            out.push(rec);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub solver: String,
    pub tau: f64,
    pub fraction: f64,
}

/// Performance ratios `t / min_s t` per solver and problem; a failed run has
/// ratio infinity.
pub fn ratios(records: &[BenchRecord]) -> BTreeMap<String, Vec<f64>> {
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.solved()) {
        let b = best.entry(&r.problem).or_insert(f64::INFINITY);
        *b = b.min(r.time_s);
    }
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records {
        let ratio = match (r.solved(), best.get(r.problem.as_str())) {
            (true, Some(&b)) if b > 0.0 => r.time_s / b,
            (true, Some(_)) => 1.0,
            _ => f64::INFINITY,
        };
        out.entry(r.solver.clone()).or_default().push(ratio);
    }
    out
}

/// Step points of the profile `rho_s(tau) = |{p : r_ps <= tau}| / |P|`,
/// starting at `tau = 1`.
pub fn performance_profile(records: &[BenchRecord]) -> Vec<ProfilePoint> {
    let mut out = Vec::new();
    for (solver, mut r) in ratios(records) {
        r.sort_by(f64::total_cmp);
        let n = r.len() as f64;
        let below_one = r.iter().filter(|&&x| x <= 1.0).count();
        out.push(ProfilePoint { solver: solver.clone(), tau: 1.0, fraction: below_one as f64 / n });
        for (k, &t) in r.iter().enumerate() {
            if t.is_finite() && t > 1.0 && r.get(k + 1) != Some(&t) {
                out.push(ProfilePoint { solver: solver.clone(), tau: t, fraction: (k + 1) as f64 / n });
            }
        }
    }
    out
}

pub fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
