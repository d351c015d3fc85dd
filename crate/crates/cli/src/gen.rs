//! Random problem suites.
//!
//! All generators draw from `ChaCha8Rng`; instance `k` of a suite seeded with
//! `s` uses seed `s` and stream `k`, so any single instance can be rebuilt
//! without generating the ones before it.

use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use spock_core::problem::{
    BoxSet, Dynamics, NodeConstraint, Raocp, StageCost, TerminalConstraint, TerminalCost,
};
use spock_core::{RiskSpec, ScenarioTree};

use crate::format::Meta;

/// Rejection sampling gives up after this many draws.
pub const MAX_DRAWS: usize = 1_000_000;

/// Standard deviation of the `N(0, 0.01)` perturbations of the dynamics and
/// cost factors.
pub const NOISE_STD: f64 = 0.01;

pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(index);
    r
}

/// Inclusive ranges of the sampled sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteBounds {
    pub horizon: (usize, usize),
    pub stop_stage: (usize, usize),
    pub events: (usize, usize),
    pub inputs: (usize, usize),
    pub variables: (usize, usize),
}

impl SuiteBounds {
    pub fn paper() -> Self {
        SuiteBounds { horizon: (5, 15), stop_stage: (1, 3), events: (2, 10), inputs: (10, 300), variables: (1_000, 100_000) }
    }

    /// Same sampler with at most `1e4` variables.
    pub fn desk() -> Self {
        SuiteBounds { variables: (1_000, 10_000), ..Self::paper() }
    }

    /// Problems with at most 200 nodes and six states.
    pub fn tiny() -> Self {
        SuiteBounds { horizon: (2, 5), stop_stage: (1, 2), events: (2, 3), inputs: (1, 3), variables: (1, 2_000) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomOptions {
    pub bounds: SuiteBounds,
    /// Use `gamma = 1` at every node instead of sampling it.
    pub risk_neutral: bool,
    /// Drop all box constraints.
    pub unconstrained: bool,
    pub max_nodes: Option<usize>,
}

impl Default for RandomOptions {
    fn default() -> Self {
        RandomOptions { bounds: SuiteBounds::desk(), risk_neutral: false, unconstrained: false, max_nodes: None }
    }
}

/// Node counts of a tree with `w` events per branching, branching until
/// stage `b` and horizon `n`: all nodes and leaves.
pub fn iid_tree_size(n: usize, b: usize, w: usize) -> (usize, usize) {
    let b = b.min(n);
    let mut total = 0;
    let mut level = 1;
    for _ in 0..=b {
        total += level;
        level *= w;
    }
    let leaves = level / w;
    (total + (n - b) * leaves, leaves)
}

pub fn variable_count(nx: usize, nu: usize, nodes: usize, leaves: usize) -> usize {
    nx * nodes + nu * (nodes - leaves)
}

fn uniform_simplex(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // normalized exponentials are uniform on the simplex
    let e: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    let mut p: Vec<f64> = e.iter().map(|v| v / s).collect();
    let head: f64 = p[..n - 1].iter().sum();
    p[n - 1] = 1.0 - head;
    p
}

fn gauss(rng: &mut ChaCha8Rng, r: usize, c: usize, std: f64) -> DMatrix<f64> {
    let d = Normal::new(0.0, std).expect("positive std");
    DMatrix::from_fn(r, c, |_, _| d.sample(rng))
}

fn unif(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..=hi))
}

/// Sizes drawn for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sizes {
    pub horizon: usize,
    pub stop_stage: usize,
    pub events: usize,
    pub nu: usize,
    pub nx: usize,
}

/// Draws the horizon, then `(n_b, n_w, n_u)` uniformly from the admissible
/// set by rejection.
pub fn sample_sizes(rng: &mut ChaCha8Rng, opts: &RandomOptions) -> Result<Sizes> {
    let bd = &opts.bounds;
    let horizon = rng.random_range(bd.horizon.0..=bd.horizon.1);
    for _ in 0..MAX_DRAWS {
        let b = rng.random_range(bd.stop_stage.0..=bd.stop_stage.1);
        let w = rng.random_range(bd.events.0..=bd.events.1);
        let u = rng.random_range(bd.inputs.0..=bd.inputs.1);
        let (nodes, leaves) = iid_tree_size(horizon, b, w);
        let nv = variable_count(2 * u, u, nodes, leaves);
        let fits = opts.max_nodes.is_none_or(|m| nodes <= m);
        if fits && (bd.variables.0..=bd.variables.1).contains(&nv) {
            return Ok(Sizes { horizon, stop_stage: b.min(horizon), events: w, nu: u, nx: 2 * u });
        }
    }
    bail!("no admissible problem size after {MAX_DRAWS} draws")
}

/// One instance of the benchmark family: iid events, `A(w) = I + A^w`,
/// `B(w) = B + B^w`, `Q(w) = (Q0 + Q^w)(Q0 + Q^w)'`, same for `R`,
/// `Q_N = Q0`, AV@R at a common sampled level.
pub fn random_problem(rng: &mut ChaCha8Rng, opts: &RandomOptions) -> Result<(Raocp<f64>, Meta)> {
    let sz = sample_sizes(rng, opts)?;
    let (nx, nu, nw) = (sz.nx, sz.nu, sz.events);
    let gamma = if opts.risk_neutral { 1.0 } else { rng.random::<f64>() };
    let pi = uniform_simplex(rng, nw);
    let b_base = gauss(rng, nx, nu, 1.0);
    let a: Vec<DMatrix<f64>> = (0..nw).map(|_| DMatrix::identity(nx, nx) + gauss(rng, nx, nx, NOISE_STD)).collect();
    let b: Vec<DMatrix<f64>> = (0..nw).map(|_| &b_base + gauss(rng, nx, nu, NOISE_STD)).collect();
    let q0 = DMatrix::from_diagonal(&unif(rng, nx, 0.0, 0.1));
    let r0 = DMatrix::from_diagonal(&unif(rng, nu, 0.0, 100.0));
    let q: Vec<DMatrix<f64>> = (0..nw)
        .map(|_| {
            let f = &q0 + gauss(rng, nx, nx, NOISE_STD);
            &f * f.transpose()
        })
        .collect();
    let r: Vec<DMatrix<f64>> = (0..nw)
        .map(|_| {
            let f = &r0 + gauss(rng, nu, nu, NOISE_STD);
            &f * f.transpose()
        })
        .collect();
    let x_bar = unif(rng, nx, 1.0, 2.0);
    let u_bar = unif(rng, nu, 0.0, 0.1);
    let x0 = DVector::from_fn(nx, |i, _| rng.random_range(-0.5 * x_bar[i]..=0.5 * x_bar[i]));

    let rows: Vec<Vec<f64>> = vec![pi.clone(); nw];
    let tree = ScenarioTree::from_markov(&rows, &pi, sz.horizon, sz.stop_stage)?;
    let p = assemble(&tree, nx, nu, x0, gamma, opts.unconstrained, |i| {
        let w = tree.event(i).expect("non-root");
        (a[w].clone(), b[w].clone(), q[w].clone(), r[w].clone())
    }, &q0, &x_bar, &u_bar)?;
    let meta = Meta::from([
        ("generator".to_string(), json!("random")),
        ("n_w".to_string(), json!(nw)),
        ("n_b".to_string(), json!(sz.stop_stage)),
        ("horizon".to_string(), json!(sz.horizon)),
        ("gamma".to_string(), json!(gamma)),
    ]);
    Ok((p, meta))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    tree: &ScenarioTree,
    nx: usize,
    nu: usize,
    x0: DVector<f64>,
    gamma: f64,
    unconstrained: bool,
    node_data: impl Fn(usize) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
    qn: &DMatrix<f64>,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
) -> Result<Raocp<f64>> {
    let n = tree.num_nodes();
    let mut dynamics = Vec::with_capacity(n - 1);
    let mut stage_costs = Vec::with_capacity(n - 1);
    for i in 1..n {
        let (a, b, q, r) = node_data(i);
        dynamics.push(Dynamics { a, b, c: DVector::zeros(nx) });
        stage_costs.push(StageCost { q, r, q_lin: DVector::zeros(nx), r_lin: DVector::zeros(nu) });
    }
    let nl = tree.num_leaves();
    let terminal_costs = vec![TerminalCost { q: qn.clone(), q_lin: DVector::zeros(nx) }; nl];
    let (constraints, terminal_constraints) = if unconstrained {
        (vec![NodeConstraint::none(nx, nu); tree.num_nonleaf()], vec![TerminalConstraint::none(nx); nl])
    } else {
        (
            vec![
                NodeConstraint::state_input_box(BoxSet::symmetric(x_bar.clone()), BoxSet::symmetric(u_bar.clone()));
                tree.num_nonleaf()
            ],
            vec![TerminalConstraint::state_box(BoxSet::symmetric(x_bar.clone())); nl],
        )
    };
    let risks = (0..tree.num_nonleaf())
        .map(|i| RiskSpec::avar(gamma, &tree.children_probs(i)))
        .collect::<spock_core::Result<Vec<_>>>()?;
    let p = Raocp { tree: tree.clone(), nx, nu, dynamics, stage_costs, terminal_costs, constraints, terminal_constraints, risks, x0 };
    p.validate()?;
    Ok(p)
}

/// `count` instances of the benchmark family.
pub fn random_suite(seed: u64, count: usize, opts: &RandomOptions) -> Result<Vec<(Raocp<f64>, Meta)>> {
    (0..count)
        .map(|k| {
            let (p, mut meta) = random_problem(&mut instance_rng(seed, k as u64), opts)?;
            meta.insert("seed".into(), json!(seed));
            meta.insert("index".into(), json!(k));
            Ok((p, meta))
        })
        .collect()
}

/// Regulation problem used for the stage-cost profile: `n_x = n_u = n_w = 10`,
/// horizon 10, branching only at the root.
///
/// Each event perturbs `A = I` by `N(0, 0.02^2)` and `B = 0.1 I` by
/// `N(0, 0.01^2)` entries; costs are `Q = Q_N = I`, `R = 0.1 I`; boxes
/// `|x| <= 5`, `|u| <= 5`; the initial state is uniform in `[-1, 1]`. The
/// weak actuation keeps the closed loop decaying by roughly `0.7` per stage.
pub fn fig4_problem(seed: u64) -> Result<(Raocp<f64>, Meta)> {
    let (nx, nu, nw, horizon) = (10, 10, 10, 10);
    let mut rng = instance_rng(seed, 0);
    let pi = uniform_simplex(&mut rng, nw);
    let gamma = rng.random::<f64>();
    let a: Vec<DMatrix<f64>> = (0..nw).map(|_| DMatrix::identity(nx, nx) + gauss(&mut rng, nx, nx, 0.02)).collect();
    let b: Vec<DMatrix<f64>> =
        (0..nw).map(|_| DMatrix::identity(nx, nu) * 0.1 + gauss(&mut rng, nx, nu, 0.01)).collect();
    let x0 = unif(&mut rng, nx, -1.0, 1.0);
    let rows: Vec<Vec<f64>> = vec![pi.clone(); nw];
    let tree = ScenarioTree::from_markov(&rows, &pi, horizon, 1)?;
    let q = DMatrix::identity(nx, nx);
    let r = DMatrix::identity(nu, nu) * 0.1;
    let p = assemble(
        &tree,
        nx,
        nu,
        x0,
        gamma,
        false,
        |i| {
            let w = tree.event(i).expect("non-root");
            (a[w].clone(), b[w].clone(), q.clone(), r.clone())
        },
        &q,
        &DVector::from_element(nx, 5.0),
        &DVector::from_element(nu, 5.0),
    )?;
    let meta = Meta::from([
        ("generator".to_string(), json!("fig4")),
        ("seed".to_string(), json!(seed)),
        ("n_w".to_string(), json!(nw)),
        ("n_b".to_string(), json!(1)),
        ("horizon".to_string(), json!(horizon)),
        ("gamma".to_string(), json!(gamma)),
    ]);
    Ok((p, meta))
}
