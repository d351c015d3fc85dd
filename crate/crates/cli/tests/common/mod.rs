#![allow(dead_code)]

//! Small random problems and dense reference computations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spock_core::problem::{
    BoxSet, Dynamics, NodeConstraint, Raocp, StageCost, TerminalConstraint, TerminalCost,
};
use spock_core::{RiskSpec, ScenarioTree};

#[derive(Clone)]
pub struct Tiny {
    pub branching: Vec<usize>,
    pub nx: usize,
    pub nu: usize,
    pub gamma: f64,
    /// Box half-width; `f64::INFINITY` for no constraints.
    pub bound: f64,
    pub linear_terms: bool,
    pub rank_deficient_q: bool,
}

impl Default for Tiny {
    fn default() -> Self {
        Tiny {
            branching: vec![2, 2],
            nx: 2,
            nu: 1,
            gamma: 0.5,
            bound: 1.0,
            linear_terms: true,
            rank_deficient_q: false,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; good enough for test data
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| s * normal(rng))
}

fn vecr(rng: &mut ChaCha8Rng, n: usize, s: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| s * normal(rng))
}

pub fn tiny_tree(rng: &mut ChaCha8Rng, branching: &[usize]) -> ScenarioTree {
    let mut count = 1;
    let mut cps = Vec::new();
    for &b in branching {
        for _ in 0..count {
            let w: Vec<f64> = (0..b).map(|_| 0.2 + rng.random::<f64>()).collect();
            let s: f64 = w.iter().sum();
            let mut p: Vec<f64> = w.iter().map(|v| v / s).collect();
            let head: f64 = p[..b - 1].iter().sum();
            p[b - 1] = 1.0 - head;
            cps.push(p);
        }
        count *= b;
    }
    ScenarioTree::from_branching(branching, &cps).unwrap()
}

pub fn tiny_problem(seed: u64, cfg: &Tiny) -> Raocp<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tree = tiny_tree(&mut rng, &cfg.branching);
    let (nx, nu) = (cfg.nx, cfg.nu);
    let n = tree.num_nodes();
    let nn = tree.num_nonleaf();
    let nl = tree.num_leaves();
    let lin = if cfg.linear_terms { 0.3 } else { 0.0 };
    let mut dynamics = Vec::new();
    let mut stage_costs = Vec::new();
    for _ in 1..n {
        let a = DMatrix::identity(nx, nx) + mat(&mut rng, nx, nx, 0.2);
        let b = mat(&mut rng, nx, nu, 0.7);
        let c = vecr(&mut rng, nx, lin * 0.3);
        dynamics.push(Dynamics { a, b, c });
        let g = if cfg.rank_deficient_q { mat(&mut rng, nx, 1, 1.0) } else { mat(&mut rng, nx, nx, 0.8) };
        let q = &g * g.transpose() + DMatrix::identity(nx, nx) * if cfg.rank_deficient_q { 0.0 } else { 0.1 };
        let h = mat(&mut rng, nu, nu, 0.3);
        let r = &h * h.transpose() + DMatrix::identity(nu, nu) * 0.5;
        stage_costs.push(StageCost { q, r, q_lin: vecr(&mut rng, nx, lin), r_lin: vecr(&mut rng, nu, lin) });
    }
    let terminal_costs = (0..nl)
        .map(|_| {
            let g = mat(&mut rng, nx, nx, 0.8);
            let shift = if cfg.rank_deficient_q { 0.0 } else { 0.1 };
            TerminalCost { q: &g * g.transpose() + DMatrix::identity(nx, nx) * shift, q_lin: vecr(&mut rng, nx, lin) }
        })
        .collect();
    let bx = DVector::from_element(nx, cfg.bound);
    let bu = DVector::from_element(nu, cfg.bound);
    let constraints = (0..nn)
        .map(|_| {
            if cfg.bound.is_finite() {
                NodeConstraint::state_input_box(BoxSet::symmetric(bx.clone()), BoxSet::symmetric(bu.clone()))
            } else {
                NodeConstraint::none(nx, nu)
            }
        })
        .collect();
    let terminal_constraints = (0..nl)
        .map(|_| {
            if cfg.bound.is_finite() {
                TerminalConstraint::state_box(BoxSet::symmetric(bx.clone() * 1.5))
            } else {
                TerminalConstraint::none(nx)
            }
        })
        .collect();
    let risks = (0..nn).map(|i| RiskSpec::avar(cfg.gamma, &tree.children_probs(i)).unwrap()).collect();
    let x0 = vecr(&mut rng, nx, 0.4).map(|v| v.clamp(-0.9 * cfg.bound.min(1e9), 0.9 * cfg.bound.min(1e9)));
    Raocp { tree, nx, nu, dynamics, stage_costs, terminal_costs, constraints, terminal_constraints, risks, x0 }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss_vec(rng: &mut ChaCha8Rng, n: usize, s: f64) -> Vec<f64> {
    (0..n).map(|_| s * normal(rng)).collect()
}

/// Tree shapes with at most 15 nodes.
pub const SMALL_SHAPES: &[&[usize]] =
    &[&[1], &[2], &[1, 1, 1], &[2, 1], &[2, 2], &[3, 1], &[2, 1, 1], &[3, 2], &[2, 3], &[4, 2], &[3, 3], &[2, 2, 2]];

/// Solves `[I C'; C 0] [w; l] = [target; d]`, the Euclidean projection of
/// `target` onto `{w : C w = d}`.
pub fn dense_affine_projection(c: &DMatrix<f64>, d: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    let (m, n) = c.shape();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).fill_with_identity();
    k.view_mut((0, n), (n, m)).copy_from(&c.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(c);
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(target);
    rhs.rows_mut(n, m).copy_from(d);
    let sol = k.full_piv_lu().solve(&rhs).expect("KKT matrix of a full-row-rank constraint");
    sol.rows(0, n).clone_owned()
}

/// Dense dynamics constraints on `(x^0..x^{n-1}, u^0..u^{nn-1})`.
pub fn dynamics_constraints(p: &Raocp<f64>, x_init: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let tree = &p.tree;
    let (nx, nu) = (p.nx, p.nu);
    let n = tree.num_nodes();
    let nn = tree.num_nonleaf();
    let cols = n * nx + nn * nu;
    let mut c = DMatrix::zeros(n * nx, cols);
    let mut d = DVector::zeros(n * nx);
    for k in 0..nx {
        c[(k, k)] = 1.0;
        d[k] = x_init[k];
    }
    for i in 1..n {
        let a = tree.ancestor(i).unwrap();
        let dy = p.dynamics(i);
        for k in 0..nx {
            let row = i * nx + k;
            c[(row, i * nx + k)] = 1.0;
            for q in 0..nx {
                c[(row, a * nx + q)] -= dy.a[(k, q)];
            }
            for q in 0..nu {
                c[(row, n * nx + a * nu + q)] -= dy.b[(k, q)];
            }
            d[row] = dy.c[k];
        }
    }
    (c, d)
}

/// `[E' -I -I; F' 0 0]`, whose kernel is the set `S2` of one node.
pub fn kernel_matrix(risk: &spock_core::RiskSpec<f64>) -> DMatrix<f64> {
    let (n, ny, nnu) = (risk.n, risk.rows(), risk.n_nu());
    let mut m = DMatrix::zeros(n + nnu, ny + 2 * n);
    m.view_mut((0, 0), (n, ny)).copy_from(&risk.e.transpose());
    for k in 0..n {
        m[(k, ny + k)] = -1.0;
        m[(k, ny + n + k)] = -1.0;
    }
    if nnu > 0 {
        m.view_mut((n, 0), (nnu, ny)).copy_from(&risk.f.transpose());
    }
    m
}
