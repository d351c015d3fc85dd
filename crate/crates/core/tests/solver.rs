mod common;

use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use common::{gauss_vec, rng, scalar_chain, tiny_problem, Tiny};
use nalgebra::DVector;
use spock_core::oracle::{feasibility_report, kkt_report, riccati_tree_oracle};
use spock_core::problem::{BoxSet, NodeConstraint, TerminalConstraint};
use spock_core::solver::{Branch, SolveOptions, Spock};
use spock_core::{Raocp, Raocp32, Spock32, SpockParams, Termination};

fn tight(eps: f64) -> SpockParams<f64> {
    SpockParams { eps_abs: eps, eps_rel: 0.0, max_iters: 50_000, ..SpockParams::default() }
}

fn stack(z: &[f64], eta: &[f64]) -> Vec<f64> {
    z.iter().chain(eta).copied().collect()
}

fn t_of(s: &Spock<f64>, v: &[f64], x_init: &[f64]) -> Vec<f64> {
    let np = s.primal_len();
    let (z, e) = s.cp_operator(&v[..np], &v[np..], x_init);
    stack(&z, &e)
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn feasible_suite() -> Vec<Raocp<f64>> {
    let shapes: [&[usize]; 5] = [&[2, 2], &[3, 1], &[2, 1, 1], &[3, 2], &[1, 1]];
    shapes
        .iter()
        .enumerate()
        .map(|(k, s)| tiny_problem(500 + k as u64, &Tiny { branching: s.to_vec(), bound: 2.0, ..Tiny::default() }))
        .collect()
}

#[test]
fn cp_operator_is_firmly_nonexpansive_in_m_norm() {
    let mut r = rng(51);
    for p in feasible_suite() {
        let s = Spock::new(&p, SpockParams::default()).unwrap();
        let x0 = s.scaled.x0.as_slice().to_vec();
        let n = s.primal_len() + s.dual_len();
        for _ in 0..30 {
            let v = gauss_vec(&mut r, n, 2.0);
            let w = gauss_vec(&mut r, n, 2.0);
            let dt = sub(&t_of(&s, &v, &x0), &t_of(&s, &w, &x0));
            let dv = sub(&v, &w);
            let lhs = s.m_norm(&dt).powi(2);
            let rhs = s.m_inner(&dv, &dt);
            assert!(lhs <= rhs + 1e-8, "{lhs} > {rhs}");
        }
    }
}

#[test]
fn converged_point_is_a_fixed_point() {
    let p = tiny_problem(52, &Tiny { bound: 2.0, ..Tiny::default() });
    let s = Spock::new(&p, tight(1e-10)).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(sol.status.termination, Termination::Converged);
    let v = stack(&sol.z, &sol.eta);
    let tv = t_of(&s, &v, s.scaled.x0.as_slice());
    let r = sub(&v, &tv);
    assert!(r.iter().all(|x| x.abs() <= 1e-8), "{}", r.iter().fold(0.0f64, |m, x| m.max(x.abs())));
}

#[test]
fn residuals_vanish_at_equal_iterates_and_scale_with_step() {
    let p = tiny_problem(53, &Tiny::default());
    let s = Spock::new(&p, SpockParams::default()).unwrap();
    let mut r = rng(53);
    let z = gauss_vec(&mut r, s.primal_len(), 1.0);
    let e = gauss_vec(&mut r, s.dual_len(), 1.0);
    let (x1, x2) = s.residuals_xi(&z, &e, &z, &e);
    assert!(x1.iter().chain(&x2).all(|&v| v == 0.0));

    let zp = gauss_vec(&mut r, s.primal_len(), 1.0);
    let ep = gauss_vec(&mut r, s.dual_len(), 1.0);
    let half = Spock::new(&p, SpockParams { alpha: Some(s.alpha / 2.0), ..SpockParams::default() }).unwrap();
    let (a1, a2) = s.residuals_xi(&z, &e, &zp, &ep);
    let (b1, b2) = half.residuals_xi(&z, &e, &zp, &ep);
    // remove the step-independent parts and compare dz/alpha, deta/alpha
    let dz = sub(&z, &zp);
    let de = sub(&e, &ep);
    for k in 0..dz.len() {
        let ta = a1[k] - (a1[k] - dz[k] / s.alpha);
        let tb = b1[k] - (b1[k] - dz[k] / half.alpha);
        assert!((tb - 2.0 * ta).abs() <= 1e-12 * ta.abs().max(1.0));
        assert!(((b1[k] - a1[k]) - dz[k] / s.alpha).abs() <= 1e-10 * (dz[k] / s.alpha).abs().max(1.0));
    }
    for k in 0..de.len() {
        assert!(((b2[k] - a2[k]) - de[k] / s.alpha).abs() <= 1e-10 * (de[k] / s.alpha).abs().max(1.0));
    }
}

#[test]
fn converged_runs_satisfy_kkt_conditions() {
    let eps = 1e-6;
    let mut suite = feasible_suite();
    for seed in 0..7 {
        let shape = [vec![2, 2], vec![3, 2], vec![2, 1, 2]][seed % 3].clone();
        let cfg = Tiny { branching: shape, gamma: 0.2 + 0.1 * seed as f64, bound: 1.5, ..Tiny::default() };
        suite.push(tiny_problem(700 + seed as u64, &cfg));
    }
    for p in suite {
        let s = Spock::new(&p, tight(eps)).unwrap();
        let sol = s.spock_solve(SolveOptions::default()).unwrap();
        assert_eq!(sol.status.termination, Termination::Converged);
        let k = kkt_report(&s, &sol.z, &sol.eta);
        assert!(k.primal <= eps && k.normal_cone <= eps && k.stationarity <= eps, "{k:?}");
        let f = feasibility_report(&s, &sol, &p.x0);
        assert!(f.dynamics <= 1e-8, "{f:?}");
        assert!(f.boxes <= eps && f.conic() <= eps, "{f:?}");
        // the slack factors as (cone gap) * (|h| + t) with |h| + t close to 1 + tau
        let m = (p.nx + p.nu + 2) as f64;
        assert!(f.epigraph_rel <= (2.0 * m).sqrt() * eps, "{f:?}");
    }
}

#[test]
fn zero_problem_has_zero_solution() {
    let mut p = tiny_problem(54, &Tiny { linear_terms: false, ..Tiny::default() });
    p.x0.fill(0.0);
    let s = Spock::new(&p, tight(1e-8)).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(sol.status.termination, Termination::Converged);
    assert!(sol.cost.abs() <= 1e-6, "{}", sol.cost);
    assert!(sol.inputs.iter().all(|u| u.amax() <= 1e-6));
}

#[test]
fn risk_neutral_instances_match_riccati() {
    for seed in 0..6 {
        let shape = [vec![2, 2], vec![3, 1, 1], vec![2, 3]][seed % 3].clone();
        let cfg = Tiny { branching: shape, gamma: 1.0, bound: f64::INFINITY, rank_deficient_q: seed % 2 == 1, ..Tiny::default() };
        let p = tiny_problem(60 + seed as u64, &cfg);
        let oracle = riccati_tree_oracle(&p).unwrap();
        let s = Spock::new(&p, SpockParams { eps_rel: 1e-6, ..tight(1e-6) }).unwrap();
        let sol = s.spock_solve(SolveOptions::default()).unwrap();
        assert_eq!(sol.status.termination, Termination::Converged);
        let rel = (sol.cost - oracle.cost).abs() / oracle.cost.abs().max(1.0);
        assert!(rel <= 1e-4, "seed {seed}: {} vs {}", sol.cost, oracle.cost);
    }
}

#[test]
fn plain_iterates_approach_the_solution_monotonically() {
    let p = tiny_problem(55, &Tiny { bound: 2.0, ..Tiny::default() });
    let s = Spock::new(&p, tight(1e-11)).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(sol.status.termination, Termination::Converged);
    let star = stack(&sol.z, &sol.eta);
    let x0 = s.scaled.x0.as_slice().to_vec();
    let mut v = vec![0.0; star.len()];
    let mut last = s.m_norm(&sub(&v, &star));
    for _ in 0..300 {
        v = t_of(&s, &v, &x0);
        let d = s.m_norm(&sub(&v, &star));
        assert!(d <= last + 1e-9, "{d} > {last}");
        last = d;
    }
}

#[test]
fn plain_and_accelerated_solvers_agree() {
    let eps = 1e-7;
    let mut spock_iters = Vec::new();
    let mut cp_iters = Vec::new();
    for p in feasible_suite() {
        let s = Spock::new(&p, tight(eps)).unwrap();
        let a = s.spock_solve(SolveOptions::default()).unwrap();
        let b = s.cp_solve(SolveOptions::default()).unwrap();
        assert_eq!(a.status.termination, Termination::Converged);
        assert_eq!(b.status.termination, Termination::Converged);
        assert!((a.cost - b.cost).abs() <= 2e-5 * a.cost.abs().max(1.0), "{} vs {}", a.cost, b.cost);
        assert!((&a.inputs[0] - &b.inputs[0]).amax() <= 1e-4);
        spock_iters.push(a.status.iterations);
        cp_iters.push(b.status.iterations);
    }
    spock_iters.sort();
    cp_iters.sort();
    assert!(spock_iters[2] <= cp_iters[2], "{spock_iters:?} vs {cp_iters:?}");
}

#[test]
fn plain_and_accelerated_trajectories_agree_when_unique() {
    let eps = 1e-7;
    for seed in 0..3 {
        let p = tiny_problem(520 + seed, &Tiny { gamma: 1.0, bound: 0.8, branching: vec![2, 2, 1], ..Tiny::default() });
        let s = Spock::new(&p, tight(eps)).unwrap();
        let a = s.spock_solve(SolveOptions::default()).unwrap();
        let b = s.cp_solve(SolveOptions::default()).unwrap();
        assert_eq!(a.status.termination, Termination::Converged);
        assert_eq!(b.status.termination, Termination::Converged);
        for (u, w) in a.inputs.iter().zip(&b.inputs) {
            assert!((u - w).amax() <= 1e-4, "{}", (u - w).amax());
        }
    }
}

#[test]
fn scaling_does_not_change_the_solution() {
    // expectation at every node keeps the minimizer unique
    let mut p = tiny_problem(56, &Tiny { gamma: 1.0, bound: 2.0, branching: vec![3, 2], ..Tiny::default() });
    for c in &mut p.stage_costs {
        c.q *= 9.0;
    }
    let a = Spock::new(&p, tight(1e-9)).unwrap().spock_solve(SolveOptions::default()).unwrap();
    let plain = SpockParams { precondition: false, ..tight(1e-9) };
    let b = Spock::new(&p, plain).unwrap().spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(a.status.termination, Termination::Converged);
    assert_eq!(b.status.termination, Termination::Converged);
    assert!((a.cost - b.cost).abs() <= 1e-6 * a.cost.abs().max(1.0));
    for (x, y) in a.states.iter().zip(&b.states) {
        assert!((x - y).amax() <= 1e-6);
    }
    for (x, y) in a.inputs.iter().zip(&b.inputs) {
        assert!((x - y).amax() <= 1e-6);
    }
}

#[test]
fn branch_counts_and_reference_residual() {
    for p in feasible_suite() {
        let s = Spock::new(&p, tight(1e-8)).unwrap();
        let mut branches = Vec::new();
        let mut cb = |pr: &spock_core::solver::Progress| branches.push(pr.branch);
        let sol = s.spock_solve(SolveOptions { callback: Some(&mut cb), ..SolveOptions::default() }).unwrap();
        let st = &sol.status;
        assert_eq!(st.k0 + st.k1 + st.k2 + st.stalled_steps, st.iterations);
        assert_eq!(branches.len(), st.iterations);
        assert_eq!(branches.iter().filter(|b| **b == Branch::K0).count(), st.k0);
        assert!(st.zeta_history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(st.residual_history.len(), st.iterations);
    }
}

#[test]
fn solves_are_deterministic_across_threads() {
    let p = tiny_problem(57, &Tiny { branching: vec![4, 2, 2], nx: 3, nu: 2, bound: 2.0, ..Tiny::default() });
    let s = Spock::new(&p, SpockParams { max_iters: 300, ..tight(1e-9) }).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| s.spock_solve(SolveOptions::default()).unwrap())
    };
    let a = run(1);
    let b = run(4);
    let c = run(1);
    assert_eq!(a.z, b.z);
    assert_eq!(a.eta, b.eta);
    assert_eq!(a.z, c.z);
    assert_eq!(a.status.residual_history, b.status.residual_history);
}

#[test]
fn warm_start_from_solution_stops_at_once() {
    let p = tiny_problem(58, &Tiny { bound: 2.0, ..Tiny::default() });
    let s = Spock::new(&p, tight(1e-7)).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    let again = s
        .spock_solve(SolveOptions { warm_start: Some((sol.z.clone(), sol.eta.clone())), ..SolveOptions::default() })
        .unwrap();
    assert_eq!(again.status.termination, Termination::Converged);
    assert!(again.status.iterations <= 2, "{}", again.status.iterations);
    assert!(s
        .spock_solve(SolveOptions { warm_start: Some((vec![0.0; 3], vec![])), ..SolveOptions::default() })
        .is_err());
}

#[test]
fn stop_conditions() {
    let p = tiny_problem(59, &Tiny::default());
    let s = Spock::new(&p, SpockParams { max_iters: 1, ..tight(1e-12) }).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(sol.status.termination, Termination::MaxIters);
    assert_eq!(sol.status.iterations, 1);
    assert_eq!(s.cp_solve(SolveOptions::default()).unwrap().status.termination, Termination::MaxIters);

    let cancel = Arc::new(AtomicBool::new(true));
    let s = Spock::new(&p, tight(1e-12)).unwrap();
    let sol = s.spock_solve(SolveOptions { cancel: Some(cancel), ..SolveOptions::default() }).unwrap();
    assert_eq!(sol.status.termination, Termination::Cancelled);

    let s = Spock::new(&p, SpockParams { time_limit: Some(Duration::ZERO), ..tight(1e-12) }).unwrap();
    assert_eq!(s.cp_solve(SolveOptions::default()).unwrap().status.termination, Termination::TimeLimit);

    assert!(Spock::new(&p, SpockParams { beta: 1.0, ..SpockParams::default() }).is_err());
    assert!(Spock::new(&p, SpockParams { alpha: Some(1e3), ..SpockParams::default() }).is_err());
}

/// Projection onto `SOC + a`, written out for the hand-stepped check.
fn soc_shift(v: &[f64], a: &[f64]) -> Vec<f64> {
    let w: Vec<f64> = v.iter().zip(a).map(|(x, y)| x - y).collect();
    let d = w.len();
    let h = w[..d - 1].iter().map(|x| x * x).sum::<f64>().sqrt();
    let t = w[d - 1];
    let p: Vec<f64> = if h <= t {
        w.clone()
    } else if h <= -t {
        vec![0.0; d]
    } else {
        let m = (h + t) / 2.0;
        w[..d - 1].iter().map(|x| x * m / h).chain([m]).collect()
    };
    p.iter().zip(a).map(|(x, y)| x + y).collect()
}

#[test]
fn single_step_on_scalar_chain() {
    // x1 = x0 + u0, unit costs, expectation risk, no constraints
    let p = scalar_chain(1, 1.0, 1.0);
    let alpha = 0.3;
    let s = Spock::new(&p, SpockParams { alpha: Some(alpha), precondition: false, ..SpockParams::default() }).unwrap();
    let pl = &s.op.primal;
    let dl = &s.op.dual;
    let (zp, ep) = s.cp_operator(&vec![0.0; s.primal_len()], &vec![0.0; s.dual_len()], &[1.0]);

    // primal: s0 = -alpha; (x1, u0) = argmin x1^2 + u0^2 with x1 = 1 + u0
    let mut want_z = vec![0.0; s.primal_len()];
    want_z[0] = -alpha;
    want_z[pl.x(0).start] = 1.0;
    want_z[pl.x(1).start] = 0.5;
    want_z[pl.u(0).start] = -0.5;
    for (g, w) in zp.iter().zip(&want_z) {
        assert!((g - w).abs() <= 1e-15, "{zp:?}");
    }

    // dual: eta+ = p - alpha proj(p / alpha) with p = alpha L(2 z+)
    let half = [0.0, 0.0, 0.5, -0.5];
    let mut want_e = vec![0.0; s.dual_len()];
    want_e[dl.scalar(0)] = alpha * (2.0 * -alpha) - alpha * (2.0 * -alpha).max(0.0);
    let stage = [2.0, -1.0, 0.0, 0.0];
    let ps = soc_shift(&stage, &half);
    for k in 0..4 {
        want_e[dl.soc(1).start + k] = alpha * (stage[k] - ps[k]);
    }
    let leaf = [1.0, 0.0, 0.0];
    let pt = soc_shift(&leaf, &[0.0, 0.5, -0.5]);
    for k in 0..3 {
        want_e[dl.leaf_soc(1).start + k] = alpha * (leaf[k] - pt[k]);
    }
    for (k, (g, w)) in ep.iter().zip(&want_e).enumerate() {
        assert!((g - w).abs() <= 1e-14, "entry {k}: {g} vs {w}");
    }
    // the stage cone block by hand: |(2, -1, -1/2)| = sqrt(5.25)
    let h = 5.25f64.sqrt();
    let m = (h + 0.5) / 2.0;
    assert!((ep[dl.soc(1).start] - alpha * (2.0 - 2.0 * m / h)).abs() <= 1e-14);
}

#[test]
fn single_precision_smoke() {
    let p = tiny_problem(61, &Tiny { bound: 2.0, ..Tiny::default() });
    let p32: Raocp32 = p.cast();
    let prm = SpockParams::<f32> { eps_abs: 1e-3, eps_rel: 1e-3, ..SpockParams::default() };
    let s32 = Spock32::new(&p32, prm).unwrap();
    let a = s32.spock_solve(SolveOptions::default()).unwrap();
    let b = Spock::new(&p, SpockParams::default()).unwrap().spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(a.status.termination, Termination::Converged);
    assert!((a.cost as f64 - b.cost).abs() <= 1e-2 * b.cost.abs().max(1.0), "{} vs {}", a.cost, b.cost);
}

#[test]
fn different_initial_state() {
    let p = tiny_problem(62, &Tiny { gamma: 1.0, bound: f64::INFINITY, ..Tiny::default() });
    let s = Spock::new(&p, tight(1e-8)).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.2]);
    let sol = s.spock_solve(SolveOptions { x_init: Some(x.clone()), ..SolveOptions::default() }).unwrap();
    let mut q = p.clone();
    q.x0 = x;
    let oracle = riccati_tree_oracle(&q).unwrap();
    assert!((sol.cost - oracle.cost).abs() <= 1e-5 * oracle.cost.abs().max(1.0));
}

#[test]
fn hard_constraints_bind() {
    // a tight input box changes the optimum away from the unconstrained one
    let mut p = tiny_problem(63, &Tiny { gamma: 1.0, bound: f64::INFINITY, ..Tiny::default() });
    let free = riccati_tree_oracle(&p).unwrap();
    let cap = free.inputs.iter().fold(0.0f64, |m, u| m.max(u.amax())) * 0.5;
    let nx = p.nx;
    for c in &mut p.constraints {
        *c = NodeConstraint::state_input_box(
            BoxSet::symmetric(DVector::from_element(nx, 1e3)),
            BoxSet::symmetric(DVector::from_element(1, cap)),
        );
    }
    for c in &mut p.terminal_constraints {
        *c = TerminalConstraint::state_box(BoxSet::symmetric(DVector::from_element(nx, 1e3)));
    }
    let s = Spock::new(&p, tight(1e-7)).unwrap();
    let sol = s.spock_solve(SolveOptions::default()).unwrap();
    assert_eq!(sol.status.termination, Termination::Converged);
    assert!(sol.cost >= free.cost - 1e-6);
    assert!(sol.inputs.iter().all(|u| u.amax() <= cap + 1e-6));
    let f = feasibility_report(&s, &sol, &p.x0);
    assert!(f.boxes <= 1e-7 && f.dynamics <= 1e-8, "{f:?}");
}
