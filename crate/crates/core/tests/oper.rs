mod common;

use common::{gauss_vec, rng, scalar_chain, tiny_problem, Tiny, SMALL_SHAPES};
use nalgebra::{DMatrix, DVector};
use spock_core::oper::LinearOperator;
use spock_core::problem::{precondition, BoxSet, NodeConstraint};
use spock_core::Raocp;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn nrm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest singular value through the Gram matrix.
fn dense_norm(m: &DMatrix<f64>) -> f64 {
    (m.transpose() * m).symmetric_eigen().eigenvalues.max().sqrt()
}

fn apply(op: &LinearOperator<f64>, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.dual.len()];
    op.apply(z, &mut out);
    out
}

fn adjoint(op: &LinearOperator<f64>, eta: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.primal.len()];
    op.adjoint(eta, &mut out);
    out
}

fn suite() -> Vec<Raocp<f64>> {
    let mut v = Vec::new();
    for (s, shape) in SMALL_SHAPES.iter().enumerate() {
        let cfg = Tiny { branching: shape.to_vec(), rank_deficient_q: s % 3 == 0, ..Tiny::default() };
        v.push(tiny_problem(200 + s as u64, &cfg));
    }
    v.push(tiny_problem(230, &Tiny { bound: f64::INFINITY, gamma: 0.0, ..Tiny::default() }));
    v
}

#[test]
fn adjoint_identity() {
    let mut r = rng(41);
    for p in suite() {
        let op = LinearOperator::new(&p).unwrap();
        for _ in 0..100 {
            let z = gauss_vec(&mut r, op.primal.len(), 1.0);
            let eta = gauss_vec(&mut r, op.dual.len(), 1.0);
            let lhs = dot(&apply(&op, &z), &eta);
            let rhs = dot(&z, &adjoint(&op, &eta));
            let scale = nrm(&z) * nrm(&eta);
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn operator_is_linear() {
    let mut r = rng(42);
    let p = tiny_problem(42, &Tiny::default());
    let op = LinearOperator::new(&p).unwrap();
    assert!(apply(&op, &vec![0.0; op.primal.len()]).iter().all(|&v| v == 0.0));
    assert!(adjoint(&op, &vec![0.0; op.dual.len()]).iter().all(|&v| v == 0.0));
    for _ in 0..20 {
        let z = gauss_vec(&mut r, op.primal.len(), 1.0);
        let w = gauss_vec(&mut r, op.primal.len(), 1.0);
        let (a, b) = (1.7, -0.3);
        let comb: Vec<f64> = z.iter().zip(&w).map(|(x, y)| a * x + b * y).collect();
        let lhs = apply(&op, &comb);
        let (lz, lw) = (apply(&op, &z), apply(&op, &w));
        let rhs: Vec<f64> = lz.iter().zip(&lw).map(|(x, y)| a * x + b * y).collect();
        let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(x, y)| x - y).collect();
        assert!(nrm(&diff) <= 1e-12 * nrm(&rhs));
    }
}

#[test]
fn chain_cone_block_with_identity_weights() {
    let mut p = scalar_chain(2, 0.7, 1.3);
    let unit = || BoxSet::symmetric(DVector::from_element(1, 1.0));
    p.constraints = vec![NodeConstraint::state_input_box(unit(), unit()); 2];
    let op = LinearOperator::new(&p).unwrap();
    let pl = &op.primal;
    let mut z = vec![0.0; pl.len()];
    z[pl.x(0).start] = 0.4;
    z[pl.u(0).start] = -0.9;
    z[pl.tau_of(1)] = 2.5;
    let eta = apply(&op, &z);
    assert_eq!(&eta[op.dual.soc(1)], &[0.4, -0.9, 1.25, 1.25]);
    assert_eq!(&eta[op.dual.con(0)], &[0.4, -0.9]);
}

#[test]
fn scalar_row_adjoint_touches_s_and_y() {
    let p = tiny_problem(43, &Tiny { branching: vec![3, 2], ..Tiny::default() });
    let op = LinearOperator::new(&p).unwrap();
    for i in 0..p.tree.num_nonleaf() {
        let mut eta = vec![0.0; op.dual.len()];
        eta[op.dual.scalar(i)] = 1.0;
        let z = adjoint(&op, &eta);
        let yr = op.primal.y(i);
        let si = op.primal.s_of(i);
        for (k, &v) in z.iter().enumerate() {
            if k == si {
                assert_eq!(v, 1.0);
            } else if yr.contains(&k) {
                assert_eq!(v, -p.risk(i).b[k - yr.start]);
            } else {
                assert_eq!(v, 0.0);
            }
        }
    }
}

/// Rows of `L` that a primal entry may touch.
fn predicted_rows(op: &LinearOperator<f64>, p: &Raocp<f64>) -> Vec<Vec<usize>> {
    let pl = &op.primal;
    let dl = &op.dual;
    let tree = &p.tree;
    let mut rows = vec![Vec::new(); pl.len()];
    let mut add = |cols: std::ops::Range<usize>, r: std::ops::Range<usize>| {
        for c in cols {
            rows[c].extend(r.clone());
        }
    };
    for i in 0..tree.num_nonleaf() {
        for cols in [pl.x(i), pl.u(i)] {
            add(cols.clone(), dl.con(i));
            for c in tree.children(i) {
                add(cols.clone(), dl.soc(c));
            }
        }
        add(pl.y(i), dl.y(i));
        add(pl.y(i), dl.scalar(i)..dl.scalar(i) + 1);
        let s = pl.s_of(i);
        add(s..s + 1, dl.scalar(i)..dl.scalar(i) + 1);
        for c in tree.children(i) {
            let t = pl.tau_of(c);
            add(t..t + 1, dl.soc(c));
        }
    }
    for j in tree.leaves() {
        add(pl.x(j), dl.leaf_con(j));
        add(pl.x(j), dl.leaf_soc(j));
        let s = pl.s_of(j);
        add(s..s + 1, dl.leaf_soc(j));
    }
    rows
}

#[test]
fn operator_has_predicted_block_structure() {
    for p in suite() {
        let op = LinearOperator::new(&p).unwrap();
        let l = op.materialize();
        let allowed = predicted_rows(&op, &p);
        for c in 0..l.ncols() {
            for r in 0..l.nrows() {
                if l[(r, c)] != 0.0 {
                    assert!(allowed[c].contains(&r), "entry ({r}, {c}) outside its block");
                }
            }
        }
    }
}

#[test]
fn norm_estimate_matches_dense_norm() {
    for p in suite().into_iter().filter(|p| p.tree.num_nodes() <= 10) {
        let op = LinearOperator::new(&p).unwrap();
        let dense = dense_norm(&op.materialize());
        let est = op.estimate_norm();
        assert!(est.converged);
        assert!((est.estimate - dense).abs() <= 1e-6 * dense, "{} vs {dense}", est.estimate);
        assert!((est.bound - dense).abs() <= 1e-10 * dense);
    }
}

#[test]
fn block_bound_dominates_estimate() {
    for p in suite() {
        let op = LinearOperator::new(&p).unwrap();
        let est = op.estimate_norm();
        assert!(est.estimate <= est.bound * (1.0 + 1e-6));
    }
}

#[test]
fn quadrupled_cost_doubles_norm() {
    let mut p = scalar_chain(3, 1.0, 1.0);
    let big = |v: f64| DMatrix::from_element(1, 1, v);
    for c in &mut p.stage_costs {
        c.q = big(100.0);
        c.r = big(1e-4);
    }
    p.terminal_costs[0].q = big(100.0);
    let before = LinearOperator::new(&p).unwrap().estimate_norm();
    for c in &mut p.stage_costs {
        c.q *= 4.0;
    }
    p.terminal_costs[0].q *= 4.0;
    let after = LinearOperator::new(&p).unwrap().estimate_norm();
    assert!((before.bound - 10.0).abs() < 1e-12);
    assert!((after.estimate / before.estimate - 2.0).abs() <= 1e-6);
}

#[test]
fn m_norm_bounds() {
    let mut r = rng(44);
    let p = tiny_problem(44, &Tiny { branching: vec![2, 3], ..Tiny::default() });
    let op = LinearOperator::new(&p).unwrap();
    let bound = op.block_norm_bound();
    let alpha = 0.99 / bound;
    for _ in 0..50 {
        let z = gauss_vec(&mut r, op.primal.len(), 1.0);
        let eta = gauss_vec(&mut r, op.dual.len(), 1.0);
        let zero = vec![0.0; op.dual.len()];
        assert!((op.m_norm(&z, &zero, alpha) - nrm(&z)).abs() <= 1e-12 * nrm(&z));
        let plain = (dot(&z, &z) + dot(&eta, &eta)).sqrt();
        assert!((op.m_norm(&z, &eta, 0.0) - plain).abs() <= 1e-12 * plain);
        let m2 = op.m_norm(&z, &eta, alpha).powi(2);
        let v2 = plain * plain;
        assert!(m2 >= (1.0 - 0.99) * v2 * (1.0 - 1e-9));
        assert!(m2 <= (1.0 + 0.99) * v2 * (1.0 + 1e-9));
        let inner = op.m_inner(&z, &eta, &z, &eta, alpha);
        assert!((inner - m2).abs() <= 1e-10 * v2);
    }
    // a vector aligned with the top singular pair gets close to the lower bound
    assert_eq!(op.m_norm(&vec![0.0; op.primal.len()], &vec![0.0; op.dual.len()], alpha), 0.0);
}

#[test]
fn operator_is_thread_count_independent() {
    let p = tiny_problem(45, &Tiny { branching: vec![4, 3, 2], nx: 3, nu: 2, ..Tiny::default() });
    let op = LinearOperator::new(&p).unwrap();
    let mut r = rng(45);
    let z = gauss_vec(&mut r, op.primal.len(), 1.0);
    let eta = gauss_vec(&mut r, op.dual.len(), 1.0);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| (apply(&op, &z), adjoint(&op, &eta)))
    };
    let one = run(1);
    assert_eq!(run(4), one);
    assert_eq!(run(3), one);
}

#[test]
fn preconditioning_does_not_increase_norm() {
    let mut r = rng(46);
    for (s, shape) in SMALL_SHAPES.iter().enumerate() {
        let mut p = tiny_problem(300 + s as u64, &Tiny { branching: shape.to_vec(), ..Tiny::default() });
        // uneven cost scales, which the diagonal scaling is meant to even out
        let f = 10f64.powf(gauss_vec(&mut r, 1, 1.0)[0]);
        for c in &mut p.stage_costs {
            c.q *= f;
        }
        let before = LinearOperator::new(&p).unwrap().block_norm_bound();
        let (scaled, _) = precondition(&p);
        let after = LinearOperator::new(&scaled).unwrap().block_norm_bound();
        assert!(after <= before * (1.0 + 1e-12), "shape {shape:?}: {after} > {before}");
    }
}
