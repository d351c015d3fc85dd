//! Slow reference computations: dynamic programming for the risk-neutral
//! case, nested risk of a fixed policy, and feasibility/optimality reports
//! that rebuild every set densely.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::null_basis;
use crate::problem::{Raocp, StageSoc, TerminalSoc};
use crate::proj::{proj_cone, proj_translated_soc};
use crate::risk::{eval_risk_primal, RiskKind};
use crate::scalar::Real;
use crate::solver::{Solution, Spock};

/// Value function `V(x) = x'Wx + w'x + omega`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadValue {
    pub w_mat: DMatrix<f64>,
    pub w_lin: DVector<f64>,
    pub omega: f64,
}

impl QuadValue {
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (&self.w_mat * x).dot(x) + self.w_lin.dot(x) + self.omega
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub cost: f64,
    pub values: Vec<QuadValue>,
    /// Feedback `u = K x + k` per non-leaf node.
    pub gains: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
}

fn to64<T: Real>(m: &DMatrix<T>) -> DMatrix<f64> {
    m.map(|v| v.as_f64())
}

fn v64<T: Real>(v: &DVector<T>) -> DVector<f64> {
    v.map(|x| x.as_f64())
}

/// Conditional distribution the risk of node `i` averages with when it is an
/// expectation.
fn expectation_weights<T: Real>(p: &Raocp<T>, i: usize) -> Result<Vec<f64>> {
    match &p.risk(i).kind {
        RiskKind::Avar { gamma, pi } if *gamma == 1.0 => Ok(pi.clone()),
        _ => Err(Error::InvalidParameter(format!("risk of node {i} is not an expectation"))),
    }
}

/// Dynamic programming over the tree for expectation risks, ignoring the
/// constraints. Returns the optimal cost from the problem's `x0` and the
/// closed-loop trajectory.
pub fn riccati_tree_oracle<T: Real>(p: &Raocp<T>) -> Result<RiccatiSolution> {
    let tree = &p.tree;
    let (nx, nu) = (p.nx, p.nu);
    let n = tree.num_nodes();
    let nn = tree.num_nonleaf();
    let mut values: Vec<Option<QuadValue>> = vec![None; n];
    for j in tree.leaves() {
        let t = p.terminal_cost(j);
        values[j] = Some(QuadValue { w_mat: to64(&t.q), w_lin: v64(&t.q_lin), omega: 0.0 });
    }
    let mut gains = vec![(DMatrix::zeros(nu, nx), DVector::zeros(nu)); nn];
    for i in (0..nn).rev() {
        let pis = expectation_weights(p, i)?;
        let mut h = DMatrix::<f64>::zeros(nx + nu, nx + nu);
        let mut g = DVector::<f64>::zeros(nx + nu);
        let mut cst = 0.0;
        for (pc, c) in pis.iter().zip(tree.children(i)) {
            let d = p.dynamics(c);
            let (a, b, cc) = (to64(&d.a), to64(&d.b), v64(&d.c));
            let s = p.stage_cost(c);
            let v = values[c].as_ref().expect("children first");
            let mut ab = DMatrix::zeros(nx, nx + nu);
            ab.view_mut((0, 0), (nx, nx)).copy_from(&a);
            ab.view_mut((0, nx), (nx, nu)).copy_from(&b);
            let mut blk = DMatrix::zeros(nx + nu, nx + nu);
            blk.view_mut((0, 0), (nx, nx)).copy_from(&to64(&s.q));
            blk.view_mut((nx, nx), (nu, nu)).copy_from(&to64(&s.r));
            blk += ab.transpose() * &v.w_mat * &ab;
            h += blk * *pc;
            let mut lin = DVector::zeros(nx + nu);
            lin.rows_mut(0, nx).copy_from(&v64(&s.q_lin));
            lin.rows_mut(nx, nu).copy_from(&v64(&s.r_lin));
            lin += ab.transpose() * (&v.w_mat * &cc * 2.0 + &v.w_lin);
            g += lin * *pc;
            cst += pc * ((&v.w_mat * &cc).dot(&cc) + v.w_lin.dot(&cc) + v.omega);
        }
        let huu = h.view((nx, nx), (nu, nu)).clone_owned();
        let hux = h.view((nx, 0), (nu, nx)).clone_owned();
        let hxx = h.view((0, 0), (nx, nx)).clone_owned();
        let gx = g.rows(0, nx).clone_owned();
        let gu = g.rows(nx, nu).clone_owned();
        let lu = huu.clone().lu();
        let k_mat = -lu.solve(&hux).ok_or(Error::Cholesky(i))?;
        let k_vec = -lu.solve(&gu).ok_or(Error::Cholesky(i))? * 0.5;
        let w_mat = &hxx + hux.transpose() * &k_mat;
        let w_mat = (&w_mat + w_mat.transpose()) * 0.5;
        let w_lin = &gx + k_mat.transpose() * &gu;
        let omega = (&huu * &k_vec).dot(&k_vec) + gu.dot(&k_vec) + cst;
        values[i] = Some(QuadValue { w_mat, w_lin, omega });
        gains[i] = (k_mat, k_vec);
    }
    let values: Vec<QuadValue> = values.into_iter().map(|v| v.expect("all nodes")).collect();
    let mut states = vec![DVector::zeros(nx); n];
    let mut inputs = vec![DVector::zeros(nu); nn];
    states[0] = v64(&p.x0);
    for i in 0..nn {
        inputs[i] = &gains[i].0 * &states[i] + &gains[i].1;
        for c in tree.children(i) {
            let d = p.dynamics(c);
            states[c] = to64(&d.a) * &states[i] + to64(&d.b) * &inputs[i] + v64(&d.c);
        }
    }
    Ok(RiccatiSolution { cost: values[0].eval(&states[0]), values, gains, states, inputs })
}

/// Rolls out `inputs` from `x_init` and evaluates the nested risk of the
/// resulting cost, leaves to root.
pub fn nested_risk_eval<T: Real>(p: &Raocp<T>, inputs: &[DVector<f64>], x_init: &DVector<f64>) -> Result<f64> {
    let tree = &p.tree;
    let n = tree.num_nodes();
    let nn = tree.num_nonleaf();
    if inputs.len() != nn {
        return Err(Error::Dimension("one input per non-leaf node".into()));
    }
    let states = rollout(p, inputs, x_init);
    let mut value = vec![0.0; n];
    for j in tree.leaves() {
        let t = p.terminal_cost(j);
        value[j] = (to64(&t.q) * &states[j]).dot(&states[j]) + v64(&t.q_lin).dot(&states[j]);
    }
    for i in (0..nn).rev() {
        let z: Vec<f64> = tree
            .children(i)
            .map(|c| {
                let s = p.stage_cost(c);
                let (x, u) = (&states[i], &inputs[i]);
                (to64(&s.q) * x).dot(x) + (to64(&s.r) * u).dot(u) + v64(&s.q_lin).dot(x) + v64(&s.r_lin).dot(u) + value[c]
            })
            .collect();
        value[i] = eval_risk_primal(p.risk(i), &z)?;
    }
    Ok(value[0])
}

/// States produced by `inputs` from `x_init`.
pub fn rollout<T: Real>(p: &Raocp<T>, inputs: &[DVector<f64>], x_init: &DVector<f64>) -> Vec<DVector<f64>> {
    let tree = &p.tree;
    let mut states = vec![DVector::zeros(p.nx); tree.num_nodes()];
    states[0] = x_init.clone();
    for i in 0..tree.num_nonleaf() {
        for c in tree.children(i) {
            let d = p.dynamics(c);
            states[c] = to64(&d.a) * &states[i] + to64(&d.b) * &inputs[i] + v64(&d.c);
        }
    }
    states
}

/// Largest dynamics residual (infinity norm, including `x^0 = x_init`) and
/// largest box violation of a state/input trajectory.
pub fn trajectory_violations<T: Real>(
    p: &Raocp<T>,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    x_init: &DVector<f64>,
) -> (f64, f64) {
    let tree = &p.tree;
    let mut dynamics = (&xs[0] - x_init).amax();
    for c in 1..tree.num_nodes() {
        let a = tree.ancestor(c).expect("non-root");
        let d = p.dynamics(c);
        let r = &xs[c] - (to64(&d.a) * &xs[a] + to64(&d.b) * &us[a] + v64(&d.c));
        dynamics = dynamics.max(r.amax());
    }
    let mut boxes: f64 = 0.0;
    let mut check = |img: DVector<f64>, lo: &DVector<T>, hi: &DVector<T>| {
        for k in 0..img.len() {
            boxes = boxes.max((lo[k].as_f64() - img[k]).max(img[k] - hi[k].as_f64()));
        }
    };
    for i in 0..tree.num_nonleaf() {
        let c = p.constraint(i);
        check(to64(&c.gamma_x) * &xs[i] + to64(&c.gamma_u) * &us[i], &c.set.lo, &c.set.hi);
    }
    for j in tree.leaves() {
        let c = p.terminal_constraint(j);
        check(to64(&c.gamma) * &xs[j], &c.set.lo, &c.set.hi);
    }
    (dynamics, boxes)
}

/// Largest violations of every constraint of the reformulated problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FeasibilityReport {
    /// `max |x^c - A x - B u - c|_inf` and `|x^0 - x_init|_inf`, original units.
    pub dynamics: f64,
    /// Largest box violation of state/input/terminal constraints, original units.
    pub boxes: f64,
    /// Largest entry of the gap between a cost cone block and its projection.
    pub soc_distance: f64,
    /// Largest residual of `E'y = tau + s`, `F'y = 0`.
    pub kernel: f64,
    /// Same for the `y` blocks and the dual cone.
    pub dual_cone: f64,
    /// Largest violation of `b'y <= s`.
    pub risk_bound: f64,
    /// Largest violation of `l(x, u) <= tau` and `l_N(x) <= s`.
    pub epigraph: f64,
    /// Same violation divided by `1 + |tau|`; comparable with the cone
    /// distances, which bound it up to a small constant.
    pub epigraph_rel: f64,
}

impl FeasibilityReport {
    /// Largest of the cone and kernel residuals.
    pub fn conic(&self) -> f64 {
        self.soc_distance.max(self.kernel).max(self.dual_cone).max(self.risk_bound)
    }
}

fn dist<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (&x, &y)| m.max((x - y).as_f64().abs()))
}

/// Checks a solution against the original problem (dynamics, boxes, cost
/// epigraphs) and the scaled reformulation (cones, kernel conditions).
pub fn feasibility_report<T: Real>(spock: &Spock<T>, sol: &Solution<T>, x_init: &DVector<T>) -> FeasibilityReport {
    let p = &spock.original;
    let tree = &p.tree;
    let xs: Vec<DVector<f64>> = sol.states.iter().map(v64).collect();
    let us: Vec<DVector<f64>> = sol.inputs.iter().map(v64).collect();
    let (dynamics, boxes) = trajectory_violations(p, &xs, &us, &v64(x_init));
    let mut rep = FeasibilityReport { dynamics, boxes, ..FeasibilityReport::default() };

    let z = &sol.z;
    let pl = &spock.op.primal;
    let sp = &spock.scaled;
    for i in 1..tree.num_nodes() {
        let a = tree.ancestor(i).expect("non-root");
        let soc = StageSoc::new(sp.stage_cost(i)).expect("validated data");
        let img = soc.image(&z[pl.x(a)], &z[pl.u(a)], z[pl.tau_of(i)]);
        let mut pr = img.clone();
        proj_translated_soc(pr.as_mut_slice(), soc.a.as_slice());
        rep.soc_distance = rep.soc_distance.max(dist(img.as_slice(), pr.as_slice()));
        let l = p.stage_cost(i).eval(sol.states[a].as_slice(), sol.inputs[a].as_slice()).as_f64();
        let tau = z[pl.tau_of(i)].as_f64();
        rep.epigraph = rep.epigraph.max(l - tau);
        rep.epigraph_rel = rep.epigraph_rel.max((l - tau) / (1.0 + tau.abs()));
    }
    for j in tree.leaves() {
        let soc = TerminalSoc::new(sp.terminal_cost(j)).expect("validated data");
        let img = soc.image(&z[pl.x(j)], z[pl.s_of(j)]);
        let mut pr = img.clone();
        proj_translated_soc(pr.as_mut_slice(), soc.a.as_slice());
        rep.soc_distance = rep.soc_distance.max(dist(img.as_slice(), pr.as_slice()));
        let l = p.terminal_cost(j).eval(sol.states[j].as_slice()).as_f64();
        let s = z[pl.s_of(j)].as_f64();
        rep.epigraph = rep.epigraph.max(l - s);
        rep.epigraph_rel = rep.epigraph_rel.max((l - s) / (1.0 + s.abs()));
    }
    for i in 0..tree.num_nonleaf() {
        let r = sp.risk(i);
        let y = DVector::from_iterator(pl.ny(i), z[pl.y(i)].iter().map(|v| v.as_f64()));
        let ety = to64(&r.e).transpose() * &y;
        for (k, c) in tree.children(i).enumerate() {
            let res = ety[k] - z[pl.tau_of(c)].as_f64() - z[pl.s_of(c)].as_f64();
            rep.kernel = rep.kernel.max(res.abs());
        }
        if r.n_nu() > 0 {
            rep.kernel = rep.kernel.max((to64(&r.f).transpose() * &y).amax());
        }
        let mut py = y.clone();
        proj_cone(py.as_mut_slice(), &r.cone.dual());
        rep.dual_cone = rep.dual_cone.max((&y - &py).amax());
        rep.risk_bound = rep.risk_bound.max(v64(&r.b).dot(&y) - z[pl.s_of(i)].as_f64());
    }
    rep
}

/// Residuals of the optimality conditions of the reformulated problem at
/// `(z, eta)`, computed with dense matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// Largest entry of `Lz - proj(Lz)` onto the dual-side set.
    pub primal: f64,
    /// Infinity norm of `proj(w + eta) - w` with `w = proj(Lz)`: how far `eta` is from the
    /// normal cone at `w`.
    pub normal_cone: f64,
    /// Infinity norm of the tangent component of `e_s0 + L* eta`.
    pub stationarity: f64,
}

/// Dense optimality check; intended for instances with at most a few
/// hundred variables.
pub fn kkt_report<T: Real>(spock: &Spock<T>, z: &[T], eta: &[T]) -> KktReport {
    let op = &spock.op;
    let l = op.materialize().map(|v| v.as_f64());
    let zf = DVector::from_iterator(z.len(), z.iter().map(|v| v.as_f64()));
    let ef = DVector::from_iterator(eta.len(), eta.iter().map(|v| v.as_f64()));
    let lz = &l * &zf;

    let to_t = |v: &DVector<f64>| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let mut w = to_t(&lz);
    spock.cache.proj_s3(&op.dual, &mut w);
    let wf = DVector::from_iterator(w.len(), w.iter().map(|v| v.as_f64()));
    let primal = (&lz - &wf).amax();
    let mut we = to_t(&(&wf + &ef));
    spock.cache.proj_s3(&op.dual, &mut we);
    let wef = DVector::from_iterator(we.len(), we.iter().map(|v| v.as_f64()));
    let normal_cone = (&wef - &wf).amax();

    let mut g = l.transpose() * &ef;
    g[0] += 1.0;
    let basis = tangent_basis(spock);
    let tg = &basis * (basis.transpose() * &g);
    KktReport { primal, normal_cone, stationarity: tg.amax() }
}

/// Orthonormal basis of the subspace parallel to the primal feasible set:
/// `s0` free, homogeneous dynamics with `x^0 = 0`, kernel conditions.
fn tangent_basis<T: Real>(spock: &Spock<T>) -> DMatrix<f64> {
    let p = &spock.scaled;
    let pl = &spock.op.primal;
    let tree = &p.tree;
    let (nx, nu) = (p.nx, p.nu);
    let n = tree.num_nodes();
    let np = pl.len();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for k in 0..nx {
        let mut r = DVector::zeros(np);
        r[pl.x(0).start + k] = 1.0;
        rows.push(r);
    }
    for c in 1..n {
        let a = tree.ancestor(c).expect("non-root");
        let d = p.dynamics(c);
        for k in 0..nx {
            let mut r = DVector::zeros(np);
            r[pl.x(c).start + k] = 1.0;
            for q in 0..nx {
                r[pl.x(a).start + q] -= d.a[(k, q)].as_f64();
            }
            for q in 0..nu {
                r[pl.u(a).start + q] -= d.b[(k, q)].as_f64();
            }
            rows.push(r);
        }
    }
    for i in 0..tree.num_nonleaf() {
        let risk = p.risk(i);
        let y = pl.y(i);
        for (k, c) in tree.children(i).enumerate() {
            let mut r = DVector::zeros(np);
            for q in 0..pl.ny(i) {
                r[y.start + q] = risk.e[(q, k)].as_f64();
            }
            r[pl.tau_of(c)] = -1.0;
            r[pl.s_of(c)] = -1.0;
            rows.push(r);
        }
        for k in 0..risk.n_nu() {
            let mut r = DVector::zeros(np);
            for q in 0..pl.ny(i) {
                r[y.start + q] = risk.f[(q, k)].as_f64();
            }
            rows.push(r);
        }
    }
    let c = DMatrix::from_rows(&rows.iter().map(|r| r.transpose()).collect::<Vec<_>>());
    null_basis(&c, 1e-10)
}
