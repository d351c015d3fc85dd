//! Problem data for a risk-averse optimal control problem on a scenario tree.
//!
//! Per-node data follows the edge convention: the dynamics and stage cost
//! stored for node `i > 0` describe the transition from `anc(i)` into `i`,
//! i.e. `x^i = A^i x^anc + B^i u^anc + c^i` with cost `l^i(x^anc, u^anc)`.

mod epigraph;
mod precond;

use nalgebra::{DMatrix, DVector};

pub use epigraph::{
    psd_sqrt, soc_data_l1, soc_data_quadlin, soc_data_soft, L1Epigraph, PsdSqrt, QuadLinSoc,
    SoftEpigraph, StageSoc, TerminalSoc, RANK_TOL,
};
pub use precond::{precondition, Precond};

use crate::error::{Error, Result};
use crate::risk::RiskSpec;
use crate::scalar::Real;
use crate::tree::ScenarioTree;

/// Axis-aligned box `{ v : lo <= v <= hi }`; infinite bounds are allowed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet<T: Real> {
    pub lo: DVector<T>,
    pub hi: DVector<T>,
}

impl<T: Real> BoxSet<T> {
    pub fn new(lo: DVector<T>, hi: DVector<T>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension(format!("box bounds {} vs {}", lo.len(), hi.len())));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
            return Err(Error::InvalidParameter("box with lo > hi".into()));
        }
        Ok(BoxSet { lo, hi })
    }

    /// `[-bound, bound]` in every coordinate.
    pub fn symmetric(bound: DVector<T>) -> Self {
        BoxSet { lo: -bound.clone(), hi: bound }
    }

    pub fn unbounded(n: usize) -> Self {
        let inf = T::lit(f64::INFINITY);
        BoxSet { lo: DVector::from_element(n, -inf), hi: DVector::from_element(n, inf) }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn project(&self, v: &mut [T]) {
        for (k, x) in v.iter_mut().enumerate() {
            *x = x.max(self.lo[k]).min(self.hi[k]);
        }
    }

    /// Largest violation of the bounds, zero when inside.
    pub fn violation(&self, v: &[T]) -> T {
        v.iter().enumerate().fold(T::zero(), |m, (k, &x)| {
            m.max(self.lo[k] - x).max(x - self.hi[k])
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dynamics<T: Real> {
    pub a: DMatrix<T>,
    pub b: DMatrix<T>,
    pub c: DVector<T>,
}

/// `l(x, u) = x'Qx + u'Ru + q'x + r'u`
#[derive(Debug, Clone, PartialEq)]
pub struct StageCost<T: Real> {
    pub q: DMatrix<T>,
    pub r: DMatrix<T>,
    pub q_lin: DVector<T>,
    pub r_lin: DVector<T>,
}

impl<T: Real> StageCost<T> {
    pub fn eval(&self, x: &[T], u: &[T]) -> T {
        let xv = DVector::from_column_slice(x);
        let uv = DVector::from_column_slice(u);
        (&self.q * &xv).dot(&xv) + (&self.r * &uv).dot(&uv) + self.q_lin.dot(&xv) + self.r_lin.dot(&uv)
    }
}

/// `l_N(x) = x'Q_N x + q_N'x`
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalCost<T: Real> {
    pub q: DMatrix<T>,
    pub q_lin: DVector<T>,
}

impl<T: Real> TerminalCost<T> {
    pub fn eval(&self, x: &[T]) -> T {
        let xv = DVector::from_column_slice(x);
        (&self.q * &xv).dot(&xv) + self.q_lin.dot(&xv)
    }
}

/// `Gamma_x x + Gamma_u u in set`
#[derive(Debug, Clone, PartialEq)]
pub struct NodeConstraint<T: Real> {
    pub gamma_x: DMatrix<T>,
    pub gamma_u: DMatrix<T>,
    pub set: BoxSet<T>,
}

impl<T: Real> NodeConstraint<T> {
    pub fn none(nx: usize, nu: usize) -> Self {
        NodeConstraint {
            gamma_x: DMatrix::zeros(0, nx),
            gamma_u: DMatrix::zeros(0, nu),
            set: BoxSet::unbounded(0),
        }
    }

    /// Independent bounds on the state and on the input.
    pub fn state_input_box(x_box: BoxSet<T>, u_box: BoxSet<T>) -> Self {
        let (nx, nu) = (x_box.dim(), u_box.dim());
        let mut gamma_x = DMatrix::zeros(nx + nu, nx);
        let mut gamma_u = DMatrix::zeros(nx + nu, nu);
        gamma_x.view_mut((0, 0), (nx, nx)).fill_with_identity();
        gamma_u.view_mut((nx, 0), (nu, nu)).fill_with_identity();
        let lo = DVector::from_iterator(nx + nu, x_box.lo.iter().chain(u_box.lo.iter()).copied());
        let hi = DVector::from_iterator(nx + nu, x_box.hi.iter().chain(u_box.hi.iter()).copied());
        NodeConstraint { gamma_x, gamma_u, set: BoxSet { lo, hi } }
    }

    pub fn rows(&self) -> usize {
        self.set.dim()
    }
}

/// `Gamma_N x in set`
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalConstraint<T: Real> {
    pub gamma: DMatrix<T>,
    pub set: BoxSet<T>,
}

impl<T: Real> TerminalConstraint<T> {
    pub fn none(nx: usize) -> Self {
        TerminalConstraint { gamma: DMatrix::zeros(0, nx), set: BoxSet::unbounded(0) }
    }

    pub fn state_box(x_box: BoxSet<T>) -> Self {
        let nx = x_box.dim();
        TerminalConstraint { gamma: DMatrix::identity(nx, nx), set: x_box }
    }

    pub fn rows(&self) -> usize {
        self.set.dim()
    }
}

/// A risk-averse optimal control problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Raocp<T: Real> {
    pub tree: ScenarioTree,
    pub nx: usize,
    pub nu: usize,
    /// Indexed by `i - 1` for nodes `i >= 1`.
    pub dynamics: Vec<Dynamics<T>>,
    /// Indexed by `i - 1` for nodes `i >= 1`.
    pub stage_costs: Vec<StageCost<T>>,
    /// Indexed by leaf position `j - first_leaf`.
    pub terminal_costs: Vec<TerminalCost<T>>,
    /// Indexed by non-leaf node.
    pub constraints: Vec<NodeConstraint<T>>,
    /// Indexed by leaf position.
    pub terminal_constraints: Vec<TerminalConstraint<T>>,
    /// Indexed by non-leaf node; acts on the children of that node.
    pub risks: Vec<RiskSpec<T>>,
    pub x0: DVector<T>,
}

fn check_shape<T: Real>(m: &DMatrix<T>, r: usize, c: usize, what: &str) -> Result<()> {
    if m.nrows() != r || m.ncols() != c {
        return Err(Error::Dimension(format!(
            "{what}: {}x{} instead of {r}x{c}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_len<T: Real>(v: &DVector<T>, n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what}: length {} instead of {n}", v.len())));
    }
    Ok(())
}

pub(crate) fn check_symmetric<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    let scale = m.amax().max(T::one());
    if (m - m.transpose()).amax() > T::input_tol() * scale {
        return Err(Error::NotSymmetric(what.to_string()));
    }
    Ok(())
}

fn check_psd<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    check_symmetric(m, what)?;
    if m.nrows() == 0 {
        return Ok(());
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax().max(T::one());
    if eig.eigenvalues.min() < -T::input_tol() * max {
        return Err(Error::NotPositive(format!("{what} has a negative eigenvalue")));
    }
    Ok(())
}

impl<T: Real> Raocp<T> {
    pub fn num_nodes(&self) -> usize {
        self.tree.num_nodes()
    }

    pub fn dynamics(&self, i: usize) -> &Dynamics<T> {
        &self.dynamics[i - 1]
    }

    pub fn stage_cost(&self, i: usize) -> &StageCost<T> {
        &self.stage_costs[i - 1]
    }

    pub fn terminal_cost(&self, j: usize) -> &TerminalCost<T> {
        &self.terminal_costs[j - self.tree.num_nonleaf()]
    }

    pub fn constraint(&self, i: usize) -> &NodeConstraint<T> {
        &self.constraints[i]
    }

    pub fn terminal_constraint(&self, j: usize) -> &TerminalConstraint<T> {
        &self.terminal_constraints[j - self.tree.num_nonleaf()]
    }

    pub fn risk(&self, i: usize) -> &RiskSpec<T> {
        &self.risks[i]
    }

    /// Number of state and input variables,
    /// `n_x |nodes(0, N)| + n_u |nodes(0, N-1)|`.
    pub fn num_variables(&self) -> usize {
        self.nx * self.num_nodes() + self.nu * self.tree.num_nonleaf()
    }

    /// Checks dimensions, symmetry and definiteness of all data.
    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.nx, self.nu);
        let n = self.num_nodes();
        let nn = self.tree.num_nonleaf();
        let nl = self.tree.num_leaves();
        if self.dynamics.len() != n - 1 || self.stage_costs.len() != n - 1 {
            return Err(Error::Dimension("per-node dynamics/cost count".into()));
        }
        if self.terminal_costs.len() != nl || self.terminal_constraints.len() != nl {
            return Err(Error::Dimension("per-leaf data count".into()));
        }
        if self.constraints.len() != nn || self.risks.len() != nn {
            return Err(Error::Dimension("per-non-leaf data count".into()));
        }
        check_len(&self.x0, nx, "initial state")?;
        for i in 1..n {
            let d = self.dynamics(i);
            check_shape(&d.a, nx, nx, &format!("A of node {i}"))?;
            check_shape(&d.b, nx, nu, &format!("B of node {i}"))?;
            check_len(&d.c, nx, &format!("c of node {i}"))?;
            let s = self.stage_cost(i);
            check_shape(&s.q, nx, nx, &format!("Q of node {i}"))?;
            check_shape(&s.r, nu, nu, &format!("R of node {i}"))?;
            check_len(&s.q_lin, nx, &format!("q of node {i}"))?;
            check_len(&s.r_lin, nu, &format!("r of node {i}"))?;
            check_psd(&s.q, &format!("Q of node {i}"))?;
            check_symmetric(&s.r, &format!("R of node {i}"))?;
            if s.r.clone().cholesky().is_none() {
                return Err(Error::NotPositive(format!("R of node {i}")));
            }
        }
        for i in 0..nn {
            let c = self.constraint(i);
            let m = c.rows();
            check_shape(&c.gamma_x, m, nx, &format!("Gamma_x of node {i}"))?;
            check_shape(&c.gamma_u, m, nu, &format!("Gamma_u of node {i}"))?;
            check_len(&c.set.hi, m, &format!("box of node {i}"))?;
            let r = self.risk(i);
            if r.n != self.tree.num_children(i) {
                return Err(Error::Dimension(format!(
                    "risk of node {i} acts on {} outcomes, node has {} children",
                    r.n,
                    self.tree.num_children(i)
                )));
            }
        }
        for j in self.tree.leaves() {
            let t = self.terminal_cost(j);
            check_shape(&t.q, nx, nx, &format!("Q_N of leaf {j}"))?;
            check_len(&t.q_lin, nx, &format!("q_N of leaf {j}"))?;
            check_psd(&t.q, &format!("Q_N of leaf {j}"))?;
            let c = self.terminal_constraint(j);
            check_shape(&c.gamma, c.rows(), nx, &format!("Gamma_N of leaf {j}"))?;
            check_len(&c.set.hi, c.rows(), &format!("box of leaf {j}"))?;
        }
        Ok(())
    }

    /// Converts all data to another scalar type.
    pub fn cast<S: Real>(&self) -> Raocp<S> {
        let m = |a: &DMatrix<T>| a.map(|x| S::lit(x.as_f64()));
        let v = |a: &DVector<T>| a.map(|x| S::lit(x.as_f64()));
        let bx = |b: &BoxSet<T>| BoxSet { lo: v(&b.lo), hi: v(&b.hi) };
        Raocp {
            tree: self.tree.clone(),
            nx: self.nx,
            nu: self.nu,
            dynamics: self.dynamics.iter().map(|d| Dynamics { a: m(&d.a), b: m(&d.b), c: v(&d.c) }).collect(),
            stage_costs: self
                .stage_costs
                .iter()
                .map(|s| StageCost { q: m(&s.q), r: m(&s.r), q_lin: v(&s.q_lin), r_lin: v(&s.r_lin) })
                .collect(),
            terminal_costs: self
                .terminal_costs
                .iter()
                .map(|t| TerminalCost { q: m(&t.q), q_lin: v(&t.q_lin) })
                .collect(),
            constraints: self
                .constraints
                .iter()
                .map(|c| NodeConstraint { gamma_x: m(&c.gamma_x), gamma_u: m(&c.gamma_u), set: bx(&c.set) })
                .collect(),
            terminal_constraints: self
                .terminal_constraints
                .iter()
                .map(|c| TerminalConstraint { gamma: m(&c.gamma), set: bx(&c.set) })
                .collect(),
            risks: self.risks.iter().map(|r| r.cast()).collect(),
            x0: v(&self.x0),
        }
    }

    /// Per-stage expected cost of a trajectory: entry `t < N` is
    /// `sum_{i in nodes(t+1)} pi^i l^i(x^anc, u^anc)`, entry `N` is the
    /// expected terminal cost.
    pub fn stage_expected_costs(&self, states: &[DVector<T>], inputs: &[DVector<T>]) -> Vec<f64> {
        let tree = &self.tree;
        let n = tree.horizon();
        let mut out = vec![0.0; n + 1];
        for t in 0..n {
            for i in tree.nodes(t + 1) {
                let a = tree.ancestor(i).expect("non-root");
                let l = self.stage_cost(i).eval(states[a].as_slice(), inputs[a].as_slice());
                out[t] += tree.prob(i) * l.as_f64();
            }
        }
        for j in tree.leaves() {
            out[n] += tree.prob(j) * self.terminal_cost(j).eval(states[j].as_slice()).as_f64();
        }
        out
    }
}
