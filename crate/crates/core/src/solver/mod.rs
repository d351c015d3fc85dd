//! Chambolle-Pock operator, termination residuals and the SuperMann loop.

mod aa;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::DVector;

pub use aa::{AaState, AaVariant};

use crate::error::{Error, Result};
use crate::oper::{LinearOperator, OpNormEstimate};
use crate::problem::{precondition, Precond, Raocp};
use crate::proj::{s1_factor_offline, SolverCache};
use crate::scalar::Real;

/// Margin kept below the stability limit `alpha |L| < 1`.
pub const STEP_MARGIN: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct SpockParams<T> {
    pub eps_abs: T,
    pub eps_rel: T,
    /// Step size; `None` picks `0.99 / |L|`.
    pub alpha: Option<T>,
    /// Anderson memory.
    pub memory: usize,
    pub aa_variant: AaVariant,
    pub c0: T,
    pub c1: T,
    pub c2: T,
    pub beta: T,
    pub sigma: T,
    pub lambda: T,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub time_limit: Option<Duration>,
    /// Apply the diagonal scaling of [`precondition`] before solving.
    pub precondition: bool,
}

impl<T: Real> Default for SpockParams<T> {
    fn default() -> Self {
        SpockParams {
            eps_abs: T::lit(1e-3),
            eps_rel: T::lit(1e-3),
            alpha: None,
            memory: 3,
            aa_variant: AaVariant::IterateDifferences,
            c0: T::lit(0.99),
            c1: T::lit(0.99),
            c2: T::lit(0.99),
            beta: T::lit(0.5),
            sigma: T::lit(0.1),
            lambda: T::one(),
            max_iters: 5000,
            max_backtracks: 40,
            time_limit: None,
            precondition: true,
        }
    }
}

impl<T: Real> SpockParams<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v >= T::zero() && v < T::one();
        let open = |v: T| v > T::zero() && v < T::one();
        if !(self.eps_abs >= T::zero() && self.eps_rel >= T::zero()) {
            return Err(Error::InvalidParameter("tolerances must be nonnegative".into()));
        }
        if !(unit(self.c0) && unit(self.c1) && unit(self.c2)) {
            return Err(Error::InvalidParameter("c0, c1, c2 must lie in [0, 1)".into()));
        }
        if !(open(self.beta) && open(self.sigma)) {
            return Err(Error::InvalidParameter("beta and sigma must lie in (0, 1)".into()));
        }
        if !(self.lambda > T::zero() && self.lambda < T::lit(2.0)) {
            return Err(Error::InvalidParameter("lambda must lie in (0, 2)".into()));
        }
        if self.memory == 0 {
            return Err(Error::InvalidParameter("Anderson memory must be positive".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > T::zero()) {
                return Err(Error::InvalidParameter("step size must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIters,
    /// The iterates stopped being finite.
    Stalled,
    TimeLimit,
    Cancelled,
}

/// Step taken in one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Accelerated step accepted by the residual decrease test.
    K0,
    /// Accepted line-search candidate with a small enough residual.
    K1,
    /// Projection step onto the separating hyperplane.
    K2,
    /// Line search gave up; plain Krasnoselskii-Mann step.
    Stalled,
    /// Plain Chambolle-Pock step.
    Plain,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpockStatus {
    pub iterations: usize,
    pub termination: Termination,
    pub xi1: f64,
    pub xi2: f64,
    pub initial_xi1: f64,
    pub initial_xi2: f64,
    pub k0: usize,
    pub k1: usize,
    pub k2: usize,
    pub stalled_steps: usize,
    /// `|v - T v|_M` at the start of every iteration.
    pub residual_history: Vec<f64>,
    /// Reference residual `zeta` after every iteration.
    pub zeta_history: Vec<f64>,
    pub elapsed: Duration,
    /// Number of evaluations of `T`.
    pub operator_calls: usize,
}

/// Passed to the progress callback once per iteration.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: usize,
    pub residual_m: f64,
    pub branch: Branch,
}

/// Solution in the original (unscaled) variables.
#[derive(Debug, Clone)]
pub struct Solution<T: Real> {
    /// Optimal value bound `s0`.
    pub cost: T,
    pub states: Vec<DVector<T>>,
    pub inputs: Vec<DVector<T>>,
    /// Final primal iterate in the solver's coordinates.
    pub z: Vec<T>,
    pub eta: Vec<T>,
    pub status: SpockStatus,
}

/// Options of one solve.
#[derive(Default)]
pub struct SolveOptions<'a, T> {
    /// Start from a previous `(z, eta)` in the solver's coordinates.
    pub warm_start: Option<(Vec<T>, Vec<T>)>,
    /// Initial state in original coordinates; defaults to the problem's.
    pub x_init: Option<DVector<T>>,
    pub callback: Option<&'a mut dyn FnMut(&Progress)>,
    pub cancel: Option<Arc<AtomicBool>>,
}

/// A problem prepared for solving: scaled data, operator, offline factors and
/// step size.
#[derive(Debug, Clone)]
pub struct Spock<T: Real> {
    pub original: Raocp<T>,
    pub scaled: Raocp<T>,
    pub precond: Precond<T>,
    pub op: LinearOperator<T>,
    pub cache: SolverCache<T>,
    pub norm: OpNormEstimate<T>,
    pub alpha: T,
    pub params: SpockParams<T>,
    w1: Vec<T>,
    w2: Vec<T>,
}

/// Iterate `v = (z, eta)` stored as one buffer.
type Vec2<T> = Vec<T>;

impl<T: Real> Spock<T> {
    pub fn new(problem: &Raocp<T>, params: SpockParams<T>) -> Result<Self> {
        problem.validate()?;
        params.validate()?;
        if problem.nx == 0 || problem.nu == 0 {
            return Err(Error::Dimension("state and input dimensions must be positive".into()));
        }
        let (scaled, precond) = if params.precondition {
            precondition(problem)
        } else {
            (problem.clone(), Precond::identity(problem))
        };
        let op = LinearOperator::new(&scaled)?;
        let cache = s1_factor_offline(&scaled)?;
        let norm = op.estimate_norm();
        // the block bound is the exact norm, so it gives the same step for
        // problems with the same block structure
        let alpha = params.alpha.unwrap_or_else(|| T::lit(STEP_MARGIN) / norm.bound.max(T::lit(1e-12)));
        if alpha * norm.bound >= T::one() {
            return Err(Error::InvalidParameter("step size violates alpha |L| < 1".into()));
        }
        let (w1, w2) = termination_weights(&op, &precond);
        Ok(Spock { original: problem.clone(), scaled, precond, op, cache, norm, alpha, params, w1, w2 })
    }

    pub fn primal_len(&self) -> usize {
        self.op.primal.len()
    }

    pub fn dual_len(&self) -> usize {
        self.op.dual.len()
    }

    /// The Chambolle-Pock operator, `(z, eta) -> (z+, eta+)`.
    pub fn cp_operator(&self, z: &[T], eta: &[T], x_init: &[T]) -> (Vec<T>, Vec<T>) {
        let alpha = self.alpha;
        let pl = &self.op.primal;
        let mut w = vec![T::zero(); pl.len()];
        self.op.adjoint(eta, &mut w);
        for (wi, &zi) in w.iter_mut().zip(z) {
            *wi = zi - alpha * *wi;
        }
        w[0] -= alpha;
        let z1 = pl.z1();
        self.cache.proj_s1(pl, &mut w[z1], x_init);
        self.cache.proj_s2(pl, &mut w);
        let zp = w;

        let mut bar = vec![T::zero(); pl.len()];
        for (b, (&a, &c)) in bar.iter_mut().zip(zp.iter().zip(z)) {
            *b = a + a - c;
        }
        let mut p = vec![T::zero(); self.op.dual.len()];
        self.op.apply(&bar, &mut p);
        for (pi, &e) in p.iter_mut().zip(eta) {
            *pi = e + alpha * *pi;
        }
        let mut s = p.iter().map(|&v| v / alpha).collect::<Vec<_>>();
        self.cache.proj_s3(&self.op.dual, &mut s);
        let etap = p.iter().zip(&s).map(|(&a, &b)| a - alpha * b).collect();
        (zp, etap)
    }

    /// `xi1 = dz / alpha - L* deta`, `xi2 = deta / alpha - L dz` for
    /// `dz = z - z+`, `deta = eta - eta+`.
    pub fn residuals_xi(&self, z: &[T], eta: &[T], zp: &[T], etap: &[T]) -> (Vec<T>, Vec<T>) {
        let alpha = self.alpha;
        let dz: Vec<T> = z.iter().zip(zp).map(|(&a, &b)| a - b).collect();
        let de: Vec<T> = eta.iter().zip(etap).map(|(&a, &b)| a - b).collect();
        let mut xi1 = vec![T::zero(); dz.len()];
        self.op.adjoint(&de, &mut xi1);
        for (x, &d) in xi1.iter_mut().zip(&dz) {
            *x = d / alpha - *x;
        }
        let mut xi2 = vec![T::zero(); de.len()];
        self.op.apply(&dz, &mut xi2);
        for (x, &d) in xi2.iter_mut().zip(&de) {
            *x = d / alpha - *x;
        }
        (xi1, xi2)
    }

    /// Weighted infinity norms of the termination residuals, in the units
    /// of the original problem.
    pub fn xi_norms(&self, xi1: &[T], xi2: &[T]) -> (f64, f64) {
        let wn = |v: &[T], w: &[T]| v.iter().zip(w).fold(0.0f64, |m, (&a, &b)| m.max((a * b).abs().as_f64()));
        (wn(xi1, &self.w1), wn(xi2, &self.w2))
    }

    fn m_inner_v(&self, a: &[T], b: &[T]) -> T {
        let np = self.primal_len();
        self.op.m_inner(&a[..np], &a[np..], &b[..np], &b[np..], self.alpha)
    }

    fn m_norm_v(&self, a: &[T]) -> T {
        let np = self.primal_len();
        self.op.m_norm(&a[..np], &a[np..], self.alpha)
    }

    fn t_v(&self, v: &[T], x_init: &[T]) -> Vec2<T> {
        let np = self.primal_len();
        let (zp, ep) = self.cp_operator(&v[..np], &v[np..], x_init);
        let mut out = zp;
        out.extend(ep);
        out
    }

    fn start(&self, opts: &mut SolveOptions<T>) -> Result<(Vec2<T>, Vec<T>)> {
        let x_init = match &opts.x_init {
            Some(x) => {
                if x.len() != self.original.nx {
                    return Err(Error::Dimension("initial state".into()));
                }
                self.precond.scale_state(0, x.as_slice()).as_slice().to_vec()
            }
            None => self.scaled.x0.as_slice().to_vec(),
        };
        let v = match opts.warm_start.take() {
            Some((z, eta)) => {
                if z.len() != self.primal_len() || eta.len() != self.dual_len() {
                    return Err(Error::Dimension("warm start".into()));
                }
                let mut v = z;
                v.extend(eta);
                v
            }
            None => vec![T::zero(); self.primal_len() + self.dual_len()],
        };
        Ok((v, x_init))
    }

    fn finish(&self, v: Vec2<T>, status: SpockStatus) -> Solution<T> {
        let np = self.primal_len();
        let pl = &self.op.primal;
        let tree = &self.original.tree;
        let states = (0..tree.num_nodes()).map(|i| self.precond.unscale_state(i, &v[pl.x(i)])).collect();
        let inputs = (0..tree.num_nonleaf()).map(|i| self.precond.unscale_input(&v[pl.u(i)])).collect();
        let mut z = v;
        let eta = z.split_off(np);
        Solution { cost: z[0], states, inputs, z, eta, status }
    }

    /// SuperMann-accelerated Chambolle-Pock.
    pub fn spock_solve(&self, mut opts: SolveOptions<T>) -> Result<Solution<T>> {
        let prm = &self.params;
        let (mut v, x_init) = self.start(&mut opts)?;
        let np = self.primal_len();
        let t0 = Instant::now();
        let mut st = new_status();
        let mut aa = AaState::new(prm.memory, prm.aa_variant);
        let mut zeta = T::zero();
        let mut omega_safe = T::zero();
        let mut c2k = T::one();
        let mut thresholds = (0.0, 0.0);
        loop {
            let tv = self.t_v(&v, &x_init);
            st.operator_calls += 1;
            let (xi1, xi2) = self.residuals_xi(&v[..np], &v[np..], &tv[..np], &tv[np..]);
            let (n1, n2) = self.xi_norms(&xi1, &xi2);
            let r: Vec<T> = v.iter().zip(&tv).map(|(&a, &b)| a - b).collect();
            let omega = self.m_norm_v(&r);
            if st.iterations == 0 {
                st.initial_xi1 = n1;
                st.initial_xi2 = n2;
                thresholds = (
                    prm.eps_abs.as_f64().max(prm.eps_rel.as_f64() * n1),
                    prm.eps_abs.as_f64().max(prm.eps_rel.as_f64() * n2),
                );
                zeta = omega;
                omega_safe = omega;
            }
            st.xi1 = n1;
            st.xi2 = n2;
            if let Some(t) = self.stop_reason(&st, n1, n2, thresholds, t0, &opts, &tv) {
                st.termination = t;
                st.elapsed = t0.elapsed();
                return Ok(self.finish(if t == Termination::Stalled { v } else { tv }, st));
            }
            st.residual_history.push(omega.as_f64());

            let psi = aa.direction(&v, &r);
            let branch;
            if omega <= prm.c0 * zeta {
                zeta = omega;
                for (a, &d) in v.iter_mut().zip(&psi) {
                    *a += d;
                }
                branch = Branch::K0;
                st.k0 += 1;
            } else {
                let mut tau = T::one();
                let mut taken = None;
                for _ in 0..prm.max_backtracks {
                    let vt: Vec<T> = v.iter().zip(&psi).map(|(&a, &d)| a + tau * d).collect();
                    let tvt = self.t_v(&vt, &x_init);
                    st.operator_calls += 1;
                    let rt: Vec<T> = vt.iter().zip(&tvt).map(|(&a, &b)| a - b).collect();
                    let omega_t = self.m_norm_v(&rt);
                    if omega <= omega_safe && omega_t <= prm.c1 * omega {
                        omega_safe = omega_t + c2k;
                        taken = Some((Branch::K1, vt));
                        break;
                    }
                    let step: Vec<T> = vt.iter().zip(&v).map(|(&a, &b)| a - b).collect();
                    let rho = omega_t * omega_t - T::lit(2.0) * self.alpha * self.m_inner_v(&rt, &step);
                    if rho >= prm.sigma * omega_t * omega {
                        let f = prm.lambda * rho / (omega_t * omega_t);
                        let vn = v.iter().zip(&rt).map(|(&a, &b)| a - f * b).collect();
                        taken = Some((Branch::K2, vn));
                        break;
                    }
                    tau *= prm.beta;
                }
                match taken {
                    Some((b, vn)) => {
                        if b == Branch::K1 {
                            st.k1 += 1;
                        } else {
                            st.k2 += 1;
                        }
                        branch = b;
                        v = vn;
                    }
                    None => {
                        st.stalled_steps += 1;
                        branch = Branch::Stalled;
                        v = tv;
                    }
                }
            }
            c2k *= prm.c2;
            st.zeta_history.push(zeta.as_f64());
            st.iterations += 1;
            if let Some(cb) = opts.callback.as_mut() {
                cb(&Progress { iteration: st.iterations, residual_m: omega.as_f64(), branch });
            }
        }
    }

    /// Plain Chambolle-Pock iterations `v <- T v`.
    pub fn cp_solve(&self, mut opts: SolveOptions<T>) -> Result<Solution<T>> {
        let prm = &self.params;
        let (mut v, x_init) = self.start(&mut opts)?;
        let np = self.primal_len();
        let t0 = Instant::now();
        let mut st = new_status();
        let mut thresholds = (0.0, 0.0);
        loop {
            let tv = self.t_v(&v, &x_init);
            st.operator_calls += 1;
            let (xi1, xi2) = self.residuals_xi(&v[..np], &v[np..], &tv[..np], &tv[np..]);
            let (n1, n2) = self.xi_norms(&xi1, &xi2);
            if st.iterations == 0 {
                st.initial_xi1 = n1;
                st.initial_xi2 = n2;
                thresholds = (
                    prm.eps_abs.as_f64().max(prm.eps_rel.as_f64() * n1),
                    prm.eps_abs.as_f64().max(prm.eps_rel.as_f64() * n2),
                );
            }
            st.xi1 = n1;
            st.xi2 = n2;
            if let Some(t) = self.stop_reason(&st, n1, n2, thresholds, t0, &opts, &tv) {
                st.termination = t;
                st.elapsed = t0.elapsed();
                return Ok(self.finish(if t == Termination::Stalled { v } else { tv }, st));
            }
            let r: Vec<T> = v.iter().zip(&tv).map(|(&a, &b)| a - b).collect();
            let omega = self.m_norm_v(&r).as_f64();
            st.residual_history.push(omega);
            v = tv;
            st.iterations += 1;
            if let Some(cb) = opts.callback.as_mut() {
                cb(&Progress { iteration: st.iterations, residual_m: omega, branch: Branch::Plain });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn stop_reason(
        &self,
        st: &SpockStatus,
        n1: f64,
        n2: f64,
        thr: (f64, f64),
        t0: Instant,
        opts: &SolveOptions<T>,
        tv: &[T],
    ) -> Option<Termination> {
        if n1 <= thr.0 && n2 <= thr.1 {
            return Some(Termination::Converged);
        }
        if !(n1.is_finite() && n2.is_finite()) || tv.iter().any(|x| !x.is_finite()) {
            return Some(Termination::Stalled);
        }
        if st.iterations >= self.params.max_iters {
            return Some(Termination::MaxIters);
        }
        if let Some(limit) = self.params.time_limit {
            if t0.elapsed() >= limit {
                return Some(Termination::TimeLimit);
            }
        }
        if let Some(c) = &opts.cancel {
            if c.load(Ordering::Relaxed) {
                return Some(Termination::Cancelled);
            }
        }
        None
    }

    /// `|v|_M` for a stacked `(z, eta)`.
    pub fn m_norm(&self, v: &[T]) -> T {
        self.m_norm_v(v)
    }

    /// `<a, M b>` for stacked vectors.
    pub fn m_inner(&self, a: &[T], b: &[T]) -> T {
        self.m_inner_v(a, b)
    }

    /// Termination weights of the primal and dual residual entries.
    pub fn weights(&self) -> (&[T], &[T]) {
        (&self.w1, &self.w2)
    }

    /// Unscaled states of a primal iterate.
    pub fn states_of(&self, z: &[T]) -> Vec<DVector<T>> {
        (0..self.original.tree.num_nodes())
            .map(|i| self.precond.unscale_state(i, &z[self.op.primal.x(i)]))
            .collect()
    }
}

fn new_status() -> SpockStatus {
    SpockStatus {
        iterations: 0,
        termination: Termination::MaxIters,
        xi1: f64::NAN,
        xi2: f64::NAN,
        initial_xi1: f64::NAN,
        initial_xi2: f64::NAN,
        k0: 0,
        k1: 0,
        k2: 0,
        stalled_steps: 0,
        residual_history: Vec::new(),
        zeta_history: Vec::new(),
        elapsed: Duration::ZERO,
        operator_calls: 0,
    }
}

/// Entry weights that express the residuals in original units: state and
/// input entries of `xi1` are multiplied by their scaling, constraint rows of
/// `xi2` by the row scaling.
fn termination_weights<T: Real>(op: &LinearOperator<T>, pc: &Precond<T>) -> (Vec<T>, Vec<T>) {
    let pl = &op.primal;
    let dl = &op.dual;
    let tree = op.tree();
    let mut w1 = vec![T::one(); pl.len()];
    for i in 0..tree.num_nodes() {
        w1[pl.x(i)].copy_from_slice(pc.state_scale(i).as_slice());
    }
    for i in 0..tree.num_nonleaf() {
        w1[pl.u(i)].copy_from_slice(pc.su.as_slice());
    }
    let mut w2 = vec![T::one(); dl.len()];
    for i in 0..tree.num_nonleaf() {
        w2[dl.con(i)].iter_mut().for_each(|w| *w = pc.a_node[i]);
    }
    for (l, j) in tree.leaves().enumerate() {
        w2[dl.leaf_con(j)].iter_mut().for_each(|w| *w = pc.a_leaf[l]);
    }
    (w1, w2)
}
