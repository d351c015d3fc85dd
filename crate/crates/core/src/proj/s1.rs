//! Projection onto the set of trajectories that satisfy the dynamics.
//!
//! The projection of `(xbar, ubar)` solves
//! `min sum |x^i - xbar^i|^2 + sum |u^i - ubar^i|^2` subject to the dynamics
//! and `x^0 = x_init`. Backward over the tree, the cost-to-go at node `i` is
//! `x'P^i x - 2 q^i'x + const`; the optimal input is `u^i = K^i x^i + d^i`.
//! `P`, `K` and the Cholesky factor of `I + sum B'PB` depend only on the
//! data and are computed once; `q` and `d` are recomputed per call.

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, DVectorViewMut, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oper::PrimalLayout;
use crate::problem::{Dynamics, Raocp};
use crate::scalar::Real;
use crate::tree::ScenarioTree;

#[derive(Debug, Clone)]
struct NodeFactor<T: Real> {
    k: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    /// `sum_c Abar_c' P_c B_c`
    g: DMatrix<T>,
    /// `sum_c Abar_c' P_c c_c`
    h: DVector<T>,
    /// `sum_c B_c' P_c c_c`
    bpc: DVector<T>,
}

#[derive(Debug, Clone)]
pub struct S1Factor<T: Real> {
    tree: ScenarioTree,
    nx: usize,
    nu: usize,
    /// Indexed by `i - 1`.
    dynamics: Vec<Dynamics<T>>,
    /// Closed-loop matrices `A + B K^anc`, indexed by `i - 1`.
    abar: Vec<DMatrix<T>>,
    /// Cost-to-go Hessians for every node.
    p: Vec<DMatrix<T>>,
    nodes: Vec<NodeFactor<T>>,
}

impl<T: Real> S1Factor<T> {
    pub fn new(prob: &Raocp<T>) -> Result<Self> {
        let tree = &prob.tree;
        let (nx, nu) = (prob.nx, prob.nu);
        let n = tree.num_nodes();
        let nn = tree.num_nonleaf();
        let mut p: Vec<DMatrix<T>> = vec![DMatrix::identity(nx, nx); n];
        let mut abar: Vec<DMatrix<T>> = vec![DMatrix::zeros(nx, nx); n - 1];
        let mut nodes: Vec<Option<NodeFactor<T>>> = vec![None; nn];
        for t in (0..tree.horizon()).rev() {
            let out = tree.stage_parallel_for(t, |i| {
                let mut rt = DMatrix::<T>::identity(nu, nu);
                let mut spa = DMatrix::<T>::zeros(nu, nx);
                let mut bpc = DVector::<T>::zeros(nu);
                for c in tree.children(i) {
                    let d = prob.dynamics(c);
                    let pt = d.b.transpose() * &p[c];
                    rt += &pt * &d.b;
                    spa += &pt * &d.a;
                    bpc += &pt * &d.c;
                }
                let chol = rt.cholesky().ok_or(Error::Cholesky(i))?;
                let k = -chol.solve(&spa);
                let mut pi = DMatrix::<T>::identity(nx, nx) + k.transpose() * &k;
                let mut g = DMatrix::<T>::zeros(nx, nu);
                let mut h = DVector::<T>::zeros(nx);
                let mut ab = Vec::new();
                for c in tree.children(i) {
                    let d = prob.dynamics(c);
                    let a = &d.a + &d.b * &k;
                    let atp = a.transpose() * &p[c];
                    pi += &atp * &a;
                    g += &atp * &d.b;
                    h += &atp * &d.c;
                    ab.push(a);
                }
                Ok((pi, ab, NodeFactor { k, chol, g, h, bpc }))
            });
            for (i, r) in tree.nodes(t).zip(out) {
                let (pi, ab, f) = r?;
                p[i] = pi;
                for (c, a) in tree.children(i).zip(ab) {
                    abar[c - 1] = a;
                }
                nodes[i] = Some(f);
            }
        }
        Ok(S1Factor {
            tree: tree.clone(),
            nx,
            nu,
            dynamics: prob.dynamics.clone(),
            abar,
            p,
            nodes: nodes.into_iter().map(|f| f.expect("every non-leaf visited")).collect(),
        })
    }

    /// Cost-to-go Hessian `P^i`.
    pub fn p(&self, i: usize) -> &DMatrix<T> {
        &self.p[i]
    }

    pub fn k(&self, i: usize) -> &DMatrix<T> {
        &self.nodes[i].k
    }

    /// `I + sum_c B_c' P_c B_c` reassembled from its factor.
    pub fn r_tilde(&self, i: usize) -> DMatrix<T> {
        let l = self.nodes[i].chol.l();
        &l * l.transpose()
    }

    pub fn abar(&self, c: usize) -> &DMatrix<T> {
        &self.abar[c - 1]
    }

    /// In-place projection of `z1 = (x^0..x^{n-1}, u^0..u^{nn-1})`.
    pub fn project(&self, layout: &PrimalLayout, z1: &mut [T], x_init: &[T]) {
        let tree = &self.tree;
        let (nx, nu) = (self.nx, self.nu);
        let n = tree.num_nodes();
        let nn = tree.num_nonleaf();
        debug_assert_eq!(z1.len(), n * nx + nn * nu);
        debug_assert_eq!(layout.num_nodes(), n);
        let horizon = tree.horizon();

        let mut q = vec![T::zero(); n * nx];
        let mut d = vec![T::zero(); nn * nu];
        {
            let leaves = tree.leaves();
            q[leaves.start * nx..].copy_from_slice(&z1[leaves.start * nx..n * nx]);
        }
        let (xbar, ubar) = z1.split_at(n * nx);
        for t in (0..horizon).rev() {
            let r = tree.nodes(t);
            let (lo, hi) = q.split_at_mut(r.end * nx);
            let q_t = &mut lo[r.start * nx..];
            let q_next: &[T] = hi;
            let next0 = r.end;
            let d_t = &mut d[r.start * nu..r.end * nu];
            q_t.par_chunks_mut(nx)
                .zip(d_t.par_chunks_mut(nu))
                .enumerate()
                .with_min_len(8)
                .for_each(|(k, (qi, di))| {
                    let i = r.start + k;
                    let f = &self.nodes[i];
                    let ub = DVectorView::from_slice(&ubar[i * nu..(i + 1) * nu], nu);
                    let mut rhs = ub - &f.bpc;
                    let mut aq = DVector::<T>::zeros(nx);
                    for c in tree.children(i) {
                        let qc = DVectorView::from_slice(&q_next[(c - next0) * nx..(c - next0 + 1) * nx], nx);
                        rhs.gemv_tr(T::one(), &self.dynamics[c - 1].b, &qc, T::one());
                        aq.gemv_tr(T::one(), &self.abar[c - 1], &qc, T::one());
                    }
                    let dv = f.chol.solve(&rhs);
                    let xb = DVectorView::from_slice(&xbar[i * nx..(i + 1) * nx], nx);
                    // q = xbar - K'(d - ubar) + sum Abar'q_c - G d - h
                    let mut qv = xb + aq - &f.h;
                    qv.gemv_tr(-T::one(), &f.k, &(&dv - ub), T::one());
                    qv.gemv(-T::one(), &f.g, &dv, T::one());
                    qi.copy_from_slice(qv.as_slice());
                    di.copy_from_slice(dv.as_slice());
                });
        }

        let (xs, us) = z1.split_at_mut(n * nx);
        xs[..nx].copy_from_slice(x_init);
        for t in 0..horizon {
            let r = tree.nodes(t);
            {
                let xs_r: &[T] = xs;
                us[r.start * nu..r.end * nu]
                    .par_chunks_mut(nu)
                    .zip(d[r.start * nu..r.end * nu].par_chunks(nu))
                    .enumerate()
                    .with_min_len(8)
                    .for_each(|(k, (ui, di))| {
                        let i = r.start + k;
                        let x = DVectorView::from_slice(&xs_r[i * nx..(i + 1) * nx], nx);
                        let mut u = DVectorViewMut::from_slice(ui, nu);
                        u.copy_from_slice(di);
                        u.gemv(T::one(), &self.nodes[i].k, &x, T::one());
                    });
            }
            let rn = tree.nodes(t + 1);
            let (lo, hi) = xs.split_at_mut(rn.start * nx);
            let lo: &[T] = lo;
            let us_r: &[T] = us;
            hi[..rn.len() * nx]
                .par_chunks_mut(nx)
                .enumerate()
                .with_min_len(8)
                .for_each(|(k, xc)| {
                    let c = rn.start + k;
                    let a = tree.ancestor(c).expect("non-root");
                    let dynm = &self.dynamics[c - 1];
                    let x = DVectorView::from_slice(&lo[a * nx..(a + 1) * nx], nx);
                    let u = DVectorView::from_slice(&us_r[a * nu..(a + 1) * nu], nu);
                    let mut out = DVectorViewMut::from_slice(xc, nx);
                    out.copy_from(&dynm.c);
                    out.gemv(T::one(), &dynm.a, &x, T::one());
                    out.gemv(T::one(), &dynm.b, &u, T::one());
                });
        }
    }
}
