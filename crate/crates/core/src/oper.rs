//! Primal and dual vector layouts and the linear operator `L`.
//!
//! Primal vector `z`:
//!
//! ```text
//! [ s0 | x^0 .. x^{n-1} | u^0 .. u^{nn-1} | per non-leaf i: (y^i, tau^{ch(i)}, s^{ch(i)}) ]
//! ```
//!
//! The cost bound `s^c` of every non-root node `c` (leaf or not) lives in the
//! block of its ancestor, next to `tau^c`.
//!
//! Dual vector `eta`, one segment per group, in this order:
//!
//! ```text
//! per non-leaf i : ( y^i,  s^i - b^i'y^i,  Gx^i x^i + Gu^i u^i )
//! per non-root i : stage cone image of (x^anc, u^anc, tau^i)
//! per leaf j     : ( GN^j x^j,  terminal cone image of (x^j, s^j) )
//! ```

use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView, DVectorViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::par::{for_each_segment, split_segments_mut};
use crate::problem::{Raocp, StageSoc, TerminalSoc};
use crate::scalar::{dot, norm2, Real};
use crate::tree::ScenarioTree;

const ROOT: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalLayout {
    pub nx: usize,
    pub nu: usize,
    num_nodes: usize,
    num_nonleaf: usize,
    u_start: usize,
    z2_off: Vec<usize>,
    ny: Vec<usize>,
    first_child: Vec<usize>,
    nch: Vec<usize>,
    anc: Vec<usize>,
    len: usize,
    bounds: Vec<usize>,
}

impl PrimalLayout {
    pub fn new(tree: &ScenarioTree, nx: usize, nu: usize, ny: &[usize]) -> Self {
        let n = tree.num_nodes();
        let nn = tree.num_nonleaf();
        let u_start = 1 + n * nx;
        let mut off = u_start + nn * nu;
        let mut z2_off = Vec::with_capacity(nn);
        let mut first_child = Vec::with_capacity(nn);
        let mut nch = Vec::with_capacity(nn);
        for i in 0..nn {
            z2_off.push(off);
            let ch = tree.children(i);
            first_child.push(ch.start);
            nch.push(ch.len());
            off += ny[i] + 2 * ch.len();
        }
        let anc = (0..n).map(|i| tree.ancestor(i).unwrap_or(ROOT)).collect();
        let mut bounds = vec![0, 1];
        bounds.extend((1..=n).map(|i| 1 + i * nx));
        bounds.extend((1..=nn).map(|i| u_start + i * nu));
        bounds.extend(z2_off.iter().skip(1).copied());
        if nn > 0 {
            bounds.push(off);
        }
        PrimalLayout {
            nx,
            nu,
            num_nodes: n,
            num_nonleaf: nn,
            u_start,
            z2_off,
            ny: ny.to_vec(),
            first_child,
            nch,
            anc,
            len: off,
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_nonleaf(&self) -> usize {
        self.num_nonleaf
    }

    pub fn s0(&self) -> usize {
        0
    }

    pub fn x(&self, i: usize) -> Range<usize> {
        1 + i * self.nx..1 + (i + 1) * self.nx
    }

    pub fn u(&self, i: usize) -> Range<usize> {
        self.u_start + i * self.nu..self.u_start + (i + 1) * self.nu
    }

    /// States and inputs, the part constrained by the dynamics.
    pub fn z1(&self) -> Range<usize> {
        1..self.u_start + self.num_nonleaf * self.nu
    }

    /// Risk variables, the part constrained by the kernel conditions.
    pub fn z2(&self) -> Range<usize> {
        self.u_start + self.num_nonleaf * self.nu..self.len
    }

    pub fn z2_block(&self, i: usize) -> Range<usize> {
        let o = self.z2_off[i];
        o..o + self.ny[i] + 2 * self.nch[i]
    }

    pub fn y(&self, i: usize) -> Range<usize> {
        let o = self.z2_off[i];
        o..o + self.ny[i]
    }

    pub fn ny(&self, i: usize) -> usize {
        self.ny[i]
    }

    pub fn taus(&self, i: usize) -> Range<usize> {
        let o = self.z2_off[i] + self.ny[i];
        o..o + self.nch[i]
    }

    pub fn ss(&self, i: usize) -> Range<usize> {
        let o = self.z2_off[i] + self.ny[i] + self.nch[i];
        o..o + self.nch[i]
    }

    /// Index of `tau^c` for a non-root node `c`.
    pub fn tau_of(&self, c: usize) -> usize {
        let a = self.anc[c];
        self.z2_off[a] + self.ny[a] + (c - self.first_child[a])
    }

    /// Index of `s^c`; `s^0` is the scalar `s0`.
    pub fn s_of(&self, c: usize) -> usize {
        if c == 0 {
            return 0;
        }
        let a = self.anc[c];
        self.z2_off[a] + self.ny[a] + self.nch[a] + (c - self.first_child[a])
    }

    /// Segment boundaries: `s0`, one per state, one per input, one per
    /// risk block.
    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualLayout {
    pub nx: usize,
    pub nu: usize,
    num_nonleaf: usize,
    num_nodes: usize,
    ny: Vec<usize>,
    rows: Vec<usize>,
    leaf_rows: Vec<usize>,
    /// Start of every group plus the total length.
    bounds: Vec<usize>,
}

impl DualLayout {
    pub fn new(tree: &ScenarioTree, nx: usize, nu: usize, ny: &[usize], rows: &[usize], leaf_rows: &[usize]) -> Self {
        let nn = tree.num_nonleaf();
        let n = tree.num_nodes();
        let mut bounds = Vec::with_capacity(2 * n + 1);
        let mut off = 0;
        for i in 0..nn {
            bounds.push(off);
            off += ny[i] + 1 + rows[i];
        }
        for _ in 1..n {
            bounds.push(off);
            off += nx + nu + 2;
        }
        for &r in leaf_rows {
            bounds.push(off);
            off += r + nx + 2;
        }
        bounds.push(off);
        DualLayout {
            nx,
            nu,
            num_nonleaf: nn,
            num_nodes: n,
            ny: ny.to_vec(),
            rows: rows.to_vec(),
            leaf_rows: leaf_rows.to_vec(),
            bounds,
        }
    }

    pub fn len(&self) -> usize {
        *self.bounds.last().expect("bounds")
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> &[usize] {
        &self.bounds
    }

    pub fn num_groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn y(&self, i: usize) -> Range<usize> {
        let o = self.bounds[i];
        o..o + self.ny[i]
    }

    pub fn scalar(&self, i: usize) -> usize {
        self.bounds[i] + self.ny[i]
    }

    pub fn con(&self, i: usize) -> Range<usize> {
        let o = self.bounds[i] + self.ny[i] + 1;
        o..o + self.rows[i]
    }

    /// Stage cone block of non-root node `i`.
    pub fn soc(&self, i: usize) -> Range<usize> {
        let o = self.bounds[self.num_nonleaf + i - 1];
        o..o + self.nx + self.nu + 2
    }

    pub fn leaf_group(&self, j: usize) -> usize {
        self.num_nonleaf + self.num_nodes - 1 + (j - self.num_nonleaf)
    }

    pub fn leaf_con(&self, j: usize) -> Range<usize> {
        let o = self.bounds[self.leaf_group(j)];
        o..o + self.leaf_rows[j - self.num_nonleaf]
    }

    pub fn leaf_soc(&self, j: usize) -> Range<usize> {
        let o = self.bounds[self.leaf_group(j)] + self.leaf_rows[j - self.num_nonleaf];
        o..o + self.nx + 2
    }
}

/// Result of [`LinearOperator::estimate_norm`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpNormEstimate<T> {
    /// Power-iteration estimate of `|L|`.
    pub estimate: T,
    pub iterations: usize,
    /// `false` when the iteration cap was hit.
    pub converged: bool,
    /// Exact norm from the block decomposition.
    pub bound: T,
}

fn gemv<T: Real>(out: &mut [T], m: &DMatrix<T>, x: &[T], beta: T) {
    if m.nrows() == 0 {
        return;
    }
    let xv = DVectorView::from_slice(x, x.len());
    let n = out.len();
    DVectorViewMut::from_slice(out, n).gemv(T::one(), m, &xv, beta);
}

fn gemv_tr<T: Real>(out: &mut [T], m: &DMatrix<T>, x: &[T], beta: T) {
    let n = out.len();
    if m.nrows() == 0 {
        if beta == T::zero() {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    let xv = DVectorView::from_slice(x, x.len());
    DVectorViewMut::from_slice(out, n).gemv_tr(T::one(), m, &xv, beta);
}

fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    // the Gram matrix is small and symmetric, cheaper than an SVD of m
    let g = m.transpose() * m;
    g.symmetric_eigen().eigenvalues.max().max(T::zero()).sqrt()
}

/// The operator `L` for one (preconditioned) problem.
#[derive(Debug, Clone)]
pub struct LinearOperator<T: Real> {
    pub primal: PrimalLayout,
    pub dual: DualLayout,
    tree: ScenarioTree,
    b: Vec<DVector<T>>,
    gx: Vec<DMatrix<T>>,
    gu: Vec<DMatrix<T>>,
    /// Indexed by `i - 1`.
    stage: Vec<StageSoc<T>>,
    /// Indexed by leaf position.
    term: Vec<TerminalSoc<T>>,
    gn: Vec<DMatrix<T>>,
}

impl<T: Real> LinearOperator<T> {
    pub fn new(p: &Raocp<T>) -> Result<Self> {
        let tree = &p.tree;
        let nn = tree.num_nonleaf();
        let ny: Vec<usize> = p.risks.iter().map(|r| r.rows()).collect();
        let rows: Vec<usize> = p.constraints.iter().map(|c| c.rows()).collect();
        let leaf_rows: Vec<usize> = p.terminal_constraints.iter().map(|c| c.rows()).collect();
        let stage = p.stage_costs.iter().map(StageSoc::new).collect::<Result<Vec<_>>>()?;
        let term = p.terminal_costs.iter().map(TerminalSoc::new).collect::<Result<Vec<_>>>()?;
        Ok(LinearOperator {
            primal: PrimalLayout::new(tree, p.nx, p.nu, &ny),
            dual: DualLayout::new(tree, p.nx, p.nu, &ny, &rows, &leaf_rows),
            tree: tree.clone(),
            b: p.risks.iter().map(|r| r.b.clone()).collect(),
            gx: (0..nn).map(|i| p.constraints[i].gamma_x.clone()).collect(),
            gu: (0..nn).map(|i| p.constraints[i].gamma_u.clone()).collect(),
            stage,
            term,
            gn: p.terminal_constraints.iter().map(|c| c.gamma.clone()).collect(),
        })
    }

    pub fn tree(&self) -> &ScenarioTree {
        &self.tree
    }

    pub fn stage_soc(&self, i: usize) -> &StageSoc<T> {
        &self.stage[i - 1]
    }

    pub fn terminal_soc(&self, j: usize) -> &TerminalSoc<T> {
        &self.term[j - self.tree.num_nonleaf()]
    }

    /// `eta <- L z`
    pub fn apply(&self, z: &[T], eta: &mut [T]) {
        assert_eq!(z.len(), self.primal.len(), "primal length");
        assert_eq!(eta.len(), self.dual.len(), "dual length");
        let pl = &self.primal;
        let (nx, nu) = (pl.nx, pl.nu);
        let nn = self.tree.num_nonleaf();
        let n = self.tree.num_nodes();
        let half = T::lit(0.5);
        let segs = split_segments_mut(eta, self.dual.bounds());
        for_each_segment(segs, |g, seg| {
            if g < nn {
                let i = g;
                let ny = pl.ny(i);
                let y = &z[pl.y(i)];
                seg[..ny].copy_from_slice(y);
                seg[ny] = z[pl.s_of(i)] - dot(self.b[i].as_slice(), y);
                let out = &mut seg[ny + 1..];
                gemv(out, &self.gx[i], &z[pl.x(i)], T::zero());
                gemv(out, &self.gu[i], &z[pl.u(i)], T::one());
            } else if g < nn + n - 1 {
                let i = g - nn + 1;
                let a = self.tree.ancestor(i).expect("non-root");
                let s = &self.stage[i - 1];
                let (x, u) = (&z[pl.x(a)], &z[pl.u(a)]);
                gemv(&mut seg[..nx], &s.sqrt_q, x, T::zero());
                gemv(&mut seg[nx..nx + nu], &s.sqrt_r, u, T::zero());
                let t = (z[pl.tau_of(i)] - dot(s.ker_q.as_slice(), x) - dot(s.ker_r.as_slice(), u)) * half;
                seg[nx + nu] = t;
                seg[nx + nu + 1] = t;
            } else {
                let j = g - (n - 1);
                let k = j - nn;
                let x = &z[pl.x(j)];
                let r = self.gn[k].nrows();
                gemv(&mut seg[..r], &self.gn[k], x, T::zero());
                let s = &self.term[k];
                gemv(&mut seg[r..r + nx], &s.sqrt_q, x, T::zero());
                let t = (z[pl.s_of(j)] - dot(s.ker_q.as_slice(), x)) * half;
                seg[r + nx] = t;
                seg[r + nx + 1] = t;
            }
        });
    }

    /// `z <- L* eta`
    pub fn adjoint(&self, eta: &[T], z: &mut [T]) {
        assert_eq!(z.len(), self.primal.len(), "primal length");
        assert_eq!(eta.len(), self.dual.len(), "dual length");
        let pl = &self.primal;
        let dl = &self.dual;
        let (nx, nu) = (pl.nx, pl.nu);
        let n = self.tree.num_nodes();
        let nn = self.tree.num_nonleaf();
        let half = T::lit(0.5);
        // tail value of a stage or terminal cone block
        let soc_h = |c: usize| {
            let r = dl.soc(c);
            (eta[r.end - 2] + eta[r.end - 1]) * half
        };
        let leaf_h = |j: usize| {
            let r = dl.leaf_soc(j);
            (eta[r.end - 2] + eta[r.end - 1]) * half
        };
        let segs = split_segments_mut(z, pl.bounds());
        for_each_segment(segs, |k, seg| {
            if k == 0 {
                seg[0] = eta[dl.scalar(0)];
            } else if k <= n {
                let i = k - 1;
                if i < nn {
                    gemv_tr(seg, &self.gx[i], &eta[dl.con(i)], T::zero());
                    for c in self.tree.children(i) {
                        let s = &self.stage[c - 1];
                        let r = dl.soc(c);
                        gemv_tr(seg, &s.sqrt_q, &eta[r.start..r.start + nx], T::one());
                        let h = soc_h(c);
                        for (v, &kq) in seg.iter_mut().zip(s.ker_q.iter()) {
                            *v -= kq * h;
                        }
                    }
                } else {
                    let l = i - nn;
                    gemv_tr(seg, &self.gn[l], &eta[dl.leaf_con(i)], T::zero());
                    let s = &self.term[l];
                    let r = dl.leaf_soc(i);
                    gemv_tr(seg, &s.sqrt_q, &eta[r.start..r.start + nx], T::one());
                    let h = leaf_h(i);
                    for (v, &kq) in seg.iter_mut().zip(s.ker_q.iter()) {
                        *v -= kq * h;
                    }
                }
            } else if k <= n + nn {
                let i = k - n - 1;
                gemv_tr(seg, &self.gu[i], &eta[dl.con(i)], T::zero());
                for c in self.tree.children(i) {
                    let s = &self.stage[c - 1];
                    let r = dl.soc(c);
                    gemv_tr(seg, &s.sqrt_r, &eta[r.start + nx..r.start + nx + nu], T::one());
                    let h = soc_h(c);
                    for (v, &kr) in seg.iter_mut().zip(s.ker_r.iter()) {
                        *v -= kr * h;
                    }
                }
            } else {
                let i = k - n - nn - 1;
                let ny = pl.ny(i);
                let sc = eta[dl.scalar(i)];
                for (q, (v, &e)) in seg[..ny].iter_mut().zip(&eta[dl.y(i)]).enumerate() {
                    *v = e - self.b[i][q] * sc;
                }
                let ch = self.tree.children(i);
                let m = ch.len();
                for (q, c) in ch.enumerate() {
                    seg[ny + q] = soc_h(c);
                    seg[ny + m + q] = if c < nn { eta[dl.scalar(c)] } else { leaf_h(c) };
                }
            }
        });
    }

    /// Exact `|L|`: the columns split into groups with disjoint row
    /// supports, so the norm is the largest group norm.
    ///
    /// Groups: `(x^i, u^i, tau^{ch(i)})` for non-leaf `i`, `(y^i, s^i)` for
    /// non-leaf `i`, and `(x^j, s^j)` for leaves.
    pub fn block_norm_bound(&self) -> T {
        let pl = &self.primal;
        let (nx, nu) = (pl.nx, pl.nu);
        let nn = self.tree.num_nonleaf();
        let half = T::lit(0.5);
        let mut best = T::zero();
        for i in 0..nn {
            let ch = self.tree.children(i);
            let m = ch.len();
            let rows = self.gx[i].nrows() + m * (nx + nu + 2);
            let mut mat = DMatrix::zeros(rows, nx + nu + m);
            let r0 = self.gx[i].nrows();
            mat.view_mut((0, 0), (r0, nx)).copy_from(&self.gx[i]);
            mat.view_mut((0, nx), (r0, nu)).copy_from(&self.gu[i]);
            for (q, c) in ch.enumerate() {
                let s = &self.stage[c - 1];
                let o = r0 + q * (nx + nu + 2);
                mat.view_mut((o, 0), (nx, nx)).copy_from(&s.sqrt_q);
                mat.view_mut((o + nx, nx), (nu, nu)).copy_from(&s.sqrt_r);
                for t in [o + nx + nu, o + nx + nu + 1] {
                    for k in 0..nx {
                        mat[(t, k)] = -s.ker_q[k] * half;
                    }
                    for k in 0..nu {
                        mat[(t, nx + k)] = -s.ker_r[k] * half;
                    }
                    mat[(t, nx + nu + q)] = half;
                }
            }
            best = best.max(spectral_norm(&mat));

            let ny = pl.ny(i);
            let mut yb = DMatrix::zeros(ny + 1, ny + 1);
            yb.view_mut((0, 0), (ny, ny)).fill_with_identity();
            for q in 0..ny {
                yb[(ny, q)] = -self.b[i][q];
            }
            yb[(ny, ny)] = T::one();
            best = best.max(spectral_norm(&yb));
        }
        for j in self.tree.leaves() {
            let l = j - nn;
            let r0 = self.gn[l].nrows();
            let mut mat = DMatrix::zeros(r0 + nx + 2, nx + 1);
            mat.view_mut((0, 0), (r0, nx)).copy_from(&self.gn[l]);
            let s = &self.term[l];
            mat.view_mut((r0, 0), (nx, nx)).copy_from(&s.sqrt_q);
            for t in [r0 + nx, r0 + nx + 1] {
                for k in 0..nx {
                    mat[(t, k)] = -s.ker_q[k] * half;
                }
                mat[(t, nx)] = half;
            }
            best = best.max(spectral_norm(&mat));
        }
        best
    }

    /// Power iteration on `L*L` from a fixed-seed start.
    ///
    /// Stops once the eigen-residual `|L*L v - |Lv|^2 v|` drops below
    /// `1e-6 |Lv|^2`; a test on the change of the estimate stops early when
    /// the top singular values cluster.
    pub fn estimate_norm(&self) -> OpNormEstimate<T> {
        const TOL: f64 = 1e-6;
        const CAP: usize = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut v: Vec<T> = (0..self.primal.len()).map(|_| T::lit(rng.random::<f64>() - 0.5)).collect();
        let mut eta = vec![T::zero(); self.dual.len()];
        let mut w = vec![T::zero(); self.primal.len()];
        let nv = norm2(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        let mut est = T::zero();
        let mut converged = false;
        let mut iterations = 0;
        for it in 1..=CAP {
            iterations = it;
            // Rayleigh quotient |Lv| with |v| = 1 never overshoots |L|
            self.apply(&v, &mut eta);
            est = norm2(&eta);
            self.adjoint(&eta, &mut w);
            let lam = est * est;
            let res = w.iter().zip(&v).fold(T::zero(), |acc, (&a, &b)| acc + (a - lam * b) * (a - lam * b)).sqrt();
            let nw = norm2(&w);
            if nw == T::zero() || res <= T::lit(TOL) * lam {
                converged = true;
                break;
            }
            for (a, &b) in v.iter_mut().zip(&w) {
                *a = b / nw;
            }
        }
        OpNormEstimate { estimate: est, iterations, converged, bound: self.block_norm_bound() }
    }

    /// Dense matrix of `L`, column by column. For small test instances.
    pub fn materialize(&self) -> DMatrix<T> {
        let (np, nd) = (self.primal.len(), self.dual.len());
        let mut m = DMatrix::zeros(nd, np);
        let mut e = vec![T::zero(); np];
        let mut col = vec![T::zero(); nd];
        for k in 0..np {
            e[k] = T::one();
            self.apply(&e, &mut col);
            m.set_column(k, &DVector::from_column_slice(&col));
            e[k] = T::zero();
        }
        m
    }

    /// `<a, M b>` with `M = [I, -alpha L*; -alpha L, I]`.
    pub fn m_inner(&self, az: &[T], aeta: &[T], bz: &[T], beta: &[T], alpha: T) -> T {
        let mut la = vec![T::zero(); self.dual.len()];
        let mut lb = vec![T::zero(); self.dual.len()];
        self.apply(az, &mut la);
        self.apply(bz, &mut lb);
        dot(az, bz) - alpha * (dot(&la, beta) + dot(aeta, &lb)) + dot(aeta, beta)
    }

    /// `|v|_M`; panics when the radicand is negative beyond rounding, which
    /// means `alpha |L| >= 1`.
    pub fn m_norm(&self, z: &[T], eta: &[T], alpha: T) -> T {
        let mut lz = vec![T::zero(); self.dual.len()];
        self.apply(z, &mut lz);
        let sq = dot(z, z) - T::lit(2.0) * alpha * dot(eta, &lz) + dot(eta, eta);
        assert!(sq >= -T::lit(1e-12), "M is not positive definite: step size too large");
        sq.max(T::zero()).sqrt()
    }
}
