//! Diagonal change of variables that equilibrates the cost blocks.

use nalgebra::{DMatrix, DVector};

use super::{BoxSet, Dynamics, NodeConstraint, Raocp, StageCost, TerminalConstraint, TerminalCost};
use crate::scalar::Real;

/// Scaling applied by [`precondition`]. States of non-leaf nodes are
/// scaled by `sx`, inputs by `su`, leaf states by `sx_leaf`; constraint rows
/// are divided by `a_node` / `a_leaf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Precond<T: Real> {
    pub c_hat: T,
    pub sx: DVector<T>,
    pub su: DVector<T>,
    pub sx_leaf: DVector<T>,
    pub a_node: Vec<T>,
    pub a_leaf: Vec<T>,
    num_nonleaf: usize,
}

impl<T: Real> Precond<T> {
    /// No scaling at all.
    pub fn identity(p: &Raocp<T>) -> Self {
        Precond {
            c_hat: T::one(),
            sx: DVector::from_element(p.nx, T::one()),
            su: DVector::from_element(p.nu, T::one()),
            sx_leaf: DVector::from_element(p.nx, T::one()),
            a_node: vec![T::one(); p.tree.num_nonleaf()],
            a_leaf: vec![T::one(); p.tree.num_leaves()],
            num_nonleaf: p.tree.num_nonleaf(),
        }
    }

    pub fn state_scale(&self, i: usize) -> &DVector<T> {
        if i < self.num_nonleaf {
            &self.sx
        } else {
            &self.sx_leaf
        }
    }

    /// Original-variable state from a scaled one.
    pub fn unscale_state(&self, i: usize, x: &[T]) -> DVector<T> {
        DVector::from_iterator(x.len(), x.iter().zip(self.state_scale(i).iter()).map(|(&v, &s)| v / s))
    }

    pub fn unscale_input(&self, u: &[T]) -> DVector<T> {
        DVector::from_iterator(u.len(), u.iter().zip(self.su.iter()).map(|(&v, &s)| v / s))
    }

    pub fn scale_state(&self, i: usize, x: &[T]) -> DVector<T> {
        DVector::from_iterator(x.len(), x.iter().zip(self.state_scale(i).iter()).map(|(&v, &s)| v * s))
    }

    pub fn scale_input(&self, u: &[T]) -> DVector<T> {
        DVector::from_iterator(u.len(), u.iter().zip(self.su.iter()).map(|(&v, &s)| v * s))
    }
}

fn diag_inv<T: Real>(s: &DVector<T>) -> DMatrix<T> {
    DMatrix::from_diagonal(&s.map(|v| T::one() / v))
}

fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Scales `p` and returns the scaled problem with the scaling used.
///
/// Cost matrices are congruence-transformed, so optimal costs are unchanged
/// and optimal trajectories map back through [`Precond::unscale_state`] and
/// [`Precond::unscale_input`].
pub fn precondition<T: Real>(p: &Raocp<T>) -> (Raocp<T>, Precond<T>) {
    let tree = &p.tree;
    let (nx, nu) = (p.nx, p.nu);
    let c_hat = T::lit((tree.max_children() as f64).sqrt());
    let mut sx = DVector::from_element(nx, T::one());
    let mut su = DVector::from_element(nu, T::one());
    for s in &p.stage_costs {
        for k in 0..nx {
            sx[k] = sx[k].max(s.q[(k, k)].max(T::zero()).sqrt());
        }
        for k in 0..nu {
            su[k] = su[k].max(s.r[(k, k)].max(T::zero()).sqrt());
        }
    }
    sx *= c_hat;
    su *= c_hat;
    let mut sx_leaf = DVector::from_element(nx, T::one());
    for t in &p.terminal_costs {
        for k in 0..nx {
            sx_leaf[k] = sx_leaf[k].max(t.q[(k, k)].max(T::zero()).sqrt());
        }
    }

    let nn = tree.num_nonleaf();
    let sx_m = DMatrix::from_diagonal(&sx);
    let sl_m = DMatrix::from_diagonal(&sx_leaf);
    let (sxi, sui, sxli) = (diag_inv(&sx), diag_inv(&su), diag_inv(&sx_leaf));
    let node_scale = |i: usize| if i < nn { &sx_m } else { &sl_m };

    let dynamics = (1..tree.num_nodes())
        .map(|i| {
            let d = p.dynamics(i);
            let si = node_scale(i);
            Dynamics { a: si * &d.a * &sxi, b: si * &d.b * &sui, c: si * &d.c }
        })
        .collect();
    let stage_costs = p
        .stage_costs
        .iter()
        .map(|s| StageCost {
            q: &sxi * &s.q * &sxi,
            r: &sui * &s.r * &sui,
            q_lin: &sxi * &s.q_lin,
            r_lin: &sui * &s.r_lin,
        })
        .collect();
    let terminal_costs = p
        .terminal_costs
        .iter()
        .map(|t| TerminalCost { q: &sxli * &t.q * &sxli, q_lin: &sxli * &t.q_lin })
        .collect();

    let mut a_node = Vec::with_capacity(nn);
    let constraints = p
        .constraints
        .iter()
        .map(|c| {
            let gx = &c.gamma_x * &sxi;
            let gu = &c.gamma_u * &sui;
            let mut stacked = DMatrix::zeros(c.rows(), nx + nu);
            stacked.view_mut((0, 0), (c.rows(), nx)).copy_from(&gx);
            stacked.view_mut((0, nx), (c.rows(), nu)).copy_from(&gu);
            let a = spectral_norm(&stacked).max(T::one());
            a_node.push(a);
            let inv = T::one() / a;
            NodeConstraint { gamma_x: gx * inv, gamma_u: gu * inv, set: c.set.scaled(inv) }
        })
        .collect();
    let mut a_leaf = Vec::with_capacity(tree.num_leaves());
    let terminal_constraints = p
        .terminal_constraints
        .iter()
        .map(|c| {
            let g = &c.gamma * &sxli;
            let a = spectral_norm(&g).max(T::one());
            a_leaf.push(a);
            let inv = T::one() / a;
            TerminalConstraint { gamma: g * inv, set: c.set.scaled(inv) }
        })
        .collect();

    let x0 = p.x0.component_mul(&sx);
    let scaled = Raocp {
        tree: p.tree.clone(),
        nx,
        nu,
        dynamics,
        stage_costs,
        terminal_costs,
        constraints,
        terminal_constraints,
        risks: p.risks.clone(),
        x0,
    };
    let pc = Precond { c_hat, sx, su, sx_leaf, a_node, a_leaf, num_nonleaf: nn };
    (scaled, pc)
}

impl<T: Real> BoxSet<T> {
    /// Box with both bounds multiplied by a positive scalar.
    pub(crate) fn scaled(&self, s: T) -> Self {
        BoxSet { lo: &self.lo * s, hi: &self.hi * s }
    }
}
