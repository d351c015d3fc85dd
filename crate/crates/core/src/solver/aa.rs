//! Anderson acceleration on the fixed-point residual.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::linalg::pivoted_lstsq;

use crate::scalar::Real;

/// Which combination of past data forms the accelerated direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AaVariant {
    /// `psi = -r - (M_r - M_d) kappa` with `M_r` holding past residuals.
    ResidualHistory,
    /// Type-II Anderson: `psi = -r - (S - M_d) kappa` with `S` holding
    /// differences of past iterates.
    IterateDifferences,
}

/// Residual memory, newest column first.
#[derive(Debug, Clone)]
pub struct AaState<T: Real> {
    memory: usize,
    variant: AaVariant,
    residuals: VecDeque<Vec<T>>,
    iterates: VecDeque<Vec<T>>,
    k: usize,
}

const RANK_TOL: f64 = 1e-12;

impl<T: Real> AaState<T> {
    pub fn new(memory: usize, variant: AaVariant) -> Self {
        assert!(memory >= 1, "memory must be positive");
        AaState { memory, variant, residuals: VecDeque::new(), iterates: VecDeque::new(), k: 0 }
    }

    pub fn iteration(&self) -> usize {
        self.k
    }

    pub fn reset(&mut self) {
        self.residuals.clear();
        self.iterates.clear();
        self.k = 0;
    }

    /// Pushes `r_k` (and the iterate it belongs to, used only by
    /// [`AaVariant::IterateDifferences`]) and returns the direction.
    pub fn direction(&mut self, v: &[T], r: &[T]) -> Vec<T> {
        self.residuals.push_front(r.to_vec());
        self.iterates.push_front(v.to_vec());
        while self.residuals.len() > self.memory + 1 {
            self.residuals.pop_back();
            self.iterates.pop_back();
        }
        let k = self.k;
        self.k += 1;
        if k == 0 {
            return r.iter().map(|&x| -x).collect();
        }
        let m = self.residuals.len() - 1;
        let n = r.len();
        let md = DMatrix::from_fn(n, m, |row, c| self.residuals[c][row] - self.residuals[c + 1][row]);
        let kappa = pivoted_lstsq(&md, r, RANK_TOL);
        let mut psi: Vec<T> = r.iter().map(|&x| -x).collect();
        for c in 0..m {
            let kc = kappa[c];
            if kc == T::zero() {
                continue;
            }
            for row in 0..n {
                let other = match self.variant {
                    AaVariant::ResidualHistory => self.residuals[c][row],
                    AaVariant::IterateDifferences => self.iterates[c][row] - self.iterates[c + 1][row],
                };
                psi[row] -= (other - md[(row, c)]) * kc;
            }
        }
        psi
    }
}

/// Direction of a fresh state fed with one residual per entry of
/// `history` (oldest first) and memory `m`, for one-dimensional data.
#[cfg(test)]
fn scalar_direction(history: &[f64], m: usize) -> f64 {
    let mut s = AaState::new(m, AaVariant::ResidualHistory);
    let mut out = 0.0;
    for &r in history {
        out = s.direction(&[0.0], &[r])[0];
    }
    out
}
