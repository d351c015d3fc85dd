//! Kernel projectors of the risk blocks.

use nalgebra::DMatrix;

use crate::linalg::null_basis;
use crate::risk::RiskSpec;
use crate::scalar::Real;

const RANK_TOL: f64 = 1e-12;

/// Orthogonal projector onto `ker [E' -I -I; F' 0 0]` acting on a block
/// `(y, tau, s)`, from an orthonormal kernel basis.
pub fn kernel_projector<T: Real>(risk: &RiskSpec<T>) -> DMatrix<T> {
    let (n, ny, nnu) = (risk.n, risk.rows(), risk.n_nu());
    let cols = ny + 2 * n;
    let mut m = DMatrix::zeros(n + nnu, cols);
    m.view_mut((0, 0), (n, ny)).copy_from(&risk.e.transpose());
    for k in 0..n {
        m[(k, ny + k)] = -T::one();
        m[(k, ny + n + k)] = -T::one();
    }
    if nnu > 0 {
        m.view_mut((n, 0), (nnu, ny)).copy_from(&risk.f.transpose());
    }
    let basis = null_basis(&m, RANK_TOL);
    let proj = &basis * basis.transpose();
    // exact symmetry; rounding in the rank-one updates is not symmetric
    (&proj + proj.transpose()) * T::lit(0.5)
}
