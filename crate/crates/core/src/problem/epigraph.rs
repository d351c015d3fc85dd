//! Second-order-cone descriptions of quadratic-plus-linear epigraphs.
//!
//! For `l(z) = z'Qz + q'z` with `Q` PSD of rank `p`, split `z = z' + S e`
//! with `z'` in `ker Q` and `S` an orthonormal basis of `range Q`. Then
//! `l(z) <= tau` iff
//!
//! ```text
//! ( Qt^{1/2} e,  tau/2 - q'z'/2,  tau/2 - q'z'/2 ) - a  in  SOC_{p+2}
//! a = ( -Qt^{-1/2} S'q / 2,  -|S'q|^2_{Qt^-1}/8 + 1/2,  -|S'q|^2_{Qt^-1}/8 - 1/2 )
//! ```
//!
//! with `Qt = S'QS` and the cone axis as the last coordinate.
//!
//! The solver uses the equivalent full-dimensional form built from the
//! symmetric square root `Q^{1/2}` (see [`StageSoc`]), which keeps every
//! cone block the same size regardless of rank.

use nalgebra::{DMatrix, DVector};

use super::{check_symmetric, StageCost, TerminalCost};
use crate::error::{Error, Result};
use crate::scalar::{norm2, Real};

/// Eigenvalues below `RANK_TOL * lambda_max` count as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Symmetric square root, pseudo-inverse square root and range basis of a
/// PSD matrix.
#[derive(Debug, Clone)]
pub struct PsdSqrt<T: Real> {
    pub sqrt: DMatrix<T>,
    pub pinv_sqrt: DMatrix<T>,
    /// Orthonormal basis of the range, `n x rank`.
    pub basis: DMatrix<T>,
    /// Nonzero eigenvalues matching the columns of `basis`.
    pub eigenvalues: DVector<T>,
}

impl<T: Real> PsdSqrt<T> {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// Component of `v` in `ker Q`.
    pub fn kernel_part(&self, v: &DVector<T>) -> DVector<T> {
        v - &self.basis * (self.basis.transpose() * v)
    }
}

pub fn psd_sqrt<T: Real>(q: &DMatrix<T>) -> Result<PsdSqrt<T>> {
    check_symmetric(q, "PSD factor input")?;
    let n = q.nrows();
    if n == 0 {
        return Ok(PsdSqrt {
            sqrt: DMatrix::zeros(0, 0),
            pinv_sqrt: DMatrix::zeros(0, 0),
            basis: DMatrix::zeros(0, 0),
            eigenvalues: DVector::zeros(0),
        });
    }
    let sym = (q + q.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.max();
    if eig.eigenvalues.min() < -T::lit(RANK_TOL) * lmax.max(T::one()) {
        return Err(Error::NotPositive("matrix has a negative eigenvalue".into()));
    }
    let thr = T::lit(RANK_TOL) * lmax;
    let keep: Vec<usize> = (0..n).filter(|&k| lmax > T::zero() && eig.eigenvalues[k] > thr).collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    let mut vals = DVector::zeros(keep.len());
    let mut sqrt = DMatrix::zeros(n, n);
    let mut pinv = DMatrix::zeros(n, n);
    for (c, &k) in keep.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let l = eig.eigenvalues[k];
        basis.set_column(c, &v);
        vals[c] = l;
        let vv = &v * v.transpose();
        sqrt += &vv * l.sqrt();
        pinv += vv * (T::one() / l.sqrt());
    }
    Ok(PsdSqrt { sqrt, pinv_sqrt: pinv, basis, eigenvalues: vals })
}

/// The rank-reduced description of the epigraph of `z'Qz + q'z`.
#[derive(Debug, Clone)]
pub struct QuadLinSoc<T: Real> {
    /// `Qt^{1/2}`, `p x p`.
    pub factor: DMatrix<T>,
    /// `S`, `n x p`, orthonormal basis of `range Q`.
    pub basis: DMatrix<T>,
    /// Translation `a`, length `p + 2`.
    pub a: DVector<T>,
    pub q: DVector<T>,
    pub q_mat: DMatrix<T>,
}

/// Builds the cone data of the epigraph of `z'Qz + q'z`.
pub fn soc_data_quadlin<T: Real>(q_mat: &DMatrix<T>, q: &DVector<T>) -> Result<QuadLinSoc<T>> {
    if q_mat.nrows() != q_mat.ncols() || q.len() != q_mat.nrows() {
        return Err(Error::Dimension("quadratic cost data".into()));
    }
    let f = psd_sqrt(q_mat)?;
    let p = f.rank();
    let factor = DMatrix::from_diagonal(&f.eigenvalues.map(|l| l.sqrt()));
    let stq = f.basis.transpose() * q;
    let head = -DVector::from_iterator(p, (0..p).map(|k| stq[k] / factor[(k, k)])) * T::lit(0.5);
    let w: T = (0..p).map(|k| stq[k] * stq[k] / f.eigenvalues[k]).fold(T::zero(), |a, b| a + b);
    let eighth = w * T::lit(0.125);
    let mut a = DVector::zeros(p + 2);
    a.rows_mut(0, p).copy_from(&head);
    a[p] = -eighth + T::lit(0.5);
    a[p + 1] = -eighth - T::lit(0.5);
    Ok(QuadLinSoc { factor, basis: f.basis, a, q: q.clone(), q_mat: q_mat.clone() })
}

impl<T: Real> QuadLinSoc<T> {
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `G(e, z', tau)` for the decomposition of `z`.
    pub fn g_map(&self, z: &DVector<T>, tau: T) -> DVector<T> {
        let p = self.rank();
        let e = self.basis.transpose() * z;
        let zk = z - &self.basis * &e;
        let t = (tau - self.q.dot(&zk)) * T::lit(0.5);
        let mut g = DVector::zeros(p + 2);
        g.rows_mut(0, p).copy_from(&(&self.factor * e));
        g[p] = t;
        g[p + 1] = t;
        g
    }

    /// `tail - |head|` of `G(z, tau) - a`; nonnegative iff `(z, tau)` lies in
    /// the epigraph.
    pub fn margin(&self, z: &DVector<T>, tau: T) -> T {
        let v = self.g_map(z, tau) - &self.a;
        let d = v.len();
        v[d - 1] - norm2(&v.as_slice()[..d - 1])
    }

    pub fn contains(&self, z: &DVector<T>, tau: T) -> bool {
        self.margin(z, tau) >= T::zero()
    }

    /// `l(z)` evaluated directly.
    pub fn cost(&self, z: &DVector<T>) -> T {
        (&self.q_mat * z).dot(z) + self.q.dot(z)
    }
}

/// Epigraph of `z'Qz + q'z + lambda0 |z|_1` via auxiliary `theta` and
/// `lambda_1..lambda_n`: the quadratic cone condition at `tau - lambda0 theta`
/// together with `sum lambda_i <= theta` and `-lambda_i <= z_i <= lambda_i`.
#[derive(Debug, Clone)]
pub struct L1Epigraph<T: Real> {
    pub base: QuadLinSoc<T>,
    pub lambda0: T,
}

pub fn soc_data_l1<T: Real>(q_mat: &DMatrix<T>, q: &DVector<T>, lambda0: T) -> Result<L1Epigraph<T>> {
    if !(lambda0 > T::zero()) {
        return Err(Error::InvalidParameter("l1 weight must be positive".into()));
    }
    let base = soc_data_quadlin(q_mat, q)?;
    if base.rank() != q_mat.nrows() {
        return Err(Error::NotPositive("l1 epigraph requires a positive definite Q".into()));
    }
    Ok(L1Epigraph { base, lambda0 })
}

impl<T: Real> L1Epigraph<T> {
    /// Smallest auxiliary variables compatible with `z`.
    pub fn minimal_certificate(&self, z: &DVector<T>) -> (T, DVector<T>) {
        let lam = z.map(|v| v.abs());
        (lam.sum(), lam)
    }

    /// Whether `(theta, lambdas)` certifies `(z, tau)`.
    pub fn certifies(&self, z: &DVector<T>, tau: T, theta: T, lambdas: &DVector<T>, tol: T) -> bool {
        lambdas.sum() <= theta + tol
            && z.iter().zip(lambdas.iter()).all(|(&zi, &li)| -li <= zi + tol && zi <= li + tol)
            && self.base.margin(z, tau - self.lambda0 * theta) >= -tol
    }

    /// Membership through the minimal certificate; a certificate exists iff
    /// this one works because the cone condition is monotone in `theta`.
    pub fn contains(&self, z: &DVector<T>, tau: T) -> bool {
        let (theta, lam) = self.minimal_certificate(z);
        self.certifies(z, tau, theta, &lam, T::zero())
    }

    pub fn cost(&self, z: &DVector<T>) -> T {
        self.base.cost(z) + self.lambda0 * z.iter().fold(T::zero(), |a, v| a + v.abs())
    }
}

/// Epigraph of `z'Qz + q'z + |max(0, z - z_max)|^2` lifted to `(z, theta)`
/// with `theta >= 0`, `z - z_max <= theta` and the quadratic cone condition
/// for `blkdiag(Q, I)`.
#[derive(Debug, Clone)]
pub struct SoftEpigraph<T: Real> {
    pub lifted: QuadLinSoc<T>,
    pub z_max: DVector<T>,
}

pub fn soc_data_soft<T: Real>(q_mat: &DMatrix<T>, q: &DVector<T>, z_max: &DVector<T>) -> Result<SoftEpigraph<T>> {
    let n = q_mat.nrows();
    if q_mat.ncols() != n || q.len() != n || z_max.len() != n {
        return Err(Error::Dimension("soft-constraint cost data".into()));
    }
    let mut big = DMatrix::zeros(2 * n, 2 * n);
    big.view_mut((0, 0), (n, n)).copy_from(q_mat);
    big.view_mut((n, n), (n, n)).fill_with_identity();
    let mut lin = DVector::zeros(2 * n);
    lin.rows_mut(0, n).copy_from(q);
    Ok(SoftEpigraph { lifted: soc_data_quadlin(&big, &lin)?, z_max: z_max.clone() })
}

impl<T: Real> SoftEpigraph<T> {
    fn lift(z: &DVector<T>, theta: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(z.len() * 2, z.iter().chain(theta.iter()).copied())
    }

    pub fn minimal_certificate(&self, z: &DVector<T>) -> DVector<T> {
        (z - &self.z_max).map(|v| v.max(T::zero()))
    }

    pub fn certifies(&self, z: &DVector<T>, tau: T, theta: &DVector<T>, tol: T) -> bool {
        theta.iter().all(|&t| t >= -tol)
            && z.iter().zip(self.z_max.iter()).zip(theta.iter()).all(|((&zi, &m), &t)| zi - m <= t + tol)
            && self.lifted.margin(&Self::lift(z, theta), tau) >= -tol
    }

    pub fn contains(&self, z: &DVector<T>, tau: T) -> bool {
        let theta = self.minimal_certificate(z);
        self.certifies(z, tau, &theta, T::zero())
    }

    pub fn cost(&self, z: &DVector<T>) -> T {
        let n = z.len();
        let qm = self.lifted.q_mat.view((0, 0), (n, n));
        let q = self.lifted.q.rows(0, n);
        let pen = self.minimal_certificate(z);
        (qm * z).dot(z) + q.dot(z) + pen.dot(&pen)
    }
}

/// Full-dimensional cone data of a stage cost `l(x, u)`.
///
/// The `L` image of node `i` is `(Q^{1/2} x, R^{1/2} u, (tau - k'x - m'u)/2,
/// (tau - k'x - m'u)/2)` where `k`, `m` are the components of `q`, `r` in the
/// kernels of `Q`, `R`. It must lie in `SOC_{nx+nu+2} + a`.
#[derive(Debug, Clone)]
pub struct StageSoc<T: Real> {
    pub sqrt_q: DMatrix<T>,
    pub sqrt_r: DMatrix<T>,
    pub ker_q: DVector<T>,
    pub ker_r: DVector<T>,
    pub a: DVector<T>,
}

/// Full-dimensional cone data of a terminal cost; the image is
/// `(Q_N^{1/2} x, (s - k'x)/2, (s - k'x)/2)`.
#[derive(Debug, Clone)]
pub struct TerminalSoc<T: Real> {
    pub sqrt_q: DMatrix<T>,
    pub ker_q: DVector<T>,
    pub a: DVector<T>,
}

/// Translation and kernel parts for a block-diagonal PSD cost.
fn full_translation<T: Real>(blocks: &[(&PsdSqrt<T>, &DVector<T>)]) -> (Vec<DVector<T>>, DVector<T>) {
    let dim: usize = blocks.iter().map(|b| b.1.len()).sum();
    let mut a = DVector::zeros(dim + 2);
    let mut kers = Vec::new();
    let mut w = T::zero();
    let mut off = 0;
    for (f, q) in blocks {
        let h = &f.pinv_sqrt * *q;
        w += h.dot(&h);
        a.rows_mut(off, q.len()).copy_from(&(h * T::lit(-0.5)));
        kers.push(f.kernel_part(q));
        off += q.len();
    }
    a[dim] = -w * T::lit(0.125) + T::lit(0.5);
    a[dim + 1] = -w * T::lit(0.125) - T::lit(0.5);
    (kers, a)
}

impl<T: Real> StageSoc<T> {
    pub fn new(cost: &StageCost<T>) -> Result<Self> {
        let fq = psd_sqrt(&cost.q)?;
        let fr = psd_sqrt(&cost.r)?;
        let (mut kers, a) = full_translation(&[(&fq, &cost.q_lin), (&fr, &cost.r_lin)]);
        let ker_r = kers.pop().expect("two blocks");
        let ker_q = kers.pop().expect("two blocks");
        Ok(StageSoc { sqrt_q: fq.sqrt, sqrt_r: fr.sqrt, ker_q, ker_r, a })
    }

    /// The `L` image of `(x, u, tau)` (before subtracting `a`).
    pub fn image(&self, x: &[T], u: &[T], tau: T) -> DVector<T> {
        let (nx, nu) = (x.len(), u.len());
        let xv = DVector::from_column_slice(x);
        let uv = DVector::from_column_slice(u);
        let mut g = DVector::zeros(nx + nu + 2);
        g.rows_mut(0, nx).copy_from(&(&self.sqrt_q * &xv));
        g.rows_mut(nx, nu).copy_from(&(&self.sqrt_r * &uv));
        let t = (tau - self.ker_q.dot(&xv) - self.ker_r.dot(&uv)) * T::lit(0.5);
        g[nx + nu] = t;
        g[nx + nu + 1] = t;
        g
    }
}

impl<T: Real> TerminalSoc<T> {
    pub fn new(cost: &TerminalCost<T>) -> Result<Self> {
        let fq = psd_sqrt(&cost.q)?;
        let (mut kers, a) = full_translation(&[(&fq, &cost.q_lin)]);
        Ok(TerminalSoc { sqrt_q: fq.sqrt, ker_q: kers.pop().expect("one block"), a })
    }

    pub fn image(&self, x: &[T], s: T) -> DVector<T> {
        let nx = x.len();
        let xv = DVector::from_column_slice(x);
        let mut g = DVector::zeros(nx + 2);
        g.rows_mut(0, nx).copy_from(&(&self.sqrt_q * &xv));
        let t = (s - self.ker_q.dot(&xv)) * T::lit(0.5);
        g[nx] = t;
        g[nx + 1] = t;
        g
    }
}

/// `tail - |head|` of `v - a`.
#[cfg(test)]
fn translated_soc_margin<T: Real>(v: &DVector<T>, a: &DVector<T>) -> T {
    let w = v - a;
    let d = w.len();
    w[d - 1] - norm2(&w.as_slice()[..d - 1])
}
