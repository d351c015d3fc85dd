//! Rank-revealing QR with column pivoting by largest remaining norm.
//!
//! nalgebra's SVD loses digits in the singular vectors when singular values
//! repeat, and its `ColPivQR` pivots on the largest entry, which does not
//! reveal rank; the small dense factorizations used for kernels and least
//! squares go through this instead.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// `A P = Q R` with `Q` square orthogonal and `|R_kk|` nonincreasing.
pub(crate) struct PivotedQr<T: Real> {
    /// Only formed by [`PivotedQr::new`].
    pub q: DMatrix<T>,
    /// Householder vectors `v_k` (acting on rows `k..`) with `2 / v'v`.
    reflectors: Vec<(DVector<T>, T)>,
    pub r: DMatrix<T>,
    /// Column `k` of `A P` is column `perm[k]` of `A`.
    pub perm: Vec<usize>,
}

impl<T: Real> PivotedQr<T> {
    pub fn new(a: &DMatrix<T>) -> Self {
        Self::factor(a, true)
    }

    /// Factorization without the explicit `Q`, for tall matrices.
    pub fn thin(a: &DMatrix<T>) -> Self {
        Self::factor(a, false)
    }

    fn factor(a: &DMatrix<T>, form_q: bool) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut q = if form_q { DMatrix::<T>::identity(m, m) } else { DMatrix::<T>::zeros(0, 0) };
        let mut reflectors = Vec::new();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..m.min(n) {
            let norm_sq = |r: &DMatrix<T>, j: usize| r.view((k, j), (m - k, 1)).norm_squared();
            let mut best = k;
            let mut best_n = norm_sq(&r, k);
            for j in k + 1..n {
                let v = norm_sq(&r, j);
                if v > best_n {
                    best = j;
                    best_n = v;
                }
            }
            if best_n == T::zero() {
                break;
            }
            r.swap_columns(k, best);
            perm.swap(k, best);
            let x: DVector<T> = r.column(k).rows(k, m - k).clone_owned();
            let nx = best_n.sqrt();
            let alpha = if x[0] >= T::zero() { -nx } else { nx };
            let mut v = x;
            v[0] -= alpha;
            let vn = v.norm_squared();
            if vn == T::zero() {
                continue;
            }
            // H = I - 2 v v' / v'v applied to the trailing rows of R and the
            // trailing columns of Q
            let two = T::lit(2.0) / vn;
            let mut rs = r.view_mut((k, k), (m - k, n - k));
            let w: DVector<T> = rs.tr_mul(&v) * two;
            rs.ger(-T::one(), &v, &w, T::one());
            if form_q {
                let mut qs = q.view_mut((0, k), (m, m - k));
                let w: DVector<T> = &qs * &v * two;
                qs.ger(-T::one(), &w, &v, T::one());
            }
            reflectors.push((v, two));
            for i in k + 1..m {
                r[(i, k)] = T::zero();
            }
        }
        PivotedQr { q, reflectors, r, perm }
    }

    /// `Q' b`.
    pub fn qt_mul(&self, b: &[T]) -> DVector<T> {
        let mut y = DVector::from_column_slice(b);
        for (k, (v, two)) in self.reflectors.iter().enumerate() {
            let mut tail = y.rows_mut(k, v.len());
            let d = v.dot(&tail) * *two;
            tail.axpy(-d, v, T::one());
        }
        y
    }

    /// Number of diagonal entries above `tol * |R_00|`.
    pub fn rank(&self, tol: f64) -> usize {
        let k = self.r.nrows().min(self.r.ncols());
        if k == 0 || self.r[(0, 0)] == T::zero() {
            return 0;
        }
        let top = self.r[(0, 0)].abs();
        (0..k).take_while(|&j| self.r[(j, j)].abs() > T::lit(tol) * top).count()
    }
}

/// Orthonormal basis of `ker(m)`.
pub(crate) fn null_basis<T: Real>(m: &DMatrix<T>, tol: f64) -> DMatrix<T> {
    let cols = m.ncols();
    let f = PivotedQr::new(&m.transpose());
    let rank = f.rank(tol);
    f.q.columns(rank, cols - rank).clone_owned()
}

/// Basic least-squares solution of `min |A x - b|`: columns whose pivoted
/// diagonal falls below `tol * max` get a zero coefficient.
pub(crate) fn pivoted_lstsq<T: Real>(a: &DMatrix<T>, b: &[T], tol: f64) -> DVector<T> {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 || a.nrows() == 0 {
        return x;
    }
    let f = PivotedQr::thin(a);
    let rank = f.rank(tol);
    if rank == 0 {
        return x;
    }
    let qtb = f.qt_mul(b).rows(0, rank).clone_owned();
    let rr = f.r.view((0, 0), (rank, rank)).clone_owned();
    if let Some(y) = rr.solve_upper_triangular(&qtb) {
        for k in 0..rank {
            x[f.perm[k]] = y[k];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorization_reconstructs() {
        let a = DMatrix::from_fn(5, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.5 + (i == j) as u8 as f64);
        let f = PivotedQr::new(&a);
        let mut ap = DMatrix::zeros(5, 4);
        for k in 0..4 {
            ap.set_column(k, &a.column(f.perm[k]));
        }
        assert!((&f.q * &f.r - ap).amax() < 1e-13);
        assert!((f.q.transpose() * &f.q - DMatrix::identity(5, 5)).amax() < 1e-14);
        for k in 1..4 {
            assert!(f.r[(k, k)].abs() <= f.r[(k - 1, k - 1)].abs() + 1e-14);
        }
    }

    #[test]
    fn lstsq_drops_dependent_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        let x = pivoted_lstsq(&a, &[2.0, 2.0, 2.0], 1e-12);
        assert!((&a * &x - DVector::from_element(3, 2.0)).amax() < 1e-14);
        assert!(x[0] == 0.0 || x[1] == 0.0);
        let z = DMatrix::<f64>::zeros(3, 1);
        assert_eq!(pivoted_lstsq(&z, &[1.0, 1.0, 1.0], 1e-12)[0], 0.0);
    }

    #[test]
    fn lstsq_unpermutes() {
        let a = DMatrix::from_row_slice(3, 2, &[0.1, 5.0, 0.0, 1.0, 1.0, 0.0]);
        let want = DVector::from_row_slice(&[3.0, -2.0]);
        let b = &a * &want;
        let x = pivoted_lstsq(&a, b.as_slice(), 1e-12);
        assert!((x - want).amax() < 1e-13);
    }

    #[test]
    fn null_basis_is_orthonormal_kernel() {
        let m = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
        let n = null_basis(&m, 1e-12);
        assert_eq!(n.ncols(), 3);
        assert!((&m * &n).amax() < 1e-14);
        assert!((n.transpose() * &n - DMatrix::identity(3, 3)).amax() < 1e-14);
        let wide = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        assert_eq!(null_basis(&wide, 1e-12).ncols(), 2);
    }
}
