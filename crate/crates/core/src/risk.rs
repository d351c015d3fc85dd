//! Coherent risk measures in conic form.
//!
//! A risk measure on `n` outcomes is described by `(E, F, b, K)` with
//! `rho(Z) = max { mu^T Z : b - E mu - F nu in K }`. The solver only sees the
//! dual side (`y in K*`, `E^T y = Z`, `F^T y = 0`, `b^T y <= s`), so the
//! evaluators here are small brute-force oracles used by tests and by the
//! nested-risk reference in [`crate::oracle`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tree::STOCHASTIC_TOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConeKind {
    /// `{0}`
    Zero,
    /// The whole space; dual of `Zero`.
    Free,
    NonnegOrthant,
    /// Second-order cone with the axis as the last coordinate.
    Soc,
}

/// Ordered product of primitive cones.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConeDesc {
    pub parts: Vec<(ConeKind, usize)>,
}

impl ConeDesc {
    pub fn new(parts: Vec<(ConeKind, usize)>) -> Result<Self> {
        for &(k, d) in &parts {
            if d == 0 || (k == ConeKind::Soc && d < 2) {
                return Err(Error::Dimension(format!("cone part {k:?} of dimension {d}")));
            }
        }
        Ok(ConeDesc { parts })
    }

    pub fn dim(&self) -> usize {
        self.parts.iter().map(|p| p.1).sum()
    }

    /// Dual cone, part by part.
    pub fn dual(&self) -> ConeDesc {
        let parts = self
            .parts
            .iter()
            .map(|&(k, d)| {
                let k = match k {
                    ConeKind::Zero => ConeKind::Free,
                    ConeKind::Free => ConeKind::Zero,
                    other => other,
                };
                (k, d)
            })
            .collect();
        ConeDesc { parts }
    }

    /// Whether `v` belongs to the cone up to `tol` (per-part violation).
    pub fn contains<T: Real>(&self, v: &[T], tol: T) -> bool {
        let mut off = 0;
        for &(k, d) in &self.parts {
            let s = &v[off..off + d];
            off += d;
            let ok = match k {
                ConeKind::Zero => s.iter().all(|x| x.abs() <= tol),
                ConeKind::Free => true,
                ConeKind::NonnegOrthant => s.iter().all(|&x| x >= -tol),
                ConeKind::Soc => {
                    let (head, tail) = s.split_at(d - 1);
                    crate::scalar::norm2(head) <= tail[0] + tol
                }
            };
            if !ok {
                return false;
            }
        }
        true
    }
}

/// Parameters of a known risk family, kept so that evaluation can use a
/// closed form instead of the generic LP oracle.
#[derive(Debug, Clone, PartialEq)]
pub enum RiskKind {
    Avar { gamma: f64, pi: Vec<f64> },
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskSpec<T: Real> {
    pub n: usize,
    pub e: DMatrix<T>,
    pub f: DMatrix<T>,
    pub b: DVector<T>,
    pub cone: ConeDesc,
    pub kind: RiskKind,
}

impl<T: Real> RiskSpec<T> {
    /// User-supplied conic representation.
    pub fn custom(e: DMatrix<T>, f: DMatrix<T>, b: DVector<T>, cone: ConeDesc) -> Result<Self> {
        let rows = cone.dim();
        if e.nrows() != rows || f.nrows() != rows || b.len() != rows {
            return Err(Error::Dimension(format!(
                "risk rows: E {}, F {}, b {}, cone {rows}",
                e.nrows(),
                f.nrows(),
                b.len()
            )));
        }
        Ok(RiskSpec { n: e.ncols(), e, f, b, cone, kind: RiskKind::Custom })
    }

    /// Average value-at-risk at level `gamma` with reference distribution `pi`.
    ///
    /// For `gamma > 0`: `E = [gamma I; -I; 1^T]`, `b = (pi, 0, 1)` and
    /// `K = R+^{2n} x {0}`. For `gamma = 0` the ambiguity set is the whole
    /// simplex and the representation drops the first block:
    /// `E = [-I; 1^T]`, `b = (0, 1)`, `K = R+^n x {0}`.
    pub fn avar(gamma: f64, pi: &[f64]) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidParameter(format!("AV@R level {gamma} outside [0, 1]")));
        }
        let n = pi.len();
        let s: f64 = pi.iter().sum();
        if n == 0 || pi.iter().any(|&p| !(p > 0.0)) || (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic(format!("AV@R reference distribution {pi:?}")));
        }
        let kind = RiskKind::Avar { gamma, pi: pi.to_vec() };
        let lit = T::lit;
        if gamma == 0.0 {
            let mut e = DMatrix::zeros(n + 1, n);
            for k in 0..n {
                e[(k, k)] = -T::one();
                e[(n, k)] = T::one();
            }
            let mut b = DVector::zeros(n + 1);
            b[n] = T::one();
            let cone = ConeDesc::new(vec![(ConeKind::NonnegOrthant, n), (ConeKind::Zero, 1)])?;
            return Ok(RiskSpec { n, e, f: DMatrix::zeros(n + 1, 0), b, cone, kind });
        }
        let mut e = DMatrix::zeros(2 * n + 1, n);
        let mut b = DVector::zeros(2 * n + 1);
        for k in 0..n {
            e[(k, k)] = lit(gamma);
            e[(n + k, k)] = -T::one();
            e[(2 * n, k)] = T::one();
            b[k] = lit(pi[k]);
        }
        b[2 * n] = T::one();
        let cone = ConeDesc::new(vec![(ConeKind::NonnegOrthant, 2 * n), (ConeKind::Zero, 1)])?;
        Ok(RiskSpec { n, e, f: DMatrix::zeros(2 * n + 1, 0), b, cone, kind })
    }

    /// Number of rows of the representation (dimension of `y`).
    pub fn rows(&self) -> usize {
        self.b.len()
    }

    pub fn n_nu(&self) -> usize {
        self.f.ncols()
    }

    /// Converts the data to another scalar type.
    pub fn cast<S: Real>(&self) -> RiskSpec<S> {
        let c = |m: &DMatrix<T>| m.map(|x| S::lit(x.as_f64()));
        RiskSpec {
            n: self.n,
            e: c(&self.e),
            f: c(&self.f),
            b: self.b.map(|x| S::lit(x.as_f64())),
            cone: self.cone.clone(),
            kind: self.kind.clone(),
        }
    }

    fn to_f64(&self) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        (
            self.e.map(|x| x.as_f64()),
            self.f.map(|x| x.as_f64()),
            self.b.map(|x| x.as_f64()),
        )
    }
}

/// AV@R value by filling the worst outcomes first: the optimal `mu` puts
/// mass `pi_k / gamma` on outcomes in decreasing order of cost until the
/// total reaches one.
pub fn avar_greedy(gamma: f64, pi: &[f64], z: &[f64]) -> f64 {
    let mut idx: Vec<usize> = (0..z.len()).collect();
    idx.sort_by(|&a, &b| z[b].total_cmp(&z[a]).then(a.cmp(&b)));
    let mut left = 1.0;
    let mut val = 0.0;
    for k in idx {
        if left <= 0.0 {
            break;
        }
        let cap = if gamma == 0.0 { f64::INFINITY } else { pi[k] / gamma };
        let m = cap.min(left);
        val += m * z[k];
        left -= m;
    }
    val
}

/// `max mu^T Z` over the ambiguity set of `spec`.
///
/// AV@R specs use [`avar_greedy`]; everything else goes through
/// [`lp_vertex_search`], which only supports polyhedral cones.
pub fn eval_risk_primal<T: Real>(spec: &RiskSpec<T>, z: &[f64]) -> Result<f64> {
    if z.len() != spec.n {
        return Err(Error::Dimension(format!("cost vector {} vs {}", z.len(), spec.n)));
    }
    if let RiskKind::Avar { gamma, pi } = &spec.kind {
        return Ok(avar_greedy(*gamma, pi, z));
    }
    eval_risk_primal_lp(spec, z)
}

/// Primal value through the generic vertex-enumeration LP.
pub fn eval_risk_primal_lp<T: Real>(spec: &RiskSpec<T>, z: &[f64]) -> Result<f64> {
    let (e, f, b) = spec.to_f64();
    let n = spec.n;
    let nnu = f.ncols();
    // variables (mu, nu, slack on orthant rows); rows of zero parts have no slack
    let mut slack_rows = Vec::new();
    let mut off = 0;
    for &(k, d) in &spec.cone.parts {
        match k {
            ConeKind::NonnegOrthant => slack_rows.extend(off..off + d),
            ConeKind::Zero => {}
            ConeKind::Free => {
                return Err(Error::InvalidParameter("free cone rows in primal risk".into()));
            }
            ConeKind::Soc => {
                return Err(Error::InvalidParameter("LP oracle cannot handle SOC parts".into()));
            }
        }
        off += d;
    }
    let nv = n + nnu + slack_rows.len();
    let m = spec.rows();
    let mut a = DMatrix::zeros(m, nv);
    a.view_mut((0, 0), (m, n)).copy_from(&e);
    a.view_mut((0, n), (m, nnu)).copy_from(&f);
    for (k, &r) in slack_rows.iter().enumerate() {
        a[(r, n + nnu + k)] = 1.0;
    }
    let mut c = DVector::zeros(nv);
    for k in 0..n {
        c[k] = -z[k];
    }
    let nonneg: Vec<usize> = (n + nnu..nv).collect();
    let v = lp_vertex_search(&c, &a, &b, &nonneg)?;
    Ok(-v)
}

/// Dual value `min { y^T b : E^T y = Z, F^T y = 0, y in K* }`.
pub fn eval_risk_dual<T: Real>(spec: &RiskSpec<T>, z: &[f64]) -> Result<f64> {
    if z.len() != spec.n {
        return Err(Error::Dimension(format!("cost vector {} vs {}", z.len(), spec.n)));
    }
    let (e, f, b) = spec.to_f64();
    let m = spec.rows();
    let dual = spec.cone.dual();
    let mut nonneg = Vec::new();
    let mut zero_rows = Vec::new();
    let mut off = 0;
    for &(k, d) in &dual.parts {
        match k {
            ConeKind::NonnegOrthant => nonneg.extend(off..off + d),
            ConeKind::Free => {}
            ConeKind::Zero => zero_rows.extend(off..off + d),
            ConeKind::Soc => {
                return Err(Error::InvalidParameter("LP oracle cannot handle SOC parts".into()));
            }
        }
        off += d;
    }
    let neq = spec.n + f.ncols() + zero_rows.len();
    let mut a = DMatrix::zeros(neq, m);
    a.view_mut((0, 0), (spec.n, m)).copy_from(&e.transpose());
    a.view_mut((spec.n, 0), (f.ncols(), m)).copy_from(&f.transpose());
    for (k, &r) in zero_rows.iter().enumerate() {
        a[(spec.n + f.ncols() + k, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(neq);
    for k in 0..spec.n {
        rhs[k] = z[k];
    }
    lp_vertex_search(&b, &a, &rhs, &nonneg)
}

/// Least squares through QR with one step of iterative refinement; the SVD
/// solve of nalgebra loses several digits on these 0/1 systems.
fn solve_full_column_rank(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = m.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let mut x = r.solve_upper_triangular(&(q.transpose() * rhs))?;
    let res = rhs - m * &x;
    x += r.solve_upper_triangular(&(q.transpose() * res))?;
    Some(x)
}

/// Minimises `c^T x` subject to `A x = b` and `x_k >= 0` for `k` in `nonneg`
/// by enumerating basic solutions. Exponential in the problem size; meant
/// for the handful of variables a single tree node carries.
pub fn lp_vertex_search(
    c: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    nonneg: &[usize],
) -> Result<f64> {
    let nv = a.ncols();
    let rank = a.clone().svd(false, false).rank(1e-10 * a.norm().max(1.0));
    let fix = nv.saturating_sub(rank);
    if fix > nonneg.len() {
        return Err(Error::Infeasible("LP has no vertices (lineality space)".into()));
    }
    let scale = 1.0 + b.amax();
    let mut best: Option<f64> = None;
    let mut subset: Vec<usize> = (0..fix).collect();
    loop {
        let rows = a.nrows() + fix;
        let mut m = DMatrix::zeros(rows, nv);
        m.view_mut((0, 0), (a.nrows(), nv)).copy_from(a);
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(0, a.nrows()).copy_from(b);
        for (k, &s) in subset.iter().enumerate() {
            m[(a.nrows() + k, nonneg[s])] = 1.0;
        }
        let full_rank = m.clone().svd(false, false).rank(1e-10 * m.norm().max(1.0)) == nv;
        if full_rank {
            if let Some(x) = solve_full_column_rank(&m, &rhs) {
                let resid = (&m * &x - &rhs).amax();
                let feasible = resid <= 1e-9 * scale && nonneg.iter().all(|&k| x[k] >= -1e-10 * scale);
                if feasible {
                    let v = c.dot(&x);
                    best = Some(best.map_or(v, |b: f64| b.min(v)));
                }
            }
        }
        // next combination of `fix` indices out of nonneg.len()
        let n = nonneg.len();
        let mut k = fix;
        loop {
            if k == 0 {
                return best.ok_or_else(|| Error::Infeasible("no feasible vertex".into()));
            }
            k -= 1;
            if subset[k] < n - fix + k {
                subset[k] += 1;
                for j in k + 1..fix {
                    subset[j] = subset[j - 1] + 1;
                }
                break;
            }
        }
        if fix == 0 {
            return best.ok_or_else(|| Error::Infeasible("no feasible vertex".into()));
        }
    }
}
