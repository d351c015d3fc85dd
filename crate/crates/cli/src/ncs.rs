//! Networked control system with a random sensor-to-controller delay.
//!
//! The delay fraction `phi` follows a Beta martingale on the scenario tree:
//! the children of a node with value `phi` are equiprobable and take the
//! quantiles of `Beta(theta phi, theta (1 - phi))` at the midpoints of `m`
//! equal subintervals of `[0, 1]`. The delay at node `i` is `phi^i T`.
//!
//! The plant `x' = A_c x + B_c u` is sampled every `T` with a zero-order
//! hold that switches from `u_{k-1}` to `u_k` after the delay, so
//!
//! ```text
//! x_{k+1} = e^{A_c T} x_k + (G(T) - G(T - s)) u_{k-1} + G(T - s) u_k,
//! G(t) = int_0^t e^{A_c r} dr B_c,
//! ```
//!
//! and the state is augmented with the previous input.

use anyhow::{bail, ensure, Result};
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};
use serde_json::json;
use spock_core::problem::{
    BoxSet, Dynamics, NodeConstraint, Raocp, StageCost, TerminalConstraint, TerminalCost,
};
use spock_core::{RiskSpec, ScenarioTree};
use statrs::function::beta::beta_reg;

use crate::format::Meta;
use crate::gen::instance_rng;

/// Absolute accuracy of [`beta_quantile`].
pub const QUANTILE_TOL: f64 = 1e-10;

/// Quantile of `Beta(a, b)` at `p`, by bisection on the regularized
/// incomplete beta function.
///
/// A vanishing shape parameter is the limit of a point mass: `a = 0` gives 0
/// and `b = 0` gives 1.
pub fn beta_quantile(a: f64, b: f64, p: f64) -> f64 {
    assert!((0.0..=1.0).contains(&p) && a >= 0.0 && b >= 0.0);
    if a == 0.0 {
        return 0.0;
    }
    if b == 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // stop well below the tolerance so the midpoint is accurate to it
    while hi - lo > 0.25 * QUANTILE_TOL {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Shape {
    /// Stage branching `[n^2, 1, ..., 1]`.
    HighInitial,
    /// Stage branching `[n, n, 1, ..., 1]`.
    TwoStage,
}

impl Shape {
    pub fn branching(self, n: usize, horizon: usize) -> Result<Vec<usize>> {
        ensure!(n >= 1, "scenario parameter must be positive");
        let mut b = vec![1; horizon];
        match self {
            Shape::HighInitial => {
                ensure!(horizon >= 1, "horizon must be at least 1");
                b[0] = n * n;
            }
            Shape::TwoStage => {
                ensure!(horizon >= 2, "two-stage branching needs a horizon of at least 2");
                b[0] = n;
                b[1] = n;
            }
        }
        Ok(b)
    }

    pub fn name(self) -> &'static str {
        match self {
            Shape::HighInitial => "high-initial",
            Shape::TwoStage => "two-stage",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcsParams {
    pub n: usize,
    pub shape: Shape,
    pub horizon: usize,
    pub nx: usize,
    pub nu: usize,
    pub sample_time: f64,
    pub theta: f64,
    pub phi0: f64,
    pub gamma: f64,
    pub x_bound: f64,
    pub u_bound: f64,
}

impl Default for NcsParams {
    fn default() -> Self {
        NcsParams {
            n: 4,
            shape: Shape::HighInitial,
            horizon: 48,
            nx: 100,
            nu: 50,
            sample_time: 5.0,
            theta: 1.0,
            phi0: 0.1,
            gamma: 0.95,
            x_bound: 3.0,
            u_bound: 0.9,
        }
    }
}

impl NcsParams {
    /// Reduced sizes that solve in seconds on a laptop.
    ///
    /// The plant grows like `e^t`, so the sample time is shortened, and
    /// `0.1 n_u u_max` must exceed the initial state for the state box to be
    /// reachable at all.
    pub fn desk() -> Self {
        NcsParams { horizon: 5, nx: 10, nu: 25, sample_time: 0.1, ..Self::default() }
    }
}

/// Delay fractions of all nodes of `tree`.
pub fn delay_fractions(tree: &ScenarioTree, theta: f64, phi0: f64) -> Vec<f64> {
    let mut phi = vec![0.0; tree.num_nodes()];
    phi[0] = phi0;
    for i in 0..tree.num_nonleaf() {
        let ch = tree.children(i);
        let m = ch.len() as f64;
        for (k, c) in ch.enumerate() {
            let mid = (k as f64 + 0.5) / m;
            phi[c] = beta_quantile(theta * phi[i], theta * (1.0 - phi[i]), mid);
        }
    }
    phi
}

/// `int_0^t e^{A r} dr B` from the exponential of `[[A, B], [0, 0]] t`.
pub fn hold_integral(a: &DMatrix<f64>, b: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let (nx, nu) = (a.nrows(), b.ncols());
    let mut m = DMatrix::zeros(nx + nu, nx + nu);
    m.view_mut((0, 0), (nx, nx)).copy_from(&(a * t));
    m.view_mut((0, nx), (nx, nu)).copy_from(&(b * t));
    m.exp().view((0, nx), (nx, nu)).into_owned()
}

/// Augmented dynamics `(A, B)` of a sampling period with delay `sigma`.
pub fn delayed_zoh(ac: &DMatrix<f64>, bc: &DMatrix<f64>, t: f64, sigma: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let (nx, nu) = (ac.nrows(), bc.ncols());
    let phi = (ac * t).exp();
    let g_late = hold_integral(ac, bc, t - sigma);
    let g_full = hold_integral(ac, bc, t);
    let mut a = DMatrix::zeros(nx + nu, nx + nu);
    a.view_mut((0, 0), (nx, nx)).copy_from(&phi);
    a.view_mut((0, nx), (nx, nu)).copy_from(&(g_full - &g_late));
    let mut b = DMatrix::zeros(nx + nu, nu);
    b.view_mut((0, 0), (nx, nu)).copy_from(&g_late);
    b.view_mut((nx, 0), (nu, nu)).fill_with_identity();
    (a, b)
}

/// Builds an NCS instance; the plant perturbation `a ~ N(0, 0.01)` is drawn
/// from stream 0 of `seed`.
pub fn ncs_problem(seed: u64, prm: &NcsParams) -> Result<(Raocp<f64>, Meta)> {
    if !(prm.theta > 0.0) {
        bail!("theta must be positive");
    }
    if !(prm.phi0 > 0.0 && prm.phi0 < 1.0) {
        bail!("phi0 must lie in (0, 1)");
    }
    ensure!(prm.sample_time > 0.0, "sample time must be positive");
    let branching = prm.shape.branching(prm.n, prm.horizon)?;
    let tree = ScenarioTree::uniform(&branching)?;
    let phi = delay_fractions(&tree, prm.theta, prm.phi0);

    let (nx, nu) = (prm.nx, prm.nu);
    let mut rng = instance_rng(seed, 0);
    let noise = Normal::new(0.0, crate::gen::NOISE_STD).expect("positive std");
    let diag = DVector::from_fn(nx, |_, _| 1.0 + noise.sample(&mut rng));
    let ac = DMatrix::from_diagonal(&diag);
    let bc = DMatrix::from_element(nx, nu, 0.1);

    let n = nx + nu;
    let x_box = BoxSet::symmetric(DVector::from_fn(n, |k, _| if k < nx { prm.x_bound } else { prm.u_bound }));
    let u_box = BoxSet::symmetric(DVector::from_element(nu, prm.u_bound));
    let dynamics = (1..tree.num_nodes())
        .map(|i| {
            let (a, b) = delayed_zoh(&ac, &bc, prm.sample_time, phi[i] * prm.sample_time);
            Dynamics { a, b, c: DVector::zeros(n) }
        })
        .collect();
    let stage = StageCost {
        q: DMatrix::identity(n, n) * 1e-6,
        r: DMatrix::identity(nu, nu) * 0.1,
        q_lin: DVector::zeros(n),
        r_lin: DVector::zeros(nu),
    };
    let qn = DMatrix::from_diagonal(&DVector::from_fn(n, |k, _| if k < nx { 1.0 } else { 1e-6 }));
    let nl = tree.num_leaves();
    let risks = (0..tree.num_nonleaf())
        .map(|i| RiskSpec::avar(prm.gamma, &tree.children_probs(i)))
        .collect::<spock_core::Result<Vec<_>>>()?;
    let x0 = DVector::from_fn(n, |k, _| if k < nx { 2.0 } else { 0.0 });
    let p = Raocp {
        nx: n,
        nu,
        dynamics,
        stage_costs: vec![stage; tree.num_nodes() - 1],
        terminal_costs: vec![TerminalCost { q: qn, q_lin: DVector::zeros(n) }; nl],
        constraints: vec![NodeConstraint::state_input_box(x_box.clone(), u_box); tree.num_nonleaf()],
        terminal_constraints: vec![TerminalConstraint::state_box(x_box); nl],
        risks,
        x0,
        tree,
    };
    p.validate()?;
    let meta = Meta::from([
        ("generator".to_string(), json!("ncs")),
        ("seed".to_string(), json!(seed)),
        ("shape".to_string(), json!(prm.shape.name())),
        ("n".to_string(), json!(prm.n)),
        ("horizon".to_string(), json!(prm.horizon)),
        ("plant_nx".to_string(), json!(nx)),
        ("sample_time".to_string(), json!(prm.sample_time)),
        ("theta".to_string(), json!(prm.theta)),
        ("phi0".to_string(), json!(prm.phi0)),
        ("delays".to_string(), json!(phi.iter().map(|f| f * prm.sample_time).collect::<Vec<_>>())),
    ]);
    Ok((p, meta))
}
