//! Full-order model: a two-field reaction-diffusion system on (0,1).
//!
//! The system is
//!
//! ```text
//! du/dt = mu2 u_xx + mu1 u - u v
//! dv/dt = mu2 v_xx -     v + u^2
//! ```
//!
//! with homogeneous Dirichlet boundaries, discretized by second-order finite
//! differences on `n_interior` nodes per field. The trivial state loses
//! stability at `mu1 = mu2 * lambda_1` (`lambda_1` the principal eigenvalue
//! of the negative discrete Laplacian), where a supercritical pitchfork
//! hands over to a pair of mirror-image branches; a biased initial guess
//! tracks the nonnegative one. Steady states are reached by a semi-implicit
//! pseudo-time march (diffusion and the `-v` decay implicit, the rest
//! explicit) with a relative-increment stopping rule, and independently by a
//! damped Newton iteration that serves as an oracle for the march.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use crate::x_norm;

/// Stacked discrete state `(u, v)`, `u` in the first half.
pub type StateVec = DVector<f64>;

/// Counts full-order residual evaluations (diagnostics for "no solver
/// involved" claims about the non-intrusive surrogate).
static RESIDUAL_EVALS: AtomicU64 = AtomicU64::new(0);

/// Number of [`residual`] evaluations since process start.
pub fn residual_eval_count() -> u64 {
    RESIDUAL_EVALS.load(Ordering::Relaxed)
}

#[derive(Debug, Error)]
pub enum FomError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("state left the finite range after {steps} steps (dt too large?)")]
    NonFinite { steps: usize },
    #[error("Newton did not converge in {max_iter} iterations (residual {residual:.3e})")]
    NoConvergence { max_iter: usize, residual: f64 },
    #[error("singular Jacobian in Newton iteration {iter}")]
    SingularJacobian { iter: usize },
    #[error("snapshot at grid index ({i1}, {i2}), mu = ({mu1}, {mu2}): {source}")]
    SnapshotFailure {
        i1: usize,
        i2: usize,
        mu1: f64,
        mu2: f64,
        source: Box<FomError>,
    },
}

/// A point in the two-dimensional parameter box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterPoint {
    /// Reaction strength; the bifurcation parameter.
    pub mu1: f64,
    /// Diffusivity of both fields.
    pub mu2: f64,
}

impl ParameterPoint {
    pub fn new(mu1: f64, mu2: f64) -> Self {
        Self { mu1, mu2 }
    }
}

/// Discretization and solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct FomConfig {
    /// Interior grid nodes per field; the stacked state has twice as many.
    pub n_interior: usize,
    pub mu1_min: f64,
    pub mu1_max: f64,
    pub mu2_min: f64,
    pub mu2_max: f64,
    /// Pseudo-time step of the semi-implicit march.
    pub dt: f64,
    /// Relative-increment stopping tolerance of the march.
    pub tol: f64,
    /// Pseudo-time step budget.
    pub max_steps: usize,
    /// Amplitude of the branch-bias initial guess `u0 = a sin(pi x)`.
    pub bias_amplitude: f64,
    /// Residual tolerance of the Newton oracle.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for FomConfig {
    fn default() -> Self {
        Self {
            n_interior: 63,
            mu1_min: 0.5,
            mu1_max: 2.0,
            mu2_min: 0.06,
            mu2_max: 0.15,
            dt: 0.05,
            tol: 1e-9,
            // The 40x41 reference grid contains a point 4.4e-4 below the
            // critical curve; decay onto the trivial branch there takes
            // ~1.34e6 steps before the increment guard can fire.
            max_steps: 2_000_000,
            bias_amplitude: 0.1,
            newton_tol: 1e-12,
            newton_max_iter: 50,
        }
    }
}

impl FomConfig {
    pub fn validate(&self) -> Result<(), FomError> {
        let err = |m: &str| Err(FomError::InvalidConfig(m.to_string()));
        if self.n_interior < 3 {
            return err("n_interior must be at least 3");
        }
        if self.dt <= 0.0 || self.dt.is_nan() {
            return err("dt must be positive");
        }
        if self.tol <= 0.0 || self.tol.is_nan() {
            return err("tol must be positive");
        }
        if self.mu1_min >= self.mu1_max || self.mu2_min >= self.mu2_max {
            return err("parameter ranges must be non-degenerate");
        }
        if ![
            self.mu1_min,
            self.mu1_max,
            self.mu2_min,
            self.mu2_max,
            self.dt,
            self.tol,
            self.bias_amplitude,
            self.newton_tol,
        ]
        .iter()
        .all(|v| v.is_finite())
        {
            return err("configuration values must be finite");
        }
        if self.max_steps == 0 || self.newton_max_iter == 0 {
            return err("step budgets must be positive");
        }
        Ok(())
    }

    /// Mesh width `h = 1/(n_interior + 1)`.
    pub fn mesh_width(&self) -> f64 {
        1.0 / (self.n_interior as f64 + 1.0)
    }

    /// Length of the stacked state.
    pub fn state_len(&self) -> usize {
        2 * self.n_interior
    }

    pub fn contains(&self, p: ParameterPoint) -> bool {
        p.mu1.is_finite()
            && p.mu2.is_finite()
            && p.mu1 >= self.mu1_min
            && p.mu1 <= self.mu1_max
            && p.mu2 >= self.mu2_min
            && p.mu2 <= self.mu2_max
    }

    /// Affine map of the parameter box onto `[0,1]^2`, used by every
    /// nearest-neighbor rule (the raw ranges differ by an order of
    /// magnitude).
    pub fn normalize_param(&self, p: ParameterPoint) -> [f64; 2] {
        [
            (p.mu1 - self.mu1_min) / (self.mu1_max - self.mu1_min),
            (p.mu2 - self.mu2_min) / (self.mu2_max - self.mu2_min),
        ]
    }

    /// Branch-bias initial guess `u0 = a sin(pi x)`, `v0 = 0`.
    pub fn bias_guess(&self) -> StateVec {
        let n = self.n_interior;
        let h = self.mesh_width();
        let mut w = DVector::zeros(2 * n);
        for i in 0..n {
            let x = (i as f64 + 1.0) * h;
            w[i] = self.bias_amplitude * (std::f64::consts::PI * x).sin();
        }
        w
    }
}

/// Discrete operators of the steady system: the tridiagonal Laplacian with
/// stencil `(1, -2, 1)/h^2`, field restrictions on the stacked state, and
/// the quadratic form `N(a, b) = (-u_a .* v_b, u_a .* u_b)`.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    n: usize,
    h: f64,
}

pub fn assemble_operators(cfg: &FomConfig) -> Result<DiscreteOperators, FomError> {
    cfg.validate()?;
    Ok(DiscreteOperators {
        n: cfg.n_interior,
        h: cfg.mesh_width(),
    })
}

impl DiscreteOperators {
    pub fn n_interior(&self) -> usize {
        self.n
    }

    pub fn mesh_width(&self) -> f64 {
        self.h
    }

    pub fn state_len(&self) -> usize {
        2 * self.n
    }

    /// Applies the Dirichlet Laplacian to one field (length `n` slice).
    pub fn apply_laplacian(&self, field: &[f64], out: &mut [f64]) {
        let n = self.n;
        let ih2 = 1.0 / (self.h * self.h);
        for i in 0..n {
            let left = if i > 0 { field[i - 1] } else { 0.0 };
            let right = if i + 1 < n { field[i + 1] } else { 0.0 };
            out[i] = (left - 2.0 * field[i] + right) * ih2;
        }
    }

    /// Applies the Laplacian blockwise to the stacked state.
    pub fn apply_laplacian_stacked(&self, w: &StateVec) -> StateVec {
        let n = self.n;
        let mut out = DVector::zeros(2 * n);
        let ws = w.as_slice();
        let os = out.as_mut_slice();
        let (u, v) = ws.split_at(n);
        let (ou, ov) = os.split_at_mut(n);
        self.apply_laplacian(u, ou);
        self.apply_laplacian(v, ov);
        out
    }

    /// Dense Dirichlet Laplacian on one field; test and Jacobian helper.
    pub fn dense_laplacian(&self) -> DMatrix<f64> {
        let n = self.n;
        let ih2 = 1.0 / (self.h * self.h);
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -2.0 * ih2
            } else if i.abs_diff(j) == 1 {
                ih2
            } else {
                0.0
            }
        })
    }

    /// Restriction to the u-block: `(u, v) -> (u, 0)`.
    pub fn restrict_u(&self, w: &StateVec) -> StateVec {
        let mut out = w.clone();
        out.rows_mut(self.n, self.n).fill(0.0);
        out
    }

    /// Restriction to the v-block: `(u, v) -> (0, v)`.
    pub fn restrict_v(&self, w: &StateVec) -> StateVec {
        let mut out = w.clone();
        out.rows_mut(0, self.n).fill(0.0);
        out
    }

    /// Quadratic form `N(a, b) = (-u_a .* v_b, u_a .* u_b)`, bilinear in its
    /// arguments; the steady nonlinearity is `N(w, w)`.
    pub fn nonlinear(&self, a: &StateVec, b: &StateVec) -> StateVec {
        let n = self.n;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            out[i] = -a[i] * b[n + i];
            out[n + i] = a[i] * b[i];
        }
        out
    }

    /// Symmetrized quadratic form `(N(a,b) + N(b,a)) / 2`; agrees with
    /// [`Self::nonlinear`] on the diagonal.
    pub fn nonlinear_sym(&self, a: &StateVec, b: &StateVec) -> StateVec {
        let n = self.n;
        let mut out = DVector::zeros(2 * n);
        for i in 0..n {
            out[i] = -0.5 * (a[i] * b[n + i] + b[i] * a[n + i]);
            out[n + i] = a[i] * b[i];
        }
        out
    }
}

/// Steady residual `mu2 D w + mu1 P_u w - P_v w + N(w, w)`; the pseudo-time
/// march follows `dw/dt = residual(w)`.
pub fn residual(ops: &DiscreteOperators, params: ParameterPoint, w: &StateVec) -> StateVec {
    RESIDUAL_EVALS.fetch_add(1, Ordering::Relaxed);
    let n = ops.n;
    let mut r = ops.apply_laplacian_stacked(w);
    r *= params.mu2;
    for i in 0..n {
        let (u, v) = (w[i], w[n + i]);
        r[i] += params.mu1 * u - u * v;
        r[n + i] += -v + u * u;
    }
    r
}

/// Jacobian of [`residual`] at `w` (dense, for the Newton oracle).
pub fn residual_jacobian(
    ops: &DiscreteOperators,
    params: ParameterPoint,
    w: &StateVec,
) -> DMatrix<f64> {
    let n = ops.n;
    let lap = ops.dense_laplacian();
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    jac.view_mut((0, 0), (n, n)).copy_from(&(params.mu2 * &lap));
    jac.view_mut((n, n), (n, n)).copy_from(&(params.mu2 * &lap));
    for i in 0..n {
        let (u, v) = (w[i], w[n + i]);
        jac[(i, i)] += params.mu1 - v;
        jac[(i, n + i)] = -u;
        jac[(n + i, i)] = 2.0 * u;
        jac[(n + i, n + i)] += -1.0;
    }
    jac
}

/// A converged (or abandoned) steady-state computation.
#[derive(Debug, Clone)]
pub struct SteadySolution {
    pub params: ParameterPoint,
    pub state: StateVec,
    pub steps_taken: usize,
    pub converged: bool,
    /// Last increment measured by the active stopping rule (relative when
    /// the state norm allows, absolute below the `1e-14` guard).
    pub final_increment: f64,
}

/// Prefactored constant-coefficient tridiagonal system `diag` on the main
/// diagonal and `off` on both off-diagonals (Thomas algorithm).
struct TridiagFactors {
    off: f64,
    /// Upper coefficients after forward elimination.
    cp: Vec<f64>,
    /// Reciprocal pivots.
    inv_piv: Vec<f64>,
}

impl TridiagFactors {
    fn new(n: usize, diag: f64, off: f64) -> Self {
        let mut cp = vec![0.0; n];
        let mut inv_piv = vec![0.0; n];
        let mut piv = diag;
        inv_piv[0] = 1.0 / piv;
        cp[0] = off / piv;
        for i in 1..n {
            piv = diag - off * cp[i - 1];
            inv_piv[i] = 1.0 / piv;
            cp[i] = off * inv_piv[i];
        }
        Self { off, cp, inv_piv }
    }

    fn solve_in_place(&self, d: &mut [f64]) {
        let n = d.len();
        d[0] *= self.inv_piv[0];
        for i in 1..n {
            d[i] = (d[i] - self.off * d[i - 1]) * self.inv_piv[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cp[i] * d[i + 1];
        }
    }
}

/// Marches `dw/dt = residual(w)` to a steady state, diffusion and the `-v`
/// decay implicit, reaction and quadratic terms explicit. Stops when the
/// relative increment `|w_n - w_(n-1)|_X / |w_n|_X` drops below `cfg.tol`;
/// when `|w_n|_X < 1e-14` the absolute increment is tested instead so that
/// decay onto the trivial branch terminates.
pub fn steady_solve(
    cfg: &FomConfig,
    params: ParameterPoint,
    w0: &StateVec,
) -> Result<SteadySolution, FomError> {
    cfg.validate()?;
    let n = cfg.n_interior;
    assert_eq!(w0.len(), 2 * n, "initial state has wrong length");
    let h = cfg.mesh_width();
    let dt = cfg.dt;
    let ih2 = 1.0 / (h * h);
    let c = dt * params.mu2 * ih2;
    // (I - dt mu2 D) u_new = u + dt (mu1 u - u v)
    // ((1+dt) I - dt mu2 D) v_new = v + dt u^2
    let fac_u = TridiagFactors::new(n, 1.0 + 2.0 * c, -c);
    let fac_v = TridiagFactors::new(n, 1.0 + dt + 2.0 * c, -c);

    let mut w = w0.clone();
    let mut w_next = DVector::zeros(2 * n);
    for step in 1..=cfg.max_steps {
        {
            let ws = w.as_slice();
            let (u, v) = ws.split_at(n);
            let out = w_next.as_mut_slice();
            let (ou, ov) = out.split_at_mut(n);
            for i in 0..n {
                ou[i] = u[i] + dt * (params.mu1 * u[i] - u[i] * v[i]);
                ov[i] = v[i] + dt * u[i] * u[i];
            }
            fac_u.solve_in_place(ou);
            fac_v.solve_in_place(ov);
        }
        let norm_next = x_norm(h, &w_next);
        if !norm_next.is_finite() {
            return Err(FomError::NonFinite { steps: step });
        }
        let increment = x_norm(h, &(&w_next - &w));
        let measured = if norm_next < 1e-14 {
            increment
        } else {
            increment / norm_next
        };
        std::mem::swap(&mut w, &mut w_next);
        if measured < cfg.tol {
            return Ok(SteadySolution {
                params,
                state: w,
                steps_taken: step,
                converged: true,
                final_increment: measured,
            });
        }
        if step == cfg.max_steps {
            return Ok(SteadySolution {
                params,
                state: w,
                steps_taken: step,
                converged: false,
                final_increment: measured,
            });
        }
    }
    unreachable!("max_steps is positive");
}

/// Damped Newton iteration on the steady residual; the independent oracle
/// for [`steady_solve`]. Converges when the residual X-norm drops below
/// `cfg.newton_tol`; halves the step (at most 30 times) whenever the
/// residual norm would increase.
pub fn newton_solve(
    cfg: &FomConfig,
    params: ParameterPoint,
    w0: &StateVec,
) -> Result<SteadySolution, FomError> {
    cfg.validate()?;
    let ops = assemble_operators(cfg)?;
    let h = cfg.mesh_width();
    let mut w = w0.clone();
    let mut res = residual(&ops, params, &w);
    let mut res_norm = x_norm(h, &res);
    for iter in 1..=cfg.newton_max_iter {
        if res_norm < cfg.newton_tol {
            return Ok(SteadySolution {
                params,
                state: w,
                steps_taken: iter - 1,
                converged: true,
                final_increment: res_norm,
            });
        }
        let jac = residual_jacobian(&ops, params, &w);
        let delta = jac
            .lu()
            .solve(&res)
            .ok_or(FomError::SingularJacobian { iter })?;
        // dw/dt = r, so the Newton step on r(w) = 0 is w - J^{-1} r.
        let mut lambda = 1.0;
        let mut best = None;
        for _ in 0..=30 {
            let trial = &w - lambda * &delta;
            let trial_res = residual(&ops, params, &trial);
            let trial_norm = x_norm(h, &trial_res);
            if trial_norm.is_finite() && trial_norm < res_norm {
                best = Some((trial, trial_res, trial_norm));
                break;
            }
            if best.is_none() && trial_norm.is_finite() {
                best = Some((trial, trial_res, trial_norm));
            }
            lambda *= 0.5;
        }
        match best {
            Some((trial, trial_res, trial_norm)) => {
                w = trial;
                res = trial_res;
                res_norm = trial_norm;
            }
            None => return Err(FomError::NonFinite { steps: iter }),
        }
    }
    if res_norm < cfg.newton_tol {
        return Ok(SteadySolution {
            params,
            state: w,
            steps_taken: cfg.newton_max_iter,
            converged: true,
            final_increment: res_norm,
        });
    }
    Err(FomError::NoConvergence {
        max_iter: cfg.newton_max_iter,
        residual: res_norm,
    })
}

/// Critical reaction strength along the trivial branch:
/// `mu2 * (2/h^2)(1 - cos(pi h))`, the diffusion penalty of the slowest
/// Dirichlet mode.
pub fn critical_mu1(cfg: &FomConfig, mu2: f64) -> f64 {
    let h = cfg.mesh_width();
    mu2 * 2.0 / (h * h) * (1.0 - (std::f64::consts::PI * h).cos())
}

/// Observable used by bifurcation diagrams: the u-field at the grid node
/// nearest `x = 0.5` (exact for odd `n_interior`).
pub fn probe(state: &StateVec) -> f64 {
    let n = state.len() / 2;
    state[n.div_ceil(2) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotMeta {
    pub steps: usize,
    pub converged: bool,
    pub final_increment: f64,
}

/// Converged steady states on a uniform tensor grid of the parameter box,
/// stored column-per-point with `mu1` varying fastest.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub n1: usize,
    pub n2: usize,
    pub params: Vec<ParameterPoint>,
    /// `2 n_interior x (n1 * n2)`.
    pub matrix: DMatrix<f64>,
    pub meta: Vec<SnapshotMeta>,
    pub seed: u64,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn snapshot(&self, j: usize) -> StateVec {
        self.matrix.column(j).into_owned()
    }
}

/// Uniform tensor grid over the parameter box, `mu1` fastest.
pub fn tensor_grid(cfg: &FomConfig, n1: usize, n2: usize) -> Vec<ParameterPoint> {
    let mut params = Vec::with_capacity(n1 * n2);
    for i2 in 0..n2 {
        let t2 = i2 as f64 / (n2 - 1) as f64;
        let mu2 = cfg.mu2_min + t2 * (cfg.mu2_max - cfg.mu2_min);
        for i1 in 0..n1 {
            let t1 = i1 as f64 / (n1 - 1) as f64;
            let mu1 = cfg.mu1_min + t1 * (cfg.mu1_max - cfg.mu1_min);
            params.push(ParameterPoint::new(mu1, mu2));
        }
    }
    params
}

/// Solves the steady problem at every point of the `n1 x n2` tensor grid
/// from the branch-bias guess. Grid points run in parallel; the output
/// ordering is the grid ordering regardless of scheduling. The seed is
/// recorded for provenance (generation itself is deterministic).
pub fn generate_snapshots(
    cfg: &FomConfig,
    n1: usize,
    n2: usize,
    seed: u64,
) -> Result<SnapshotSet, FomError> {
    cfg.validate()?;
    if n1 < 2 || n2 < 2 {
        return Err(FomError::InvalidConfig(
            "snapshot grid needs at least 2 points per axis".into(),
        ));
    }
    let params = tensor_grid(cfg, n1, n2);
    let guess = cfg.bias_guess();
    let solutions: Vec<Result<SteadySolution, FomError>> = params
        .par_iter()
        .map(|&p| steady_solve(cfg, p, &guess))
        .collect();

    let mut matrix = DMatrix::zeros(cfg.state_len(), params.len());
    let mut meta = Vec::with_capacity(params.len());
    for (j, sol) in solutions.into_iter().enumerate() {
        let (i1, i2) = (j % n1, j / n1);
        let wrap = |source: FomError| FomError::SnapshotFailure {
            i1,
            i2,
            mu1: params[j].mu1,
            mu2: params[j].mu2,
            source: Box::new(source),
        };
        let sol = sol.map_err(wrap)?;
        if !sol.converged {
            return Err(FomError::SnapshotFailure {
                i1,
                i2,
                mu1: params[j].mu1,
                mu2: params[j].mu2,
                source: Box::new(FomError::NoConvergence {
                    max_iter: cfg.max_steps,
                    residual: sol.final_increment,
                }),
            });
        }
        matrix.set_column(j, &sol.state);
        meta.push(SnapshotMeta {
            steps: sol.steps_taken,
            converged: sol.converged,
            final_increment: sol.final_increment,
        });
    }
    Ok(SnapshotSet {
        n1,
        n2,
        params,
        matrix,
        meta,
        seed,
    })
}
