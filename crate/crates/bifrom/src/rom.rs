//! Galerkin reduced operators and the reduced steady solvers.
//!
//! Projecting the full-order residual onto an X-orthonormal basis leaves an
//! affine family of small matrices (diffusion, reaction, decay) plus a
//! trilinear tensor from the quadratic nonlinearity, symmetric in its last
//! two slots. Assembly is the expensive offline step (`O(L^3 N)` for the
//! tensor); every online solve then works on `L x L` objects only. Both the
//! global ROM and each local ROM share these routines.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::cluster::{Clustering, LocalBasisSet};
use crate::fom::{DiscreteOperators, ParameterPoint, SnapshotSet, StateVec};
use crate::pod::{self, Basis};

/// Residual tolerance of the reduced Newton iteration.
pub const REDUCED_NEWTON_TOL: f64 = 1e-10;
pub const REDUCED_NEWTON_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Error)]
pub enum RomError {
    #[error("singular reduced Jacobian in iteration {iter}")]
    SingularJacobian { iter: usize },
    #[error("reduced state left the finite range in iteration {iter}")]
    NonFinite { iter: usize },
    #[error("coefficient vector has length {got}, basis has {expected} modes")]
    DimensionMismatch { got: usize, expected: usize },
}

/// Trilinear tensor `T[i][j][k] = <phi_i, N_sym(phi_j, phi_k)>_X`, stored
/// dense with the `j <= k` symmetry mirrored at assembly time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trilinear {
    dim: usize,
    data: Vec<f64>,
}

impl Trilinear {
    fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        self.data[(i * self.dim + j) * self.dim + k] = value;
    }

    /// Quadratic contraction `T(a, a)`.
    pub fn contract(&self, a: &DVector<f64>) -> DVector<f64> {
        let l = self.dim;
        let mut out = DVector::zeros(l);
        for i in 0..l {
            let block = &self.data[i * l * l..(i + 1) * l * l];
            let mut acc = 0.0;
            for j in 0..l {
                let row = &block[j * l..(j + 1) * l];
                let mut inner = 0.0;
                for k in 0..l {
                    inner += row[k] * a[k];
                }
                acc += a[j] * inner;
            }
            out[i] = acc;
        }
        out
    }

    /// Directional derivative matrix `M(a)[i][m] = sum_k T[i][m][k] a_k`;
    /// the Jacobian of the quadratic term is `2 M(a)` by symmetry.
    pub fn directional(&self, a: &DVector<f64>) -> DMatrix<f64> {
        let l = self.dim;
        let mut out = DMatrix::zeros(l, l);
        for i in 0..l {
            let block = &self.data[i * l * l..(i + 1) * l * l];
            for m in 0..l {
                let row = &block[m * l..(m + 1) * l];
                let mut acc = 0.0;
                for k in 0..l {
                    acc += row[k] * a[k];
                }
                out[(i, m)] = acc;
            }
        }
        out
    }

    /// Raw data as an `L x L^2` matrix (persistence layout: row `i` holds
    /// `T[i][j][k]` with `k` fastest).
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let l = self.dim;
        DMatrix::from_fn(l, l * l, |i, jk| self.data[i * l * l + jk])
    }

    pub fn from_matrix(mat: &DMatrix<f64>) -> Self {
        let l = mat.nrows();
        assert_eq!(mat.ncols(), l * l, "tensor matrix must be L x L^2");
        let mut t = Self::zeros(l);
        for i in 0..l {
            for jk in 0..l * l {
                t.data[i * l * l + jk] = mat[(i, jk)];
            }
        }
        t
    }
}

/// Reduced operators of one basis: the steady residual in coefficients is
/// `(mu2 A_diff + mu1 A_react + A_decay) a + T(a, a)`.
#[derive(Debug, Clone)]
pub struct ReducedOperators {
    pub basis: Basis,
    /// `h Phi^T blkdiag(D, D) Phi`; coefficient of `mu2`.
    pub a_diff: DMatrix<f64>,
    /// `h Phi^T P_u Phi`; coefficient of `mu1`.
    pub a_react: DMatrix<f64>,
    /// `-h Phi^T P_v Phi`; parameter-independent.
    pub a_decay: DMatrix<f64>,
    pub tensor: Trilinear,
}

impl ReducedOperators {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

/// Galerkin projection of the discrete operators onto the basis. Matrix
/// assembly is `O(L^2 N)`, the tensor `O(L^3 N)`; debug builds count the
/// kernel evaluations and check the totals.
pub fn assemble_reduced(basis: &Basis, ops: &DiscreteOperators) -> ReducedOperators {
    let l = basis.len();
    let h = basis.weight;
    let n2 = basis.state_len();
    assert_eq!(n2, ops.state_len(), "basis and operators disagree on N");

    let mut lap = DMatrix::zeros(n2, l);
    for j in 0..l {
        lap.set_column(j, &ops.apply_laplacian_stacked(&basis.mode(j)));
    }
    let a_diff = h * (basis.modes.transpose() * lap);

    let n = ops.n_interior();
    let phi_u = basis.modes.rows(0, n);
    let phi_v = basis.modes.rows(n, n);
    let a_react = h * (phi_u.transpose() * phi_u);
    let a_decay = -h * (phi_v.transpose() * phi_v);

    let mut tensor = Trilinear::zeros(l);
    let mut kernel_evals = 0usize;
    let mut inner_products = 0usize;
    let modes: Vec<StateVec> = (0..l).map(|j| basis.mode(j)).collect();
    for j in 0..l {
        for k in j..l {
            let nsym = ops.nonlinear_sym(&modes[j], &modes[k]);
            kernel_evals += 1;
            let coeffs = h * (basis.modes.transpose() * &nsym);
            inner_products += l;
            for i in 0..l {
                tensor.set(i, j, k, coeffs[i]);
                tensor.set(i, k, j, coeffs[i]);
            }
        }
    }
    debug_assert_eq!(kernel_evals, l * (l + 1) / 2);
    debug_assert_eq!(inner_products, l * (l * (l + 1) / 2));
    let _ = (kernel_evals, inner_products);

    ReducedOperators {
        basis: basis.clone(),
        a_diff,
        a_react,
        a_decay,
        tensor,
    }
}

/// Reduced steady residual at coefficients `a`.
pub fn reduced_residual(
    ops: &ReducedOperators,
    params: ParameterPoint,
    a: &DVector<f64>,
) -> DVector<f64> {
    let linear = params.mu2 * &ops.a_diff + params.mu1 * &ops.a_react + &ops.a_decay;
    linear * a + ops.tensor.contract(a)
}

/// Reduced Jacobian at `a`.
pub fn reduced_jacobian(
    ops: &ReducedOperators,
    params: ParameterPoint,
    a: &DVector<f64>,
) -> DMatrix<f64> {
    params.mu2 * &ops.a_diff
        + params.mu1 * &ops.a_react
        + &ops.a_decay
        + 2.0 * ops.tensor.directional(a)
}

/// Outcome of a reduced solve.
#[derive(Debug, Clone)]
pub struct RomSolution {
    pub coeffs: DVector<f64>,
    pub converged: bool,
    pub newton_iters: usize,
    pub residual_norm: f64,
}

/// Damped Newton on the reduced residual. Non-convergence within the
/// iteration budget is reported through the `converged` flag, never a
/// panic; a singular reduced Jacobian is an error.
pub fn rom_solve(
    ops: &ReducedOperators,
    params: ParameterPoint,
    a0: &DVector<f64>,
) -> Result<RomSolution, RomError> {
    let l = ops.dim();
    if a0.len() != l {
        return Err(RomError::DimensionMismatch {
            got: a0.len(),
            expected: l,
        });
    }
    let mut a = a0.clone();
    let mut res = reduced_residual(ops, params, &a);
    let mut res_norm = res.norm();
    for iter in 1..=REDUCED_NEWTON_MAX_ITER {
        if res_norm < REDUCED_NEWTON_TOL {
            return Ok(RomSolution {
                coeffs: a,
                converged: true,
                newton_iters: iter - 1,
                residual_norm: res_norm,
            });
        }
        let jac = reduced_jacobian(ops, params, &a);
        let delta = jac
            .lu()
            .solve(&res)
            .ok_or(RomError::SingularJacobian { iter })?;
        let mut lambda = 1.0;
        let mut best = None;
        for _ in 0..=MAX_HALVINGS {
            let trial = &a - lambda * &delta;
            let trial_res = reduced_residual(ops, params, &trial);
            let trial_norm = trial_res.norm();
            if trial_norm.is_finite() && trial_norm < res_norm {
                best = Some((trial, trial_norm));
                break;
            }
            if best.is_none() && trial_norm.is_finite() {
                best = Some((trial, trial_norm));
            }
            lambda *= 0.5;
        }
        match best {
            Some((trial, trial_norm)) => {
                a = trial;
                res = reduced_residual(ops, params, &a);
                res_norm = trial_norm;
            }
            None => return Err(RomError::NonFinite { iter }),
        }
    }
    let converged = res_norm < REDUCED_NEWTON_TOL;
    Ok(RomSolution {
        coeffs: a,
        converged,
        newton_iters: REDUCED_NEWTON_MAX_ITER,
        residual_norm: res_norm,
    })
}

/// Reduced analog of the full-order pseudo-time march (diffusion and decay
/// implicit, reaction and quadratic terms explicit), kept for comparison
/// with the Newton path; both share their fixed points.
pub fn rom_solve_fixed_point(
    ops: &ReducedOperators,
    params: ParameterPoint,
    a0: &DVector<f64>,
    dt: f64,
    tol: f64,
    max_steps: usize,
) -> Result<RomSolution, RomError> {
    let l = ops.dim();
    if a0.len() != l {
        return Err(RomError::DimensionMismatch {
            got: a0.len(),
            expected: l,
        });
    }
    let implicit = DMatrix::identity(l, l) - dt * (params.mu2 * &ops.a_diff + &ops.a_decay);
    let lu = implicit.lu();
    let mut a = a0.clone();
    for step in 1..=max_steps {
        let rhs = &a + dt * (params.mu1 * (&ops.a_react * &a) + ops.tensor.contract(&a));
        let next = lu
            .solve(&rhs)
            .ok_or(RomError::SingularJacobian { iter: step })?;
        let norm_next = next.norm();
        if !norm_next.is_finite() {
            return Err(RomError::NonFinite { iter: step });
        }
        let increment = (&next - &a).norm();
        let measured = if norm_next < 1e-14 {
            increment
        } else {
            increment / norm_next
        };
        a = next;
        if measured < tol {
            let res_norm = reduced_residual(ops, params, &a).norm();
            return Ok(RomSolution {
                coeffs: a,
                converged: true,
                newton_iters: step,
                residual_norm: res_norm,
            });
        }
    }
    let res_norm = reduced_residual(ops, params, &a).norm();
    Ok(RomSolution {
        coeffs: a,
        converged: false,
        newton_iters: max_steps,
        residual_norm: res_norm,
    })
}

/// Lifts reduced coefficients back to the full state.
pub fn lift(ops: &ReducedOperators, solution: &RomSolution) -> StateVec {
    pod::reconstruct(&ops.basis, &solution.coeffs)
}

/// Online reduced-solver selection; the fixed-point route mirrors the
/// full-order march and exists for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverChoice {
    Newton,
    FixedPoint { dt: f64, tol: f64, max_steps: usize },
}

/// Dispatches to the selected reduced solver.
pub fn solve_with(
    ops: &ReducedOperators,
    params: ParameterPoint,
    a0: &DVector<f64>,
    choice: SolverChoice,
) -> Result<RomSolution, RomError> {
    match choice {
        SolverChoice::Newton => rom_solve(ops, params, a0),
        SolverChoice::FixedPoint { dt, tol, max_steps } => {
            rom_solve_fixed_point(ops, params, a0, dt, tol, max_steps)
        }
    }
}

/// A full local-ROM family: one reduced model per cluster.
#[derive(Debug, Clone)]
pub struct LocalRomSet {
    pub roms: Vec<ReducedOperators>,
    pub clustering: Clustering,
    pub bases: LocalBasisSet,
}

impl LocalRomSet {
    pub fn k(&self) -> usize {
        self.roms.len()
    }
}

/// Assembles one reduced model per cluster basis.
pub fn assemble_local_roms(
    bases: &LocalBasisSet,
    clustering: &Clustering,
    ops: &DiscreteOperators,
) -> LocalRomSet {
    let roms = bases
        .clusters
        .iter()
        .map(|c| assemble_reduced(&c.basis, ops))
        .collect();
    LocalRomSet {
        roms,
        clustering: clustering.clone(),
        bases: bases.clone(),
    }
}

/// Newton initial guess used everywhere online: the projection of the
/// snapshot closest to `mu` in normalized parameter coordinates, restricted
/// to `candidates` (a cluster's members, or all snapshots for the global
/// ROM). Cheap continuation that keeps the solver on the tracked branch.
pub fn warm_start(
    basis: &Basis,
    snapshots: &SnapshotSet,
    candidates: &[usize],
    norm_box: &crate::fom::FomConfig,
    mu: ParameterPoint,
) -> DVector<f64> {
    let target = norm_box.normalize_param(mu);
    let closest = candidates
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let pa = norm_box.normalize_param(snapshots.params[a]);
            let pb = norm_box.normalize_param(snapshots.params[b]);
            let da = (pa[0] - target[0]).powi(2) + (pa[1] - target[1]).powi(2);
            let db = (pb[0] - target[0]).powi(2) + (pb[1] - target[1]).powi(2);
            da.partial_cmp(&db).unwrap().then(a.cmp(&b))
        })
        .expect("candidate set must not be empty");
    pod::project(basis, &snapshots.snapshot(closest))
}

/// Solves the local ROM of cluster `k` at `mu` with the warm start drawn
/// from that cluster's members; returns the lifted state.
pub fn solve_local_at(
    set: &LocalRomSet,
    snapshots: &SnapshotSet,
    cfg: &crate::fom::FomConfig,
    k: usize,
    mu: ParameterPoint,
    choice: SolverChoice,
) -> (StateVec, bool) {
    let rom = &set.roms[k];
    let a0 = warm_start(
        &rom.basis,
        snapshots,
        &set.bases.clusters[k].members,
        cfg,
        mu,
    );
    match solve_with(rom, mu, &a0, choice) {
        Ok(sol) => {
            let state = lift(rom, &sol);
            (state, sol.converged)
        }
        Err(_) => (DVector::zeros(rom.basis.state_len()), false),
    }
}
