//! Proper Orthogonal Decomposition by the method of snapshots.
//!
//! The snapshot count is far below the state dimension in every
//! configuration here, so the basis comes from the eigendecomposition of the
//! small Gram matrix `G = h S^T S` rather than a thin SVD of `S`. Truncation
//! keeps the smallest mode count whose discarded eigenvalue mass stays
//! within `energy_tol`, and a fixed sign convention makes the output
//! reproducible across runs and platforms.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::fom::StateVec;
use crate::x_norm;

/// Eigenvalues below this fraction of the leading one are numerical noise
/// and never enter the basis.
const EIGENVALUE_FLOOR: f64 = 1e-13;

#[derive(Debug, Error)]
pub enum PodError {
    #[error("snapshot matrix has no columns")]
    NoSnapshots,
    #[error("all snapshot columns are numerically zero")]
    ZeroSnapshots,
    #[error("energy tolerance must lie in [0, 1), got {0}")]
    InvalidTolerance(f64),
}

/// X-orthonormal POD basis with its singular values.
#[derive(Debug, Clone)]
pub struct Basis {
    /// Modes, one per column, `h`-orthonormal: `h * modes^T modes = I`.
    pub modes: DMatrix<f64>,
    /// Nonincreasing; `singular_values[i]^2` is the snapshot energy captured
    /// by mode `i`.
    pub singular_values: Vec<f64>,
    /// Discarded-energy fraction used for truncation.
    pub energy_tol: f64,
    /// Inner-product weight of the discrete L2 norm.
    pub weight: f64,
}

impl Basis {
    /// Basis dimension `L`.
    pub fn len(&self) -> usize {
        self.modes.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.ncols() == 0
    }

    pub fn state_len(&self) -> usize {
        self.modes.nrows()
    }

    pub fn mode(&self, i: usize) -> StateVec {
        self.modes.column(i).into_owned()
    }
}

/// Computes the POD basis of the given snapshot columns under the weighted
/// inner product `h * a . b`.
///
/// Keeps the smallest `L` with discarded eigenvalue mass at most
/// `energy_tol` of the total; eigenvalues below `1e-13` of the leading one
/// are dropped regardless. Modes are `S q_i / sqrt(lambda_i)`,
/// re-orthonormalized by one Gram-Schmidt pass (trailing Gram eigenvectors
/// alone do not reach the 1e-10 orthonormality budget), with the
/// largest-magnitude entry of each mode made positive.
pub fn compute_pod(snapshots: &DMatrix<f64>, h: f64, energy_tol: f64) -> Result<Basis, PodError> {
    if snapshots.ncols() == 0 {
        return Err(PodError::NoSnapshots);
    }
    if !(0.0..1.0).contains(&energy_tol) {
        return Err(PodError::InvalidTolerance(energy_tol));
    }
    let ns = snapshots.ncols();
    let gram = h * (snapshots.transpose() * snapshots);
    let eig = SymmetricEigen::new(gram);

    let mut order: Vec<usize> = (0..ns).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let eigenvalues: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0))
        .collect();
    let total: f64 = eigenvalues.iter().sum();
    let lambda_max = eigenvalues[0];
    if lambda_max <= 0.0 || lambda_max.is_nan() || x_norm(h, &max_column(snapshots)) < 1e-14 {
        return Err(PodError::ZeroSnapshots);
    }

    let above_floor = eigenvalues
        .iter()
        .filter(|&&l| l >= EIGENVALUE_FLOOR * lambda_max)
        .count();
    let mut kept = 0.0;
    let mut dim = above_floor;
    for (i, &lambda) in eigenvalues.iter().enumerate().take(above_floor) {
        kept += lambda;
        if total - kept <= energy_tol * total {
            dim = i + 1;
            break;
        }
    }
    let dim = dim.max(1);

    let mut modes = DMatrix::zeros(snapshots.nrows(), dim);
    let mut singular_values = Vec::with_capacity(dim);
    for (col, &src) in order.iter().take(dim).enumerate() {
        let lambda = eigenvalues[col];
        let mode = snapshots * eig.eigenvectors.column(src) / lambda.sqrt();
        modes.set_column(col, &mode);
        singular_values.push(lambda.sqrt());
    }

    // Gram-Schmidt polish in the X inner product.
    for i in 0..dim {
        let mut mode = modes.column(i).into_owned();
        for j in 0..i {
            let prev = modes.column(j).into_owned();
            let coeff = h * prev.dot(&mode);
            mode.axpy(-coeff, &prev, 1.0);
        }
        let norm = x_norm(h, &mode);
        mode /= norm;
        modes.set_column(i, &mode);
    }

    for i in 0..dim {
        let mut mode = modes.column_mut(i);
        let lead = mode
            .iter()
            .enumerate()
            .max_by(|(ia, a), (ib, b)| a.abs().partial_cmp(&b.abs()).unwrap().then(ib.cmp(ia)))
            .map(|(_, &v)| v)
            .unwrap();
        if lead < 0.0 {
            mode.neg_mut();
        }
    }

    Ok(Basis {
        modes,
        singular_values,
        energy_tol,
        weight: h,
    })
}

fn max_column(snapshots: &DMatrix<f64>) -> DVector<f64> {
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..snapshots.ncols() {
        let n = snapshots.column(j).norm();
        if n > best_norm {
            best_norm = n;
            best = j;
        }
    }
    snapshots.column(best).into_owned()
}

/// Coefficients of `state` in the basis: `a = h Phi^T w`.
pub fn project(basis: &Basis, state: &StateVec) -> DVector<f64> {
    basis.weight * (basis.modes.transpose() * state)
}

/// Linear combination `Phi a`.
pub fn reconstruct(basis: &Basis, coeffs: &DVector<f64>) -> StateVec {
    &basis.modes * coeffs
}

/// X-orthogonal projection `Phi (h Phi^T w)` onto the basis span.
pub fn project_onto_span(basis: &Basis, state: &StateVec) -> StateVec {
    reconstruct(basis, &project(basis, state))
}

/// X-norm of the residual after projecting onto the basis span.
pub fn projection_residual_norm(basis: &Basis, state: &StateVec) -> f64 {
    x_norm(basis.weight, &(state - project_onto_span(basis, state)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SVD;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() - 0.5)
    }

    fn orthonormality_defect(b: &Basis) -> f64 {
        let gram = b.weight * (b.modes.transpose() * &b.modes);
        let mut defect = 0.0f64;
        for i in 0..b.len() {
            for j in 0..b.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                defect = defect.max((gram[(i, j)] - target).abs());
            }
        }
        defect
    }

    #[test]
    fn identical_columns_collapse_to_rank_one() {
        let h = 0.25;
        let mut s = DVector::from_vec(vec![1.0, -2.0, 0.5, 0.0]);
        s /= x_norm(h, &s);
        let mat = DMatrix::from_columns(&[s.clone(), s.clone()]);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        assert_eq!(basis.len(), 1);
        assert!((basis.singular_values[0] - 2.0f64.sqrt()).abs() < 1e-12);
        // Sign convention: largest-magnitude entry positive, so the mode is
        // -s (s has lead entry -2).
        let diff = x_norm(h, &(basis.mode(0) + &s));
        assert!(diff < 1e-12);
    }

    #[test]
    fn orthonormal_columns_are_recovered() {
        let h: f64 = 0.5;
        let scale = 1.0 / h.sqrt();
        let e1 = DVector::from_vec(vec![scale, 0.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, scale, 0.0]);
        let mat = DMatrix::from_columns(&[e1.clone(), e2.clone()]);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        assert_eq!(basis.len(), 2);
        assert!(orthonormality_defect(&basis) < 1e-12);
        for m in [e1, e2] {
            let residual = projection_residual_norm(&basis, &m);
            assert!(residual < 1e-12);
        }
    }

    #[test]
    fn rank_three_matrix_matches_svd_oracle() {
        let h = 0.1;
        let factor_a = random_matrix(10, 3, 5);
        let factor_b = random_matrix(3, 6, 6);
        let mat = factor_a * factor_b;
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        assert_eq!(basis.len(), 3);

        let svd = SVD::new(mat.clone(), true, false);
        let u = svd.u.unwrap();
        for i in 0..3 {
            let oracle = u.column(i).into_owned() / h.sqrt();
            let mode = basis.mode(i);
            let aligned = if oracle.dot(&mode) < 0.0 { -oracle } else { oracle };
            assert!(
                x_norm(h, &(&mode - &aligned)) < 1e-8,
                "mode {i} deviates from SVD oracle"
            );
        }
        let sigma_scale = h.sqrt();
        for i in 0..3 {
            assert!((basis.singular_values[i] - sigma_scale * svd.singular_values[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn energy_truncation_semantics() {
        // Two X-orthogonal directions with energies 0.99 and 0.01 of the
        // total: tol just above 0.01 keeps one mode, below keeps both.
        let h = 1.0;
        let a = DVector::from_vec(vec![99.0f64.sqrt(), 0.0]);
        let b = DVector::from_vec(vec![0.0, 1.0]);
        let mat = DMatrix::from_columns(&[a, b]);
        let one = compute_pod(&mat, h, 0.011).unwrap();
        assert_eq!(one.len(), 1);
        let two = compute_pod(&mat, h, 0.009).unwrap();
        assert_eq!(two.len(), 2);
    }

    #[test]
    fn projection_matches_least_squares_oracle() {
        let h = 0.05;
        let mat = random_matrix(12, 4, 8);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        let w = random_matrix(12, 1, 9).column(0).into_owned();
        // Oracle: unweighted least squares on the mode matrix (the uniform
        // weight cancels in the normal equations).
        let lsq = basis
            .modes
            .clone()
            .svd(true, true)
            .solve(&w, 1e-14)
            .unwrap();
        let by_projection = project(&basis, &w);
        assert!((by_projection - &lsq).amax() < 1e-10);
        let err = x_norm(h, &(&w - reconstruct(&basis, &lsq)));
        assert!((projection_residual_norm(&basis, &w) - err).abs() < 1e-10);
    }

    #[test]
    fn project_reconstruct_round_trip() {
        let h = 0.02;
        let mat = random_matrix(20, 5, 10);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        let projected_mode = project(&basis, &basis.mode(0));
        assert!((projected_mode[0] - 1.0).abs() < 1e-12);
        assert!(projected_mode.rows(1, basis.len() - 1).amax() < 1e-12);
        let zero = DVector::zeros(20);
        assert_eq!(project(&basis, &zero).amax(), 0.0);
        assert_eq!(reconstruct(&basis, &DVector::zeros(basis.len())).amax(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let coeffs = DVector::from_fn(basis.len(), |_, _| rng.random::<f64>() - 0.5);
        let round = project(&basis, &reconstruct(&basis, &coeffs));
        assert!((round - &coeffs).amax() < 1e-10);
    }

    #[test]
    fn discarded_energy_equals_projection_error() {
        let h = 0.05;
        let mat = random_matrix(30, 8, 12);
        let basis = compute_pod(&mat, h, 0.2).unwrap();
        assert!(basis.len() < 8);
        let mut projected_error = 0.0;
        for j in 0..mat.ncols() {
            projected_error +=
                projection_residual_norm(&basis, &mat.column(j).into_owned()).powi(2);
        }
        let gram = h * (mat.transpose() * &mat);
        let mut eigenvalues: Vec<f64> = SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let discarded: f64 = eigenvalues[basis.len()..].iter().sum();
        assert!(
            (projected_error - discarded).abs() <= 1e-8 * discarded.max(1e-30),
            "projection error {projected_error:.3e} vs discarded {discarded:.3e}"
        );
    }

    #[test]
    fn span_stable_under_re_pod() {
        let h = 0.05;
        let mat = random_matrix(25, 5, 20);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        let mut reconstructed = DMatrix::zeros(25, 5);
        for j in 0..5 {
            reconstructed.set_column(j, &project_onto_span(&basis, &mat.column(j).into_owned()));
        }
        let second = compute_pod(&reconstructed, h, 0.0).unwrap();
        assert_eq!(second.len(), basis.len());
        for i in 0..second.len() {
            let r = projection_residual_norm(&basis, &second.mode(i));
            assert!(r <= 1e-8, "principal-angle residual {r:.3e}");
        }
    }

    #[test]
    fn column_permutation_invariance() {
        let h = 0.05;
        let mat = random_matrix(14, 6, 30);
        let basis = compute_pod(&mat, h, 0.0).unwrap();
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = DMatrix::from_columns(
            &perm
                .iter()
                .map(|&j| mat.column(j).into_owned())
                .collect::<Vec<_>>(),
        );
        let basis_p = compute_pod(&permuted, h, 0.0).unwrap();
        assert_eq!(basis.len(), basis_p.len());
        for i in 0..basis.len() {
            let d = (basis.mode(i) - basis_p.mode(i)).amax();
            assert!(d < 1e-9, "mode {i} changed under column permutation: {d:.2e}");
        }
    }

    #[test]
    fn zero_snapshots_rejected() {
        let mat = DMatrix::zeros(10, 3);
        assert!(matches!(
            compute_pod(&mat, 0.1, 0.0),
            Err(PodError::ZeroSnapshots)
        ));
        let empty = DMatrix::zeros(10, 0);
        assert!(matches!(
            compute_pod(&empty, 0.1, 0.0),
            Err(PodError::NoSnapshots)
        ));
        assert!(matches!(
            compute_pod(&DMatrix::identity(3, 3), 0.1, 1.0),
            Err(PodError::InvalidTolerance(_))
        ));
    }
}
