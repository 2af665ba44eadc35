//! Non-intrusive surrogate: a global POD basis plus a regression network
//! from parameters to reduced coefficients.
//!
//! Offline, the snapshots' POD coefficients (standardized per output, the
//! trailing ones are orders of magnitude smaller than the leading ones)
//! become training data for the network. Online there is no solver at all:
//! evaluate the network, de-standardize, reconstruct through the basis.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ann::{self, Mlp, TrainConfig};
use crate::fom::{FomConfig, ParameterPoint, SnapshotSet, StateVec};
use crate::pod::{self, Basis, PodError};

#[derive(Debug, Error)]
pub enum PodNnError {
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Ann(#[from] ann::AnnError),
    #[error("hidden layer dims must be [H1, H2], got {0:?}")]
    BadHiddenDims(Vec<usize>),
    #[error("validation fraction {0} must lie in [0, 1)")]
    BadValidationFraction(f64),
}

/// Trained non-intrusive model.
#[derive(Debug, Clone)]
pub struct PodNnModel {
    pub basis: Basis,
    /// Per-coefficient standardization (degenerate outputs keep std 1).
    pub coeff_mean: DVector<f64>,
    pub coeff_std: DVector<f64>,
    pub net: Mlp,
    pub final_loss: f64,
    pub loss_history: Vec<f64>,
    /// Mean squared validation loss when a split was requested (diagnostic
    /// only; it never influences training).
    pub validation_loss: Option<f64>,
}

/// Build controls beyond the shared training config.
#[derive(Debug, Clone)]
pub struct PodNnOptions {
    pub energy_tol: f64,
    /// Hidden layer widths `[H1, H2]`.
    pub hidden: [usize; 2],
    /// Fraction of snapshots held out for a validation-loss diagnostic;
    /// zero (the default) trains on everything, mirroring a setup with no
    /// overfitting control.
    pub validation_fraction: f64,
}

impl Default for PodNnOptions {
    fn default() -> Self {
        Self {
            energy_tol: 1e-6,
            hidden: [2048, 1024],
            validation_fraction: 0.0,
        }
    }
}

/// Computes the global POD, standardizes the snapshot coefficients, and
/// trains the regression network on (normalized parameters -> standardized
/// coefficients).
pub fn build_podnn(
    cfg: &FomConfig,
    snapshots: &SnapshotSet,
    options: &PodNnOptions,
    train: &TrainConfig,
) -> Result<PodNnModel, PodNnError> {
    if !(0.0..1.0).contains(&options.validation_fraction) {
        return Err(PodNnError::BadValidationFraction(options.validation_fraction));
    }
    let h = cfg.mesh_width();
    let basis = pod::compute_pod(&snapshots.matrix, h, options.energy_tol)?;
    let l = basis.len();
    let ns = snapshots.len();

    let mut coeffs = DMatrix::zeros(l, ns);
    for j in 0..ns {
        coeffs.set_column(j, &pod::project(&basis, &snapshots.snapshot(j)));
    }

    let mut coeff_mean = DVector::zeros(l);
    let mut coeff_std = DVector::zeros(l);
    for i in 0..l {
        let row = coeffs.row(i);
        let mean = row.sum() / ns as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ns as f64;
        let std = var.sqrt();
        coeff_mean[i] = mean;
        coeff_std[i] = if std > 0.0 { std } else { 1.0 };
    }

    let inputs = DMatrix::from_fn(2, ns, |i, j| cfg.normalize_param(snapshots.params[j])[i]);
    let targets = DMatrix::from_fn(l, ns, |i, j| (coeffs[(i, j)] - coeff_mean[i]) / coeff_std[i]);

    let layer_dims = [2, options.hidden[0], options.hidden[1], l];

    // Optional hold-out: deterministic stride over the grid ordering.
    let (train_idx, val_idx): (Vec<usize>, Vec<usize>) = if options.validation_fraction > 0.0 {
        let stride = (1.0 / options.validation_fraction).round().max(2.0) as usize;
        (0..ns).partition(|j| j % stride != stride - 1)
    } else {
        ((0..ns).collect(), Vec::new())
    };
    let pick = |mat: &DMatrix<f64>, idx: &[usize]| {
        DMatrix::from_fn(mat.nrows(), idx.len(), |i, j| mat[(i, idx[j])])
    };
    let fit = ann::train_regressor(
        &pick(&inputs, &train_idx),
        &pick(&targets, &train_idx),
        &layer_dims,
        train,
    )?;
    let validation_loss = if val_idx.is_empty() {
        None
    } else {
        let (loss, _) = ann::loss_grad(
            &fit.net,
            &pick(&inputs, &val_idx),
            &pick(&targets, &val_idx),
            ann::Loss::MeanSquaredError,
        )?;
        Some(loss)
    };

    Ok(PodNnModel {
        basis,
        coeff_mean,
        coeff_std,
        net: fit.net,
        final_loss: fit.final_loss,
        loss_history: fit.loss_history,
        validation_loss,
    })
}

/// Pure feed-forward evaluation: network, de-standardization,
/// reconstruction. No residual is ever assembled.
pub fn podnn_eval(model: &PodNnModel, cfg: &FomConfig, mu: ParameterPoint) -> StateVec {
    let x = cfg.normalize_param(mu);
    let out = ann::forward(&model.net, &DVector::from_vec(vec![x[0], x[1]]))
        .expect("model dimensions are fixed at build time");
    let coeffs = DVector::from_fn(model.basis.len(), |i, _| {
        out[i] * model.coeff_std[i] + model.coeff_mean[i]
    });
    pod::reconstruct(&model.basis, &coeffs)
}
