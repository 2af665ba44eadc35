//! Local-basis selection: the offline error table and every criterion that
//! assigns a cluster to an unseen parameter point.
//!
//! The cheap geometric rules (parameter centroid, closest snapshot) only see
//! the k-means partition. The trained rules go further: a softmax classifier
//! reproduces the partition exactly at the snapshot locations, and the
//! regression networks learn the normalized inverse errors of *all* local
//! models from the offline table, which lets them disagree with the
//! partition wherever another cluster approximates better. The oracle is
//! the per-point argmin over the table of true errors on a reference grid,
//! the unattainable lower bound of any criterion.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::ann::{self, Mlp};
use crate::eval::{relative_errors, ErrorField};
use crate::fom::{FomConfig, ParameterPoint, SnapshotSet};
use crate::pod;
use crate::rom::{self, LocalRomSet};

/// Error entries of solves that failed to converge.
pub const ERROR_SENTINEL: f64 = 1e30;

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("criterion requires a trained artifact that is missing or mismatched: {0}")]
    MissingArtifact(String),
    #[error("parameter ({0}, {1}) outside the configured box")]
    OutOfBox(f64, f64),
}

/// Relative errors of every local ROM at every snapshot location, plus
/// per-entry convergence flags. Row `i` is a snapshot, column `k` a
/// cluster.
#[derive(Debug, Clone)]
pub struct ErrorTable {
    pub values: DMatrix<f64>,
    pub converged: Vec<bool>,
}

impl ErrorTable {
    pub fn ns(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn flag(&self, i: usize, k: usize) -> bool {
        self.converged[i * self.values.ncols() + k]
    }
}

/// Solves every local ROM at every snapshot parameter (warm-started from
/// the projected snapshot itself, which is available offline) and stores
/// the relative u-field L2 error. Non-converged solves get the sentinel.
pub fn build_error_table(local: &LocalRomSet, snapshots: &SnapshotSet) -> ErrorTable {
    let ns = snapshots.len();
    let k = local.k();
    let entries: Vec<(f64, bool)> = (0..ns * k)
        .into_par_iter()
        .map(|idx| {
            let (i, c) = (idx / k, idx % k);
            let rom = &local.roms[c];
            let s = snapshots.snapshot(i);
            let a0 = pod::project(&rom.basis, &s);
            match rom::rom_solve(rom, snapshots.params[i], &a0) {
                Ok(sol) if sol.converged => {
                    let lifted = rom::lift(rom, &sol);
                    let err = relative_errors(&lifted, &s, ErrorField::UField);
                    (err.l2, true)
                }
                _ => (ERROR_SENTINEL, false),
            }
        })
        .collect();
    let values = DMatrix::from_fn(ns, k, |i, c| entries[i * k + c].0);
    let converged = entries.iter().map(|&(_, c)| c).collect();
    ErrorTable { values, converged }
}

/// Regression targets: normalized inverse errors, one unit-norm row per
/// snapshot location. Sentinel entries map to targets near zero.
pub fn regression_targets(table: &ErrorTable) -> DMatrix<f64> {
    let (ns, k) = (table.ns(), table.k());
    let mut targets = DMatrix::zeros(ns, k);
    for i in 0..ns {
        let mut row = DVector::zeros(k);
        for c in 0..k {
            row[c] = 1.0 / table.values[(i, c)].max(1e-12);
        }
        let norm = row.norm();
        row /= norm;
        for c in 0..k {
            targets[(i, c)] = row[c];
        }
    }
    targets
}

/// Shared geometry every criterion needs: normalized snapshot locations,
/// their k-means labels, and normalized parameter centroids.
#[derive(Debug, Clone)]
pub struct SelectorData {
    cfg: FomConfig,
    snapshot_params: Vec<[f64; 2]>,
    labels: Vec<usize>,
    centroids: Vec<[f64; 2]>,
}

impl SelectorData {
    pub fn new(cfg: &FomConfig, snapshots: &SnapshotSet, clustering: &crate::cluster::Clustering) -> Self {
        Self {
            cfg: cfg.clone(),
            snapshot_params: snapshots
                .params
                .iter()
                .map(|&p| cfg.normalize_param(p))
                .collect(),
            labels: clustering.labels.clone(),
            centroids: clustering
                .parameter_centroids
                .iter()
                .map(|&p| cfg.normalize_param(p))
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    fn closest_snapshot(&self, target: [f64; 2]) -> usize {
        nearest(&self.snapshot_params, target)
    }
}

fn nearest(points: &[[f64; 2]], target: [f64; 2]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, p) in points.iter().enumerate() {
        let d = (p[0] - target[0]).powi(2) + (p[1] - target[1]).powi(2);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn argmax_lowest_tie(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

fn argmin_lowest_tie(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.enumerate() {
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    best
}

/// A cluster-selection rule with its trained artifacts.
#[derive(Debug, Clone)]
pub enum Criterion {
    /// Closest parameter centroid (normalized Euclidean distance).
    ParameterCentroid,
    /// Cluster of the closest snapshot location.
    ClosestSnapshot,
    /// Softmax classifier trained to a perfect match on the k-means labels.
    ClassifierAnn(Mlp),
    /// One network predicting all K normalized inverse errors; argmax wins.
    RegressionAnnJoint(Mlp),
    /// K independent single-output networks, one per cluster.
    RegressionAnnIndependent(Vec<Mlp>),
    /// Cluster that best approximates the closest snapshot per the table.
    NextBestApproxSnapshot(ErrorTable),
    /// Per-point argmin labels on a reference grid (normalized locations
    /// paired with the winning cluster).
    OracleOptimal {
        grid: Vec<[f64; 2]>,
        labels: Vec<usize>,
    },
}

impl Criterion {
    pub fn tag(&self) -> &'static str {
        match self {
            Criterion::ParameterCentroid => "centroid",
            Criterion::ClosestSnapshot => "closest-snapshot",
            Criterion::ClassifierAnn(_) => "classifier",
            Criterion::RegressionAnnJoint(_) => "regression",
            Criterion::RegressionAnnIndependent(_) => "regression-independent",
            Criterion::NextBestApproxSnapshot(_) => "next-best",
            Criterion::OracleOptimal { .. } => "oracle",
        }
    }
}

/// Picks the cluster for `mu`. Distances use normalized parameter
/// coordinates and the Euclidean norm; ties break to the lowest cluster
/// index; networks see the normalized coordinates as input.
pub fn select_cluster(
    data: &SelectorData,
    criterion: &Criterion,
    mu: ParameterPoint,
) -> Result<usize, SelectError> {
    if !data.cfg.contains(mu) {
        return Err(SelectError::OutOfBox(mu.mu1, mu.mu2));
    }
    let target = data.cfg.normalize_param(mu);
    let k = data.k();
    match criterion {
        Criterion::ParameterCentroid => Ok(nearest(&data.centroids, target)),
        Criterion::ClosestSnapshot => Ok(data.labels[data.closest_snapshot(target)]),
        Criterion::ClassifierAnn(net) => {
            if net.output_dim() != k {
                return Err(SelectError::MissingArtifact(format!(
                    "classifier has {} outputs for {k} clusters",
                    net.output_dim()
                )));
            }
            let out = ann::forward(net, &DVector::from_vec(vec![target[0], target[1]]))
                .map_err(|e| SelectError::MissingArtifact(e.to_string()))?;
            Ok(argmax_lowest_tie(out.iter().cloned()))
        }
        Criterion::RegressionAnnJoint(net) => {
            if net.output_dim() != k {
                return Err(SelectError::MissingArtifact(format!(
                    "joint regressor has {} outputs for {k} clusters",
                    net.output_dim()
                )));
            }
            let out = ann::forward(net, &DVector::from_vec(vec![target[0], target[1]]))
                .map_err(|e| SelectError::MissingArtifact(e.to_string()))?;
            Ok(argmax_lowest_tie(out.iter().cloned()))
        }
        Criterion::RegressionAnnIndependent(nets) => {
            if nets.len() != k {
                return Err(SelectError::MissingArtifact(format!(
                    "{} independent regressors for {k} clusters",
                    nets.len()
                )));
            }
            let x = DVector::from_vec(vec![target[0], target[1]]);
            let mut scores = Vec::with_capacity(k);
            for net in nets {
                if net.output_dim() != 1 {
                    return Err(SelectError::MissingArtifact(
                        "independent regressor must have one output".into(),
                    ));
                }
                let out = ann::forward(net, &x)
                    .map_err(|e| SelectError::MissingArtifact(e.to_string()))?;
                scores.push(out[0]);
            }
            Ok(argmax_lowest_tie(scores.into_iter()))
        }
        Criterion::NextBestApproxSnapshot(table) => {
            if table.k() != k || table.ns() != data.snapshot_params.len() {
                return Err(SelectError::MissingArtifact(
                    "error table shape does not match the clustering".into(),
                ));
            }
            let i = data.closest_snapshot(target);
            Ok(argmin_lowest_tie(table.values.row(i).iter().cloned()))
        }
        Criterion::OracleOptimal { grid, labels } => {
            if grid.len() != labels.len() || grid.is_empty() {
                return Err(SelectError::MissingArtifact(
                    "oracle labels missing or mismatched".into(),
                ));
            }
            Ok(labels[nearest(grid, target)])
        }
    }
}

/// Per-reference-point argmin-error cluster labels, the optimal selection a
/// criterion could make. Each local ROM is solved at each reference point
/// with the standard online warm start, so the errors here are exactly the
/// errors the online evaluation would incur.
pub fn oracle_selection(
    cfg: &FomConfig,
    solver: rom::SolverChoice,
    local: &LocalRomSet,
    snapshots: &SnapshotSet,
    reference: &SnapshotSet,
) -> Vec<usize> {
    let k = local.k();
    reference
        .params
        .par_iter()
        .enumerate()
        .map(|(j, &mu)| {
            let truth = reference.snapshot(j);
            let errors: Vec<f64> = (0..k)
                .map(|c| {
                    let (state, converged) = rom::solve_local_at(local, snapshots, cfg, c, mu, solver);
                    if converged {
                        relative_errors(&state, &truth, ErrorField::UField).l2
                    } else {
                        ERROR_SENTINEL
                    }
                })
                .collect();
            argmin_lowest_tie(errors.into_iter())
        })
        .collect()
}

/// Bundles the oracle labels into a criterion usable by `select_cluster`.
pub fn oracle_criterion(
    cfg: &FomConfig,
    reference: &SnapshotSet,
    labels: Vec<usize>,
) -> Criterion {
    Criterion::OracleOptimal {
        grid: reference
            .params
            .iter()
            .map(|&p| cfg.normalize_param(p))
            .collect(),
        labels,
    }
}
