//! k-means clustering of snapshots and overlapping-cluster basis enrichment.
//!
//! Snapshots are clustered in state space under the weighted L2 norm (the
//! solution varies smoothly with the parameters, so the resulting clusters
//! come out parameter-contiguous as well). Each cluster's basis can be
//! enriched with the orthogonal complement of snapshots that neighbor the
//! cluster on the sampling grid, smoothing the hand-over between adjacent
//! local models.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fom::{ParameterPoint, SnapshotSet};
use crate::pod::{self, Basis, PodError};

const MAX_LLOYD_ITERS: usize = 300;
/// Residual directions shorter than this are already in the span and are
/// dropped during enrichment.
const RESIDUAL_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid cluster count {k} for {ns} snapshots")]
    InvalidK { k: usize, ns: usize },
    #[error("restarts must be at least 1")]
    NoRestarts,
    #[error("second POD tolerance {tol2} exceeds first tolerance {tol1}")]
    ToleranceOrder { tol1: f64, tol2: f64 },
    #[error(transparent)]
    Pod(#[from] PodError),
}

/// Result of Lloyd's algorithm on the snapshot columns.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub k: usize,
    /// Cluster index per snapshot.
    pub labels: Vec<usize>,
    /// State-space centroids, one per column.
    pub state_centroids: DMatrix<f64>,
    /// Mean of member parameter points, per cluster.
    pub parameter_centroids: Vec<ParameterPoint>,
    /// Final within-cluster sum of squared X-distances.
    pub energy: f64,
    /// Energy after every Lloyd iteration of the winning restart.
    pub energy_trace: Vec<f64>,
    pub seed: u64,
    pub restarts: usize,
}

impl Clustering {
    /// Member snapshot indices of cluster `k`, ascending.
    pub fn members(&self, k: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == k)
            .map(|(i, _)| i)
            .collect()
    }

    /// Recomputes the energy from labels and centroids.
    pub fn recompute_energy(&self, snapshots: &DMatrix<f64>, h: f64) -> f64 {
        let mut total = 0.0;
        for (j, &label) in self.labels.iter().enumerate() {
            let diff = snapshots.column(j) - self.state_centroids.column(label);
            total += h * diff.norm_squared();
        }
        total
    }
}

fn xdist2(h: f64, a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    h * acc
}

struct LloydOutcome {
    labels: Vec<usize>,
    centroids: DMatrix<f64>,
    energy: f64,
    trace: Vec<f64>,
}

/// Lloyd iterations with k-means++ seeding, X-norm distances, and
/// farthest-point repair of empty clusters. The best of `restarts` runs
/// (minimal energy, ties to the lowest restart index) is returned;
/// everything is a deterministic function of the seed.
pub fn kmeans(
    snapshots: &DMatrix<f64>,
    h: f64,
    params: &[ParameterPoint],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<Clustering, ClusterError> {
    let ns = snapshots.ncols();
    if k < 1 || k > ns {
        return Err(ClusterError::InvalidK { k, ns });
    }
    if restarts < 1 {
        return Err(ClusterError::NoRestarts);
    }
    assert_eq!(params.len(), ns, "one parameter point per snapshot");

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<LloydOutcome> = None;
    for _ in 0..restarts {
        let outcome = lloyd_once(snapshots, h, k, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => outcome.energy < b.energy,
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.unwrap();

    let mut parameter_centroids = Vec::with_capacity(k);
    for c in 0..k {
        let members: Vec<usize> = best
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect();
        let inv = 1.0 / members.len() as f64;
        let mu1 = members.iter().map(|&i| params[i].mu1).sum::<f64>() * inv;
        let mu2 = members.iter().map(|&i| params[i].mu2).sum::<f64>() * inv;
        parameter_centroids.push(ParameterPoint::new(mu1, mu2));
    }

    Ok(Clustering {
        k,
        labels: best.labels,
        state_centroids: best.centroids,
        parameter_centroids,
        energy: best.energy,
        energy_trace: best.trace,
        seed,
        restarts,
    })
}

#[allow(clippy::needless_range_loop)] // index loops couple labels, counts and columns
fn lloyd_once(snapshots: &DMatrix<f64>, h: f64, k: usize, rng: &mut ChaCha8Rng) -> LloydOutcome {
    let ns = snapshots.ncols();
    let dim = snapshots.nrows();
    let mut centroids = seed_plus_plus(snapshots, h, k, rng);
    let mut labels = vec![0usize; ns];
    let mut trace = Vec::new();
    let mut prev_energy = f64::INFINITY;

    for _iter in 0..MAX_LLOYD_ITERS {
        // Assignment, ties to the lowest cluster index.
        let mut changed = false;
        for (j, label) in labels.iter_mut().enumerate() {
            let mut best_c = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = xdist2(h, snapshots.column(j), centroids.column(c));
                if d < best_d {
                    best_d = d;
                    best_c = c;
                }
            }
            if *label != best_c {
                *label = best_c;
                changed = true;
            }
        }

        // Empty-cluster repair: hand the point farthest from its centroid
        // to the empty cluster and make it the centroid.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }

            let far = (0..ns)
                .filter(|&j| counts[labels[j]] > 1)
                .max_by(|&a, &b| {
                    let da = xdist2(h, snapshots.column(a), centroids.column(labels[a]));
                    let db = xdist2(h, snapshots.column(b), centroids.column(labels[b]));
                    da.partial_cmp(&db).unwrap().then(b.cmp(&a))
                })
                .expect("k <= ns leaves a donor point");
            counts[labels[far]] -= 1;
            labels[far] = c;
            counts[c] = 1;
            centroids.set_column(c, &snapshots.column(far).into_owned());
            changed = true;
        }

        // Update step.
        let mut sums = DMatrix::<f64>::zeros(dim, k);
        for j in 0..ns {
            let mut col = sums.column_mut(labels[j]);
            col += snapshots.column(j);
        }
        for c in 0..k {
            let mut col = sums.column_mut(c);
            col /= counts[c] as f64;
        }
        centroids = sums;

        let mut energy = 0.0;
        for j in 0..ns {
            energy += xdist2(h, snapshots.column(j), centroids.column(labels[j]));
        }
        debug_assert!(
            energy <= prev_energy * (1.0 + 1e-12) + 1e-15,
            "Lloyd energy increased: {prev_energy} -> {energy}"
        );
        trace.push(energy);
        let done = !changed;
        prev_energy = energy;
        if done {
            break;
        }
    }

    LloydOutcome {
        labels,
        centroids,
        energy: prev_energy,
        trace,
    }
}

/// k-means++ seeding: first centroid uniform, the rest sampled with
/// probability proportional to the squared distance from the chosen set.
/// When every remaining point coincides with a centroid the next one is
/// drawn uniformly from the unchosen indices.
#[allow(clippy::needless_range_loop)]
fn seed_plus_plus(
    snapshots: &DMatrix<f64>,
    h: f64,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let ns = snapshots.ncols();
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..ns));
    let mut dist2: Vec<f64> = (0..ns)
        .map(|j| xdist2(h, snapshots.column(j), snapshots.column(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = ns - 1;
            for (j, &d) in dist2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if target < d {
                    pick = j;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            let unchosen: Vec<usize> = (0..ns).filter(|j| !chosen.contains(j)).collect();
            unchosen[rng.random_range(0..unchosen.len())]
        };
        chosen.push(next);
        for j in 0..ns {
            let d = xdist2(h, snapshots.column(j), snapshots.column(next));
            if d < dist2[j] {
                dist2[j] = d;
            }
        }
    }
    DMatrix::from_columns(
        &chosen
            .iter()
            .map(|&j| snapshots.column(j).into_owned())
            .collect::<Vec<_>>(),
    )
}

/// Within-cluster energy for each candidate cluster count, the raw
/// material of an elbow plot. Reported only; energy is monotone in `k`, so
/// nothing here auto-selects a count.
pub fn elbow_report(
    snapshots: &DMatrix<f64>,
    h: f64,
    params: &[ParameterPoint],
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<Vec<(usize, f64)>, ClusterError> {
    let k_max = k_max.min(snapshots.ncols());
    (1..=k_max)
        .map(|k| kmeans(snapshots, h, params, k, seed, restarts).map(|c| (k, c.energy)))
        .collect()
}

/// Snapshot indices 4-adjacent on the `n1 x n2` sampling grid to any member
/// of `members`, excluding the members themselves. Ascending order.
pub fn grid_neighbors(n1: usize, n2: usize, members: &[usize]) -> Vec<usize> {
    let is_member = {
        let mut mask = vec![false; n1 * n2];
        for &m in members {
            mask[m] = true;
        }
        mask
    };
    let mut out = Vec::new();
    for idx in 0..n1 * n2 {
        if is_member[idx] {
            continue;
        }
        let (i1, i2) = (idx % n1, idx / n1);
        let mut adjacent = false;
        if i1 > 0 && is_member[idx - 1] {
            adjacent = true;
        }
        if i1 + 1 < n1 && is_member[idx + 1] {
            adjacent = true;
        }
        if i2 > 0 && is_member[idx - n1] {
            adjacent = true;
        }
        if i2 + 1 < n2 && is_member[idx + n1] {
            adjacent = true;
        }
        if adjacent {
            out.push(idx);
        }
    }
    out
}

/// One cluster's enriched ansatz space.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    pub basis: Basis,
    pub members: Vec<usize>,
    /// Grid neighbors whose complement entered the basis (empty without
    /// overlap).
    pub neighbors: Vec<usize>,
}

/// Per-cluster bases with the tolerances that produced them.
#[derive(Debug, Clone)]
pub struct LocalBasisSet {
    pub clusters: Vec<LocalBasis>,
    pub tol1: f64,
    pub tol2: f64,
    pub overlap: bool,
}

/// A cluster can consist entirely of trivial-branch states (numerically
/// zero); any X-orthonormal mode represents those exactly through zero
/// coefficients. The canonical stand-in is the slowest Dirichlet mode on
/// the u-block, the direction along which the branch first grows.
fn zero_cluster_basis(state_len: usize, h: f64) -> Basis {
    let n = state_len / 2;
    let mut mode = DVector::zeros(state_len);
    for i in 0..n {
        mode[i] = (std::f64::consts::PI * (i as f64 + 1.0) * h).sin();
    }
    mode /= crate::x_norm(h, &mode);
    Basis {
        modes: DMatrix::from_columns(&[mode]),
        singular_values: vec![0.0],
        energy_tol: 0.0,
        weight: h,
    }
}

/// Builds each cluster's basis. With `overlap`, member snapshots undergo a
/// first POD at `tol1`, the X-orthogonal complements of grid-neighboring
/// snapshots are appended (normalized, with the first-POD modes re-weighted
/// by their singular values so snapshot energy drives truncation), and a
/// second POD at the lower `tol2` defines the ansatz space. Without overlap
/// a single POD at `tol2` on the members is used. All-zero clusters fall
/// back to their neighbors' span (overlap) or the canonical trivial-branch
/// mode.
pub fn enrich_overlap(
    snapshots: &SnapshotSet,
    h: f64,
    clustering: &Clustering,
    tol1: f64,
    tol2: f64,
    overlap: bool,
) -> Result<LocalBasisSet, ClusterError> {
    if tol2 > tol1 {
        return Err(ClusterError::ToleranceOrder { tol1, tol2 });
    }
    let state_len = snapshots.matrix.nrows();
    let mut clusters = Vec::with_capacity(clustering.k);
    for c in 0..clustering.k {
        let members = clustering.members(c);
        let member_cols: Vec<DVector<f64>> = members
            .iter()
            .map(|&j| snapshots.matrix.column(j).into_owned())
            .collect();
        let member_mat = DMatrix::from_columns(&member_cols);

        if !overlap {
            let basis = match pod::compute_pod(&member_mat, h, tol2) {
                Ok(b) => b,
                Err(PodError::ZeroSnapshots) => zero_cluster_basis(state_len, h),
                Err(e) => return Err(e.into()),
            };
            clusters.push(LocalBasis {
                basis,
                members,
                neighbors: Vec::new(),
            });
            continue;
        }

        let first = match pod::compute_pod(&member_mat, h, tol1) {
            Ok(b) => Some(b),
            Err(PodError::ZeroSnapshots) => None,
            Err(e) => return Err(e.into()),
        };
        let neighbors = grid_neighbors(snapshots.n1, snapshots.n2, &members);
        let mut enriched_cols: Vec<DVector<f64>> = match &first {
            Some(b) => (0..b.len()).map(|i| b.singular_values[i] * b.mode(i)).collect(),
            None => Vec::new(),
        };
        let mut used_neighbors = Vec::new();
        for &nb in &neighbors {
            let s = snapshots.matrix.column(nb).into_owned();
            let mut r = match &first {
                Some(b) => &s - pod::project_onto_span(b, &s),
                None => s,
            };
            let norm = crate::x_norm(h, &r);
            if norm > RESIDUAL_CUTOFF {
                r /= norm;
                enriched_cols.push(r);
                used_neighbors.push(nb);
            }
        }
        let basis = if enriched_cols.is_empty() {
            zero_cluster_basis(state_len, h)
        } else {
            let enriched_mat = DMatrix::from_columns(&enriched_cols);
            match pod::compute_pod(&enriched_mat, h, tol2) {
                Ok(b) => b,
                Err(PodError::ZeroSnapshots) => zero_cluster_basis(state_len, h),
                Err(e) => return Err(e.into()),
            }
        };
        clusters.push(LocalBasis {
            basis,
            members,
            neighbors: used_neighbors,
        });
    }
    Ok(LocalBasisSet {
        clusters,
        tol1,
        tol2,
        overlap,
    })
}
