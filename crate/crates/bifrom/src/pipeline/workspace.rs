//! Workspace lifecycle: a directory of artifacts keyed to one
//! configuration, with a plain-text manifest of completed stages.
//!
//! Stages only consume artifacts whose completion flags are set and whose
//! files exist, so deleting a downstream artifact never invalidates
//! upstream ones; re-running a stage regenerates exactly what is missing.
//! All artifact bytes are deterministic functions of (config, seed).

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::ann::{self, Mlp, OutputMode};
use crate::cluster::{self, Clustering, LocalBasis, LocalBasisSet};
use crate::eval;
use crate::fom::{self, ParameterPoint, SnapshotMeta, SnapshotSet};
use crate::pod::Basis;
use crate::podnn::{self, PodNnModel, PodNnOptions};
use crate::rom::{self, LocalRomSet, ReducedOperators, SolverChoice, Trilinear};
use crate::select::{self, Criterion, ErrorTable, SelectorData};

use super::config::{ConfigError, RomSolverKind, RunConfig};
use super::matrix_file::{self, MatrixFileError};

pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("workspace {0} holds artifacts for a different configuration (hash mismatch)")]
    ConfigHashMismatch(String),
    #[error("workspace {0} has unsupported format version {1}")]
    FormatVersion(String, String),
    #[error("workspace is locked by another writer (remove {0} if stale)")]
    Locked(String),
    #[error("missing artifact: {0}; run the producing stage first")]
    MissingArtifact(String),
    #[error("artifact {path} is inconsistent: {reason}")]
    CorruptArtifact { path: String, reason: String },
    #[error(transparent)]
    MatrixFile(#[from] MatrixFileError),
    #[error(transparent)]
    Fom(#[from] fom::FomError),
    #[error(transparent)]
    Cluster(#[from] cluster::ClusterError),
    #[error(transparent)]
    Pod(#[from] crate::pod::PodError),
    #[error(transparent)]
    Ann(#[from] ann::AnnError),
    #[error(transparent)]
    PodNn(#[from] podnn::PodNnError),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl WorkspaceError {
    /// CLI exit code: 2 configuration, 3 convergence, 4 missing artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            WorkspaceError::MissingArtifact(_) => 4,
            WorkspaceError::Fom(
                fom::FomError::NonFinite { .. }
                | fom::FomError::NoConvergence { .. }
                | fom::FomError::SnapshotFailure { .. },
            ) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> WorkspaceError + '_ {
    move |source| WorkspaceError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Exclusive-writer guard; the lock file disappears on drop.
pub struct WorkspaceLock {
    path: PathBuf,
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Workspace {
    root: PathBuf,
    pub config: RunConfig,
    manifest: BTreeMap<String, String>,
}

impl Workspace {
    /// Opens an existing workspace (verifying format version and config
    /// hash) or creates a fresh one.
    pub fn open_or_create(root: &Path, config: RunConfig) -> Result<Self, WorkspaceError> {
        config.validate()?;
        fs::create_dir_all(root).map_err(io_err(root))?;
        let manifest_path = root.join("manifest.txt");
        let mut manifest = BTreeMap::new();
        if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
            for line in text.lines() {
                if let Some((k, v)) = line.split_once('=') {
                    manifest.insert(k.to_string(), v.to_string());
                }
            }
            let version = manifest
                .get("format_version")
                .cloned()
                .unwrap_or_default();
            if version != FORMAT_VERSION {
                return Err(WorkspaceError::FormatVersion(
                    root.display().to_string(),
                    version,
                ));
            }
            if manifest.get("config_hash") != Some(&config.hash()) {
                return Err(WorkspaceError::ConfigHashMismatch(
                    root.display().to_string(),
                ));
            }
        } else {
            manifest.insert("format_version".into(), FORMAT_VERSION.into());
            manifest.insert("config_hash".into(), config.hash());
            manifest.insert("seed".into(), config.seed.to_string());
        }
        let ws = Self {
            root: root.to_path_buf(),
            config,
            manifest,
        };
        ws.write_manifest()?;
        let config_path = ws.root.join("config.txt");
        fs::write(&config_path, ws.config.canonical()).map_err(io_err(&config_path))?;
        Ok(ws)
    }

    /// Takes the single-writer lock.
    pub fn lock(&self) -> Result<WorkspaceLock, WorkspaceError> {
        let path = self.root.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(WorkspaceLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(WorkspaceError::Locked(path.display().to_string()))
            }
            Err(e) => Err(io_err(&path)(e)),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_manifest(&self) -> Result<(), WorkspaceError> {
        let path = self.root.join("manifest.txt");
        let mut out = String::new();
        for (k, v) in &self.manifest {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        fs::write(&path, out).map_err(io_err(&path))
    }

    fn mark_stage(&mut self, stage: &str) -> Result<(), WorkspaceError> {
        self.manifest
            .insert(format!("stage_{stage}"), "1".to_string());
        self.write_manifest()
    }

    fn stage_files(&self, stage: &str) -> Vec<PathBuf> {
        let net_files = |tag: &str| -> Vec<PathBuf> {
            let mut v = vec![self.path(&format!("net_{tag}_info.txt"))];
            for l in 0..3 {
                v.push(self.path(&format!("net_{tag}_w{l}.mat")));
                v.push(self.path(&format!("net_{tag}_b{l}.mat")));
            }
            v
        };
        match stage {
            "snapshots" => vec![self.path("snapshots.mat"), self.path("snapshots_meta.mat")],
            "reference" => vec![self.path("reference.mat"), self.path("reference_meta.mat")],
            "global" => vec![
                self.path("global_basis.mat"),
                self.path("global_sv.mat"),
                self.path("global_adiff.mat"),
                self.path("global_areact.mat"),
                self.path("global_adecay.mat"),
                self.path("global_tensor.mat"),
            ],
            "local" => {
                let mut v = vec![
                    self.path("labels.mat"),
                    self.path("state_centroids.mat"),
                    self.path("param_centroids.mat"),
                    self.path("error_table.mat"),
                    self.path("error_table_flags.mat"),
                ];
                for k in 0..self.config.kmeans_k {
                    for suffix in [
                        "basis", "sv", "members", "neighbors", "adiff", "areact", "adecay",
                        "tensor",
                    ] {
                        v.push(self.path(&format!("local{k}_{suffix}.mat")));
                    }
                }
                v
            }
            "criterion_classifier" => net_files("classifier"),
            "criterion_regression" => net_files("regression"),
            "criterion_regression_independent" => (0..self.config.kmeans_k)
                .flat_map(|k| net_files(&format!("regression_independent_{k}")))
                .collect(),
            "podnn" => {
                let mut v = vec![
                    self.path("podnn_basis.mat"),
                    self.path("podnn_sv.mat"),
                    self.path("podnn_mean.mat"),
                    self.path("podnn_std.mat"),
                ];
                v.extend(net_files("podnn"));
                v
            }
            _ => Vec::new(),
        }
    }

    /// A stage is ready when its flag is set and every file still exists.
    pub fn stage_ready(&self, stage: &str) -> bool {
        self.manifest.get(&format!("stage_{stage}")) == Some(&"1".to_string())
            && self.stage_files(stage).iter().all(|p| p.exists())
    }

    fn require_stage(&self, stage: &str) -> Result<(), WorkspaceError> {
        if self.stage_ready(stage) {
            Ok(())
        } else {
            Err(WorkspaceError::MissingArtifact(stage.to_string()))
        }
    }

    pub fn solver_choice(&self) -> SolverChoice {
        match self.config.rom_solver {
            RomSolverKind::Newton => SolverChoice::Newton,
            RomSolverKind::FixedPoint => SolverChoice::FixedPoint {
                dt: self.config.dt,
                tol: self.config.tol,
                max_steps: self.config.max_steps,
            },
        }
    }

    // ---- snapshot stages ------------------------------------------------

    fn save_snapshot_set(&self, prefix: &str, set: &SnapshotSet) -> Result<(), WorkspaceError> {
        matrix_file::save_matrix(&self.path(&format!("{prefix}.mat")), &set.matrix)?;
        let meta = DMatrix::from_fn(set.len(), 3, |j, c| match c {
            0 => set.meta[j].steps as f64,
            1 => f64::from(u8::from(set.meta[j].converged)),
            _ => set.meta[j].final_increment,
        });
        matrix_file::save_matrix(&self.path(&format!("{prefix}_meta.mat")), &meta)?;
        Ok(())
    }

    fn load_snapshot_set(
        &self,
        prefix: &str,
        n1: usize,
        n2: usize,
    ) -> Result<SnapshotSet, WorkspaceError> {
        let matrix = matrix_file::load_matrix(&self.path(&format!("{prefix}.mat")))?;
        let meta_mat = matrix_file::load_matrix(&self.path(&format!("{prefix}_meta.mat")))?;
        let params = fom::tensor_grid(&self.config.fom_config(), n1, n2);
        if matrix.ncols() != params.len() || meta_mat.nrows() != params.len() {
            return Err(WorkspaceError::CorruptArtifact {
                path: format!("{prefix}.mat"),
                reason: format!(
                    "expected {} columns for the {n1}x{n2} grid, found {}",
                    params.len(),
                    matrix.ncols()
                ),
            });
        }
        let meta = (0..params.len())
            .map(|j| SnapshotMeta {
                steps: meta_mat[(j, 0)] as usize,
                converged: meta_mat[(j, 1)] != 0.0,
                final_increment: meta_mat[(j, 2)],
            })
            .collect();
        Ok(SnapshotSet {
            n1,
            n2,
            params,
            matrix,
            meta,
            seed: self.config.seed,
        })
    }

    pub fn run_snapshots(&mut self) -> Result<(), WorkspaceError> {
        if self.stage_ready("snapshots") {
            return Ok(());
        }
        let cfg = self.config.fom_config();
        let set = fom::generate_snapshots(&cfg, self.config.snap_n1, self.config.snap_n2, self.config.seed)?;
        self.save_snapshot_set("snapshots", &set)?;
        self.mark_stage("snapshots")
    }

    pub fn run_reference(&mut self) -> Result<(), WorkspaceError> {
        if self.stage_ready("reference") {
            return Ok(());
        }
        let cfg = self.config.fom_config();
        let set = fom::generate_snapshots(&cfg, self.config.ref_n1, self.config.ref_n2, self.config.seed)?;
        self.save_snapshot_set("reference", &set)?;
        self.mark_stage("reference")
    }

    pub fn load_snapshots(&self) -> Result<SnapshotSet, WorkspaceError> {
        self.require_stage("snapshots")?;
        self.load_snapshot_set("snapshots", self.config.snap_n1, self.config.snap_n2)
    }

    pub fn load_reference(&self) -> Result<SnapshotSet, WorkspaceError> {
        self.require_stage("reference")?;
        self.load_snapshot_set("reference", self.config.ref_n1, self.config.ref_n2)
    }

    // ---- basis and operator persistence ---------------------------------

    fn save_reduced(&self, prefix: &str, ops: &ReducedOperators) -> Result<(), WorkspaceError> {
        matrix_file::save_matrix(&self.path(&format!("{prefix}_basis.mat")), &ops.basis.modes)?;
        matrix_file::save_vector(
            &self.path(&format!("{prefix}_sv.mat")),
            &DVector::from_vec(ops.basis.singular_values.clone()),
        )?;
        matrix_file::save_matrix(&self.path(&format!("{prefix}_adiff.mat")), &ops.a_diff)?;
        matrix_file::save_matrix(&self.path(&format!("{prefix}_areact.mat")), &ops.a_react)?;
        matrix_file::save_matrix(&self.path(&format!("{prefix}_adecay.mat")), &ops.a_decay)?;
        matrix_file::save_matrix(&self.path(&format!("{prefix}_tensor.mat")), &ops.tensor.to_matrix())?;
        Ok(())
    }

    fn load_reduced(&self, prefix: &str, energy_tol: f64) -> Result<ReducedOperators, WorkspaceError> {
        let modes = matrix_file::load_matrix(&self.path(&format!("{prefix}_basis.mat")))?;
        let sv = matrix_file::load_vector(&self.path(&format!("{prefix}_sv.mat")))?;
        let basis = Basis {
            modes,
            singular_values: sv.iter().cloned().collect(),
            energy_tol,
            weight: self.config.fom_config().mesh_width(),
        };
        Ok(ReducedOperators {
            basis,
            a_diff: matrix_file::load_matrix(&self.path(&format!("{prefix}_adiff.mat")))?,
            a_react: matrix_file::load_matrix(&self.path(&format!("{prefix}_areact.mat")))?,
            a_decay: matrix_file::load_matrix(&self.path(&format!("{prefix}_adecay.mat")))?,
            tensor: Trilinear::from_matrix(&matrix_file::load_matrix(
                &self.path(&format!("{prefix}_tensor.mat")),
            )?),
        })
    }

    pub fn build_global(&mut self) -> Result<(), WorkspaceError> {
        if self.stage_ready("global") {
            return Ok(());
        }
        let snapshots = self.load_snapshots()?;
        let cfg = self.config.fom_config();
        let ops = fom::assemble_operators(&cfg)?;
        let basis = crate::pod::compute_pod(
            &snapshots.matrix,
            cfg.mesh_width(),
            self.config.pod_energy_tol,
        )?;
        let reduced = rom::assemble_reduced(&basis, &ops);
        self.save_reduced("global", &reduced)?;
        self.mark_stage("global")
    }

    pub fn load_global(&self) -> Result<ReducedOperators, WorkspaceError> {
        self.require_stage("global")?;
        self.load_reduced("global", self.config.pod_energy_tol)
    }

    // ---- local stage -----------------------------------------------------

    pub fn build_local(&mut self) -> Result<(), WorkspaceError> {
        if self.stage_ready("local") {
            return Ok(());
        }
        let snapshots = self.load_snapshots()?;
        let cfg = self.config.fom_config();
        let ops = fom::assemble_operators(&cfg)?;
        let h = cfg.mesh_width();
        let clustering = cluster::kmeans(
            &snapshots.matrix,
            h,
            &snapshots.params,
            self.config.kmeans_k,
            self.config.seed,
            self.config.kmeans_restarts,
        )?;
        let bases = cluster::enrich_overlap(
            &snapshots,
            h,
            &clustering,
            self.config.local_tol1,
            self.config.local_tol2,
            self.config.overlap,
        )?;
        let local = rom::assemble_local_roms(&bases, &clustering, &ops);
        let table = select::build_error_table(&local, &snapshots);

        // Diagnostic elbow curve; never drives the cluster count.
        let elbow = cluster::elbow_report(
            &snapshots.matrix,
            h,
            &snapshots.params,
            (2 * self.config.kmeans_k).min(snapshots.len()),
            self.config.seed,
            self.config.kmeans_restarts,
        )?;
        let elbow_path = self.path("elbow.csv");
        let mut out = String::from("k,energy\n");
        for (k, energy) in &elbow {
            out.push_str(&format!("{k},{energy}\n"));
        }
        fs::write(&elbow_path, out).map_err(io_err(&elbow_path))?;

        matrix_file::save_matrix(
            &self.path("labels.mat"),
            &DMatrix::from_fn(clustering.labels.len(), 1, |i, _| clustering.labels[i] as f64),
        )?;
        matrix_file::save_matrix(&self.path("state_centroids.mat"), &clustering.state_centroids)?;
        matrix_file::save_matrix(
            &self.path("param_centroids.mat"),
            &DMatrix::from_fn(clustering.k, 2, |k, c| {
                if c == 0 {
                    clustering.parameter_centroids[k].mu1
                } else {
                    clustering.parameter_centroids[k].mu2
                }
            }),
        )?;
        for (k, (cl, reduced)) in bases.clusters.iter().zip(&local.roms).enumerate() {
            self.save_reduced(&format!("local{k}"), reduced)?;
            matrix_file::save_matrix(
                &self.path(&format!("local{k}_members.mat")),
                &DMatrix::from_fn(cl.members.len(), 1, |i, _| cl.members[i] as f64),
            )?;
            matrix_file::save_matrix(
                &self.path(&format!("local{k}_neighbors.mat")),
                &DMatrix::from_fn(cl.neighbors.len(), 1, |i, _| cl.neighbors[i] as f64),
            )?;
        }
        matrix_file::save_matrix(&self.path("error_table.mat"), &table.values)?;
        matrix_file::save_matrix(
            &self.path("error_table_flags.mat"),
            &DMatrix::from_fn(table.ns(), table.k(), |i, k| {
                f64::from(u8::from(table.flag(i, k)))
            }),
        )?;
        self.mark_stage("local")
    }

    pub fn load_local(&self) -> Result<(LocalRomSet, ErrorTable), WorkspaceError> {
        self.require_stage("local")?;
        let snapshots = self.load_snapshots()?;
        let h = self.config.fom_config().mesh_width();
        let k = self.config.kmeans_k;

        let labels_mat = matrix_file::load_matrix(&self.path("labels.mat"))?;
        let labels: Vec<usize> = (0..labels_mat.nrows()).map(|i| labels_mat[(i, 0)] as usize).collect();
        let state_centroids = matrix_file::load_matrix(&self.path("state_centroids.mat"))?;
        let pc = matrix_file::load_matrix(&self.path("param_centroids.mat"))?;
        let parameter_centroids = (0..k)
            .map(|i| ParameterPoint::new(pc[(i, 0)], pc[(i, 1)]))
            .collect();
        let mut clustering = Clustering {
            k,
            labels,
            state_centroids,
            parameter_centroids,
            energy: 0.0,
            energy_trace: Vec::new(),
            seed: self.config.seed,
            restarts: self.config.kmeans_restarts,
        };
        clustering.energy = clustering.recompute_energy(&snapshots.matrix, h);

        let mut roms = Vec::with_capacity(k);
        let mut clusters = Vec::with_capacity(k);
        for c in 0..k {
            let reduced = self.load_reduced(&format!("local{c}"), self.config.local_tol2)?;
            let members_mat = matrix_file::load_matrix(&self.path(&format!("local{c}_members.mat")))?;
            let neighbors_mat =
                matrix_file::load_matrix(&self.path(&format!("local{c}_neighbors.mat")))?;
            clusters.push(LocalBasis {
                basis: reduced.basis.clone(),
                members: (0..members_mat.nrows()).map(|i| members_mat[(i, 0)] as usize).collect(),
                neighbors: (0..neighbors_mat.nrows())
                    .map(|i| neighbors_mat[(i, 0)] as usize)
                    .collect(),
            });
            roms.push(reduced);
        }
        let bases = LocalBasisSet {
            clusters,
            tol1: self.config.local_tol1,
            tol2: self.config.local_tol2,
            overlap: self.config.overlap,
        };
        let local = LocalRomSet {
            roms,
            clustering,
            bases,
        };

        let values = matrix_file::load_matrix(&self.path("error_table.mat"))?;
        let flags_mat = matrix_file::load_matrix(&self.path("error_table_flags.mat"))?;
        let converged = (0..flags_mat.nrows())
            .flat_map(|i| (0..flags_mat.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| flags_mat[(i, j)] != 0.0)
            .collect();
        Ok((local, ErrorTable { values, converged }))
    }

    // ---- network persistence ---------------------------------------------

    fn save_net(&self, tag: &str, net: &Mlp) -> Result<(), WorkspaceError> {
        let info_path = self.path(&format!("net_{tag}_info.txt"));
        let dims: Vec<String> = net.layer_dims.iter().map(|d| d.to_string()).collect();
        let mode = match net.output {
            OutputMode::Softmax => "softmax",
            OutputMode::Linear => "linear",
        };
        let mut file = fs::File::create(&info_path).map_err(io_err(&info_path))?;
        writeln!(file, "layer_dims={}", dims.join("x")).map_err(io_err(&info_path))?;
        writeln!(file, "output={mode}").map_err(io_err(&info_path))?;
        for (l, (w, b)) in net.weights.iter().zip(&net.biases).enumerate() {
            matrix_file::save_matrix(&self.path(&format!("net_{tag}_w{l}.mat")), w)?;
            matrix_file::save_vector(&self.path(&format!("net_{tag}_b{l}.mat")), b)?;
        }
        Ok(())
    }

    fn load_net(&self, tag: &str) -> Result<Mlp, WorkspaceError> {
        let info_path = self.path(&format!("net_{tag}_info.txt"));
        let text = fs::read_to_string(&info_path).map_err(io_err(&info_path))?;
        let mut layer_dims = Vec::new();
        let mut output = OutputMode::Linear;
        for line in text.lines() {
            if let Some(v) = line.strip_prefix("layer_dims=") {
                layer_dims = v
                    .split('x')
                    .map(|d| d.parse().unwrap_or(0))
                    .collect();
            }
            if let Some(v) = line.strip_prefix("output=") {
                output = if v == "softmax" {
                    OutputMode::Softmax
                } else {
                    OutputMode::Linear
                };
            }
        }
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(WorkspaceError::CorruptArtifact {
                path: info_path.display().to_string(),
                reason: "bad layer_dims".into(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let w = matrix_file::load_matrix(&self.path(&format!("net_{tag}_w{l}.mat")))?;
            let b = matrix_file::load_vector(&self.path(&format!("net_{tag}_b{l}.mat")))?;
            if w.nrows() != layer_dims[l + 1] || w.ncols() != layer_dims[l] || b.len() != layer_dims[l + 1] {
                return Err(WorkspaceError::CorruptArtifact {
                    path: format!("net_{tag}_w{l}.mat"),
                    reason: "shape disagrees with layer_dims".into(),
                });
            }
            weights.push(w);
            biases.push(b);
        }
        Ok(Mlp {
            layer_dims,
            weights,
            biases,
            output,
        })
    }

    // ---- criterion stages --------------------------------------------------

    fn normalized_inputs(&self, snapshots: &SnapshotSet) -> DMatrix<f64> {
        let cfg = self.config.fom_config();
        DMatrix::from_fn(2, snapshots.len(), |i, j| cfg.normalize_param(snapshots.params[j])[i])
    }

    /// Trains and persists the artifacts behind a named criterion (no-op
    /// for the purely geometric ones).
    pub fn build_criterion(&mut self, name: &str) -> Result<(), WorkspaceError> {
        match name {
            "centroid" | "closest-snapshot" | "next-best" | "oracle" => Ok(()),
            "classifier" => {
                if self.stage_ready("criterion_classifier") {
                    return Ok(());
                }
                let snapshots = self.load_snapshots()?;
                let (local, _) = self.load_local()?;
                let inputs = self.normalized_inputs(&snapshots);
                let dims = [
                    2,
                    self.config.ann_hidden1,
                    self.config.ann_hidden2,
                    self.config.kmeans_k,
                ];
                let train = self.config.train_config(ann::Loss::CrossEntropy, 1);
                let trained =
                    ann::train_classifier(&inputs, &local.clustering.labels, &dims, &train)?;
                if !trained.perfect_match {
                    eprintln!(
                        "warning: classifier finished at {:.1}% training accuracy without a perfect match",
                        100.0 * trained.accuracy
                    );
                }
                self.save_net("classifier", &trained.net)?;
                self.mark_stage("criterion_classifier")
            }
            "regression" => {
                if self.stage_ready("criterion_regression") {
                    return Ok(());
                }
                let snapshots = self.load_snapshots()?;
                let (_, table) = self.load_local()?;
                let inputs = self.normalized_inputs(&snapshots);
                let targets = select::regression_targets(&table).transpose();
                let dims = [
                    2,
                    self.config.ann_hidden1,
                    self.config.ann_hidden2,
                    self.config.kmeans_k,
                ];
                let train = self.config.train_config(ann::Loss::MeanSquaredError, 2);
                let fit = ann::train_regressor(&inputs, &targets, &dims, &train)?;
                self.save_net("regression", &fit.net)?;
                self.mark_stage("criterion_regression")
            }
            "regression-independent" => {
                if self.stage_ready("criterion_regression_independent") {
                    return Ok(());
                }
                let snapshots = self.load_snapshots()?;
                let (_, table) = self.load_local()?;
                let inputs = self.normalized_inputs(&snapshots);
                let targets = select::regression_targets(&table);
                let dims = [2, self.config.ann_hidden1, self.config.ann_hidden2, 1];
                for k in 0..self.config.kmeans_k {
                    let column = DMatrix::from_fn(1, table.ns(), |_, i| targets[(i, k)]);
                    let train = self
                        .config
                        .train_config(ann::Loss::MeanSquaredError, 3 + k as u64);
                    let fit = ann::train_regressor(&inputs, &column, &dims, &train)?;
                    self.save_net(&format!("regression_independent_{k}"), &fit.net)?;
                }
                self.mark_stage("criterion_regression_independent")
            }
            other => Err(WorkspaceError::Config(ConfigError::Invalid(format!(
                "unknown criterion {other:?}"
            )))),
        }
    }

    /// Loads a criterion by name, computing the oracle labels on demand.
    pub fn load_criterion(&self, name: &str) -> Result<Criterion, WorkspaceError> {
        match name {
            "centroid" => Ok(Criterion::ParameterCentroid),
            "closest-snapshot" => Ok(Criterion::ClosestSnapshot),
            "next-best" => {
                let (_, table) = self.load_local()?;
                Ok(Criterion::NextBestApproxSnapshot(table))
            }
            "classifier" => {
                self.require_stage("criterion_classifier")?;
                Ok(Criterion::ClassifierAnn(self.load_net("classifier")?))
            }
            "regression" => {
                self.require_stage("criterion_regression")?;
                Ok(Criterion::RegressionAnnJoint(self.load_net("regression")?))
            }
            "regression-independent" => {
                self.require_stage("criterion_regression_independent")?;
                let nets = (0..self.config.kmeans_k)
                    .map(|k| self.load_net(&format!("regression_independent_{k}")))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Criterion::RegressionAnnIndependent(nets))
            }
            "oracle" => {
                let reference = self.load_reference()?;
                let snapshots = self.load_snapshots()?;
                let (local, _) = self.load_local()?;
                let cfg = self.config.fom_config();
                let labels = select::oracle_selection(
                    &cfg,
                    self.solver_choice(),
                    &local,
                    &snapshots,
                    &reference,
                );
                Ok(select::oracle_criterion(&cfg, &reference, labels))
            }
            other => Err(WorkspaceError::Config(ConfigError::Invalid(format!(
                "unknown criterion {other:?}"
            )))),
        }
    }

    // ---- podnn stage -------------------------------------------------------

    pub fn build_podnn(&mut self) -> Result<(), WorkspaceError> {
        if self.stage_ready("podnn") {
            return Ok(());
        }
        let snapshots = self.load_snapshots()?;
        let cfg = self.config.fom_config();
        let options = PodNnOptions {
            energy_tol: self.config.pod_energy_tol,
            hidden: [self.config.ann_hidden1, self.config.ann_hidden2],
            validation_fraction: self.config.podnn_validation_fraction,
        };
        let train = self.config.train_config(ann::Loss::MeanSquaredError, 11);
        let model = podnn::build_podnn(&cfg, &snapshots, &options, &train)?;
        matrix_file::save_matrix(&self.path("podnn_basis.mat"), &model.basis.modes)?;
        matrix_file::save_vector(
            &self.path("podnn_sv.mat"),
            &DVector::from_vec(model.basis.singular_values.clone()),
        )?;
        matrix_file::save_vector(&self.path("podnn_mean.mat"), &model.coeff_mean)?;
        matrix_file::save_vector(&self.path("podnn_std.mat"), &model.coeff_std)?;
        self.save_net("podnn", &model.net)?;
        self.mark_stage("podnn")
    }

    pub fn load_podnn(&self) -> Result<PodNnModel, WorkspaceError> {
        self.require_stage("podnn")?;
        let modes = matrix_file::load_matrix(&self.path("podnn_basis.mat"))?;
        let sv = matrix_file::load_vector(&self.path("podnn_sv.mat"))?;
        let basis = Basis {
            modes,
            singular_values: sv.iter().cloned().collect(),
            energy_tol: self.config.pod_energy_tol,
            weight: self.config.fom_config().mesh_width(),
        };
        Ok(PodNnModel {
            basis,
            coeff_mean: matrix_file::load_vector(&self.path("podnn_mean.mat"))?,
            coeff_std: matrix_file::load_vector(&self.path("podnn_std.mat"))?,
            net: self.load_net("podnn")?,
            final_loss: f64::NAN,
            loss_history: Vec::new(),
            validation_loss: None,
        })
    }

    // ---- evaluation ---------------------------------------------------------

    /// Evaluates a method tag over the reference grid and writes
    /// `diagram.csv`.
    pub fn evaluate(&self, method: &str, criterion: Option<&str>) -> Result<(), WorkspaceError> {
        let cfg = self.config.fom_config();
        let (n1, n2) = (self.config.ref_n1, self.config.ref_n2);
        let solver = self.solver_choice();
        let diagram = match method {
            "reference" => {
                let reference = self.load_reference()?;
                eval::bifurcation_diagram(&cfg, solver, &eval::Method::Reference(&reference), n1, n2)
            }
            "global" => {
                let snapshots = self.load_snapshots()?;
                let rom = self.load_global()?;
                eval::bifurcation_diagram(
                    &cfg,
                    solver,
                    &eval::Method::Global {
                        rom: &rom,
                        snapshots: &snapshots,
                    },
                    n1,
                    n2,
                )
            }
            "local" => {
                let snapshots = self.load_snapshots()?;
                let (local, _) = self.load_local()?;
                let criterion = self.load_criterion(criterion.unwrap_or("regression"))?;
                let data = SelectorData::new(&cfg, &snapshots, &local.clustering);
                eval::bifurcation_diagram(
                    &cfg,
                    solver,
                    &eval::Method::Local {
                        set: &local,
                        snapshots: &snapshots,
                        selector: &data,
                        criterion: &criterion,
                    },
                    n1,
                    n2,
                )
            }
            "podnn" => {
                let model = self.load_podnn()?;
                eval::bifurcation_diagram(&cfg, solver, &eval::Method::PodNn(&model), n1, n2)
            }
            other => {
                return Err(WorkspaceError::Config(ConfigError::Invalid(format!(
                    "unknown method {other:?}"
                ))))
            }
        };
        let path = self.path("diagram.csv");
        eval::write_diagram_csv(&diagram, &path).map_err(io_err(&path))?;
        Ok(())
    }

    /// Compares every built method over the reference set; emits
    /// `errors.csv` and per-point files.
    pub fn compare(&self) -> Result<Vec<eval::MethodReport>, WorkspaceError> {
        let cfg = self.config.fom_config();
        let reference = self.load_reference()?;
        let snapshots = self.load_snapshots()?;
        let solver = self.solver_choice();
        let samples = snapshots.len();

        let global = if self.stage_ready("global") {
            Some(self.load_global()?)
        } else {
            None
        };
        let local = if self.stage_ready("local") {
            Some(self.load_local()?.0)
        } else {
            None
        };
        let data = local
            .as_ref()
            .map(|l| SelectorData::new(&cfg, &snapshots, &l.clustering));
        let podnn = if self.stage_ready("podnn") {
            Some(self.load_podnn()?)
        } else {
            None
        };

        let mut criteria: Vec<Criterion> = Vec::new();
        if local.is_some() {
            for name in [
                "centroid",
                "closest-snapshot",
                "next-best",
                "classifier",
                "regression",
                "regression-independent",
                "oracle",
            ] {
                match self.load_criterion(name) {
                    Ok(c) => criteria.push(c),
                    Err(WorkspaceError::MissingArtifact(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }

        let mut methods: Vec<(eval::Method, usize)> = Vec::new();
        if let Some(rom) = &global {
            methods.push((
                eval::Method::Global {
                    rom,
                    snapshots: &snapshots,
                },
                samples,
            ));
        }
        if let (Some(set), Some(data)) = (&local, &data) {
            for criterion in &criteria {
                methods.push((
                    eval::Method::Local {
                        set,
                        snapshots: &snapshots,
                        selector: data,
                        criterion,
                    },
                    samples,
                ));
            }
        }
        if let Some(model) = &podnn {
            methods.push((eval::Method::PodNn(model), samples));
        }
        if methods.is_empty() {
            return Err(WorkspaceError::MissingArtifact(
                "no built methods to compare (run build first)".into(),
            ));
        }

        let reports = eval::compare_methods(&cfg, solver, &methods, &reference, self.config.error_field);
        let errors_path = self.path("errors.csv");
        eval::write_errors_csv(&reports, &errors_path).map_err(io_err(&errors_path))?;
        for report in &reports {
            let name = format!("method_{}_points.csv", report.method);
            let path = self.path(&name);
            eval::write_points_csv(report, &reference, &path).map_err(io_err(&path))?;
        }
        Ok(reports)
    }
}
