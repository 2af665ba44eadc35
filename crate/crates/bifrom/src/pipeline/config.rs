//! Run configuration: UTF-8 `key=value` lines, unknown keys rejected, with
//! a stable content hash that pins workspace artifacts to the settings that
//! produced them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::ann::TrainConfig;
use crate::eval::ErrorField;
use crate::fom::FomConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key}: cannot parse {value:?}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Reduced steady solver selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RomSolverKind {
    Newton,
    FixedPoint,
}

/// Everything the pipeline needs, with the defaults of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub n_interior: usize,
    pub mu1_min: f64,
    pub mu1_max: f64,
    pub mu2_min: f64,
    pub mu2_max: f64,
    pub dt: f64,
    pub tol: f64,
    pub max_steps: usize,
    pub bias_amplitude: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub snap_n1: usize,
    pub snap_n2: usize,
    pub ref_n1: usize,
    pub ref_n2: usize,
    pub kmeans_k: usize,
    pub kmeans_restarts: usize,
    pub pod_energy_tol: f64,
    pub local_tol1: f64,
    pub local_tol2: f64,
    pub overlap: bool,
    pub ann_hidden1: usize,
    pub ann_hidden2: usize,
    pub ann_learning_rate: f64,
    pub ann_epochs_per_round: usize,
    pub ann_max_rounds: usize,
    pub ann_plateau_tol: f64,
    pub rom_solver: RomSolverKind,
    pub error_field: ErrorField,
    pub podnn_validation_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fom = FomConfig::default();
        Self {
            seed: 0,
            n_interior: fom.n_interior,
            mu1_min: fom.mu1_min,
            mu1_max: fom.mu1_max,
            mu2_min: fom.mu2_min,
            mu2_max: fom.mu2_max,
            dt: fom.dt,
            tol: fom.tol,
            max_steps: fom.max_steps,
            bias_amplitude: fom.bias_amplitude,
            newton_tol: fom.newton_tol,
            newton_max_iter: fom.newton_max_iter,
            snap_n1: 8,
            snap_n2: 9,
            ref_n1: 40,
            ref_n2: 41,
            kmeans_k: 8,
            kmeans_restarts: 8,
            pod_energy_tol: 1e-6,
            local_tol1: 1e-4,
            local_tol2: 1e-6,
            overlap: true,
            ann_hidden1: 2048,
            ann_hidden2: 1024,
            ann_learning_rate: 1e-3,
            ann_epochs_per_round: 500,
            ann_max_rounds: 20,
            ann_plateau_tol: 1e-10,
            rom_solver: RomSolverKind::Newton,
            error_field: ErrorField::UField,
            podnn_validation_fraction: 0.0,
        }
    }
}

impl RunConfig {
    /// Parses `key=value` lines; blank lines and `#` comments are skipped,
    /// unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax {
                line: idx + 1,
                text: raw.to_string(),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value.parse().map_err(|e: T::Err| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: e.to_string(),
            })
        }
        let bad = |key: &str, value: &str, reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "seed" => self.seed = parse(key, value)?,
            "n_interior" => self.n_interior = parse(key, value)?,
            "mu1_min" => self.mu1_min = parse(key, value)?,
            "mu1_max" => self.mu1_max = parse(key, value)?,
            "mu2_min" => self.mu2_min = parse(key, value)?,
            "mu2_max" => self.mu2_max = parse(key, value)?,
            "dt" => self.dt = parse(key, value)?,
            "tol" => self.tol = parse(key, value)?,
            "max_steps" => self.max_steps = parse(key, value)?,
            "bias_amplitude" => self.bias_amplitude = parse(key, value)?,
            "newton_tol" => self.newton_tol = parse(key, value)?,
            "newton_max_iter" => self.newton_max_iter = parse(key, value)?,
            "snap_n1" => self.snap_n1 = parse(key, value)?,
            "snap_n2" => self.snap_n2 = parse(key, value)?,
            "ref_n1" => self.ref_n1 = parse(key, value)?,
            "ref_n2" => self.ref_n2 = parse(key, value)?,
            "kmeans_k" => self.kmeans_k = parse(key, value)?,
            "kmeans_restarts" => self.kmeans_restarts = parse(key, value)?,
            "pod_energy_tol" => self.pod_energy_tol = parse(key, value)?,
            "local_tol1" => self.local_tol1 = parse(key, value)?,
            "local_tol2" => self.local_tol2 = parse(key, value)?,
            "overlap" => {
                self.overlap = match value {
                    "on" | "true" | "1" => true,
                    "off" | "false" | "0" => false,
                    _ => return Err(bad(key, value, "expected on|off")),
                }
            }
            "ann_hidden1" => self.ann_hidden1 = parse(key, value)?,
            "ann_hidden2" => self.ann_hidden2 = parse(key, value)?,
            "ann_learning_rate" => self.ann_learning_rate = parse(key, value)?,
            "ann_epochs_per_round" => self.ann_epochs_per_round = parse(key, value)?,
            "ann_max_rounds" => self.ann_max_rounds = parse(key, value)?,
            "ann_plateau_tol" => self.ann_plateau_tol = parse(key, value)?,
            "rom_solver" => {
                self.rom_solver = match value {
                    "newton" => RomSolverKind::Newton,
                    "fixed_point" => RomSolverKind::FixedPoint,
                    _ => return Err(bad(key, value, "expected newton|fixed_point")),
                }
            }
            "error_field" => {
                self.error_field = match value {
                    "u" => ErrorField::UField,
                    "full" => ErrorField::FullState,
                    _ => return Err(bad(key, value, "expected u|full")),
                }
            }
            "podnn_validation_fraction" => self.podnn_validation_fraction = parse(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fom_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.snap_n1 < 2 || self.snap_n2 < 2 || self.ref_n1 < 2 || self.ref_n2 < 2 {
            return Err(ConfigError::Invalid(
                "grids need at least 2 points per axis".into(),
            ));
        }
        if self.kmeans_k < 1 || self.kmeans_k > self.snap_n1 * self.snap_n2 {
            return Err(ConfigError::Invalid(format!(
                "kmeans_k {} out of range for {} snapshots",
                self.kmeans_k,
                self.snap_n1 * self.snap_n2
            )));
        }
        if self.kmeans_restarts < 1 {
            return Err(ConfigError::Invalid("kmeans_restarts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.pod_energy_tol)
            || !(0.0..1.0).contains(&self.local_tol1)
            || !(0.0..1.0).contains(&self.local_tol2)
        {
            return Err(ConfigError::Invalid("POD tolerances must lie in [0,1)".into()));
        }
        if self.local_tol2 > self.local_tol1 {
            return Err(ConfigError::Invalid(
                "local_tol2 must not exceed local_tol1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.podnn_validation_fraction) {
            return Err(ConfigError::Invalid(
                "podnn_validation_fraction must lie in [0,1)".into(),
            ));
        }
        if self.ann_hidden1 == 0
            || self.ann_hidden2 == 0
            || self.ann_epochs_per_round == 0
            || self.ann_max_rounds == 0
            || self.ann_learning_rate <= 0.0
            || self.ann_learning_rate.is_nan()
        {
            return Err(ConfigError::Invalid("network settings must be positive".into()));
        }
        Ok(())
    }

    /// Canonical serialization: sorted keys, one per line.
    pub fn canonical(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("seed", self.seed.to_string());
        map.insert("n_interior", self.n_interior.to_string());
        map.insert("mu1_min", self.mu1_min.to_string());
        map.insert("mu1_max", self.mu1_max.to_string());
        map.insert("mu2_min", self.mu2_min.to_string());
        map.insert("mu2_max", self.mu2_max.to_string());
        map.insert("dt", self.dt.to_string());
        map.insert("tol", self.tol.to_string());
        map.insert("max_steps", self.max_steps.to_string());
        map.insert("bias_amplitude", self.bias_amplitude.to_string());
        map.insert("newton_tol", self.newton_tol.to_string());
        map.insert("newton_max_iter", self.newton_max_iter.to_string());
        map.insert("snap_n1", self.snap_n1.to_string());
        map.insert("snap_n2", self.snap_n2.to_string());
        map.insert("ref_n1", self.ref_n1.to_string());
        map.insert("ref_n2", self.ref_n2.to_string());
        map.insert("kmeans_k", self.kmeans_k.to_string());
        map.insert("kmeans_restarts", self.kmeans_restarts.to_string());
        map.insert("pod_energy_tol", self.pod_energy_tol.to_string());
        map.insert("local_tol1", self.local_tol1.to_string());
        map.insert("local_tol2", self.local_tol2.to_string());
        map.insert("overlap", if self.overlap { "on" } else { "off" }.to_string());
        map.insert("ann_hidden1", self.ann_hidden1.to_string());
        map.insert("ann_hidden2", self.ann_hidden2.to_string());
        map.insert("ann_learning_rate", self.ann_learning_rate.to_string());
        map.insert(
            "ann_epochs_per_round",
            self.ann_epochs_per_round.to_string(),
        );
        map.insert("ann_max_rounds", self.ann_max_rounds.to_string());
        map.insert("ann_plateau_tol", self.ann_plateau_tol.to_string());
        map.insert(
            "rom_solver",
            match self.rom_solver {
                RomSolverKind::Newton => "newton",
                RomSolverKind::FixedPoint => "fixed_point",
            }
            .to_string(),
        );
        map.insert(
            "error_field",
            match self.error_field {
                ErrorField::UField => "u",
                ErrorField::FullState => "full",
            }
            .to_string(),
        );
        map.insert(
            "podnn_validation_fraction",
            self.podnn_validation_fraction.to_string(),
        );
        let mut out = String::new();
        for (k, v) in map {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// FNV-1a hash of the canonical serialization, hex-encoded.
    pub fn hash(&self) -> String {
        const OFFSET: u64 = 0xcbf29ce484222325;
        const PRIME: u64 = 0x100000001b3;
        let mut state = OFFSET;
        for byte in self.canonical().bytes() {
            state ^= u64::from(byte);
            state = state.wrapping_mul(PRIME);
        }
        format!("{state:016x}")
    }

    pub fn fom_config(&self) -> FomConfig {
        FomConfig {
            n_interior: self.n_interior,
            mu1_min: self.mu1_min,
            mu1_max: self.mu1_max,
            mu2_min: self.mu2_min,
            mu2_max: self.mu2_max,
            dt: self.dt,
            tol: self.tol,
            max_steps: self.max_steps,
            bias_amplitude: self.bias_amplitude,
            newton_tol: self.newton_tol,
            newton_max_iter: self.newton_max_iter,
        }
    }

    pub fn train_config(&self, loss: crate::ann::Loss, seed_offset: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.ann_learning_rate,
            max_epochs_per_round: self.ann_epochs_per_round,
            max_rounds: self.ann_max_rounds,
            seed: self.seed.wrapping_add(seed_offset),
            loss,
            plateau_tol: self.ann_plateau_tol,
        }
    }
}
