//! Error metrics, bifurcation diagrams, and the three-way method comparison.
//!
//! Errors follow the u-field convention throughout (the v-field is a slaved
//! quantity); a full-state variant exists behind [`ErrorField`]. Diagrams
//! record the probe observable over a tensor grid, and
//! [`compare_methods`] produces one [`MethodReport`] per surrogate over a
//! shared reference set, with CSV emission for the report tables.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::fom::{self, ParameterPoint, SnapshotSet, StateVec};
use crate::podnn::PodNnModel;
use crate::rom::{self, LocalRomSet, ReducedOperators};
use crate::select::{self, Criterion, SelectorData};

/// Which components enter the error norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorField {
    /// First block only (default, mirrors the velocity-error convention).
    UField,
    /// Whole stacked state.
    FullState,
}

/// Relative (or flagged absolute) errors of one approximation.
#[derive(Debug, Clone, Copy)]
pub struct RelErrors {
    pub l2: f64,
    pub linf: f64,
    /// Set when the reference norm vanished and absolute norms were
    /// reported instead.
    pub absolute_fallback: bool,
}

/// Reference norms below this are numerically zero. The trivial branch
/// stops at the march's `1e-14` increment guard with a residue around
/// `1e-13`, far below any physical branch amplitude (`>= 1e-2` on these
/// grids); dividing by the residue would turn machine noise into order-one
/// relative errors.
const ZERO_REFERENCE_NORM: f64 = 1e-12;

/// Relative L2 and Linf errors over the selected field block. A reference
/// with numerically zero norm (the trivial branch) switches to absolute
/// norms and flags the fallback.
pub fn relative_errors(approx: &StateVec, reference: &StateVec, field: ErrorField) -> RelErrors {
    assert_eq!(approx.len(), reference.len(), "state lengths differ");
    let n = reference.len() / 2;
    let (a, r) = match field {
        ErrorField::UField => (approx.rows(0, n), reference.rows(0, n)),
        ErrorField::FullState => (approx.rows(0, 2 * n), reference.rows(0, 2 * n)),
    };
    let diff = a - r;
    let ref_l2 = r.norm();
    let ref_linf = r.amax();
    if ref_l2 > ZERO_REFERENCE_NORM {
        RelErrors {
            l2: diff.norm() / ref_l2,
            linf: diff.amax() / ref_linf,
            absolute_fallback: false,
        }
    } else {
        RelErrors {
            l2: diff.norm(),
            linf: diff.amax(),
            absolute_fallback: true,
        }
    }
}

/// One evaluated surrogate (or the reference itself) for diagram and
/// comparison purposes.
pub enum Method<'a> {
    /// Truth solutions straight from a snapshot set over the same grid.
    Reference(&'a SnapshotSet),
    Global {
        rom: &'a ReducedOperators,
        snapshots: &'a SnapshotSet,
    },
    Local {
        set: &'a LocalRomSet,
        snapshots: &'a SnapshotSet,
        selector: &'a SelectorData,
        criterion: &'a Criterion,
    },
    PodNn(&'a PodNnModel),
}

impl Method<'_> {
    /// Short tag used in reports and file names.
    pub fn tag(&self) -> String {
        match self {
            Method::Reference(_) => "reference".into(),
            Method::Global { .. } => "global".into(),
            Method::Local { criterion, .. } => format!("local+{}", criterion.tag()),
            Method::PodNn(_) => "podnn".into(),
        }
    }

    /// Evaluates the method at one parameter point.
    pub fn evaluate(
        &self,
        cfg: &fom::FomConfig,
        solver: rom::SolverChoice,
        mu: ParameterPoint,
    ) -> (StateVec, bool) {
        match self {
            Method::Reference(set) => {
                let j = set
                    .params
                    .iter()
                    .position(|p| p.mu1 == mu.mu1 && p.mu2 == mu.mu2)
                    .expect("reference evaluation only at its own grid points");
                (set.snapshot(j), set.meta[j].converged)
            }
            Method::Global { rom, snapshots } => {
                let all: Vec<usize> = (0..snapshots.len()).collect();
                let a0 = rom::warm_start(&rom.basis, snapshots, &all, cfg, mu);
                match rom::solve_with(rom, mu, &a0, solver) {
                    Ok(sol) => (rom::lift(rom, &sol), sol.converged),
                    Err(_) => (StateVec::zeros(rom.basis.state_len()), false),
                }
            }
            Method::Local {
                set,
                snapshots,
                selector,
                criterion,
            } => match select::select_cluster(selector, criterion, mu) {
                Ok(k) => rom::solve_local_at(set, snapshots, cfg, k, mu, solver),
                Err(_) => (StateVec::zeros(cfg.state_len()), false),
            },
            Method::PodNn(model) => (crate::podnn::podnn_eval(model, cfg, mu), true),
        }
    }
}

/// Probe observable over a parameter grid.
#[derive(Debug, Clone)]
pub struct DiagramPoint {
    pub mu1: f64,
    pub mu2: f64,
    pub observable: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct BifurcationDiagram {
    pub n1: usize,
    pub n2: usize,
    pub points: Vec<DiagramPoint>,
    pub source: String,
}

/// Evaluates the method at every point of the `n1 x n2` tensor grid and
/// probes the lifted state. Solver failures are recorded per point, the
/// diagram is emitted regardless.
pub fn bifurcation_diagram(
    cfg: &fom::FomConfig,
    solver: rom::SolverChoice,
    method: &Method,
    n1: usize,
    n2: usize,
) -> BifurcationDiagram {
    let grid = fom::tensor_grid(cfg, n1, n2);
    let points: Vec<DiagramPoint> = grid
        .par_iter()
        .map(|&mu| {
            let (state, converged) = method.evaluate(cfg, solver, mu);
            DiagramPoint {
                mu1: mu.mu1,
                mu2: mu.mu2,
                observable: fom::probe(&state),
                converged,
            }
        })
        .collect();
    BifurcationDiagram {
        n1,
        n2,
        points,
        source: method.tag(),
    }
}

/// Accuracy summary of one method over a reference set.
#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: String,
    /// Training snapshot count behind the surrogate.
    pub samples: usize,
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub per_point_l2: Vec<f64>,
    pub per_point_linf: Vec<f64>,
    pub absolute_fallbacks: Vec<bool>,
    pub online_seconds: f64,
}

/// Evaluates each method at every reference point and reports mean errors.
/// Means are plain arithmetic means of the per-point vectors.
pub fn compare_methods(
    cfg: &fom::FomConfig,
    solver: rom::SolverChoice,
    methods: &[(Method, usize)],
    reference: &SnapshotSet,
    field: ErrorField,
) -> Vec<MethodReport> {
    methods
        .iter()
        .map(|(method, samples)| {
            let start = Instant::now();
            let evals: Vec<(RelErrors, bool)> = reference
                .params
                .par_iter()
                .enumerate()
                .map(|(j, &mu)| {
                    let (state, converged) = method.evaluate(cfg, solver, mu);
                    let errs = relative_errors(&state, &reference.snapshot(j), field);
                    (errs, converged)
                })
                .collect();
            let per_point_l2: Vec<f64> = evals.iter().map(|(e, _)| e.l2).collect();
            let per_point_linf: Vec<f64> = evals.iter().map(|(e, _)| e.linf).collect();
            let absolute_fallbacks: Vec<bool> =
                evals.iter().map(|(e, _)| e.absolute_fallback).collect();
            let count = per_point_l2.len() as f64;
            MethodReport {
                method: method.tag(),
                samples: *samples,
                mean_l2: per_point_l2.iter().sum::<f64>() / count,
                mean_linf: per_point_linf.iter().sum::<f64>() / count,
                per_point_l2,
                per_point_linf,
                absolute_fallbacks,
                online_seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

/// Writes `diagram.csv`: `mu1,mu2,observable,converged`.
pub fn write_diagram_csv(diagram: &BifurcationDiagram, path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "mu1,mu2,observable,converged")?;
    for p in &diagram.points {
        writeln!(
            out,
            "{},{},{},{}",
            p.mu1,
            p.mu2,
            p.observable,
            u8::from(p.converged)
        )?;
    }
    Ok(())
}

/// Writes `errors.csv`: `method,samples,mean_l2,mean_linf`.
pub fn write_errors_csv(reports: &[MethodReport], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "method,samples,mean_l2,mean_linf")?;
    for r in reports {
        writeln!(out, "{},{},{},{}", r.method, r.samples, r.mean_l2, r.mean_linf)?;
    }
    Ok(())
}

/// Writes `method_<tag>_points.csv`: per-point errors over the reference
/// grid.
pub fn write_points_csv(
    report: &MethodReport,
    reference: &SnapshotSet,
    path: &Path,
) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "mu1,mu2,l2,linf,absolute_fallback")?;
    for (j, p) in reference.params.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{}",
            p.mu1,
            p.mu2,
            report.per_point_l2[j],
            report.per_point_linf[j],
            u8::from(report.absolute_fallbacks[j])
        )?;
    }
    Ok(())
}
