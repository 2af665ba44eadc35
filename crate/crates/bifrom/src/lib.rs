//! Bifurcation-aware reduced-order modeling toolkit.
//!
//! The crate builds surrogate models for a parameterized reaction-diffusion
//! system whose steady states undergo a supercritical pitchfork bifurcation
//! as the two parameters vary. Three families of surrogates are provided and
//! compared over the parameter box:
//!
//! * a global projection ROM (one POD basis for the whole box),
//! * localized projection ROMs (k-means clusters of snapshots, one enriched
//!   basis per cluster, plus several criteria that pick the cluster for an
//!   unseen parameter),
//! * a non-intrusive POD-NN surrogate (regression network from parameters to
//!   POD coefficients, no online solve).
//!
//! Modules mirror the stages of the workflow: [`fom`] generates truth
//! solutions, [`pod`] extracts bases, [`cluster`] localizes them, [`rom`]
//! assembles and solves reduced systems, [`ann`] provides the from-scratch
//! multilayer perceptron, [`select`] implements basis-selection criteria,
//! [`podnn`] the non-intrusive surrogate, [`eval`] error metrics and
//! bifurcation diagrams, and [`pipeline`] persistence plus the CLI.

pub mod ann;
pub mod cluster;
pub mod eval;
pub mod fom;
pub mod pod;
pub mod podnn;
pub mod rom;
pub mod select;
pub mod pipeline;

/// Weighted inner product `h * a . b` shared by POD, clustering and
/// projections (uniform-mesh discrete L2 on the stacked state).
pub fn x_dot(h: f64, a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    h * a.dot(b)
}

/// Norm induced by [`x_dot`].
pub fn x_norm(h: f64, a: &nalgebra::DVector<f64>) -> f64 {
    x_dot(h, a, a).sqrt()
}
