//! Backtracking counterfactuals for structural causal models.
//!
//! A model is a DAG of invertible mechanisms with standard Gaussian latents.
//! Counterfactuals are computed by perturbing the latents as little as
//! possible (under a configurable distance) while steering selected nodes of
//! the reduced form to antecedent values; hard interventions are included as
//! a baseline for comparison.

pub mod baselines;
pub mod error;
pub mod graph;
pub mod harness;
pub mod linalg;
pub mod mechanisms;
pub mod metrics;
pub mod scm;
pub mod solvers;
pub mod vector;

pub use baselines::{deep_ce, interventional_cf, InterventionalResult};
pub use error::{Error, Result};
pub use graph::{topological_order, CausalGraph, Node, NodeId};
pub use metrics::{causal_distance, metric_report, obs_distance, plausible, MetricKind, MetricReport};
pub use scm::{
    load_scm, save_scm, scm_from_json, scm_to_json, validate_scm, Antecedent, Scm, Standardizer,
    ValidationCheck, ValidationReport,
};
pub use solvers::{
    energy, energy_grad, eval_distance, linearized_update, mode_deepbc, mode_deepbc_first_order,
    mode_deepbc_restricted, sparse_deepbc, stochastic_deepbc, BacktrackingConfig,
    CounterfactualResult, CustomDistance, DistanceKind,
};
pub use vector::{Layout, StructuredVector};
