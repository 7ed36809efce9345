//! Backtracking counterfactual solvers.
//!
//! All solvers minimise (or sample from) the same penalised objective: a sum
//! of per-node latent distances anchored at the factual latents, plus a
//! quadratic penalty holding the antecedent nodes at their target values.

mod first_order;
mod mode;
mod sparse;
mod stochastic;

pub use first_order::mode_deepbc_first_order;
pub use mode::{linearized_update, mode_deepbc, mode_deepbc_restricted};
pub use sparse::sparse_deepbc;
pub use stochastic::stochastic_deepbc;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::scm::{Antecedent, Scm};
use crate::vector::StructuredVector;

/// Energy change below which the mode iteration is declared converged.
pub const ENERGY_CONVERGENCE_TOL: f64 = 1e-10;
/// Infinity-norm gradient threshold for first-order convergence.
pub const GRADIENT_CONVERGENCE_TOL: f64 = 1e-10;
/// Consecutive energy increases that count as oscillation.
pub const OSCILLATION_RUN: usize = 5;
/// Damping applied on the automatic retry after detected oscillation.
pub const OSCILLATION_RETRY_DAMPING: f64 = 1e-8;
/// Default Huber transition point.
pub const HUBER_DELTA_DEFAULT: f64 = 0.1;

/// User-supplied differentiable distance on a latent block.
pub trait CustomDistance: Send + Sync {
    fn name(&self) -> &str;
    fn eval(&self, weight: f64, diff: &[f64]) -> f64;
    /// Adds the gradient w.r.t. `diff` into `grad_out`.
    fn grad(&self, weight: f64, diff: &[f64], grad_out: &mut [f64]);
}

/// Distance family applied to a latent block's deviation from the factual.
#[derive(Clone)]
pub enum DistanceKind {
    /// `w * ||diff||^2`.
    WeightedSquared,
    /// `w * sum_k huber_delta(diff_k)`.
    Huber { delta: f64 },
    Custom(Arc<dyn CustomDistance>),
}

impl fmt::Debug for DistanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DistanceKind::WeightedSquared => write!(f, "WeightedSquared"),
            DistanceKind::Huber { delta } => write!(f, "Huber {{ delta: {delta} }}"),
            DistanceKind::Custom(d) => write!(f, "Custom({})", d.name()),
        }
    }
}

impl DistanceKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "weighted-squared" => Ok(DistanceKind::WeightedSquared),
            "absolute-smooth" | "huber" => Ok(DistanceKind::Huber {
                delta: HUBER_DELTA_DEFAULT,
            }),
            other => Err(Error::UnknownDistanceKind(other.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            DistanceKind::WeightedSquared => "weighted-squared",
            DistanceKind::Huber { .. } => "absolute-smooth",
            DistanceKind::Custom(d) => d.name(),
        }
    }

    /// True when the distance is a quadratic form, so the linearized
    /// closed-form update applies.
    pub fn is_quadratic(&self) -> bool {
        matches!(self, DistanceKind::WeightedSquared)
    }
}

fn huber(delta: f64, a: f64) -> f64 {
    let abs = a.abs();
    if abs <= delta {
        0.5 * a * a
    } else {
        delta * (abs - 0.5 * delta)
    }
}

fn huber_deriv(delta: f64, a: f64) -> f64 {
    if a.abs() <= delta {
        a
    } else {
        delta * a.signum()
    }
}

/// Evaluates a node distance `d(u', u)` with weight `w`.
pub fn eval_distance(kind: &DistanceKind, weight: f64, u_prime: &[f64], u: &[f64]) -> f64 {
    debug_assert_eq!(u_prime.len(), u.len());
    let diff: Vec<f64> = u_prime.iter().zip(u).map(|(a, b)| a - b).collect();
    match kind {
        DistanceKind::WeightedSquared => weight * diff.iter().map(|d| d * d).sum::<f64>(),
        DistanceKind::Huber { delta } => {
            weight * diff.iter().map(|d| huber(*delta, *d)).sum::<f64>()
        }
        DistanceKind::Custom(d) => d.eval(weight, &diff),
    }
}

fn distance_grad_accum(
    kind: &DistanceKind,
    weight: f64,
    u_prime: &[f64],
    u: &[f64],
    grad_out: &mut [f64],
) {
    let diff: Vec<f64> = u_prime.iter().zip(u).map(|(a, b)| a - b).collect();
    match kind {
        DistanceKind::WeightedSquared => {
            for (g, d) in grad_out.iter_mut().zip(&diff) {
                *g += 2.0 * weight * d;
            }
        }
        DistanceKind::Huber { delta } => {
            for (g, d) in grad_out.iter_mut().zip(&diff) {
                *g += weight * huber_deriv(*delta, *d);
            }
        }
        DistanceKind::Custom(d) => d.grad(weight, &diff, grad_out),
    }
}

/// Solver configuration. Invariants (positive `lambda`, at least one
/// iteration, positive step size, non-negative damping, positive weights)
/// are enforced by the setters.
#[derive(Clone, Debug)]
pub struct BacktrackingConfig {
    lambda: f64,
    iterations: usize,
    step_size: f64,
    damping: f64,
    seed: u64,
    weights: BTreeMap<NodeId, f64>,
    distance: DistanceKind,
    node_distances: BTreeMap<NodeId, DistanceKind>,
}

impl Default for BacktrackingConfig {
    fn default() -> Self {
        Self {
            lambda: 1e3,
            iterations: 30,
            step_size: 1e-5,
            damping: 0.0,
            seed: 0,
            weights: BTreeMap::new(),
            distance: DistanceKind::WeightedSquared,
            node_distances: BTreeMap::new(),
        }
    }
}

impl BacktrackingConfig {
    /// Defaults used by the Langevin sampler.
    pub fn stochastic_default() -> Self {
        Self {
            lambda: 1e4,
            iterations: 1000,
            step_size: 1e-5,
            ..Self::default()
        }
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "lambda must be positive and finite, got {lambda}"
            )));
        }
        self.lambda = lambda;
        Ok(self)
    }

    pub fn with_iterations(mut self, iterations: usize) -> Result<Self> {
        if iterations == 0 {
            return Err(Error::InvalidPlan(
                "iteration budget must be at least 1".to_string(),
            ));
        }
        self.iterations = iterations;
        Ok(self)
    }

    /// Zero is allowed and makes the gradient-based solvers static (the
    /// sampler then returns the mode exactly).
    pub fn with_step_size(mut self, step_size: f64) -> Result<Self> {
        if !(step_size >= 0.0 && step_size.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "step size must be non-negative and finite, got {step_size}"
            )));
        }
        self.step_size = step_size;
        Ok(self)
    }

    pub fn with_damping(mut self, damping: f64) -> Result<Self> {
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "damping must be non-negative and finite, got {damping}"
            )));
        }
        self.damping = damping;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_weight(mut self, node: NodeId, weight: f64) -> Result<Self> {
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidPlan(format!(
                "weight for {node} must be positive and finite, got {weight}"
            )));
        }
        self.weights.insert(node, weight);
        Ok(self)
    }

    pub fn with_distance(mut self, kind: DistanceKind) -> Self {
        self.distance = kind;
        self
    }

    pub fn with_node_distance(mut self, node: NodeId, kind: DistanceKind) -> Self {
        self.node_distances.insert(node, kind);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weight_for(&self, node: NodeId) -> f64 {
        self.weights.get(&node).copied().unwrap_or(1.0)
    }

    pub fn distance_for(&self, node: NodeId) -> &DistanceKind {
        self.node_distances.get(&node).unwrap_or(&self.distance)
    }

    /// True when every distance in play is quadratic.
    pub fn all_quadratic(&self) -> bool {
        self.distance.is_quadratic() && self.node_distances.values().all(|d| d.is_quadratic())
    }

    /// Per-coordinate weights in the latent layout (diagonal of W).
    pub fn latent_weight_vector(&self, scm: &Scm) -> DVector<f64> {
        let layout = scm.latent_layout();
        let mut w = DVector::zeros(layout.total_dim());
        for pos in 0..layout.len() {
            let weight = self.weight_for(layout.id_at(pos));
            let off = layout.offset_at(pos);
            for k in 0..layout.dim_at(pos) {
                w[off + k] = weight;
            }
        }
        w
    }
}

/// Outcome of a counterfactual solve.
///
/// `x_star` always equals the reduced form evaluated at `u_star`, and
/// `residual` is the squared constraint norm `||F_S(u*) - x*_S||^2`.
/// Sampler results carry an empty `energy_trace`; iterative solvers record
/// the energy at the initial point and after every accepted update.
#[derive(Clone, Debug)]
pub struct CounterfactualResult {
    pub u_star: StructuredVector,
    pub x_star: StructuredVector,
    pub residual: f64,
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    /// Node blocks that were allowed to move, for sparse solves.
    pub changed_mask: Option<Vec<NodeId>>,
}

pub(crate) fn check_latent_layouts(
    scm: &Scm,
    u_prime: &StructuredVector,
    u_factual: &StructuredVector,
) -> Result<()> {
    if !u_prime.same_layout(u_factual)
        || u_prime.layout().ids() != scm.latent_layout().ids()
        || u_prime.layout().total_dim() != scm.latent_layout().total_dim()
    {
        return Err(Error::DimensionMismatch {
            context: "solver latent vectors".to_string(),
            expected: scm.latent_layout().total_dim(),
            actual: u_prime.layout().total_dim(),
        });
    }
    Ok(())
}

fn distance_sum(
    scm: &Scm,
    u_prime: &StructuredVector,
    u_factual: &StructuredVector,
    config: &BacktrackingConfig,
) -> f64 {
    let layout = scm.latent_layout();
    let mut total = 0.0;
    for pos in 0..layout.len() {
        if layout.dim_at(pos) == 0 {
            continue;
        }
        let id = layout.id_at(pos);
        total += eval_distance(
            config.distance_for(id),
            config.weight_for(id),
            u_prime.block_at(pos),
            u_factual.block_at(pos),
        );
    }
    total
}

/// Penalised energy `sum_i d_i(u'_i, u_i) + lambda ||F_S(u') - x*_S||^2`.
pub fn energy(
    scm: &Scm,
    u_prime: &StructuredVector,
    u_factual: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
) -> Result<f64> {
    check_latent_layouts(scm, u_prime, u_factual)?;
    scm.check_antecedent(antecedent)?;
    let f_s = scm.reduced_form_selected(u_prime, &antecedent.ids())?;
    let target = antecedent.stacked_values();
    let r2: f64 = f_s
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(distance_sum(scm, u_prime, u_factual, config) + config.lambda() * r2)
}

/// Energy and its gradient w.r.t. `u_prime`, sharing one forward pass.
pub fn energy_grad(
    scm: &Scm,
    u_prime: &StructuredVector,
    u_factual: &StructuredVector,
    antecedent: &Antecedent,
    config: &BacktrackingConfig,
) -> Result<(f64, DVector<f64>)> {
    check_latent_layouts(scm, u_prime, u_factual)?;
    scm.check_antecedent(antecedent)?;
    let ids = antecedent.ids();
    let (x, jac) = scm.forward_with_jacobian(u_prime, &ids)?;
    let f_s = scm.stack_blocks(&x, &ids)?;
    let r = f_s - antecedent.stacked_values();
    let mut grad = jac.transpose() * &r * (2.0 * config.lambda());
    let layout = scm.latent_layout();
    for pos in 0..layout.len() {
        let dim = layout.dim_at(pos);
        if dim == 0 {
            continue;
        }
        let id = layout.id_at(pos);
        let off = layout.offset_at(pos);
        distance_grad_accum(
            config.distance_for(id),
            config.weight_for(id),
            u_prime.block_at(pos),
            u_factual.block_at(pos),
            &mut grad.as_mut_slice()[off..off + dim],
        );
    }
    let e = distance_sum(scm, u_prime, u_factual, config) + config.lambda() * r.norm_squared();
    Ok((e, grad))
}

/// Squared constraint residual `||F_S(u) - x*_S||^2`.
pub(crate) fn residual_sq(scm: &Scm, u: &StructuredVector, antecedent: &Antecedent) -> Result<f64> {
    let f_s = scm.reduced_form_selected(u, &antecedent.ids())?;
    let target = antecedent.stacked_values();
    Ok(f_s
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

pub(crate) fn finish_result(
    scm: &Scm,
    u_star: StructuredVector,
    antecedent: &Antecedent,
    energy_trace: Vec<f64>,
    iterations: usize,
) -> Result<CounterfactualResult> {
    let x_star = scm.reduced_form(&u_star)?;
    let residual = residual_sq(scm, &u_star, antecedent)?;
    Ok(CounterfactualResult {
        u_star,
        x_star,
        residual,
        energy_trace,
        iterations,
        changed_mask: None,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn parses_known_distance_kinds() {
        assert!(matches!(
            DistanceKind::parse("weighted-squared").unwrap(),
            DistanceKind::WeightedSquared
        ));
        assert!(
            matches!(DistanceKind::parse("absolute-smooth").unwrap(), DistanceKind::Huber { delta } if delta == 0.1)
        );
        assert!(matches!(
            DistanceKind::parse("huber").unwrap(),
            DistanceKind::Huber { .. }
        ));
        assert_eq!(DistanceKind::Huber { delta: 0.1 }.name(), "absolute-smooth");
        match DistanceKind::parse("mahalanobis") {
            Err(Error::UnknownDistanceKind(s)) => assert_eq!(s, "mahalanobis"),
            other => panic!("expected UnknownDistanceKind, got {other:?}"),
        }
    }

    #[test]
    fn weighted_squared_hand_value() {
        let d = eval_distance(
            &DistanceKind::WeightedSquared,
            2.0,
            &[1.0, 1.0],
            &[0.0, 0.0],
        );
        assert_relative_eq!(d, 4.0, epsilon = 1e-15);
    }

    #[test]
    fn huber_is_linear_in_the_tails() {
        // With delta = 0.1 the tail is delta*(|a| - delta/2), so doubling a
        // large offset roughly doubles the distance instead of quadrupling.
        let k = DistanceKind::Huber { delta: 0.1 };
        let d10 = eval_distance(&k, 1.0, &[10.0], &[0.0]);
        let d20 = eval_distance(&k, 1.0, &[20.0], &[0.0]);
        assert_relative_eq!(d10, 0.995, epsilon = 1e-12);
        assert_relative_eq!(d20, 1.995, epsilon = 1e-12);
        assert!((d10 / d20 - 0.5).abs() < 2e-3);
        // Quadratic near the origin.
        assert_relative_eq!(
            eval_distance(&k, 3.0, &[0.05], &[0.0]),
            3.0 * 0.5 * 0.05 * 0.05,
            epsilon = 1e-15
        );
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = BacktrackingConfig::default();
        assert_eq!(c.lambda(), 1e3);
        assert_eq!(c.iterations(), 30);
        assert_eq!(c.step_size(), 1e-5);
        assert_eq!(c.damping(), 0.0);
        let s = BacktrackingConfig::stochastic_default();
        assert_eq!(s.lambda(), 1e4);
        assert_eq!(s.iterations(), 1000);
        assert!(BacktrackingConfig::default().with_lambda(0.0).is_err());
        assert!(BacktrackingConfig::default().with_iterations(0).is_err());
        assert!(BacktrackingConfig::default().with_step_size(-1.0).is_err());
        assert!(BacktrackingConfig::default().with_step_size(0.0).is_ok());
        assert!(BacktrackingConfig::default().with_damping(-1e-9).is_err());
        assert!(BacktrackingConfig::default()
            .with_weight(NodeId(1), 0.0)
            .is_err());
        assert!(BacktrackingConfig::default()
            .with_weight(NodeId(1), 2.0)
            .is_ok());
    }

    #[test]
    fn energy_matches_hand_computation_on_chain() {
        let scm = test_fixtures::linear_chain(2, 1.0);
        let ante = crate::scm::Antecedent::single(NodeId(2), vec![2.0]);
        let u0 = StructuredVector::zeros(scm.latent_layout().clone());
        let mut up = u0.clone();
        up.set_block(NodeId(1), &[0.5]).unwrap();
        up.set_block(NodeId(2), &[0.25]).unwrap();
        let cfg = BacktrackingConfig::default()
            .with_weight(NodeId(1), 2.0)
            .unwrap();
        // d = 2*0.25 + 0.0625, penalty = 1e3 * (0.75 - 2)^2.
        let e = energy(&scm, &up, &u0, &ante, &cfg).unwrap();
        assert_relative_eq!(e, 0.5625 + 1e3 * 1.5625, epsilon = 1e-9);
    }

    #[test]
    fn energy_grad_matches_finite_differences() {
        let scm = test_fixtures::weighted_collider(1.5, -0.5);
        let ante = crate::scm::Antecedent::single(NodeId(3), vec![1.0]);
        let u0 = StructuredVector::from_flat(
            scm.latent_layout().clone(),
            vec![0.3, -0.2, 0.1],
        )
        .unwrap();
        let up = StructuredVector::from_flat(
            scm.latent_layout().clone(),
            vec![0.7, 0.4, -0.6],
        )
        .unwrap();
        let cfg = BacktrackingConfig::default()
            .with_lambda(10.0)
            .unwrap()
            .with_weight(NodeId(2), 3.0)
            .unwrap()
            .with_node_distance(NodeId(1), DistanceKind::Huber { delta: 0.1 });
        let (e, g) = energy_grad(&scm, &up, &u0, &ante, &cfg).unwrap();
        assert_relative_eq!(e, energy(&scm, &up, &u0, &ante, &cfg).unwrap(), epsilon = 1e-12);
        let h = 1e-6;
        for k in 0..3 {
            let mut plus = up.clone();
            plus.flat_mut()[k] += h;
            let mut minus = up.clone();
            minus.flat_mut()[k] -= h;
            let fd = (energy(&scm, &plus, &u0, &ante, &cfg).unwrap()
                - energy(&scm, &minus, &u0, &ante, &cfg).unwrap())
                / (2.0 * h);
            assert_relative_eq!(g[k], fd, epsilon = 1e-5, max_relative = 1e-5);
        }
    }

    #[test]
    fn custom_distance_is_used() {
        struct Quartic;
        impl CustomDistance for Quartic {
            fn name(&self) -> &str {
                "quartic"
            }
            fn eval(&self, weight: f64, diff: &[f64]) -> f64 {
                weight * diff.iter().map(|d| d.powi(4)).sum::<f64>()
            }
            fn grad(&self, weight: f64, diff: &[f64], grad_out: &mut [f64]) {
                for (g, d) in grad_out.iter_mut().zip(diff) {
                    *g += 4.0 * weight * d.powi(3);
                }
            }
        }
        let kind = DistanceKind::Custom(Arc::new(Quartic));
        assert!(!kind.is_quadratic());
        assert_eq!(kind.name(), "quartic");
        assert_relative_eq!(
            eval_distance(&kind, 2.0, &[2.0], &[0.0]),
            32.0,
            epsilon = 1e-12
        );
    }
}
