//! Evaluation metrics: plausibility (conditional negative log density),
//! observational closeness, and causal compliance, averaged over a
//! caller-chosen set of attribute nodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::scm::Scm;
use crate::vector::StructuredVector;

/// Inner distance applied per attribute block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    /// Squared Euclidean norm of the block difference.
    Squ,
    /// 1-norm of the block difference.
    Abs,
}

impl MetricKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_uppercase().as_str() {
            "SQU" => Ok(MetricKind::Squ),
            "ABS" => Ok(MetricKind::Abs),
            other => Err(Error::InvalidPlan(format!(
                "unknown metric kind {other}, expected SQU or ABS"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Squ => "SQU",
            MetricKind::Abs => "ABS",
        }
    }

    fn apply(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            MetricKind::Squ => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum(),
            MetricKind::Abs => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        }
    }
}

/// All three metrics for one counterfactual, averaged over `n_nodes`
/// attribute nodes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub plausible: f64,
    pub obs: f64,
    pub causal: f64,
    pub m: MetricKind,
    pub n_nodes: usize,
}

fn check_attributes(scm: &Scm, attribute_nodes: &[NodeId]) -> Result<()> {
    if attribute_nodes.is_empty() {
        return Err(Error::InvalidPlan(
            "metrics need at least one attribute node".to_string(),
        ));
    }
    for id in attribute_nodes {
        if scm.graph().node(*id).is_none() {
            return Err(Error::UnknownNode(id.to_string()));
        }
    }
    Ok(())
}

fn check_observable(scm: &Scm, x: &StructuredVector, context: &str) -> Result<()> {
    if x.layout().ids() != scm.observable_layout().ids()
        || x.layout().total_dim() != scm.observable_layout().total_dim()
    {
        return Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected: scm.observable_layout().total_dim(),
            actual: x.layout().total_dim(),
        });
    }
    Ok(())
}

/// Mean conditional negative log density of the attribute blocks of
/// `x_star`, in nats. Lower is more plausible.
pub fn plausible(scm: &Scm, x_star: &StructuredVector, attribute_nodes: &[NodeId]) -> Result<f64> {
    check_attributes(scm, attribute_nodes)?;
    check_observable(scm, x_star, "plausibility input")?;
    let mut total = 0.0;
    for &id in attribute_nodes {
        let pos = scm.graph().position(id).expect("checked above");
        let pa = scm.parent_values(x_star, pos);
        let block = x_star.block(id).expect("attribute block");
        total += scm.mechanisms()[pos].nll(&pa, block)?;
    }
    Ok(total / attribute_nodes.len() as f64)
}

/// Mean per-node inner distance between factual and counterfactual
/// observables over the attribute nodes.
pub fn obs_distance(
    x: &StructuredVector,
    x_star: &StructuredVector,
    m: MetricKind,
    attribute_nodes: &[NodeId],
) -> Result<f64> {
    if attribute_nodes.is_empty() {
        return Err(Error::InvalidPlan(
            "metrics need at least one attribute node".to_string(),
        ));
    }
    if !x.same_layout(x_star) {
        return Err(Error::DimensionMismatch {
            context: "observational distance".to_string(),
            expected: x.len(),
            actual: x_star.len(),
        });
    }
    let mut total = 0.0;
    for &id in attribute_nodes {
        let a = x
            .block(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        let b = x_star.block(id).expect("same layout");
        total += m.apply(a, b);
    }
    Ok(total / attribute_nodes.len() as f64)
}

/// Mean per-node inner distance between the factual and counterfactual
/// latents of the attribute nodes (each abducted through its own mechanism).
pub fn causal_distance(
    scm: &Scm,
    x: &StructuredVector,
    x_star: &StructuredVector,
    m: MetricKind,
    attribute_nodes: &[NodeId],
) -> Result<f64> {
    check_attributes(scm, attribute_nodes)?;
    check_observable(scm, x, "causal distance factual")?;
    check_observable(scm, x_star, "causal distance counterfactual")?;
    let mut total = 0.0;
    for &id in attribute_nodes {
        let pos = scm.graph().position(id).expect("checked above");
        let mech = &scm.mechanisms()[pos];
        let u = mech.inverse(&scm.parent_values(x, pos), x.block(id).expect("block"))?;
        let u_star = mech.inverse(
            &scm.parent_values(x_star, pos),
            x_star.block(id).expect("block"),
        )?;
        total += m.apply(&u, &u_star);
    }
    Ok(total / attribute_nodes.len() as f64)
}

/// Convenience bundle of all three metrics.
pub fn metric_report(
    scm: &Scm,
    x: &StructuredVector,
    x_star: &StructuredVector,
    m: MetricKind,
    attribute_nodes: &[NodeId],
) -> Result<MetricReport> {
    Ok(MetricReport {
        plausible: plausible(scm, x_star, attribute_nodes)?,
        obs: obs_distance(x, x_star, m, attribute_nodes)?,
        causal: causal_distance(scm, x, x_star, m, attribute_nodes)?,
        m,
        n_nodes: attribute_nodes.len(),
    })
}
