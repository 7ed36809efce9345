//! Comparison baselines: hard-intervention counterfactuals and the
//! counterfactual-explanation reduction on two-node predictor models.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::scm::{Antecedent, Scm};
use crate::solvers::{mode_deepbc, BacktrackingConfig, CounterfactualResult};
use crate::vector::StructuredVector;

/// Outcome of a hard-intervention counterfactual.
#[derive(Clone, Debug)]
pub struct InterventionalResult {
    pub x_star: StructuredVector,
    /// Nodes whose assignments were replaced by constants.
    pub intervened: Vec<NodeId>,
    /// Abducted factual latents used for the prediction step.
    pub u_factual: StructuredVector,
}

/// Abduction / action / prediction: abduct the factual latents, replace the
/// assignments of the antecedent nodes by constants, evaluate forward.
///
/// Nodes whose parents are unchanged keep their factual values bitwise, so
/// anything not downstream of the antecedent is exactly invariant.
pub fn interventional_cf(
    scm: &Scm,
    x: &StructuredVector,
    antecedent: &Antecedent,
) -> Result<InterventionalResult> {
    scm.check_antecedent(antecedent)?;
    let u = scm.abduct(x)?;
    let pinned: BTreeMap<NodeId, &[f64]> = antecedent
        .targets()
        .iter()
        .map(|(id, v)| (*id, v.as_slice()))
        .collect();

    let mut x_star = StructuredVector::zeros(scm.observable_layout().clone());
    let mut changed: BTreeMap<NodeId, bool> = BTreeMap::new();
    for &id in scm.topological_order() {
        let pos = scm
            .graph()
            .position(id)
            .expect("topological node exists in graph");
        let node = &scm.graph().nodes()[pos];
        if let Some(vals) = pinned.get(&id) {
            x_star.set_block(id, vals)?;
            changed.insert(id, vals != &x.block(id).expect("observable block"));
            continue;
        }
        let parents_moved = node.parents.iter().any(|p| changed[p]);
        if !parents_moved {
            x_star.set_block(id, x.block(id).expect("observable block"))?;
            changed.insert(id, false);
            continue;
        }
        let pa = scm.parent_values(&x_star, pos);
        let out = scm.mechanisms()[pos].forward(&pa, u.block(id).expect("latent block"))?;
        x_star.set_block(id, &out)?;
        changed.insert(id, true);
    }
    Ok(InterventionalResult {
        x_star,
        intervened: antecedent.ids(),
        u_factual: u,
    })
}

pub(crate) fn two_node_structure(scm: &Scm) -> Result<(NodeId, NodeId)> {
    let nodes = scm.graph().nodes();
    if nodes.len() != 2 {
        return Err(Error::UnsupportedStructure(format!(
            "counterfactual explanation needs exactly two nodes, got {}",
            nodes.len()
        )));
    }
    let root = nodes.iter().find(|n| n.parents.is_empty());
    let head = nodes.iter().find(|n| !n.parents.is_empty());
    let (root, head) = match (root, head) {
        (Some(r), Some(h)) if h.parents == [r.id] => (r, h),
        _ => {
            return Err(Error::UnsupportedStructure(
                "counterfactual explanation needs a single edge X -> Y-hat".to_string(),
            ))
        }
    };
    let head_mech = scm.mechanism(head.id).expect("mechanism exists");
    if head_mech.latent_dim() != 0 {
        return Err(Error::UnsupportedStructure(
            "the predicted node must be a deterministic function of X".to_string(),
        ));
    }
    Ok((root.id, head.id))
}

/// Counterfactual explanation on a two-node predictor model: the least
/// latent change in X that steers the deterministic prediction to `y_star`.
/// Delegates to `mode_deepbc` with the antecedent on the predicted node.
pub fn deep_ce(
    scm: &Scm,
    x: &StructuredVector,
    y_star: &[f64],
    config: &BacktrackingConfig,
) -> Result<CounterfactualResult> {
    let (_, head) = two_node_structure(scm)?;
    let antecedent = Antecedent::single(head, y_star.to_vec());
    mode_deepbc(scm, x, &antecedent, config)
}
