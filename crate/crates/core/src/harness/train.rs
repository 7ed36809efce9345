//! Graph specifications (JSON) and whole-model training: per-node
//! standardization, mechanism initialization, and exact-likelihood fitting
//! against each node's parents.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Node, NodeId};
use crate::mechanisms::{
    sigmoid_warm_start, train_flow_mle, AffineFlow, Mechanism, SigmoidFlow, TrainingOptions,
};
use crate::scm::{Scm, Standardizer};
use crate::vector::StructuredVector;

use super::dataset::{row_to_observable, to_model_units, Dataset};
use super::ground_truth::{IMAGE, INTENSITY, MORPHO_IMAGE_DIM, THICKNESS};

pub const TRAIN_SPLIT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: u32,
    pub name: String,
    pub dim: usize,
    pub parents: Vec<u32>,
    pub mechanism: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub nodes: Vec<NodeSpec>,
}

impl GraphSpec {
    /// The three-node benchmark graph: thickness → intensity, both → image.
    pub fn morpho() -> Self {
        GraphSpec {
            nodes: vec![
                NodeSpec {
                    id: 1,
                    name: THICKNESS.to_string(),
                    dim: 1,
                    parents: vec![],
                    mechanism: "affine".to_string(),
                },
                NodeSpec {
                    id: 2,
                    name: INTENSITY.to_string(),
                    dim: 1,
                    parents: vec![1],
                    mechanism: "sigmoid".to_string(),
                },
                NodeSpec {
                    id: 3,
                    name: IMAGE.to_string(),
                    dim: MORPHO_IMAGE_DIM,
                    parents: vec![1, 2],
                    mechanism: "affine".to_string(),
                },
            ],
        }
    }

    pub fn to_graph(&self) -> Result<CausalGraph> {
        let nodes = self
            .nodes
            .iter()
            .map(|spec| Node {
                id: NodeId(spec.id),
                name: spec.name.clone(),
                dim: spec.dim,
                parents: spec.parents.iter().map(|p| NodeId(*p)).collect(),
            })
            .collect();
        CausalGraph::new(nodes)
    }

    /// Turns the edge `from → to` into `to → from`, leaving all other
    /// parent relations untouched.
    pub fn reverse_edge(&mut self, from: &str, to: &str) -> Result<()> {
        let from_id = self.node_id(from)?;
        let to_id = self.node_id(to)?;
        let to_pos = self.nodes.iter().position(|n| n.id == to_id).expect("found above");
        let from_pos = self.nodes.iter().position(|n| n.id == from_id).expect("found above");
        let Some(edge) = self.nodes[to_pos].parents.iter().position(|p| *p == from_id) else {
            return Err(Error::InvalidPlan(format!("no edge {from} -> {to} to reverse")));
        };
        self.nodes[to_pos].parents.remove(edge);
        if !self.nodes[from_pos].parents.contains(&to_id) {
            self.nodes[from_pos].parents.push(to_id);
        }
        Ok(())
    }

    fn node_id(&self, name: &str) -> Result<u32> {
        self.nodes
            .iter()
            .find(|n| n.name == name)
            .map(|n| n.id)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrainReport {
    pub name: String,
    /// Mean NLL on the training split at the final parameters (model units).
    pub train_nll: f64,
    /// Mean NLL on the held-out split (model units).
    pub heldout_nll: f64,
    /// Held-out NLL expressed in raw data units (adds the standardization
    /// log-volume per dimension).
    pub heldout_nll_raw: f64,
    pub epochs_run: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub scm: Scm,
    pub nodes: Vec<NodeTrainReport>,
}

struct NodeData {
    standardizer: Standardizer,
    cols: Vec<usize>,
}

fn node_data(spec: &NodeSpec, data: &Dataset, train: &Dataset) -> Result<NodeData> {
    let cols = data.node_columns(&spec.name, spec.dim)?;
    let mut mean = Vec::with_capacity(spec.dim);
    let mut std = Vec::with_capacity(spec.dim);
    for &c in &cols {
        let (m, s) = train.column_mean_std(c);
        mean.push(m);
        std.push(s);
    }
    Ok(NodeData { standardizer: Standardizer { mean, std }, cols })
}

fn standardized_block(info: &NodeData, row: &[f64]) -> Vec<f64> {
    info.cols
        .iter()
        .zip(info.standardizer.mean.iter().zip(&info.standardizer.std))
        .map(|(&c, (m, s))| (row[c] - m) / s)
        .collect()
}

/// Fits one mechanism per node against its parents on the first 80% of
/// `data`, reporting held-out NLL on the remainder. The returned model
/// carries the per-node standardizers and operates in standardized units.
pub fn train_scm(data: &Dataset, spec: &GraphSpec, opts: &TrainingOptions) -> Result<TrainedModel> {
    let graph = spec.to_graph()?;
    let (train, val) = data.split(TRAIN_SPLIT);
    if train.n_rows() == 0 || val.n_rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let infos: Vec<NodeData> = spec
        .nodes
        .iter()
        .map(|n| node_data(n, data, &train))
        .collect::<Result<_>>()?;

    let mut mechanisms = Vec::with_capacity(spec.nodes.len());
    let mut reports = Vec::with_capacity(spec.nodes.len());
    for (pos, node) in spec.nodes.iter().enumerate() {
        let parent_infos: Vec<&NodeData> = node
            .parents
            .iter()
            .map(|pid| {
                let p = spec
                    .nodes
                    .iter()
                    .position(|n| n.id == *pid)
                    .ok_or_else(|| Error::UnknownNode(pid.to_string()))?;
                Ok(&infos[p])
            })
            .collect::<Result<_>>()?;
        let gather = |rows: &Dataset| -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
            let mut parents = Vec::with_capacity(rows.n_rows());
            let mut targets = Vec::with_capacity(rows.n_rows());
            for row in rows.rows() {
                let mut pa = Vec::new();
                for info in &parent_infos {
                    pa.extend(standardized_block(info, row));
                }
                parents.push(pa);
                targets.push(standardized_block(&infos[pos], row));
            }
            (parents, targets)
        };
        let (tr_parents, tr_targets) = gather(&train);
        let (va_parents, va_targets) = gather(&val);
        let pa_dim = tr_parents[0].len();

        let init = match node.mechanism.as_str() {
            "affine" => Mechanism::Affine(AffineFlow::new_linear(node.dim, pa_dim)),
            "affine-tanh" => {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ u64::from(node.id));
                Mechanism::Affine(AffineFlow::new_tanh(node.dim, pa_dim, &mut rng))
            }
            "sigmoid" => {
                if node.dim != 1 {
                    return Err(Error::InvalidPlan(format!(
                        "sigmoid mechanism on node {} needs dim 1, got {}",
                        node.name, node.dim
                    )));
                }
                let flat: Vec<f64> = tr_targets.iter().map(|t| t[0]).collect();
                Mechanism::Sigmoid(sigmoid_warm_start(&tr_parents, &flat)?)
            }
            other => {
                return Err(Error::InvalidPlan(format!(
                    "unknown mechanism kind {other} for node {}",
                    node.name
                )))
            }
        };

        // Bounded-support flows keep the output box pinned at its warm-start
        // estimate: letting gradient steps shrink the box drives it toward the
        // training range, where held-out extremes fall outside the support and
        // the density is undefined. The remaining logit-space Gaussian part is
        // smooth, so it trains full-batch to the exact constrained optimum.
        let mut node_opts =
            TrainingOptions { seed: opts.seed.wrapping_add(pos as u64), ..opts.clone() };
        if node.mechanism == "sigmoid" {
            node_opts.frozen.extend(SigmoidFlow::BOX_PARAM_INDICES);
            node_opts.batch_size = usize::MAX;
            node_opts.epochs = opts.epochs.saturating_mul(4);
        }
        let (fitted, report) = train_flow_mle(&init, &tr_parents, &tr_targets, &node_opts)?;

        let mut heldout = 0.0;
        for (pa, x) in va_parents.iter().zip(&va_targets) {
            heldout += fitted.nll(pa, x)?;
        }
        heldout /= va_targets.len() as f64;
        let log_volume: f64 = infos[pos].standardizer.std.iter().map(|s| s.ln()).sum();
        reports.push(NodeTrainReport {
            name: node.name.clone(),
            train_nll: report.final_nll,
            heldout_nll: heldout,
            heldout_nll_raw: heldout + log_volume,
            epochs_run: report.epochs_run,
        });
        mechanisms.push(fitted);
    }

    let mut scm = Scm::new(graph, mechanisms)?;
    for (node, info) in spec.nodes.iter().zip(infos) {
        scm.set_standardizer(NodeId(node.id), Some(info.standardizer))?;
    }
    Ok(TrainedModel { scm, nodes: reports })
}

/// Abducts every dataset row (raw units) through the model.
pub fn abduct_dataset(scm: &Scm, data: &Dataset) -> Result<Vec<StructuredVector>> {
    (0..data.n_rows())
        .map(|idx| {
            let raw = row_to_observable(scm, data, idx)?;
            scm.abduct(&to_model_units(scm, &raw)?)
        })
        .collect()
}
