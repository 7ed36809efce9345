//! Causal DAG: nodes with ids, names, block dimensions, and parent lists.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a node. Stable across serialization; orders deterministically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub name: String,
    /// Dimension of the node's observable block (>= 1).
    pub dim: usize,
    pub parents: Vec<NodeId>,
}

/// Directed graph over nodes. Construction checks well-formedness of the node
/// list; acyclicity is checked by `topological_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalGraph {
    nodes: Vec<Node>,
    by_id: BTreeMap<NodeId, usize>,
    by_name: BTreeMap<String, usize>,
}

impl CausalGraph {
    pub fn new(nodes: Vec<Node>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        let mut by_name = BTreeMap::new();
        for (pos, node) in nodes.iter().enumerate() {
            if node.dim == 0 {
                return Err(Error::DimensionMismatch {
                    context: format!("node {} has dim 0", node.name),
                    expected: 1,
                    actual: 0,
                });
            }
            if by_id.insert(node.id, pos).is_some() {
                return Err(Error::InvalidPlan(format!("duplicate node id {}", node.id)));
            }
            if by_name.insert(node.name.clone(), pos).is_some() {
                return Err(Error::InvalidPlan(format!("duplicate node name {}", node.name)));
            }
        }
        for node in &nodes {
            for parent in &node.parents {
                if !by_id.contains_key(parent) {
                    return Err(Error::UnknownNode(format!(
                        "parent {} of node {} does not exist",
                        parent, node.name
                    )));
                }
                if *parent == node.id {
                    return Err(Error::CyclicGraph(node.id));
                }
            }
        }
        Ok(Self { nodes, by_id, by_name })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&Node> {
        self.position(id).map(|pos| &self.nodes[pos])
    }

    pub fn node_by_name(&self, name: &str) -> Option<&Node> {
        self.by_name.get(name).map(|&pos| &self.nodes[pos])
    }

    /// Total observable dimension (sum of node dims).
    pub fn total_dim(&self) -> usize {
        self.nodes.iter().map(|n| n.dim).sum()
    }

    /// Kahn's algorithm with a min-heap on node id, so nodes that become ready
    /// together are emitted in id order. Two calls yield identical orders.
    pub fn topological_order(&self) -> Result<Vec<NodeId>> {
        let mut indegree: BTreeMap<NodeId, usize> =
            self.nodes.iter().map(|n| (n.id, n.parents.len())).collect();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in &self.nodes {
            for parent in &node.parents {
                children.entry(*parent).or_default().push(node.id);
            }
        }
        let mut ready: BinaryHeap<Reverse<NodeId>> = indegree
            .iter()
            .filter(|(_, &deg)| deg == 0)
            .map(|(&id, _)| Reverse(id))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse(id)) = ready.pop() {
            order.push(id);
            for child in children.get(&id).into_iter().flatten() {
                let deg = indegree.get_mut(child).expect("child exists");
                *deg -= 1;
                if *deg == 0 {
                    ready.push(Reverse(*child));
                }
            }
        }
        if order.len() < self.nodes.len() {
            let stuck = indegree
                .iter()
                .filter(|(_, &deg)| deg > 0)
                .map(|(&id, _)| id)
                .min()
                .expect("at least one node remains on a cycle");
            return Err(Error::CyclicGraph(stuck));
        }
        Ok(order)
    }
}

/// Deterministic topological order of `graph` (ties broken by node id).
pub fn topological_order(graph: &CausalGraph) -> Result<Vec<NodeId>> {
    graph.topological_order()
}
