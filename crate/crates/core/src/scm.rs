//! Structural causal model: a DAG plus one mechanism per node, with the
//! reduced form F mapping latents to observables and its exact inverse.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CausalGraph, Node, NodeId};
use crate::mechanisms::Mechanism;
use crate::vector::{Layout, StructuredVector};

/// Per-node affine data transform applied outside the model: raw = mean + std * model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn to_model(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn to_raw(&self, model: &[f64]) -> Vec<f64> {
        model
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| m + s * v)
            .collect()
    }
}

/// An antecedent: target values `x*_S` for an ordered set of nodes `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Antecedent {
    targets: Vec<(NodeId, Vec<f64>)>,
}

impl Antecedent {
    pub fn new(targets: Vec<(NodeId, Vec<f64>)>) -> Result<Self> {
        for (i, (id, _)) in targets.iter().enumerate() {
            if targets[..i].iter().any(|(other, _)| other == id) {
                return Err(Error::InvalidPlan(format!("duplicate antecedent node {id}")));
            }
        }
        Ok(Self { targets })
    }

    pub fn single(id: NodeId, values: Vec<f64>) -> Self {
        Self { targets: vec![(id, values)] }
    }

    pub fn targets(&self) -> &[(NodeId, Vec<f64>)] {
        &self.targets
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.targets.iter().map(|(id, _)| *id).collect()
    }

    /// Stacked target vector in antecedent order.
    pub fn stacked_values(&self) -> DVector<f64> {
        let flat: Vec<f64> =
            self.targets.iter().flat_map(|(_, v)| v.iter().copied()).collect();
        DVector::from_vec(flat)
    }

    pub fn total_dim(&self) -> usize {
        self.targets.iter().map(|(_, v)| v.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of `validate_scm`: failures are reported, not thrown.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<ValidationCheck>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scm {
    graph: CausalGraph,
    mechanisms: Vec<Mechanism>,
    topo: Vec<NodeId>,
    x_layout: Arc<Layout>,
    u_layout: Arc<Layout>,
    standardizers: Vec<Option<Standardizer>>,
}

impl Scm {
    /// `mechanisms[i]` belongs to `graph.nodes()[i]`. Fails on cyclic graphs
    /// or a mechanism-count mismatch; per-node signature problems are left to
    /// `validate_scm` and surface as dimension errors at evaluation time.
    pub fn new(graph: CausalGraph, mechanisms: Vec<Mechanism>) -> Result<Self> {
        if mechanisms.len() != graph.len() {
            return Err(Error::DimensionMismatch {
                context: "one mechanism per node".to_string(),
                expected: graph.len(),
                actual: mechanisms.len(),
            });
        }
        let topo = graph.topological_order()?;
        let x_layout = Layout::new(
            graph.nodes().iter().map(|n| (n.id, n.name.clone(), n.dim)).collect(),
        );
        let u_layout = Layout::new(
            graph
                .nodes()
                .iter()
                .zip(&mechanisms)
                .map(|(n, m)| (n.id, n.name.clone(), m.latent_dim()))
                .collect(),
        );
        let standardizers = vec![None; graph.len()];
        Ok(Self { graph, mechanisms, topo, x_layout, u_layout, standardizers })
    }

    pub fn graph(&self) -> &CausalGraph {
        &self.graph
    }

    pub fn mechanism(&self, id: NodeId) -> Option<&Mechanism> {
        self.graph.position(id).map(|pos| &self.mechanisms[pos])
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    /// Cached deterministic topological order.
    pub fn topological_order(&self) -> &[NodeId] {
        &self.topo
    }

    pub fn observable_layout(&self) -> &Arc<Layout> {
        &self.x_layout
    }

    pub fn latent_layout(&self) -> &Arc<Layout> {
        &self.u_layout
    }

    pub fn standardizer(&self, id: NodeId) -> Option<&Standardizer> {
        self.graph.position(id).and_then(|pos| self.standardizers[pos].as_ref())
    }

    pub fn set_standardizer(&mut self, id: NodeId, st: Option<Standardizer>) -> Result<()> {
        let pos = self
            .graph
            .position(id)
            .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        self.standardizers[pos] = st;
        Ok(())
    }

    pub fn node_id_by_name(&self, name: &str) -> Result<NodeId> {
        self.graph
            .node_by_name(name)
            .map(|n| n.id)
            .ok_or_else(|| Error::UnknownNode(name.to_string()))
    }

    pub(crate) fn parent_values(&self, x: &StructuredVector, pos: usize) -> Vec<f64> {
        let node = &self.graph.nodes()[pos];
        let mut pa = Vec::new();
        for parent in &node.parents {
            pa.extend_from_slice(x.block(*parent).expect("parent exists"));
        }
        pa
    }

    pub fn check_antecedent(&self, antecedent: &Antecedent) -> Result<()> {
        for (id, values) in antecedent.targets() {
            let node = self
                .graph
                .node(*id)
                .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
            if node.dim != values.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("antecedent values for node {}", node.name),
                    expected: node.dim,
                    actual: values.len(),
                });
            }
        }
        Ok(())
    }

    /// Reduced form F: evaluates every mechanism in topological order.
    pub fn reduced_form(&self, u: &StructuredVector) -> Result<StructuredVector> {
        self.check_latent(u)?;
        let mut x = StructuredVector::zeros(self.x_layout.clone());
        for id in &self.topo {
            let pos = self.graph.position(*id).expect("topo node exists");
            let pa = self.parent_values(&x, pos);
            let out = self.mechanisms[pos].forward(&pa, u.block(*id).expect("latent block"))?;
            x.set_block(*id, &out)?;
        }
        Ok(x)
    }

    /// Selected blocks of the reduced form, stacked in the order of `selected`.
    /// Computed by a full forward pass followed by block extraction.
    pub fn reduced_form_selected(
        &self,
        u: &StructuredVector,
        selected: &[NodeId],
    ) -> Result<DVector<f64>> {
        let x = self.reduced_form(u)?;
        self.stack_blocks(&x, selected)
    }

    pub fn stack_blocks(&self, x: &StructuredVector, selected: &[NodeId]) -> Result<DVector<f64>> {
        let mut out = Vec::new();
        for id in selected {
            out.extend_from_slice(
                x.block(*id).ok_or_else(|| Error::UnknownNode(id.to_string()))?,
            );
        }
        Ok(DVector::from_vec(out))
    }

    /// Abduction F^-1: recovers every latent block from an observable vector.
    pub fn abduct(&self, x: &StructuredVector) -> Result<StructuredVector> {
        self.check_observable(x)?;
        let mut u = StructuredVector::zeros(self.u_layout.clone());
        for id in &self.topo {
            let pos = self.graph.position(*id).expect("topo node exists");
            let pa = self.parent_values(x, pos);
            let block = self.mechanisms[pos].inverse(&pa, x.block(*id).expect("block"))?;
            u.set_block(*id, &block)?;
        }
        Ok(u)
    }

    /// Forward pass that also assembles d F_S / d u by the chain rule along
    /// the topological order. Rows follow `selected` order, columns the
    /// latent layout.
    pub fn forward_with_jacobian(
        &self,
        u: &StructuredVector,
        selected: &[NodeId],
    ) -> Result<(StructuredVector, DMatrix<f64>)> {
        self.check_latent(u)?;
        let total_u = self.u_layout.total_dim();
        let mut x = StructuredVector::zeros(self.x_layout.clone());
        let mut node_jacs: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); self.graph.len()];
        for id in &self.topo {
            let pos = self.graph.position(*id).expect("topo node exists");
            let node = &self.graph.nodes()[pos];
            let pa = self.parent_values(&x, pos);
            let u_block = u.block(*id).expect("latent block");
            let mech = &self.mechanisms[pos];
            let out = mech.forward(&pa, u_block)?;

            let mut d = DMatrix::zeros(out.len(), total_u);
            let a = mech.du_jacobian(&pa, u_block)?;
            let u_off = self.u_layout.offset_of(*id).expect("latent offset");
            d.view_mut((0, u_off), (a.nrows(), a.ncols())).copy_from(&a);
            if !node.parents.is_empty() {
                let b = mech.pa_jacobian(&pa, u_block)?;
                let mut row_off = 0;
                for parent in &node.parents {
                    let p_pos = self.graph.position(*parent).expect("parent exists");
                    let p_dim = self.graph.nodes()[p_pos].dim;
                    let b_cols = b.columns(row_off, p_dim);
                    d += b_cols * &node_jacs[p_pos];
                    row_off += p_dim;
                }
            }
            x.set_block(*id, &out)?;
            node_jacs[pos] = d;
        }

        let rows: usize = selected
            .iter()
            .map(|id| self.graph.node(*id).map_or(0, |n| n.dim))
            .sum();
        let mut jac = DMatrix::zeros(rows, total_u);
        let mut row = 0;
        for id in selected {
            let pos = self
                .graph
                .position(*id)
                .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
            let d = &node_jacs[pos];
            jac.view_mut((row, 0), (d.nrows(), total_u)).copy_from(d);
            row += d.nrows();
        }
        Ok((x, jac))
    }

    /// d F_S / d u at `u`, rows in `selected` order.
    pub fn jacobian_selected(
        &self,
        u: &StructuredVector,
        selected: &[NodeId],
    ) -> Result<DMatrix<f64>> {
        Ok(self.forward_with_jacobian(u, selected)?.1)
    }

    /// Draws a latent vector from the standard Gaussian prior.
    pub fn sample_prior(&self, rng: &mut impl rand::Rng) -> StructuredVector {
        let mut u = StructuredVector::zeros(self.u_layout.clone());
        for v in u.flat_mut() {
            *v = StandardNormal.sample(rng);
        }
        u
    }

    fn check_latent(&self, u: &StructuredVector) -> Result<()> {
        if u.layout().total_dim() != self.u_layout.total_dim()
            || u.layout().ids() != self.u_layout.ids()
        {
            return Err(Error::DimensionMismatch {
                context: "latent vector layout".to_string(),
                expected: self.u_layout.total_dim(),
                actual: u.layout().total_dim(),
            });
        }
        Ok(())
    }

    fn check_observable(&self, x: &StructuredVector) -> Result<()> {
        if x.layout().total_dim() != self.x_layout.total_dim()
            || x.layout().ids() != self.x_layout.ids()
        {
            return Err(Error::DimensionMismatch {
                context: "observable vector layout".to_string(),
                expected: self.x_layout.total_dim(),
                actual: x.layout().total_dim(),
            });
        }
        Ok(())
    }
}

/// Structural checks with 16 standard-normal probes (fixed seed 0).
/// Returns a report; failures are reported, not thrown.
pub fn validate_scm(scm: &Scm) -> ValidationReport {
    use rand::SeedableRng;
    let mut checks = Vec::new();

    let acyclic = scm.graph().topological_order();
    checks.push(ValidationCheck {
        name: "acyclic".to_string(),
        passed: acyclic.is_ok(),
        detail: match &acyclic {
            Ok(order) => format!("topological order over {} nodes", order.len()),
            Err(e) => e.to_string(),
        },
    });

    for (node, mech) in scm.graph().nodes().iter().zip(scm.mechanisms()) {
        let parent_dim: usize = node
            .parents
            .iter()
            .map(|p| scm.graph().node(*p).map_or(0, |n| n.dim))
            .sum();
        let ok = mech.parent_dim() == parent_dim && mech.output_dim() == node.dim;
        checks.push(ValidationCheck {
            name: format!("signature[{}]", node.name),
            passed: ok,
            detail: format!(
                "mechanism {} maps ({} parents, {} latent) -> {}, node wants ({} parents, dim {})",
                mech.kind_name(),
                mech.parent_dim(),
                mech.latent_dim(),
                mech.output_dim(),
                parent_dim,
                node.dim
            ),
        });
    }

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut worst: f64 = 0.0;
    let mut failure: Option<String> = None;
    for probe in 0..16 {
        let u = scm.sample_prior(&mut rng);
        match scm.reduced_form(&u).and_then(|x| scm.abduct(&x)) {
            Ok(u_back) => {
                let mut err: f64 = 0.0;
                let mut finite = true;
                for (a, b) in u.flat().iter().zip(u_back.flat()) {
                    let diff = (a - b).abs();
                    if !diff.is_finite() {
                        finite = false;
                        break;
                    }
                    err = err.max(diff);
                }
                if !finite {
                    failure = Some(format!("probe {probe}: non-finite round trip"));
                    break;
                }
                worst = worst.max(err);
            }
            Err(e) => {
                failure = Some(format!("probe {probe}: {e}"));
                break;
            }
        }
    }
    checks.push(ValidationCheck {
        name: "round-trip".to_string(),
        passed: failure.is_none() && worst <= 1e-8,
        detail: failure.unwrap_or_else(|| format!("max |abduct(F(u)) - u| = {worst:.3e}")),
    });

    ValidationReport { checks }
}

#[derive(Debug, Serialize, Deserialize)]
struct NodeSpec {
    id: NodeId,
    name: String,
    dim: usize,
    parents: Vec<NodeId>,
    mechanism: Mechanism,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    standardizer: Option<Standardizer>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScmSpec {
    nodes: Vec<NodeSpec>,
}

pub fn scm_to_json(scm: &Scm) -> Result<String> {
    let spec = ScmSpec {
        nodes: scm
            .graph()
            .nodes()
            .iter()
            .zip(scm.mechanisms())
            .zip(&scm.standardizers)
            .map(|((node, mech), st)| NodeSpec {
                id: node.id,
                name: node.name.clone(),
                dim: node.dim,
                parents: node.parents.clone(),
                mechanism: mech.clone(),
                standardizer: st.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&spec)?)
}

pub fn scm_from_json(json: &str) -> Result<Scm> {
    let spec: ScmSpec = serde_json::from_str(json)?;
    let nodes = spec
        .nodes
        .iter()
        .map(|n| Node {
            id: n.id,
            name: n.name.clone(),
            dim: n.dim,
            parents: n.parents.clone(),
        })
        .collect();
    let graph = CausalGraph::new(nodes)?;
    let mechanisms = spec.nodes.iter().map(|n| n.mechanism.clone()).collect();
    let mut scm = Scm::new(graph, mechanisms)?;
    for node in spec.nodes {
        if let Some(st) = node.standardizer {
            scm.set_standardizer(node.id, Some(st))?;
        }
    }
    Ok(scm)
}

pub fn save_scm(scm: &Scm, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, scm_to_json(scm)?)?;
    Ok(())
}

pub fn load_scm(path: impl AsRef<Path>) -> Result<Scm> {
    let path = path.as_ref();
    let json = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::ModelNotFound(path.display().to_string())
        } else {
            Error::Io(e)
        }
    })?;
    scm_from_json(&json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Node;
    use crate::mechanisms::{
        AffineFlow, CategoricalMechanism, LinearPredictor, SigmoidFlow,
    };
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn mixed_scm() -> Scm {
        // 1: root affine (dim 2); 2: sigmoid child of 1; 3: categorical child
        // of 2 (K = 3); 4: deterministic predictor of 1.
        let graph = CausalGraph::new(vec![
            Node { id: NodeId(1), name: "root".into(), dim: 2, parents: vec![] },
            Node { id: NodeId(2), name: "mid".into(), dim: 1, parents: vec![NodeId(1)] },
            Node { id: NodeId(3), name: "label".into(), dim: 3, parents: vec![NodeId(2)] },
            Node { id: NodeId(4), name: "score".into(), dim: 1, parents: vec![NodeId(1)] },
        ])
        .unwrap();
        let inner = Mechanism::Affine(AffineFlow {
            loc: crate::mechanisms::Conditioner::Linear {
                weight: vec![vec![0.4], vec![-0.3]],
                bias: vec![0.1, 0.2],
            },
            log_scale: crate::mechanisms::Conditioner::Linear {
                weight: vec![vec![0.0], vec![0.1]],
                bias: vec![0.0, -0.2],
            },
        });
        let mechanisms = vec![
            Mechanism::Affine(AffineFlow::with_constants(&[0.5, -1.0], &[1.0, 2.0])),
            Mechanism::Sigmoid(SigmoidFlow::from_constants(
                3.0,
                0.7,
                vec![0.4, -0.8],
                0.1,
                -1.5,
            )),
            Mechanism::Categorical(CategoricalMechanism::new(3, inner).unwrap()),
            Mechanism::Predictor(LinearPredictor::new(vec![vec![1.0, -2.0]], vec![0.3])),
        ];
        Scm::new(graph, mechanisms).unwrap()
    }

    fn probe_latent(scm: &Scm, seed: u64) -> StructuredVector {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        scm.sample_prior(&mut rng)
    }

    #[test]
    fn latent_and_observable_layouts_differ_where_expected() {
        let scm = mixed_scm();
        assert_eq!(scm.observable_layout().total_dim(), 2 + 1 + 3 + 1);
        // Categorical latent is K-1 = 2; predictor latent is empty.
        assert_eq!(scm.latent_layout().total_dim(), 2 + 1 + 2 + 0);
        assert_eq!(scm.latent_layout().dim_of(NodeId(4)), Some(0));
    }

    #[test]
    fn abduct_inverts_reduced_form() {
        let scm = mixed_scm();
        for seed in 0..8 {
            let u = probe_latent(&scm, seed);
            let x = scm.reduced_form(&u).unwrap();
            let u_back = scm.abduct(&x).unwrap();
            for (a, b) in u.flat().iter().zip(u_back.flat()) {
                assert!((a - b).abs() < 1e-8, "round trip {a} vs {b}");
            }
        }
    }

    #[test]
    fn predictor_block_is_recomputed_not_abducted() {
        let scm = mixed_scm();
        let u = probe_latent(&scm, 2);
        let mut x = scm.reduced_form(&u).unwrap();
        // Corrupting the deterministic block does not change abduction (no
        // latent exists for it), and the reduced form restores consistency.
        x.set_block(NodeId(4), &[99.0]).unwrap();
        let u_back = scm.abduct(&x).unwrap();
        for (a, b) in u.flat().iter().zip(u_back.flat()) {
            assert!((a - b).abs() < 1e-8);
        }
        let restored = scm.reduced_form(&u_back).unwrap();
        assert_ne!(restored.block(NodeId(4)).unwrap()[0], 99.0);
    }

    #[test]
    fn selected_reduced_form_matches_block_extraction() {
        let scm = mixed_scm();
        let u = probe_latent(&scm, 3);
        let x = scm.reduced_form(&u).unwrap();
        let sel = scm
            .reduced_form_selected(&u, &[NodeId(3), NodeId(1)])
            .unwrap();
        let expected: Vec<f64> = x
            .block(NodeId(3))
            .unwrap()
            .iter()
            .chain(x.block(NodeId(1)).unwrap())
            .copied()
            .collect();
        assert_eq!(sel.as_slice(), expected.as_slice());
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let scm = mixed_scm();
        let u = probe_latent(&scm, 5);
        let selected = [NodeId(2), NodeId(3), NodeId(4)];
        let jac = scm.jacobian_selected(&u, &selected).unwrap();
        let h = 1e-5;
        let mut fd = DMatrix::zeros(jac.nrows(), jac.ncols());
        for col in 0..u.len() {
            let mut hi = u.clone();
            let mut lo = u.clone();
            hi.flat_mut()[col] += h;
            lo.flat_mut()[col] -= h;
            let fhi = scm.reduced_form_selected(&hi, &selected).unwrap();
            let flo = scm.reduced_form_selected(&lo, &selected).unwrap();
            for row in 0..jac.nrows() {
                fd[(row, col)] = (fhi[row] - flo[row]) / (2.0 * h);
            }
        }
        assert_relative_eq!(jac, fd, epsilon = 1e-7, max_relative = 1e-5);
    }

    #[test]
    fn root_jacobian_rows_touch_only_own_latents() {
        let scm = mixed_scm();
        let u = probe_latent(&scm, 6);
        let jac = scm.jacobian_selected(&u, &[NodeId(1)]).unwrap();
        let off = scm.latent_layout().offset_of(NodeId(1)).unwrap();
        for row in 0..jac.nrows() {
            for col in 0..jac.ncols() {
                if col < off || col >= off + 2 {
                    assert_eq!(jac[(row, col)], 0.0);
                }
            }
        }
    }

    #[test]
    fn validation_reports_pass_and_failures() {
        let scm = mixed_scm();
        let report = validate_scm(&scm);
        assert!(report.passed(), "{report:?}");

        // Mis-wired parent dimension: mechanism expects 2 parent dims, node
        // provides 1.
        let graph = CausalGraph::new(vec![
            Node { id: NodeId(1), name: "a".into(), dim: 1, parents: vec![] },
            Node { id: NodeId(2), name: "b".into(), dim: 1, parents: vec![NodeId(1)] },
        ])
        .unwrap();
        let broken = Scm::new(
            graph,
            vec![
                Mechanism::Affine(AffineFlow::with_constants(&[0.0], &[1.0])),
                Mechanism::Affine(AffineFlow::new_linear(1, 2)),
            ],
        )
        .unwrap();
        let report = validate_scm(&broken);
        assert!(!report.passed());
        assert!(report.checks.iter().any(|c| c.name.starts_with("signature") && !c.passed));

        // Non-invertible stub: a scale overflowing to infinity breaks the
        // round trip without tripping construction.
        let graph = CausalGraph::new(vec![Node {
            id: NodeId(1),
            name: "a".into(),
            dim: 1,
            parents: vec![],
        }])
        .unwrap();
        let stub = Scm::new(
            graph,
            vec![Mechanism::Affine(AffineFlow {
                loc: crate::mechanisms::Conditioner::Linear { weight: vec![vec![]], bias: vec![0.0] },
                log_scale: crate::mechanisms::Conditioner::Linear {
                    weight: vec![vec![]],
                    bias: vec![1000.0],
                },
            })],
        )
        .unwrap();
        let report = validate_scm(&stub);
        assert!(report.checks.iter().any(|c| c.name == "round-trip" && !c.passed));
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let mut scm = mixed_scm();
        scm.set_standardizer(
            NodeId(2),
            Some(Standardizer { mean: vec![0.123456789012345], std: vec![1.9876543210987654] }),
        )
        .unwrap();
        let json = scm_to_json(&scm).unwrap();
        let back = scm_from_json(&json).unwrap();
        assert_eq!(scm, back);
        let json2 = scm_to_json(&back).unwrap();
        assert_eq!(json, json2, "serialization must be stable");
    }

    #[test]
    fn missing_model_file_is_reported() {
        match load_scm("/nonexistent/model.json") {
            Err(Error::ModelNotFound(_)) => {}
            other => panic!("expected ModelNotFound, got {other:?}"),
        }
    }

    #[test]
    fn antecedent_checks_nodes_and_dims() {
        let scm = mixed_scm();
        let ok = Antecedent::single(NodeId(2), vec![0.5]);
        scm.check_antecedent(&ok).unwrap();
        let bad_dim = Antecedent::single(NodeId(1), vec![0.5]);
        assert!(scm.check_antecedent(&bad_dim).is_err());
        let bad_node = Antecedent::single(NodeId(9), vec![0.5]);
        assert!(scm.check_antecedent(&bad_node).is_err());
        assert!(Antecedent::new(vec![
            (NodeId(1), vec![0.0, 0.0]),
            (NodeId(1), vec![0.0, 0.0])
        ])
        .is_err());
    }
}
