//! Python bindings: structural models, backtracking solvers, baselines, and
//! metrics, with plain dicts of `{node name: [values]}` at the boundary.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use deepbc::harness::{
    generate_morpho_dataset, scalar_to_model, scalar_to_raw, to_model_units, to_raw_units,
    train_scm, Dataset, GraphSpec,
};
use deepbc::mechanisms::TrainingOptions;
use deepbc::{
    causal_distance as causal_distance_rs, interventional_cf, load_scm, mode_deepbc,
    obs_distance as obs_distance_rs, plausible as plausible_rs, save_scm, scm_from_json,
    scm_to_json, sparse_deepbc, stochastic_deepbc, Antecedent, BacktrackingConfig,
    CounterfactualResult, DistanceKind, MetricKind, NodeId, Scm as ScmInner, StructuredVector,
};

fn err(e: deepbc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type ValueMap = BTreeMap<String, Vec<f64>>;

fn node_name(scm: &ScmInner, id: NodeId) -> String {
    scm.graph()
        .nodes()
        .iter()
        .find(|n| n.id == id)
        .map(|n| n.name.clone())
        .unwrap_or_else(|| format!("{id}"))
}

fn vector_to_map(scm: &ScmInner, v: &StructuredVector) -> ValueMap {
    scm.observable_layout()
        .ids()
        .iter()
        .map(|&id| (node_name(scm, id), v.block(id).expect("layout block").to_vec()))
        .collect()
}

fn map_to_vector(scm: &ScmInner, map: &ValueMap, what: &str) -> PyResult<StructuredVector> {
    let layout = scm.observable_layout();
    let mut flat = Vec::with_capacity(layout.total_dim());
    for &id in layout.ids() {
        let name = node_name(scm, id);
        let dim = layout.dim_of(id).expect("layout dim");
        let values = map.get(&name).ok_or_else(|| {
            PyValueError::new_err(format!("{what} is missing node '{name}'"))
        })?;
        if values.len() != dim {
            return Err(PyValueError::new_err(format!(
                "{what} node '{name}' has {} values, expected {dim}",
                values.len()
            )));
        }
        flat.extend_from_slice(values);
    }
    if map.len() != layout.ids().len() {
        let known: Vec<String> = layout.ids().iter().map(|&id| node_name(scm, id)).collect();
        for name in map.keys() {
            if !known.contains(name) {
                return Err(PyValueError::new_err(format!("{what} has unknown node '{name}'")));
            }
        }
    }
    StructuredVector::from_flat(layout.clone(), flat).map_err(err)
}

fn antecedent_from_map(scm: &ScmInner, map: &ValueMap) -> PyResult<Antecedent> {
    if map.is_empty() {
        return Err(PyValueError::new_err("antecedent needs at least one node"));
    }
    let mut targets = Vec::with_capacity(map.len());
    for (name, values) in map {
        let id = scm.node_id_by_name(name).map_err(err)?;
        targets.push((id, values.clone()));
    }
    Antecedent::new(targets).map_err(err)
}

#[allow(clippy::too_many_arguments)]
fn build_config(
    scm: &ScmInner,
    stochastic: bool,
    lambda: Option<f64>,
    iterations: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    weights: Option<BTreeMap<String, f64>>,
    distance: Option<String>,
) -> PyResult<BacktrackingConfig> {
    let mut cfg = if stochastic {
        BacktrackingConfig::stochastic_default()
    } else {
        BacktrackingConfig::default()
    };
    if let Some(l) = lambda {
        cfg = cfg.with_lambda(l).map_err(err)?;
    }
    if let Some(t) = iterations {
        cfg = cfg.with_iterations(t).map_err(err)?;
    }
    if let Some(s) = step_size {
        cfg = cfg.with_step_size(s).map_err(err)?;
    }
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(d) = distance {
        cfg = cfg.with_distance(DistanceKind::parse(&d).map_err(err)?);
    }
    if let Some(w) = weights {
        for (name, weight) in w {
            let id = scm.node_id_by_name(&name).map_err(err)?;
            cfg = cfg.with_weight(id, weight).map_err(err)?;
        }
    }
    Ok(cfg)
}

fn attribute_ids(scm: &ScmInner, nodes: Option<Vec<String>>) -> PyResult<Vec<NodeId>> {
    match nodes {
        None => Ok(scm.observable_layout().ids().to_vec()),
        Some(names) => names
            .iter()
            .map(|n| scm.node_id_by_name(n).map_err(err))
            .collect(),
    }
}

/// A structural causal model with invertible mechanisms and per-node
/// standardizers, loaded from or saved to a JSON model file.
#[pyclass(frozen, name = "Scm")]
struct PyScm {
    inner: ScmInner,
}

#[pymethods]
impl PyScm {
    /// Load a model from a JSON file produced by `save` or the CLI trainer.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_scm(path).map_err(err)? })
    }

    /// Parse a model from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: scm_from_json(text).map_err(err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_scm(&self.inner, path).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        scm_to_json(&self.inner).map_err(err)
    }

    /// Node names in topological order.
    fn node_names(&self) -> Vec<String> {
        self.inner
            .observable_layout()
            .ids()
            .iter()
            .map(|&id| node_name(&self.inner, id))
            .collect()
    }

    /// Output dimension of each node.
    fn node_dims(&self) -> BTreeMap<String, usize> {
        let layout = self.inner.observable_layout();
        layout
            .ids()
            .iter()
            .map(|&id| (node_name(&self.inner, id), layout.dim_of(id).expect("layout dim")))
            .collect()
    }

    /// Draw latents from the prior and push them through the mechanisms.
    /// Returns `(u, x)` in model units.
    fn sample(&self, seed: u64) -> PyResult<(ValueMap, ValueMap)> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let u = self.inner.sample_prior(&mut rng);
        let x = self.inner.reduced_form(&u).map_err(err)?;
        Ok((latent_map(&self.inner, &u), vector_to_map(&self.inner, &x)))
    }

    /// Observation for given latents, in model units.
    fn reduced_form(&self, u: ValueMap) -> PyResult<ValueMap> {
        let u = latent_from_map(&self.inner, &u)?;
        let x = self.inner.reduced_form(&u).map_err(err)?;
        Ok(vector_to_map(&self.inner, &x))
    }

    /// Latents that reproduce the observation exactly.
    fn abduct(&self, x: ValueMap) -> PyResult<ValueMap> {
        let x = map_to_vector(&self.inner, &x, "observation")?;
        let u = self.inner.abduct(&x).map_err(err)?;
        Ok(latent_map(&self.inner, &u))
    }

    /// Model units → raw data units for a full observation.
    fn to_raw(&self, x: ValueMap) -> PyResult<ValueMap> {
        let x = map_to_vector(&self.inner, &x, "observation")?;
        let raw = to_raw_units(&self.inner, &x).map_err(err)?;
        Ok(vector_to_map(&self.inner, &raw))
    }

    /// Raw data units → model units for a full observation.
    fn to_model(&self, raw: ValueMap) -> PyResult<ValueMap> {
        let raw = map_to_vector(&self.inner, &raw, "observation")?;
        let x = to_model_units(&self.inner, &raw).map_err(err)?;
        Ok(vector_to_map(&self.inner, &x))
    }

    /// One scalar component, raw data units → model units.
    fn scalar_to_model(&self, node: &str, value: f64) -> PyResult<f64> {
        let id = self.inner.node_id_by_name(node).map_err(err)?;
        Ok(scalar_to_model(&self.inner, id, value))
    }

    /// One scalar component, model units → raw data units.
    fn scalar_to_raw(&self, node: &str, value: f64) -> PyResult<f64> {
        let id = self.inner.node_id_by_name(node).map_err(err)?;
        Ok(scalar_to_raw(&self.inner, id, value))
    }

    fn __repr__(&self) -> String {
        format!("Scm(nodes={:?})", self.node_names())
    }
}

fn latent_map(scm: &ScmInner, u: &StructuredVector) -> ValueMap {
    scm.latent_layout()
        .ids()
        .iter()
        .map(|&id| (node_name(scm, id), u.block(id).expect("latent block").to_vec()))
        .collect()
}

fn latent_from_map(scm: &ScmInner, map: &ValueMap) -> PyResult<StructuredVector> {
    let layout = scm.latent_layout();
    let mut flat = Vec::with_capacity(layout.total_dim());
    for &id in layout.ids() {
        let name = node_name(scm, id);
        let dim = layout.dim_of(id).expect("layout dim");
        let values = map
            .get(&name)
            .ok_or_else(|| PyValueError::new_err(format!("latents are missing node '{name}'")))?;
        if values.len() != dim {
            return Err(PyValueError::new_err(format!(
                "latent node '{name}' has {} values, expected {dim}",
                values.len()
            )));
        }
        flat.extend_from_slice(values);
    }
    StructuredVector::from_flat(layout.clone(), flat).map_err(err)
}

/// One counterfactual answer. Values are dicts keyed by node name; `x_star`
/// and `u_star` are in model units, `x_star_raw` in raw data units.
#[pyclass(frozen, name = "Counterfactual")]
struct PyCounterfactual {
    #[pyo3(get)]
    x_star: ValueMap,
    #[pyo3(get)]
    x_star_raw: ValueMap,
    #[pyo3(get)]
    u_star: ValueMap,
    #[pyo3(get)]
    residual: f64,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    energy_trace: Vec<f64>,
}

#[pymethods]
impl PyCounterfactual {
    fn __repr__(&self) -> String {
        format!(
            "Counterfactual(residual={:.3e}, iterations={})",
            self.residual, self.iterations
        )
    }
}

fn wrap_result(scm: &ScmInner, r: CounterfactualResult) -> PyResult<PyCounterfactual> {
    let raw = to_raw_units(scm, &r.x_star).map_err(err)?;
    Ok(PyCounterfactual {
        x_star: vector_to_map(scm, &r.x_star),
        x_star_raw: vector_to_map(scm, &raw),
        u_star: latent_map(scm, &r.u_star),
        residual: r.residual,
        iterations: r.iterations,
        energy_trace: r.energy_trace,
    })
}

/// Backtracking counterfactual: the most plausible latent change that meets
/// the antecedent under the distance penalty.
#[pyfunction]
#[pyo3(signature = (scm, x, antecedent, *, lambda_=None, iterations=None, step_size=None, seed=None, weights=None, distance=None))]
#[allow(clippy::too_many_arguments)]
fn mode(
    scm: &PyScm,
    x: ValueMap,
    antecedent: ValueMap,
    lambda_: Option<f64>,
    iterations: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    weights: Option<BTreeMap<String, f64>>,
    distance: Option<String>,
) -> PyResult<PyCounterfactual> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let ante = antecedent_from_map(inner, &antecedent)?;
    let cfg = build_config(inner, false, lambda_, iterations, step_size, seed, weights, distance)?;
    wrap_result(inner, mode_deepbc(inner, &x, &ante, &cfg).map_err(err)?)
}

/// Backtracking counterfactual that changes at most `m` latent blocks.
#[pyfunction]
#[pyo3(signature = (scm, x, antecedent, m, *, lambda_=None, iterations=None, step_size=None, seed=None, weights=None, distance=None))]
#[allow(clippy::too_many_arguments)]
fn sparse(
    scm: &PyScm,
    x: ValueMap,
    antecedent: ValueMap,
    m: usize,
    lambda_: Option<f64>,
    iterations: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    weights: Option<BTreeMap<String, f64>>,
    distance: Option<String>,
) -> PyResult<PyCounterfactual> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let ante = antecedent_from_map(inner, &antecedent)?;
    let cfg = build_config(inner, false, lambda_, iterations, step_size, seed, weights, distance)?;
    wrap_result(inner, sparse_deepbc(inner, &x, &ante, m, &cfg).map_err(err)?)
}

/// Interventional counterfactual baseline: replace the antecedent nodes'
/// assignments and push the factual latents through. `u_star` holds the
/// unchanged factual latents and `residual` is zero by construction.
#[pyfunction]
fn interventional(scm: &PyScm, x: ValueMap, antecedent: ValueMap) -> PyResult<PyCounterfactual> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let ante = antecedent_from_map(inner, &antecedent)?;
    let r = interventional_cf(inner, &x, &ante).map_err(err)?;
    let raw = to_raw_units(inner, &r.x_star).map_err(err)?;
    Ok(PyCounterfactual {
        x_star: vector_to_map(inner, &r.x_star),
        x_star_raw: vector_to_map(inner, &raw),
        u_star: latent_map(inner, &r.u_factual),
        residual: 0.0,
        iterations: 0,
        energy_trace: Vec::new(),
    })
}

/// Posterior samples of counterfactual latents from the Langevin sampler.
#[pyfunction]
#[pyo3(signature = (scm, x, antecedent, n_samples, *, lambda_=None, iterations=None, step_size=None, seed=None, weights=None, distance=None))]
#[allow(clippy::too_many_arguments)]
fn stochastic(
    scm: &PyScm,
    x: ValueMap,
    antecedent: ValueMap,
    n_samples: usize,
    lambda_: Option<f64>,
    iterations: Option<usize>,
    step_size: Option<f64>,
    seed: Option<u64>,
    weights: Option<BTreeMap<String, f64>>,
    distance: Option<String>,
) -> PyResult<Vec<PyCounterfactual>> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let ante = antecedent_from_map(inner, &antecedent)?;
    let cfg = build_config(inner, true, lambda_, iterations, step_size, seed, weights, distance)?;
    stochastic_deepbc(inner, &x, &ante, &cfg, n_samples)
        .map_err(err)?
        .into_iter()
        .map(|r| wrap_result(inner, r))
        .collect()
}

/// Mean per-node latent shift between two observations (lower is a more
/// plausible counterfactual). `metric` is "squ" or "abs"; `nodes` defaults
/// to every node.
#[pyfunction]
#[pyo3(signature = (scm, x, x_star, *, metric="squ", nodes=None))]
fn causal_distance(
    scm: &PyScm,
    x: ValueMap,
    x_star: ValueMap,
    metric: &str,
    nodes: Option<Vec<String>>,
) -> PyResult<f64> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let x_star = map_to_vector(inner, &x_star, "counterfactual")?;
    let kind = MetricKind::parse(metric).map_err(err)?;
    let attrs = attribute_ids(inner, nodes)?;
    causal_distance_rs(inner, &x, &x_star, kind, &attrs).map_err(err)
}

/// Mean per-node distance between the raw observation blocks.
#[pyfunction]
#[pyo3(signature = (scm, x, x_star, *, metric="squ", nodes=None))]
fn obs_distance(
    scm: &PyScm,
    x: ValueMap,
    x_star: ValueMap,
    metric: &str,
    nodes: Option<Vec<String>>,
) -> PyResult<f64> {
    let inner = &scm.inner;
    let x = map_to_vector(inner, &x, "observation")?;
    let x_star = map_to_vector(inner, &x_star, "counterfactual")?;
    let kind = MetricKind::parse(metric).map_err(err)?;
    let attrs = attribute_ids(inner, nodes)?;
    obs_distance_rs(&x, &x_star, kind, &attrs).map_err(err)
}

/// Mean log-density of the counterfactual under the model (higher is more
/// plausible).
#[pyfunction]
#[pyo3(signature = (scm, x_star, *, nodes=None))]
fn plausible(scm: &PyScm, x_star: ValueMap, nodes: Option<Vec<String>>) -> PyResult<f64> {
    let inner = &scm.inner;
    let x_star = map_to_vector(inner, &x_star, "counterfactual")?;
    let attrs = attribute_ids(inner, nodes)?;
    plausible_rs(inner, &x_star, &attrs).map_err(err)
}

/// Synthetic morphometry table: thickness, intensity, and a 4-dimensional
/// image summary per row, in raw units. Returns `(columns, rows)`.
#[pyfunction]
fn generate_dataset(n: usize, seed: u64) -> PyResult<(Vec<String>, Vec<Vec<f64>>)> {
    let data = generate_morpho_dataset(n, seed).map_err(err)?;
    Ok((data.columns().to_vec(), data.rows().to_vec()))
}

/// Fit the morphometry graph to a `(columns, rows)` table by maximum
/// likelihood. `reverse` optionally flips one edge, e.g.
/// `("thickness", "intensity")`. Returns the model and each node's held-out
/// negative log-likelihood in raw units.
#[pyfunction]
#[pyo3(signature = (columns, rows, *, epochs=None, seed=None, reverse=None))]
fn train_morpho(
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
    epochs: Option<usize>,
    seed: Option<u64>,
    reverse: Option<(String, String)>,
) -> PyResult<(PyScm, BTreeMap<String, f64>)> {
    let data = Dataset::new(columns, rows).map_err(err)?;
    let mut spec = GraphSpec::morpho();
    if let Some((from, to)) = reverse {
        spec.reverse_edge(&from, &to).map_err(err)?;
    }
    let mut opts = TrainingOptions::default();
    if let Some(e) = epochs {
        opts.epochs = e;
    }
    if let Some(s) = seed {
        opts.seed = s;
    }
    let trained = train_scm(&data, &spec, &opts).map_err(err)?;
    let heldout = trained
        .nodes
        .iter()
        .map(|n| (n.name.clone(), n.heldout_nll_raw))
        .collect();
    Ok((PyScm { inner: trained.scm }, heldout))
}

#[pymodule]
fn deepbc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScm>()?;
    m.add_class::<PyCounterfactual>()?;
    m.add_function(wrap_pyfunction!(mode, m)?)?;
    m.add_function(wrap_pyfunction!(sparse, m)?)?;
    m.add_function(wrap_pyfunction!(interventional, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic, m)?)?;
    m.add_function(wrap_pyfunction!(causal_distance, m)?)?;
    m.add_function(wrap_pyfunction!(obs_distance, m)?)?;
    m.add_function(wrap_pyfunction!(plausible, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_morpho, m)?)?;
    Ok(())
}
