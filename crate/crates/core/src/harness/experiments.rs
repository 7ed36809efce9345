//! Experiment runners: antecedent sweeps, the wrong-graph ablation, the
//! repeated-query benchmark, and the posterior-sampling demo. Every runner
//! returns an in-memory table and optionally writes it as CSV.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::baselines::{deep_ce, interventional_cf};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::metrics::{causal_distance, obs_distance, plausible, MetricKind};
use crate::scm::{load_scm, Antecedent, Scm};
use crate::solvers::{
    energy, mode_deepbc, sparse_deepbc, stochastic_deepbc, BacktrackingConfig, DistanceKind,
};
use crate::vector::StructuredVector;

use super::dataset::{scalar_to_model, to_raw_units};

/// A CSV-backed table with string cells; numeric cells use shortest
/// round-trip formatting so files are reproducible bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                context: "table row".to_string(),
                expected: self.columns.len(),
                actual: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidPlan(format!("table has no column {name}")))
    }

    pub fn value(&self, row: usize, column: &str) -> Result<&str> {
        let col = self.column_index(column)?;
        self.rows
            .get(row)
            .map(|r| r[col].as_str())
            .ok_or_else(|| Error::InvalidPlan(format!("table row {row} out of range")))
    }

    pub fn f64(&self, row: usize, column: &str) -> Result<f64> {
        let v = self.value(row, column)?;
        v.parse::<f64>()
            .map_err(|_| Error::InvalidPlan(format!("table cell {v:?} is not numeric")))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row)?;
        }
        writer.flush().map_err(Error::Io)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Table> {
        let mut reader = csv::Reader::from_path(path)?;
        let columns: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
        let mut table = Table::new(columns);
        for record in reader.records() {
            table.push(record?.iter().map(|s| s.to_string()).collect())?;
        }
        Ok(table)
    }

    fn maybe_write(&self, path: &Option<PathBuf>) -> Result<()> {
        if let Some(p) = path {
            self.write_csv(p)?;
        }
        Ok(())
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Mode,
    Stochastic,
    Sparse,
    Interventional,
    DeepCe,
}

impl Method {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "mode" => Ok(Method::Mode),
            "stochastic" => Ok(Method::Stochastic),
            "sparse" => Ok(Method::Sparse),
            "interventional" => Ok(Method::Interventional),
            "deep-ce" => Ok(Method::DeepCe),
            other => Err(Error::InvalidPlan(format!("unknown method {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mode => "mode",
            Method::Stochastic => "stochastic",
            Method::Sparse => "sparse",
            Method::Interventional => "interventional",
            Method::DeepCe => "deep-ce",
        }
    }
}

/// Everything a runner needs to execute one experiment.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub model_path: PathBuf,
    pub reversed_model_path: Option<PathBuf>,
    pub antecedent_node: String,
    /// Antecedent values in raw data units.
    pub grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub distances: Vec<DistanceKind>,
    pub config: BacktrackingConfig,
    pub sparsity_m: usize,
    pub n_samples: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub out_path: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(model_path: impl Into<PathBuf>) -> Self {
        Self {
            model_path: model_path.into(),
            reversed_model_path: None,
            antecedent_node: String::new(),
            grid: Vec::new(),
            methods: vec![Method::Mode, Method::Interventional],
            distances: vec![
                DistanceKind::WeightedSquared,
                DistanceKind::Huber { delta: crate::solvers::HUBER_DELTA_DEFAULT },
            ],
            config: BacktrackingConfig::default(),
            sparsity_m: 1,
            n_samples: 400,
            repetitions: 500,
            seed: 0,
            out_path: None,
        }
    }

    fn scalar_antecedent(&self, scm: &Scm) -> Result<NodeId> {
        let id = scm.node_id_by_name(&self.antecedent_node)?;
        let dim = scm
            .observable_layout()
            .dim_of(id)
            .ok_or_else(|| Error::UnknownNode(self.antecedent_node.clone()))?;
        if dim != 1 {
            return Err(Error::InvalidPlan(format!(
                "grid experiments need a scalar antecedent node, {} has dim {dim}",
                self.antecedent_node
            )));
        }
        Ok(id)
    }

    fn require_grid(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidPlan("empty antecedent grid".to_string()));
        }
        Ok(())
    }
}

pub(crate) struct Solved {
    x_star: StructuredVector,
    u_star: StructuredVector,
    residual: f64,
    iterations: usize,
    energy_final: f64,
}

pub(crate) fn run_method(
    scm: &Scm,
    x_std: &StructuredVector,
    u0: &StructuredVector,
    method: Method,
    ante: &Antecedent,
    config: &BacktrackingConfig,
    sparsity_m: usize,
) -> Result<Solved> {
    let from_result = |r: crate::solvers::CounterfactualResult| -> Result<Solved> {
        let energy_final = match r.energy_trace.last() {
            Some(e) => *e,
            None => energy(scm, &r.u_star, u0, ante, config)?,
        };
        Ok(Solved {
            x_star: r.x_star,
            u_star: r.u_star,
            residual: r.residual,
            iterations: r.iterations,
            energy_final,
        })
    };
    match method {
        Method::Mode => from_result(mode_deepbc(scm, x_std, ante, config)?),
        Method::Sparse => from_result(sparse_deepbc(scm, x_std, ante, sparsity_m, config)?),
        Method::Stochastic => {
            let mut samples = stochastic_deepbc(scm, x_std, ante, config, 1)?;
            from_result(samples.remove(0))
        }
        Method::DeepCe => {
            let (_, head) = crate::baselines::two_node_structure(scm)?;
            let target = ante
                .targets()
                .iter()
                .find(|(id, _)| *id == head)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| {
                    Error::InvalidPlan("deep-ce needs the antecedent on the head node".to_string())
                })?;
            from_result(deep_ce(scm, x_std, &target, config)?)
        }
        Method::Interventional => {
            let iv = interventional_cf(scm, x_std, ante)?;
            let u_star = scm.abduct(&iv.x_star)?;
            let got = scm.stack_blocks(&iv.x_star, &ante.ids())?;
            let residual = (got - ante.stacked_values()).norm_squared();
            let energy_final = energy(scm, &u_star, u0, ante, config)?;
            Ok(Solved { x_star: iv.x_star, u_star, residual, iterations: 0, energy_final })
        }
    }
}

fn result_columns(scm: &Scm) -> Vec<String> {
    let mut cols = vec![
        "method".to_string(),
        "antecedent".to_string(),
        "antecedent_raw".to_string(),
        "antecedent_std".to_string(),
    ];
    let obs = scm.observable_layout().column_names();
    for prefix in ["x_raw", "xstar_raw", "x_std", "xstar_std"] {
        cols.extend(obs.iter().map(|c| format!("{prefix}.{c}")));
    }
    let lat = scm.latent_layout().column_names();
    for prefix in ["u", "ustar"] {
        cols.extend(lat.iter().map(|c| format!("{prefix}.{c}")));
    }
    cols.push("residual".to_string());
    cols.push("iterations".to_string());
    cols.push("energy_final".to_string());
    cols
}

fn push_state_values(
    row: &mut Vec<String>,
    scm: &Scm,
    x_std: &StructuredVector,
    u0: &StructuredVector,
    solved: &Solved,
) -> Result<()> {
    let x_raw = to_raw_units(scm, x_std)?;
    let xstar_raw = to_raw_units(scm, &solved.x_star)?;
    for v in x_raw
        .flat()
        .iter()
        .chain(xstar_raw.flat())
        .chain(x_std.flat())
        .chain(solved.x_star.flat())
        .chain(u0.flat())
        .chain(solved.u_star.flat())
    {
        row.push(fmt(*v));
    }
    row.push(fmt(solved.residual));
    row.push(fmt(solved.iterations as f64));
    row.push(fmt(solved.energy_final));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn result_row(
    scm: &Scm,
    method: &str,
    ante_desc: &str,
    ante_raw: f64,
    ante_std: f64,
    x_std: &StructuredVector,
    u0: &StructuredVector,
    solved: &Solved,
) -> Result<Vec<String>> {
    let mut row = vec![
        method.to_string(),
        ante_desc.to_string(),
        fmt(ante_raw),
        fmt(ante_std),
    ];
    push_state_values(&mut row, scm, x_std, u0, solved)?;
    Ok(row)
}

fn seeded_factual(scm: &Scm, seed: u64) -> Result<(StructuredVector, StructuredVector)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u0 = scm.sample_prior(&mut rng);
    let x = scm.reduced_form(&u0)?;
    Ok((u0, x))
}

/// One row per (grid value, method), in that nesting order, for a fixed
/// seeded factual. Grid values are raw units; the stochastic method
/// contributes its single chain endpoint (see `run_stochastic_demo` for
/// ensembles).
pub fn sweep_on(scm: &Scm, plan: &ExperimentPlan) -> Result<Table> {
    plan.require_grid()?;
    if plan.methods.is_empty() {
        return Err(Error::InvalidPlan("no methods requested".to_string()));
    }
    let node = plan.scalar_antecedent(scm)?;
    let (u0, x_std) = seeded_factual(scm, plan.seed)?;
    let mut table = Table::new(result_columns(scm));
    let chunks: Vec<Vec<Vec<String>>> = plan
        .grid
        .par_iter()
        .map(|&raw| {
            let std = scalar_to_model(scm, node, raw);
            let ante = Antecedent::single(node, vec![std]);
            let desc = format!("{}={}", plan.antecedent_node, fmt(raw));
            plan.methods
                .iter()
                .map(|&m| {
                    let solved =
                        run_method(scm, &x_std, &u0, m, &ante, &plan.config, plan.sparsity_m)?;
                    result_row(scm, m.name(), &desc, raw, std, &x_std, &u0, &solved)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for chunk in chunks {
        for row in chunk {
            table.push(row)?;
        }
    }
    table.maybe_write(&plan.out_path)?;
    Ok(table)
}

pub fn run_sweep(plan: &ExperimentPlan) -> Result<Table> {
    let scm = load_scm(&plan.model_path)?;
    sweep_on(&scm, plan)
}

/// Penalty strength for the invariance arm (antecedent on a root node, so
/// the hard-constraint regime stays cheap even for non-quadratic distances).
pub const WRONG_GRAPH_TIGHT_LAMBDA: f64 = 1e6;
/// Penalty strength for the ablation arm, where the antecedent couples to
/// several latents and first-order solves need a softer penalty to converge
/// within budget. Distances are only compared within one arm.
pub const WRONG_GRAPH_SOFT_LAMBDA: f64 = 1e3;

const TIGHT_STEP: f64 = 5e-8;
const TIGHT_ITERS: usize = 30_000;
const SOFT_STEP: f64 = 5e-5;
const SOFT_ITERS: usize = 60_000;

fn wrong_graph_config(base: &BacktrackingConfig, d: &DistanceKind, tight: bool) -> BacktrackingConfig {
    let lambda = if tight { WRONG_GRAPH_TIGHT_LAMBDA } else { WRONG_GRAPH_SOFT_LAMBDA };
    let cfg = base.clone().with_lambda(lambda).unwrap().with_distance(d.clone());
    if d.is_quadratic() {
        cfg.with_iterations(30).unwrap()
    } else if tight {
        cfg.with_step_size(TIGHT_STEP).unwrap().with_iterations(TIGHT_ITERS).unwrap()
    } else {
        cfg.with_step_size(SOFT_STEP).unwrap().with_iterations(SOFT_ITERS).unwrap()
    }
}

fn wrong_graph_rows(
    scm: &Scm,
    graph_label: &str,
    tight: bool,
    plan: &ExperimentPlan,
    table: &mut Table,
) -> Result<()> {
    let node = plan.scalar_antecedent(scm)?;
    let (u0, x_std) = seeded_factual(scm, plan.seed)?;
    let rows: Vec<Vec<Vec<String>>> = plan
        .grid
        .par_iter()
        .map(|&raw| {
            let std = scalar_to_model(scm, node, raw);
            let ante = Antecedent::single(node, vec![std]);
            plan.distances
                .iter()
                .map(|d| {
                    let cfg = wrong_graph_config(&plan.config, d, tight);
                    let solved =
                        run_method(scm, &x_std, &u0, Method::Mode, &ante, &cfg, plan.sparsity_m)?;
                    let xstar_raw = to_raw_units(scm, &solved.x_star)?;
                    let mut row = vec![
                        graph_label.to_string(),
                        d.name().to_string(),
                        format!("{}={}", plan.antecedent_node, fmt(raw)),
                        fmt(raw),
                        fmt(std),
                    ];
                    for v in xstar_raw.flat().iter().chain(solved.x_star.flat()) {
                        row.push(fmt(*v));
                    }
                    row.push(fmt(solved.residual));
                    row.push(fmt(solved.iterations as f64));
                    Ok(row)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    for chunk in rows {
        for row in chunk {
            table.push(row)?;
        }
    }
    Ok(())
}

fn wrong_graph_columns(scm: &Scm) -> Vec<String> {
    let mut cols = vec![
        "graph".to_string(),
        "distance".to_string(),
        "antecedent".to_string(),
        "antecedent_raw".to_string(),
        "antecedent_std".to_string(),
    ];
    let obs = scm.observable_layout().column_names();
    for prefix in ["xstar_raw", "xstar_std"] {
        cols.extend(obs.iter().map(|c| format!("{prefix}.{c}")));
    }
    cols.push("residual".to_string());
    cols.push("iterations".to_string());
    cols
}

/// Solves the same antecedent grid under every requested distance kind on
/// both the correct-graph and reversed-graph models, so downstream analysis
/// can compare how much the counterfactual moves when the backtracking
/// conditional changes.
pub fn wrong_graph_on(correct: &Scm, reversed: &Scm, plan: &ExperimentPlan) -> Result<Table> {
    plan.require_grid()?;
    if plan.distances.len() < 2 {
        return Err(Error::InvalidPlan(
            "wrong-graph comparison needs at least two distance kinds".to_string(),
        ));
    }
    let mut table = Table::new(wrong_graph_columns(correct));
    wrong_graph_rows(correct, "correct", true, plan, &mut table)?;
    wrong_graph_rows(reversed, "reversed", false, plan, &mut table)?;
    table.maybe_write(&plan.out_path)?;
    Ok(table)
}

pub fn run_wrong_graph(plan: &ExperimentPlan) -> Result<Table> {
    let correct = load_scm(&plan.model_path)?;
    let reversed_path = plan
        .reversed_model_path
        .as_ref()
        .ok_or_else(|| Error::ModelNotFound("reversed-graph model not configured".to_string()))?;
    let reversed = load_scm(reversed_path)?;
    wrong_graph_on(&correct, &reversed, plan)
}

/// Largest within-group spread of `column` across distance kinds, grouped by
/// grid value, restricted to rows whose `graph` cell equals `graph_label`.
pub fn column_spread_by_graph(table: &Table, graph_label: &str, column: &str) -> Result<f64> {
    let col = table.column_index(column)?;
    let graph_col = table.column_index("graph")?;
    let key_col = table.column_index("antecedent_raw")?;
    let mut groups: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for row in table.rows() {
        if row[graph_col] != graph_label {
            continue;
        }
        let v: f64 = row[col]
            .parse()
            .map_err(|_| Error::InvalidPlan(format!("non-numeric cell {:?}", row[col])))?;
        let entry = groups.entry(row[key_col].clone()).or_insert((v, v));
        entry.0 = entry.0.min(v);
        entry.1 = entry.1.max(v);
    }
    if groups.is_empty() {
        return Err(Error::InvalidPlan(format!("no rows for graph {graph_label}")));
    }
    Ok(groups.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max))
}

#[derive(Debug, Clone)]
pub struct BenchmarkSummary {
    pub table: Table,
    /// Failed queries per method, already excluded from the table's
    /// statistics.
    pub failures: BTreeMap<String, usize>,
}

const BENCH_METRIC_COUNT: usize = 5;

fn bench_metrics(
    scm: &Scm,
    x: &StructuredVector,
    x_star: &StructuredVector,
    attrs: &[NodeId],
) -> Result<[f64; BENCH_METRIC_COUNT]> {
    Ok([
        plausible(scm, x_star, attrs)?,
        obs_distance(x, x_star, MetricKind::Squ, attrs)?,
        obs_distance(x, x_star, MetricKind::Abs, attrs)?,
        causal_distance(scm, x, x_star, MetricKind::Squ, attrs)?,
        causal_distance(scm, x, x_star, MetricKind::Abs, attrs)?,
    ])
}

/// Repeats factual-draw → random scalar antecedent → counterfactual →
/// metrics, `plan.repetitions` times, and reports mean ± std per method and
/// metric. Factuals come from the model prior; antecedent values are
/// standard normal in model units; the antecedent node is uniform over
/// non-root scalar nodes.
pub fn benchmark_on(scm: &Scm, plan: &ExperimentPlan) -> Result<BenchmarkSummary> {
    if plan.repetitions == 0 {
        return Err(Error::InvalidPlan("benchmark needs at least one repetition".to_string()));
    }
    if plan.methods.is_empty() {
        return Err(Error::InvalidPlan("no methods requested".to_string()));
    }
    for m in &plan.methods {
        if !matches!(m, Method::Mode | Method::Sparse | Method::Interventional) {
            return Err(Error::InvalidPlan(format!(
                "benchmark supports mode, sparse, and interventional; got {}",
                m.name()
            )));
        }
    }
    let layout = scm.observable_layout();
    let candidates: Vec<NodeId> = scm
        .graph()
        .nodes()
        .iter()
        .filter(|n| n.dim == 1 && !n.parents.is_empty())
        .map(|n| n.id)
        .collect();
    if candidates.is_empty() {
        return Err(Error::InvalidPlan(
            "benchmark needs a non-root scalar node to intervene on".to_string(),
        ));
    }
    let attrs: Vec<NodeId> = layout.ids().to_vec();

    type RepOutcome = Vec<Option<[f64; BENCH_METRIC_COUNT]>>;
    let outcomes: Vec<RepOutcome> = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
            rng.set_stream(rep as u64);
            let u0 = scm.sample_prior(&mut rng);
            let x = match scm.reduced_form(&u0) {
                Ok(x) => x,
                Err(_) => return vec![None; plan.methods.len()],
            };
            let node = candidates[rng.random_range(0..candidates.len())];
            let value: f64 = StandardNormal.sample(&mut rng);
            let ante = Antecedent::single(node, vec![value]);
            plan.methods
                .iter()
                .map(|&m| {
                    run_method(scm, &x, &u0, m, &ante, &plan.config, plan.sparsity_m)
                        .and_then(|s| bench_metrics(scm, &x, &s.x_star, &attrs))
                        .ok()
                })
                .collect()
        })
        .collect();

    let mut table = Table::new(
        ["method", "metric", "m", "mean", "std", "n_repetitions"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    );
    let mut failures = BTreeMap::new();
    let labels: [(&str, &str); BENCH_METRIC_COUNT] = [
        ("plausible", ""),
        ("obs", "SQU"),
        ("obs", "ABS"),
        ("causal", "SQU"),
        ("causal", "ABS"),
    ];
    for (mi, method) in plan.methods.iter().enumerate() {
        let values: Vec<&[f64; BENCH_METRIC_COUNT]> =
            outcomes.iter().filter_map(|rep| rep[mi].as_ref()).collect();
        failures.insert(method.name().to_string(), plan.repetitions - values.len());
        for (k, (metric, m)) in labels.iter().enumerate() {
            let n = values.len();
            let (mean, std) = if n == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let mean = values.iter().map(|v| v[k]).sum::<f64>() / n as f64;
                let var = if n > 1 {
                    values.iter().map(|v| (v[k] - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                (mean, var.sqrt())
            };
            table.push(vec![
                method.name().to_string(),
                metric.to_string(),
                m.to_string(),
                fmt(mean),
                fmt(std),
                fmt(n as f64),
            ])?;
        }
    }
    table.maybe_write(&plan.out_path)?;
    Ok(BenchmarkSummary { table, failures })
}

pub fn run_benchmark(plan: &ExperimentPlan) -> Result<BenchmarkSummary> {
    let scm = load_scm(&plan.model_path)?;
    benchmark_on(&scm, plan)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Draws `plan.n_samples` posterior samples per grid value and emits one row
/// per sample plus per-column quartile rows (q1, q2, q3) and the mode row
/// for reference. Each grid point uses its own noise stream.
pub fn stochastic_demo_on(scm: &Scm, plan: &ExperimentPlan) -> Result<Table> {
    plan.require_grid()?;
    if plan.n_samples == 0 {
        return Err(Error::InvalidPlan("demo needs at least one sample".to_string()));
    }
    let node = plan.scalar_antecedent(scm)?;
    let (_, x_std) = seeded_factual(scm, plan.seed)?;

    let obs = scm.observable_layout().column_names();
    let mut cols = vec![
        "row_kind".to_string(),
        "sample_index".to_string(),
        "antecedent_raw".to_string(),
        "antecedent_std".to_string(),
    ];
    for prefix in ["xstar_raw", "xstar_std"] {
        cols.extend(obs.iter().map(|c| format!("{prefix}.{c}")));
    }
    cols.push("residual".to_string());
    let n_numeric = 2 + 2 * obs.len() + 1;
    let mut table = Table::new(cols);

    let chunks: Vec<Vec<Vec<String>>> = plan
        .grid
        .par_iter()
        .enumerate()
        .map(|(gi, &raw)| {
            let std = scalar_to_model(scm, node, raw);
            let ante = Antecedent::single(node, vec![std]);
            let cfg = plan.config.clone().with_seed(plan.seed.wrapping_add(gi as u64));
            let mut rows = Vec::with_capacity(plan.n_samples + 4);
            let numeric_row = |x_star: &StructuredVector, residual: f64| -> Result<Vec<f64>> {
                let raw_x = to_raw_units(scm, x_star)?;
                let mut vals = vec![raw, std];
                vals.extend(raw_x.flat());
                vals.extend(x_star.flat());
                vals.push(residual);
                Ok(vals)
            };
            let emit = |kind: &str, index: String, vals: &[f64]| -> Vec<String> {
                let mut row = vec![kind.to_string(), index];
                row.extend(vals.iter().map(|v| fmt(*v)));
                row
            };

            let mode = mode_deepbc(scm, &x_std, &ante, &cfg)?;
            rows.push(emit("mode", String::new(), &numeric_row(&mode.x_star, mode.residual)?));

            let samples = stochastic_deepbc(scm, &x_std, &ante, &cfg, plan.n_samples)?;
            let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
            for (k, s) in samples.iter().enumerate() {
                let vals = numeric_row(&s.x_star, s.residual)?;
                rows.push(emit("sample", k.to_string(), &vals));
                numeric.push(vals);
            }
            for (kind, p) in [("q1", 0.25), ("q2", 0.5), ("q3", 0.75)] {
                let mut qvals = Vec::with_capacity(n_numeric);
                for c in 0..n_numeric {
                    let mut col: Vec<f64> = numeric.iter().map(|r| r[c]).collect();
                    col.sort_by(|a, b| a.partial_cmp(b).expect("finite sample values"));
                    qvals.push(quantile(&col, p));
                }
                rows.push(emit(kind, String::new(), &qvals));
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    for chunk in chunks {
        for row in chunk {
            table.push(row)?;
        }
    }
    table.maybe_write(&plan.out_path)?;
    Ok(table)
}

pub fn run_stochastic_demo(plan: &ExperimentPlan) -> Result<Table> {
    let scm = load_scm(&plan.model_path)?;
    stochastic_demo_on(&scm, plan)
}

/// Builds a (possibly multi-node) antecedent from raw-unit target values,
/// plus a printable `node=value` description for table rows.
pub fn antecedent_from_raw(
    scm: &Scm,
    targets_raw: &[(String, Vec<f64>)],
) -> Result<(Antecedent, String)> {
    if targets_raw.is_empty() {
        return Err(Error::InvalidPlan("empty antecedent".to_string()));
    }
    let mut targets = Vec::new();
    let mut desc = Vec::new();
    for (name, raw_vals) in targets_raw {
        let id = scm.node_id_by_name(name)?;
        let dim = scm
            .observable_layout()
            .dim_of(id)
            .ok_or_else(|| Error::UnknownNode(name.clone()))?;
        if raw_vals.len() != dim {
            return Err(Error::DimensionMismatch {
                context: format!("antecedent values for node {name}"),
                expected: dim,
                actual: raw_vals.len(),
            });
        }
        let std_vals = match scm.standardizer(id) {
            Some(st) => st.to_model(raw_vals),
            None => raw_vals.clone(),
        };
        let shown: Vec<String> = raw_vals.iter().map(|v| fmt(*v)).collect();
        desc.push(format!("{name}={}", shown.join(";")));
        targets.push((id, std_vals));
    }
    Ok((Antecedent::new(targets)?, desc.join(" ")))
}

/// One counterfactual query against an explicit standardized factual; the
/// antecedent targets are raw-unit values per node. Emits a one-row table.
pub fn single_query(
    scm: &Scm,
    x_std: &StructuredVector,
    targets_raw: &[(String, Vec<f64>)],
    method: Method,
    config: &BacktrackingConfig,
    sparsity_m: usize,
) -> Result<Table> {
    let (ante, desc) = antecedent_from_raw(scm, targets_raw)?;
    let u0 = scm.abduct(x_std)?;
    let solved = run_method(scm, x_std, &u0, method, &ante, config, sparsity_m)?;

    let mut cols = vec!["method".to_string(), "antecedent".to_string()];
    let obs = scm.observable_layout().column_names();
    for prefix in ["x_raw", "xstar_raw", "x_std", "xstar_std"] {
        cols.extend(obs.iter().map(|c| format!("{prefix}.{c}")));
    }
    let lat = scm.latent_layout().column_names();
    for prefix in ["u", "ustar"] {
        cols.extend(lat.iter().map(|c| format!("{prefix}.{c}")));
    }
    cols.push("residual".to_string());
    cols.push("iterations".to_string());
    cols.push("energy_final".to_string());
    let mut table = Table::new(cols);

    let mut row = vec![method.name().to_string(), desc];
    push_state_values(&mut row, scm, x_std, &u0, &solved)?;
    table.push(row)?;
    Ok(table)
}

/// Posterior ensemble for one explicit standardized factual: one row per
/// chain endpoint plus the mode row and per-column quartile rows.
pub fn stochastic_query(
    scm: &Scm,
    x_std: &StructuredVector,
    targets_raw: &[(String, Vec<f64>)],
    n_samples: usize,
    config: &BacktrackingConfig,
) -> Result<Table> {
    if n_samples == 0 {
        return Err(Error::InvalidPlan("sampling needs at least one sample".to_string()));
    }
    let (ante, desc) = antecedent_from_raw(scm, targets_raw)?;

    let obs = scm.observable_layout().column_names();
    let mut cols = vec![
        "row_kind".to_string(),
        "sample_index".to_string(),
        "antecedent".to_string(),
    ];
    for prefix in ["xstar_raw", "xstar_std"] {
        cols.extend(obs.iter().map(|c| format!("{prefix}.{c}")));
    }
    cols.push("residual".to_string());
    let n_numeric = 2 * obs.len() + 1;
    let mut table = Table::new(cols);

    let numeric_row = |x_star: &StructuredVector, residual: f64| -> Result<Vec<f64>> {
        let raw_x = to_raw_units(scm, x_star)?;
        let mut vals = Vec::with_capacity(n_numeric);
        vals.extend(raw_x.flat());
        vals.extend(x_star.flat());
        vals.push(residual);
        Ok(vals)
    };
    let emit = |kind: &str, index: String, vals: &[f64]| -> Vec<String> {
        let mut row = vec![kind.to_string(), index, desc.clone()];
        row.extend(vals.iter().map(|v| fmt(*v)));
        row
    };

    let mode = mode_deepbc(scm, x_std, &ante, config)?;
    table.push(emit("mode", String::new(), &numeric_row(&mode.x_star, mode.residual)?))?;

    let samples = stochastic_deepbc(scm, x_std, &ante, config, n_samples)?;
    let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(samples.len());
    for (k, s) in samples.iter().enumerate() {
        let vals = numeric_row(&s.x_star, s.residual)?;
        table.push(emit("sample", k.to_string(), &vals))?;
        numeric.push(vals);
    }
    for (kind, p) in [("q1", 0.25), ("q2", 0.5), ("q3", 0.75)] {
        let mut qvals = Vec::with_capacity(n_numeric);
        for c in 0..n_numeric {
            let mut col: Vec<f64> = numeric.iter().map(|r| r[c]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).expect("finite sample values"));
            qvals.push(quantile(&col, p));
        }
        table.push(emit(kind, String::new(), &qvals))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::shared_fixture::shared_morpho;
    use crate::mechanisms::{AffineFlow, Conditioner, Mechanism};
    use crate::graph::{CausalGraph, Node};

    fn plan() -> ExperimentPlan {
        ExperimentPlan::new("unused.json")
    }

    fn random_affine_scm(n_nodes: usize, seed: u64) -> Scm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nodes = Vec::new();
        let mut mechanisms = Vec::new();
        for k in 1..=n_nodes {
            let parents: Vec<NodeId> = (1..k)
                .filter(|_| rng.random::<f64>() < 0.6)
                .map(|p| NodeId(p as u32))
                .collect();
            nodes.push(Node {
                id: NodeId(k as u32),
                name: format!("n{k}"),
                dim: 1,
                parents: parents.clone(),
            });
            let weight: Vec<Vec<f64>> =
                vec![(0..parents.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()];
            let bias = vec![rng.random::<f64>() - 0.5];
            mechanisms.push(Mechanism::Affine(AffineFlow {
                loc: Conditioner::Linear { weight, bias },
                log_scale: Conditioner::zero_linear(1, parents.len()),
            }));
        }
        Scm::new(CausalGraph::new(nodes).unwrap(), mechanisms).unwrap()
    }

    #[test]
    fn table_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::new(vec!["a".into(), "b".into()]);
        t.push(vec!["x".into(), fmt(0.1 + 0.2)]).unwrap();
        t.push(vec!["y".into(), fmt(-3.5e-12)]).unwrap();
        t.write_csv(&path).unwrap();
        let back = Table::read_csv(&path).unwrap();
        assert_eq!(t, back);
        assert_eq!(back.f64(0, "b").unwrap(), 0.1 + 0.2);
        assert!(t.push(vec!["short".into()]).is_err());
        assert!(Method::parse("mode").is_ok());
        assert!(Method::parse("psychic").is_err());
    }

    #[test]
    fn sweep_emits_one_row_per_grid_value_and_method() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let mut p = plan();
        p.antecedent_node = "intensity".to_string();
        p.grid = (0..5).map(|k| 110.0 + 25.0 * k as f64).collect();
        p.methods = vec![Method::Mode, Method::Interventional];
        let table = sweep_on(scm, &p).unwrap();
        assert_eq!(table.n_rows(), 10);
        for (r, row) in table.rows().iter().enumerate() {
            let method = &row[table.column_index("method").unwrap()];
            assert_eq!(method, [Method::Mode, Method::Interventional][r % 2].name());
            let residual = table.f64(r, "residual").unwrap();
            assert!(residual < 1e-4, "row {r} residual {residual}");
        }
        // Backtracking lets thickness respond to an intensity antecedent;
        // intervening on intensity cannot move its cause.
        let t_col = "xstar_raw.thickness[0]";
        let mut mode_vals = Vec::new();
        let mut iv_vals = Vec::new();
        for r in 0..table.n_rows() {
            let v = table.f64(r, t_col).unwrap();
            if table.value(r, "method").unwrap() == "mode" {
                mode_vals.push(v);
            } else {
                iv_vals.push(v);
            }
        }
        let spread = |v: &[f64]| {
            v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min)
        };
        assert!(spread(&mode_vals) > 0.05, "mode spread {}", spread(&mode_vals));
        assert!(spread(&iv_vals) < 1e-9, "interventional spread {}", spread(&iv_vals));
    }

    #[test]
    fn root_antecedent_sweeps_agree_between_methods() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let mut p = plan();
        p.antecedent_node = "thickness".to_string();
        p.grid = (0..8).map(|k| 1.6 + 0.25 * k as f64).collect();
        p.config = BacktrackingConfig::default().with_lambda(1e6).unwrap();
        let table = sweep_on(scm, &p).unwrap();
        let cols: Vec<String> = table
            .columns()
            .iter()
            .filter(|c| c.starts_with("xstar_std."))
            .cloned()
            .collect();
        assert_eq!(table.n_rows() % 2, 0);
        for pair in 0..table.n_rows() / 2 {
            for c in &cols {
                let a = table.f64(2 * pair, c).unwrap();
                let b = table.f64(2 * pair + 1, c).unwrap();
                assert!((a - b).abs() < 1e-5, "{c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn sweep_rejects_bad_plans() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let mut p = plan();
        p.antecedent_node = "intensity".to_string();
        assert!(matches!(sweep_on(scm, &p), Err(Error::InvalidPlan(_))));
        p.grid = vec![150.0];
        p.methods.clear();
        assert!(matches!(sweep_on(scm, &p), Err(Error::InvalidPlan(_))));
        p.methods = vec![Method::Mode];
        p.antecedent_node = "image".to_string();
        assert!(matches!(sweep_on(scm, &p), Err(Error::InvalidPlan(_))));
        p.antecedent_node = "nonesuch".to_string();
        assert!(matches!(sweep_on(scm, &p), Err(Error::UnknownNode(_))));
        let mut missing = plan();
        missing.model_path = PathBuf::from("/nonexistent/model.json");
        missing.grid = vec![1.0];
        missing.antecedent_node = "intensity".to_string();
        assert!(matches!(run_sweep(&missing), Err(Error::ModelNotFound(_))));
    }

    #[test]
    fn wrong_graph_distances_agree_only_on_the_correct_graph() {
        let fixture = shared_morpho();
        let mut p = plan();
        p.antecedent_node = "thickness".to_string();
        p.grid = (0..5).map(|k| 2.0 + 0.25 * k as f64).collect();
        p.seed = 3;
        let table = wrong_graph_on(&fixture.correct.scm, &fixture.reversed.scm, &p).unwrap();
        assert_eq!(table.n_rows(), 2 * 2 * 5);
        let col = "xstar_raw.intensity[0]";
        let correct = column_spread_by_graph(&table, "correct", col).unwrap();
        let reversed = column_spread_by_graph(&table, "reversed", col).unwrap();
        assert!(correct < 1e-4, "correct-graph spread {correct}");
        assert!(
            reversed > 10.0 * correct.max(1e-6),
            "reversed {reversed} vs correct {correct}"
        );
    }

    #[test]
    fn wrong_graph_requires_both_models_and_two_distances() {
        let fixture = shared_morpho();
        let mut p = plan();
        p.antecedent_node = "thickness".to_string();
        p.grid = vec![2.5];
        p.distances.truncate(1);
        assert!(matches!(
            wrong_graph_on(&fixture.correct.scm, &fixture.reversed.scm, &p),
            Err(Error::InvalidPlan(_))
        ));
        let mut file_plan = plan();
        file_plan.grid = vec![2.5];
        file_plan.antecedent_node = "thickness".to_string();
        assert!(matches!(run_wrong_graph(&file_plan), Err(Error::ModelNotFound(_))));
    }

    #[test]
    fn benchmark_reports_mean_dominance_on_the_causal_metric() {
        let scm = random_affine_scm(5, 99);
        let mut p = plan();
        p.methods = vec![Method::Mode, Method::Sparse, Method::Interventional];
        p.sparsity_m = 5;
        p.repetitions = 200;
        let summary = benchmark_on(&scm, &p).unwrap();
        assert_eq!(summary.table.n_rows(), 15);
        assert!(summary.failures.values().all(|&f| f == 0), "{:?}", summary.failures);
        let mean_of = |method: &str, metric: &str, m: &str| -> f64 {
            for r in 0..summary.table.n_rows() {
                if summary.table.value(r, "method").unwrap() == method
                    && summary.table.value(r, "metric").unwrap() == metric
                    && summary.table.value(r, "m").unwrap() == m
                {
                    return summary.table.f64(r, "mean").unwrap();
                }
            }
            panic!("row not found");
        };
        let mode = mean_of("mode", "causal", "SQU");
        let interventional = mean_of("interventional", "causal", "SQU");
        assert!(mode <= interventional + 1e-6, "mode {mode} vs iv {interventional}");
        let sparse = mean_of("sparse", "causal", "SQU");
        assert!((sparse - mode).abs() < 1e-9, "full-budget sparse {sparse} vs mode {mode}");
        for r in 0..summary.table.n_rows() {
            assert_eq!(summary.table.f64(r, "n_repetitions").unwrap(), 200.0);
        }
    }

    #[test]
    fn factual_antecedent_queries_score_zero_on_every_metric() {
        let scm = random_affine_scm(4, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u0 = scm.sample_prior(&mut rng);
        let x = scm.reduced_form(&u0).unwrap();
        let node = NodeId(3);
        let ante = Antecedent::single(node, x.block(node).unwrap().to_vec());
        let cfg = BacktrackingConfig::default();
        for method in [Method::Mode, Method::Interventional] {
            let solved = run_method(&scm, &x, &u0, method, &ante, &cfg, 1).unwrap();
            let attrs: Vec<NodeId> = scm.observable_layout().ids().to_vec();
            let vals = bench_metrics(&scm, &x, &solved.x_star, &attrs).unwrap();
            for v in &vals[1..] {
                assert!(v.abs() < 1e-8, "{method:?}: {vals:?}");
            }
        }
    }

    #[test]
    fn benchmark_rejects_bad_plans() {
        let scm = random_affine_scm(3, 1);
        let mut p = plan();
        p.repetitions = 0;
        assert!(matches!(benchmark_on(&scm, &p), Err(Error::InvalidPlan(_))));
        p.repetitions = 5;
        p.methods = vec![Method::Stochastic];
        assert!(matches!(benchmark_on(&scm, &p), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn stochastic_demo_medians_stay_near_the_mode() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let mut p = plan();
        p.antecedent_node = "intensity".to_string();
        p.grid = vec![130.0, 160.0, 190.0];
        p.n_samples = 200;
        p.config = BacktrackingConfig::stochastic_default();
        let table = stochastic_demo_on(scm, &p).unwrap();
        assert_eq!(table.n_rows(), 3 * (1 + 200 + 3));
        let t_col = "xstar_raw.thickness[0]";
        for &g in &p.grid {
            let mut mode = f64::NAN;
            let mut median = f64::NAN;
            let mut samples = Vec::new();
            for r in 0..table.n_rows() {
                if table.f64(r, "antecedent_raw").unwrap() != g {
                    continue;
                }
                match table.value(r, "row_kind").unwrap() {
                    "mode" => mode = table.f64(r, t_col).unwrap(),
                    "q2" => median = table.f64(r, t_col).unwrap(),
                    "sample" => samples.push(table.f64(r, t_col).unwrap()),
                    _ => {}
                }
            }
            assert_eq!(samples.len(), 200);
            let mut devs: Vec<f64> = samples.iter().map(|s| (s - median).abs()).collect();
            devs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mad = quantile(&devs, 0.5);
            assert!(
                (median - mode).abs() <= 3.0 * mad.max(1e-9),
                "grid {g}: median {median} mode {mode} mad {mad}"
            );
        }
    }

    #[test]
    fn single_sample_demo_still_produces_a_complete_table() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let mut p = plan();
        p.antecedent_node = "intensity".to_string();
        p.grid = vec![150.0];
        p.n_samples = 1;
        p.config = BacktrackingConfig::stochastic_default();
        let table = stochastic_demo_on(scm, &p).unwrap();
        assert_eq!(table.n_rows(), 1 + 1 + 3);
        let sample = table.f64(1, "xstar_raw.thickness[0]").unwrap();
        for r in 2..5 {
            assert_eq!(table.f64(r, "xstar_raw.thickness[0]").unwrap(), sample);
        }
        p.n_samples = 0;
        assert!(matches!(stochastic_demo_on(scm, &p), Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn sweep_writes_the_requested_file() {
        let fixture = shared_morpho();
        let scm = &fixture.correct.scm;
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let mut p = plan();
        p.antecedent_node = "intensity".to_string();
        p.grid = vec![140.0, 180.0];
        p.out_path = Some(out.clone());
        let table = sweep_on(scm, &p).unwrap();
        let back = Table::read_csv(&out).unwrap();
        assert_eq!(table, back);
    }
}
