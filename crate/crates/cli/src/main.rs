//! Command-line front end: dataset generation, model training, single
//! counterfactual queries, and experiment tables. All tabular output is CSV
//! with a header row; models and graph specifications are JSON.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deepbc::harness::{
    generate_morpho_dataset, row_to_observable, run_benchmark, run_sweep, run_wrong_graph,
    single_query, stochastic_query, to_model_units, train_scm, Dataset, ExperimentPlan, GraphSpec,
    Method, Table,
};
use deepbc::mechanisms::TrainingOptions;
use deepbc::{
    load_scm, save_scm, BacktrackingConfig, DistanceKind, Error, Result, Scm, StructuredVector,
};

#[derive(Parser)]
#[command(
    name = "deepbc",
    version,
    about = "Backtracking counterfactuals on trained structural causal models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the synthetic morphometry dataset and write it as CSV.
    GenData {
        /// Number of rows to draw.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one mechanism per node against a dataset and save the model JSON.
    Train {
        /// Training dataset (CSV with node[k] columns).
        #[arg(long)]
        data: PathBuf,
        /// Graph specification: a JSON path, or "morpho" for the built-in
        /// thickness -> intensity -> image graph.
        #[arg(long)]
        graph: String,
        #[arg(long)]
        out: PathBuf,
        /// Flip one edge (FROM TO) of the specification before training.
        #[arg(long, num_args = 2, value_names = ["FROM", "TO"])]
        reverse_edge: Option<Vec<String>>,
    },
    /// Penalty-optimal counterfactual for one factual observation.
    Mode(QueryArgs),
    /// Posterior samples around the counterfactual mode (Langevin chains).
    Sample {
        #[command(flatten)]
        query: QueryArgs,
        /// Chains to run; each contributes its endpoint as one sample.
        #[arg(long, default_value_t = 400)]
        n_samples: usize,
    },
    /// Counterfactual restricted to at most --sparsity-m changed latents.
    Sparse(QueryArgs),
    /// Classical interventional counterfactual (graph surgery baseline).
    Intervene(QueryArgs),
    /// Counterfactuals for every value on a grid, one row per (value, method).
    Sweep {
        #[arg(long)]
        model: PathBuf,
        /// Antecedent node (scalar).
        #[arg(long)]
        node: String,
        /// Inclusive grid LO:HI:STEPS in raw data units.
        #[arg(long)]
        grid: String,
        /// Any of: mode, stochastic, sparse, interventional, deep-ce.
        #[arg(long, num_args = 1.., default_values = ["mode", "interventional"])]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Compare counterfactuals across distance kinds on the correct and the
    /// edge-reversed model.
    WrongGraph {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        model_reversed: PathBuf,
        /// At least two of: weighted-squared, absolute-smooth.
        #[arg(long, num_args = 1.., default_values = ["weighted-squared", "absolute-smooth"])]
        distances: Vec<String>,
        /// Antecedent node (scalar).
        #[arg(long, default_value = "thickness")]
        node: String,
        /// Inclusive grid LO:HI:STEPS in raw data units.
        #[arg(long, default_value = "1.8:3.2:9")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated random counterfactual queries scored on plausible / obs /
    /// causal metrics; reports mean and std per method.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 500)]
        reps: usize,
        /// Any of: mode, sparse, interventional.
        #[arg(long, num_args = 1.., default_values = ["mode", "sparse", "interventional"])]
        methods: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

#[derive(Args)]
struct QueryArgs {
    /// Trained model JSON.
    #[arg(long)]
    model: PathBuf,
    /// Dataset CSV for --factual-row.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Row index into --data supplying the factual observation.
    #[arg(long)]
    factual_row: Option<usize>,
    /// Inline factual as JSON, raw units: {"node": [v, ...], ...}.
    #[arg(long)]
    factual_json: Option<String>,
    /// Antecedent targets in raw units: NODE=VALUE[,NODE=VALUE].
    #[arg(long)]
    antecedent: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SolverArgs {
    /// Constraint penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Iteration budget.
    #[arg(long)]
    iters: Option<usize>,
    /// Step size for gradient-based and sampling solvers.
    #[arg(long)]
    eta: Option<f64>,
    /// Per-node distance weights: NODE=W[,NODE=W].
    #[arg(long)]
    weights: Option<String>,
    /// Cap on the number of changed latent blocks (sparse solver).
    #[arg(long)]
    sparsity_m: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl SolverArgs {
    fn apply(&self, scm: &Scm, base: BacktrackingConfig) -> Result<BacktrackingConfig> {
        let mut cfg = base;
        if let Some(l) = self.lambda {
            cfg = cfg.with_lambda(l)?;
        }
        if let Some(t) = self.iters {
            cfg = cfg.with_iterations(t)?;
        }
        if let Some(eta) = self.eta {
            cfg = cfg.with_step_size(eta)?;
        }
        if let Some(s) = self.seed {
            cfg = cfg.with_seed(s);
        }
        if let Some(spec) = &self.weights {
            for (name, w) in parse_named_values(spec)? {
                let id = scm.node_id_by_name(&name)?;
                cfg = cfg.with_weight(id, w)?;
            }
        }
        Ok(cfg)
    }
}

fn parse_named_values(spec: &str) -> Result<Vec<(String, f64)>> {
    let mut out = Vec::new();
    for part in spec.split(',') {
        let (name, value) = part
            .split_once('=')
            .ok_or_else(|| Error::InvalidPlan(format!("expected NODE=VALUE, got {part:?}")))?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidPlan(format!("bad numeric value in {part:?}")))?;
        out.push((name.trim().to_string(), v));
    }
    if out.is_empty() {
        return Err(Error::InvalidPlan("empty NODE=VALUE list".to_string()));
    }
    Ok(out)
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidPlan(format!("grid must be LO:HI:STEPS, got {spec:?}")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::InvalidPlan(format!("bad grid bound {:?}", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::InvalidPlan(format!("bad grid bound {:?}", parts[1])))?;
    let steps: usize = parts[2]
        .parse()
        .map_err(|_| Error::InvalidPlan(format!("bad grid step count {:?}", parts[2])))?;
    if steps == 0 {
        return Err(Error::InvalidPlan("grid needs at least one step".to_string()));
    }
    if steps == 1 {
        return Ok(vec![lo]);
    }
    let h = (hi - lo) / (steps - 1) as f64;
    Ok((0..steps).map(|k| lo + h * k as f64).collect())
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| Method::parse(n)).collect()
}

fn parse_distances(names: &[String]) -> Result<Vec<DistanceKind>> {
    names.iter().map(|n| DistanceKind::parse(n)).collect()
}

fn load_factual(scm: &Scm, q: &QueryArgs) -> Result<StructuredVector> {
    let raw = match (&q.factual_json, q.factual_row) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidPlan(
                "provide either --factual-json or --factual-row, not both".to_string(),
            ))
        }
        (None, None) => {
            return Err(Error::InvalidPlan(
                "a factual is required: --factual-json or --data with --factual-row".to_string(),
            ))
        }
        (Some(js), None) => {
            let map: BTreeMap<String, Vec<f64>> = serde_json::from_str(js)
                .map_err(|e| Error::InvalidPlan(format!("factual JSON: {e}")))?;
            let layout = scm.observable_layout();
            let mut flat = Vec::with_capacity(layout.total_dim());
            for pos in 0..layout.len() {
                let name = layout.name_at(pos);
                let vals = map.get(name).ok_or_else(|| {
                    Error::InvalidPlan(format!("factual JSON is missing node {name:?}"))
                })?;
                if vals.len() != layout.dim_at(pos) {
                    return Err(Error::DimensionMismatch {
                        context: format!("factual values for node {name}"),
                        expected: layout.dim_at(pos),
                        actual: vals.len(),
                    });
                }
                flat.extend_from_slice(vals);
            }
            StructuredVector::from_flat(layout.clone(), flat)?
        }
        (None, Some(idx)) => {
            let data_path = q
                .data
                .as_ref()
                .ok_or_else(|| Error::InvalidPlan("--factual-row needs --data".to_string()))?;
            let data = Dataset::read_csv(data_path)?;
            row_to_observable(scm, &data, idx)?
        }
    };
    to_model_units(scm, &raw)
}

fn run_query(q: &QueryArgs, method: Method, n_samples: Option<usize>) -> Result<()> {
    let scm = load_scm(&q.model)?;
    let x_std = load_factual(&scm, q)?;
    let targets: Vec<(String, Vec<f64>)> = parse_named_values(&q.antecedent)?
        .into_iter()
        .map(|(name, v)| (name, vec![v]))
        .collect();
    let table = match n_samples {
        Some(n) => {
            let cfg = q.solver.apply(&scm, BacktrackingConfig::stochastic_default())?;
            stochastic_query(&scm, &x_std, &targets, n, &cfg)?
        }
        None => {
            let cfg = q.solver.apply(&scm, BacktrackingConfig::default())?;
            single_query(&scm, &x_std, &targets, method, &cfg, q.solver.sparsity_m.unwrap_or(1))?
        }
    };
    table.write_csv(&q.out)?;
    report(&table, &q.out);
    Ok(())
}

fn report(table: &Table, path: &PathBuf) {
    println!("wrote {} rows to {}", table.n_rows(), path.display());
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData { n, seed, out } => {
            let data = generate_morpho_dataset(n, seed)?;
            data.write_csv(&out)?;
            println!("wrote {} rows to {}", data.n_rows(), out.display());
        }
        Command::Train { data, graph, out, reverse_edge } => {
            let dataset = Dataset::read_csv(&data)?;
            let mut spec = if graph == "morpho" {
                GraphSpec::morpho()
            } else {
                GraphSpec::load(&graph)?
            };
            if let Some(edge) = reverse_edge {
                spec.reverse_edge(&edge[0], &edge[1])?;
            }
            let model = train_scm(&dataset, &spec, &TrainingOptions::default())?;
            for rep in &model.nodes {
                println!(
                    "node {}: train NLL {:.6}, held-out NLL {:.6} ({:.6} in raw units), {} epochs",
                    rep.name, rep.train_nll, rep.heldout_nll, rep.heldout_nll_raw, rep.epochs_run
                );
            }
            save_scm(&model.scm, &out)?;
            println!("saved model to {}", out.display());
        }
        Command::Mode(q) => run_query(&q, Method::Mode, None)?,
        Command::Sparse(q) => run_query(&q, Method::Sparse, None)?,
        Command::Intervene(q) => run_query(&q, Method::Interventional, None)?,
        Command::Sample { query, n_samples } => {
            run_query(&query, Method::Stochastic, Some(n_samples))?
        }
        Command::Sweep { model, node, grid, methods, out, solver } => {
            let scm = load_scm(&model)?;
            let mut plan = ExperimentPlan::new(model);
            plan.antecedent_node = node;
            plan.grid = parse_grid(&grid)?;
            plan.methods = parse_methods(&methods)?;
            plan.config = solver.apply(&scm, plan.config)?;
            if let Some(m) = solver.sparsity_m {
                plan.sparsity_m = m;
            }
            if let Some(s) = solver.seed {
                plan.seed = s;
            }
            plan.out_path = Some(out.clone());
            let table = run_sweep(&plan)?;
            report(&table, &out);
        }
        Command::WrongGraph { model, model_reversed, distances, node, grid, out } => {
            let mut plan = ExperimentPlan::new(model);
            plan.reversed_model_path = Some(model_reversed);
            plan.distances = parse_distances(&distances)?;
            plan.antecedent_node = node;
            plan.grid = parse_grid(&grid)?;
            plan.out_path = Some(out.clone());
            let table = run_wrong_graph(&plan)?;
            report(&table, &out);
        }
        Command::Bench { model, reps, methods, out, solver } => {
            let scm = load_scm(&model)?;
            let mut plan = ExperimentPlan::new(model);
            plan.repetitions = reps;
            plan.methods = parse_methods(&methods)?;
            plan.config = solver.apply(&scm, plan.config)?;
            if let Some(m) = solver.sparsity_m {
                plan.sparsity_m = m;
            }
            if let Some(s) = solver.seed {
                plan.seed = s;
            }
            plan.out_path = Some(out.clone());
            let summary = run_benchmark(&plan)?;
            for (method, failed) in &summary.failures {
                if *failed > 0 {
                    println!("method {method}: {failed} of {reps} repetitions failed");
                }
            }
            report(&summary.table, &out);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let informational =
                matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if informational { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
