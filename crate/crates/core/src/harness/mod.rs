//! Data generation, training orchestration, experiment runners, and file
//! I/O for the morphometry benchmark and for arbitrary trained models.

pub mod dataset;
pub mod experiments;
pub mod ground_truth;
pub mod train;

pub use dataset::{
    generate_morpho_dataset, row_to_observable, scalar_to_model, scalar_to_raw, to_model_units,
    to_raw_units, Dataset,
};
pub use experiments::{
    antecedent_from_raw, column_spread_by_graph, run_benchmark, run_stochastic_demo, run_sweep,
    run_wrong_graph, single_query, stochastic_query, BenchmarkSummary, ExperimentPlan, Method,
    Table,
};
pub use ground_truth::GroundTruthMorpho;
pub use train::{abduct_dataset, train_scm, GraphSpec, NodeSpec, NodeTrainReport, TrainedModel};
