//! Numeric datasets with named columns, CSV persistence, and the bridge
//! between raw-unit rows and a model's standardized observable space.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scm::Scm;
use crate::vector::StructuredVector;

use super::ground_truth::GroundTruthMorpho;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        for (k, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(Error::DimensionMismatch {
                    context: format!("dataset row {k}"),
                    expected: columns.len(),
                    actual: row.len(),
                });
            }
        }
        Ok(Self { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::InvalidPlan(format!("dataset has no column {name}")))
    }

    /// Column indices `name[0] .. name[dim-1]` for one node block.
    pub fn node_columns(&self, name: &str, dim: usize) -> Result<Vec<usize>> {
        (0..dim)
            .map(|k| self.column_index(&format!("{name}[{k}]")))
            .collect()
    }

    /// Split into (first `ratio` of rows, remainder); row order is preserved.
    pub fn split(&self, ratio: f64) -> (Dataset, Dataset) {
        let cut = ((self.rows.len() as f64) * ratio).floor() as usize;
        let cut = cut.min(self.rows.len());
        (
            Dataset { columns: self.columns.clone(), rows: self.rows[..cut].to_vec() },
            Dataset { columns: self.columns.clone(), rows: self.rows[cut..].to_vec() },
        )
    }

    pub fn column_mean_std(&self, col: usize) -> (f64, f64) {
        let n = self.rows.len().max(1) as f64;
        let mean = self.rows.iter().map(|r| r[col]).sum::<f64>() / n;
        let var = self.rows.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt().max(1e-12))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(&self.columns)?;
        let mut record = csv::StringRecord::new();
        for row in &self.rows {
            record.clear();
            for v in row {
                record.push_field(ryu_format(*v).as_str());
            }
            writer.write_record(&record)?;
        }
        writer.flush().map_err(Error::Io)?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        let mut reader = csv::Reader::from_path(path)?;
        let columns: Vec<String> = reader
            .headers()?
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            let row: Vec<f64> = record
                .iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::InvalidPlan(format!("non-numeric CSV field {field:?}"))
                    })
                })
                .collect::<Result<_>>()?;
            rows.push(row);
        }
        Dataset::new(columns, rows)
    }
}

/// Shortest round-trip decimal formatting, so write → read → write is stable.
fn ryu_format(v: f64) -> String {
    format!("{v}")
}

/// Samples `n` rows from the ground-truth model. Deterministic per seed.
pub fn generate_morpho_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidPlan("dataset size must be at least 1".to_string()));
    }
    let gt = GroundTruthMorpho::new(seed);
    Dataset::new(gt.column_names(), gt.sample_rows(n, seed)?)
}

/// Extracts row `idx` as a raw-unit observable vector for `scm`.
pub fn row_to_observable(scm: &Scm, data: &Dataset, idx: usize) -> Result<StructuredVector> {
    let row = data
        .rows()
        .get(idx)
        .ok_or_else(|| Error::InvalidPlan(format!("dataset row {idx} out of range")))?;
    let layout = scm.observable_layout();
    let mut flat = Vec::with_capacity(layout.total_dim());
    for pos in 0..layout.len() {
        let cols = data.node_columns(layout.name_at(pos), layout.dim_at(pos))?;
        for c in cols {
            flat.push(row[c]);
        }
    }
    StructuredVector::from_flat(layout.clone(), flat)
}

/// Raw units → the model's (standardized) units, node by node. Nodes without
/// a stored standardizer pass through unchanged.
pub fn to_model_units(scm: &Scm, raw: &StructuredVector) -> Result<StructuredVector> {
    convert_units(scm, raw, true)
}

/// The model's units → raw units, node by node.
pub fn to_raw_units(scm: &Scm, model: &StructuredVector) -> Result<StructuredVector> {
    convert_units(scm, model, false)
}

fn convert_units(scm: &Scm, x: &StructuredVector, forward: bool) -> Result<StructuredVector> {
    let layout = scm.observable_layout();
    if x.layout().ids() != layout.ids() {
        return Err(Error::DimensionMismatch {
            context: "unit conversion".to_string(),
            expected: layout.total_dim(),
            actual: x.layout().total_dim(),
        });
    }
    let mut out = x.clone();
    for pos in 0..layout.len() {
        let id = layout.id_at(pos);
        if let Some(st) = scm.standardizer(id) {
            let block = x.block(id).expect("layout checked");
            let vals = if forward { st.to_model(block) } else { st.to_raw(block) };
            out.set_block(id, &vals)?;
        }
    }
    Ok(out)
}

/// Converts a scalar in one node's raw units to model units.
pub fn scalar_to_model(scm: &Scm, id: crate::graph::NodeId, raw: f64) -> f64 {
    match scm.standardizer(id) {
        Some(st) => st.to_model(&[raw])[0],
        None => raw,
    }
}

/// Converts a scalar in one node's model units back to raw units.
pub fn scalar_to_raw(scm: &Scm, id: crate::graph::NodeId, model: f64) -> f64 {
    match scm.standardizer(id) {
        Some(st) => st.to_raw(&[model])[0],
        None => model,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NodeId;
    use crate::scm::Standardizer;
    use crate::solvers::test_fixtures::linear_chain;

    #[test]
    fn thickness_mean_matches_the_population_value() {
        let data = generate_morpho_dataset(100_000, 42).unwrap();
        let t = data.column_index("thickness[0]").unwrap();
        let (mean, _) = data.column_mean_std(t);
        assert!((mean - 2.5).abs() < 0.05, "mean {mean}");
        let i = data.column_index("intensity[0]").unwrap();
        for row in data.rows() {
            assert!(row[i] > 64.0 && row[i] < 255.0);
        }
    }

    #[test]
    fn same_seed_writes_bitwise_identical_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        generate_morpho_dataset(256, 7).unwrap().write_csv(&a).unwrap();
        generate_morpho_dataset(256, 7).unwrap().write_csv(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let c = dir.path().join("c.csv");
        generate_morpho_dataset(256, 8).unwrap().write_csv(&c).unwrap();
        assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    }

    #[test]
    fn csv_round_trip_preserves_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        let data = generate_morpho_dataset(128, 3).unwrap();
        data.write_csv(&path).unwrap();
        let back = Dataset::read_csv(&path).unwrap();
        assert_eq!(data, back);
    }

    #[test]
    fn empty_request_is_rejected() {
        assert!(matches!(
            generate_morpho_dataset(0, 1),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn split_keeps_row_order_and_sizes() {
        let data = generate_morpho_dataset(10, 1).unwrap();
        let (train, val) = data.split(0.8);
        assert_eq!(train.n_rows(), 8);
        assert_eq!(val.n_rows(), 2);
        assert_eq!(train.rows()[0], data.rows()[0]);
        assert_eq!(val.rows()[0], data.rows()[8]);
    }

    #[test]
    fn unit_conversion_round_trips_through_standardizers() {
        let mut scm = linear_chain(2, 1.0);
        scm.set_standardizer(
            NodeId(1),
            Some(Standardizer { mean: vec![2.5], std: vec![0.5] }),
        )
        .unwrap();
        let layout = scm.observable_layout().clone();
        let raw = StructuredVector::from_flat(layout, vec![3.0, -1.0]).unwrap();
        let model = to_model_units(&scm, &raw).unwrap();
        assert_eq!(model.flat(), &[1.0, -1.0]);
        let back = to_raw_units(&scm, &model).unwrap();
        assert_eq!(back.flat(), raw.flat());
        assert_eq!(scalar_to_model(&scm, NodeId(1), 3.0), 1.0);
        assert_eq!(scalar_to_raw(&scm, NodeId(1), 1.0), 3.0);
        assert_eq!(scalar_to_model(&scm, NodeId(2), 3.0), 3.0);
    }

    #[test]
    fn node_columns_demand_complete_blocks() {
        let data = Dataset::new(
            vec!["a[0]".into(), "b[0]".into()],
            vec![vec![1.0, 2.0]],
        )
        .unwrap();
        assert_eq!(data.node_columns("a", 1).unwrap(), vec![0]);
        assert!(data.node_columns("a", 2).is_err());
        assert!(data.node_columns("c", 1).is_err());
    }
}
