//! Block-structured vectors: one block of scalars per node.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::NodeId;

/// Block layout: node ids with their block dimensions and flat offsets.
/// Observable and latent layouts of the same model may differ (categorical
/// nodes have K-dimensional observables but (K-1)-dimensional latents;
/// deterministic nodes have empty latent blocks).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    ids: Vec<NodeId>,
    names: Vec<String>,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    pub fn new(entries: Vec<(NodeId, String, usize)>) -> Arc<Self> {
        let mut ids = Vec::with_capacity(entries.len());
        let mut names = Vec::with_capacity(entries.len());
        let mut dims = Vec::with_capacity(entries.len());
        let mut offsets = Vec::with_capacity(entries.len());
        let mut total = 0;
        for (id, name, dim) in entries {
            ids.push(id);
            names.push(name);
            dims.push(dim);
            offsets.push(total);
            total += dim;
        }
        Arc::new(Self { ids, names, dims, offsets, total })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Total flat dimension (sum of block dims).
    pub fn total_dim(&self) -> usize {
        self.total
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.ids.iter().position(|&i| i == id)
    }

    pub fn position_by_name(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn id_at(&self, pos: usize) -> NodeId {
        self.ids[pos]
    }

    pub fn name_at(&self, pos: usize) -> &str {
        &self.names[pos]
    }

    pub fn dim_at(&self, pos: usize) -> usize {
        self.dims[pos]
    }

    pub fn offset_at(&self, pos: usize) -> usize {
        self.offsets[pos]
    }

    pub fn dim_of(&self, id: NodeId) -> Option<usize> {
        self.position(id).map(|p| self.dims[p])
    }

    pub fn offset_of(&self, id: NodeId) -> Option<usize> {
        self.position(id).map(|p| self.offsets[p])
    }

    /// Flat column names, one per scalar dimension: `name[k]`.
    pub fn column_names(&self) -> Vec<String> {
        let mut cols = Vec::with_capacity(self.total);
        for pos in 0..self.len() {
            for k in 0..self.dims[pos] {
                cols.push(format!("{}[{}]", self.names[pos], k));
            }
        }
        cols
    }
}

/// A vector partitioned into per-node blocks according to a shared `Layout`.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuredVector {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl StructuredVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.total_dim()];
        Self { layout, data }
    }

    pub fn from_flat(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.total_dim() {
            return Err(Error::DimensionMismatch {
                context: "structured vector from flat data".to_string(),
                expected: layout.total_dim(),
                actual: data.len(),
            });
        }
        Ok(Self { layout, data })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.data
    }

    pub fn block(&self, id: NodeId) -> Option<&[f64]> {
        let pos = self.layout.position(id)?;
        Some(self.block_at(pos))
    }

    pub fn block_at(&self, pos: usize) -> &[f64] {
        let off = self.layout.offset_at(pos);
        &self.data[off..off + self.layout.dim_at(pos)]
    }

    pub fn block_at_mut(&mut self, pos: usize) -> &mut [f64] {
        let off = self.layout.offset_at(pos);
        let dim = self.layout.dim_at(pos);
        &mut self.data[off..off + dim]
    }

    pub fn set_block(&mut self, id: NodeId, values: &[f64]) -> Result<()> {
        let pos = self.layout.position(id).ok_or_else(|| Error::UnknownNode(id.to_string()))?;
        if values.len() != self.layout.dim_at(pos) {
            return Err(Error::DimensionMismatch {
                context: format!("block {} assignment", id),
                expected: self.layout.dim_at(pos),
                actual: values.len(),
            });
        }
        self.block_at_mut(pos).copy_from_slice(values);
        Ok(())
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout3() -> Arc<Layout> {
        Layout::new(vec![
            (NodeId(1), "a".to_string(), 1),
            (NodeId(2), "b".to_string(), 3),
            (NodeId(3), "c".to_string(), 2),
        ])
    }

    #[test]
    fn total_dim_is_sum_of_block_dims() {
        let layout = layout3();
        assert_eq!(layout.total_dim(), 6);
        let v = StructuredVector::zeros(layout);
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn blocks_map_to_flat_offsets() {
        let layout = layout3();
        let mut v = StructuredVector::from_flat(layout, (0..6).map(f64::from).collect()).unwrap();
        assert_eq!(v.block(NodeId(1)).unwrap(), &[0.0]);
        assert_eq!(v.block(NodeId(2)).unwrap(), &[1.0, 2.0, 3.0]);
        assert_eq!(v.block(NodeId(3)).unwrap(), &[4.0, 5.0]);
        v.set_block(NodeId(3), &[9.0, 8.0]).unwrap();
        assert_eq!(v.flat(), &[0.0, 1.0, 2.0, 3.0, 9.0, 8.0]);
    }

    #[test]
    fn mismatched_flat_length_is_rejected() {
        let layout = layout3();
        assert!(StructuredVector::from_flat(layout.clone(), vec![0.0; 5]).is_err());
        let mut v = StructuredVector::zeros(layout);
        assert!(v.set_block(NodeId(2), &[1.0]).is_err());
        assert!(v.set_block(NodeId(9), &[1.0]).is_err());
    }

    #[test]
    fn column_names_enumerate_scalar_dimensions() {
        let layout = layout3();
        assert_eq!(
            layout.column_names(),
            vec!["a[0]", "b[0]", "b[1]", "b[2]", "c[0]", "c[1]"]
        );
    }
}
