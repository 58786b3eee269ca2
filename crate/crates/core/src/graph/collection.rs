use std::sync::Arc;

use super::{Csr, Graph};
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// A labelled set of graphs for graph-level problems.
#[derive(Debug, Clone)]
pub struct GraphCollection<T> {
    graphs: Vec<Arc<Graph<T>>>,
    labels: Option<Vec<Option<usize>>>,
    domain: Option<Vec<Option<i64>>>,
    time: Option<Vec<Option<i64>>>,
}

impl<T: Scalar> GraphCollection<T> {
    pub fn new(graphs: Vec<Graph<T>>, labels: Option<Vec<Option<usize>>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != graphs.len() {
                bail!(Shape, "{} graph labels for {} graphs", l.len(), graphs.len());
            }
        }
        if let Some(d) = graphs.first().map(Graph::feature_dim) {
            if graphs.iter().any(|g| g.feature_dim() != d) {
                bail!(Shape, "graphs disagree on node feature width");
            }
        }
        Ok(Self { graphs: graphs.into_iter().map(Arc::new).collect(), labels, domain: None, time: None })
    }

    pub fn with_domain(mut self, d: Vec<Option<i64>>) -> Result<Self> {
        if d.len() != self.graphs.len() {
            bail!(Shape, "{} graph domains for {} graphs", d.len(), self.graphs.len());
        }
        self.domain = Some(d);
        Ok(self)
    }

    pub fn with_time(mut self, t: Vec<Option<i64>>) -> Result<Self> {
        if t.len() != self.graphs.len() {
            bail!(Shape, "{} graph times for {} graphs", t.len(), self.graphs.len());
        }
        self.time = Some(t);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn graph(&self, i: usize) -> &Arc<Graph<T>> {
        &self.graphs[i]
    }

    pub fn graphs(&self) -> &[Arc<Graph<T>>] {
        &self.graphs
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn domain(&self) -> Option<&[Option<i64>]> {
        self.domain.as_deref()
    }

    pub fn time(&self) -> Option<&[Option<i64>]> {
        self.time.as_deref()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, |g| g.feature_dim())
    }

    /// Collection-level annotations and every per-graph annotation removed.
    pub fn without_annotations(&self) -> Self {
        Self {
            graphs: self.graphs.iter().map(|g| Arc::new(g.without_annotations())).collect(),
            labels: None,
            domain: None,
            time: None,
        }
    }

    /// Block-diagonal propagation matrix, stacked features and node-to-graph
    /// membership (positions into `ids`) for a batch of graphs.
    pub fn batch(&self, ids: &[usize]) -> (Csr<T>, ndarray::Array2<T>, Vec<usize>) {
        let adj: Vec<Csr<T>> = ids.iter().map(|&i| self.graphs[i].normalized_adjacency()).collect();
        let views: Vec<_> = ids.iter().map(|&i| self.graphs[i].node_features().view()).collect();
        let x = if views.is_empty() {
            ndarray::Array2::zeros((0, self.feature_dim()))
        } else {
            ndarray::concatenate(ndarray::Axis(0), &views).expect("equal feature widths")
        };
        let membership =
            ids.iter().enumerate().flat_map(|(k, &i)| std::iter::repeat_n(k, self.graphs[i].num_nodes())).collect();
        (Csr::block_diagonal(adj.iter()), x, membership)
    }
}
impl<T: Scalar> serde::Serialize for GraphCollection<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let graphs: Vec<&Graph<T>> = self.graphs.iter().map(|g| &**g).collect();
        let mut st = s.serialize_struct("GraphCollection", 4)?;
        st.serialize_field("graphs", &graphs)?;
        st.serialize_field("labels", &self.labels)?;
        st.serialize_field("domain", &self.domain)?;
        st.serialize_field("time", &self.time)?;
        st.end()
    }
}
