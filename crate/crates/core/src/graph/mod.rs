//! Graph containers, GCN adjacency normalization and derived node features.
//!
//! Node ids are dense integers `0..n`. Every graph keeps a canonical edge list
//! (`u <= v` for undirected graphs) whose positions are the edge ids used by
//! link-level tasks, plus a CSR view over the stored directed entries.

mod collection;
mod csr;
mod snapshot;

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array2;

pub use collection::GraphCollection;
pub use csr::Csr;
pub use snapshot::{Snapshot, SnapshotSequence};

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Edge list with optional per-edge attributes, the input of [`Graph::build`].
#[derive(Debug, Clone, Default)]
pub struct EdgeList<T> {
    pub pairs: Vec<(usize, usize)>,
    pub weights: Option<Vec<T>>,
    pub domain: Option<Vec<Option<i64>>>,
    pub time: Option<Vec<Option<i64>>>,
    pub labels: Option<Vec<Option<usize>>>,
    pub features: Option<Array2<T>>,
}

impl<T> EdgeList<T> {
    pub fn new(pairs: Vec<(usize, usize)>) -> Self {
        Self { pairs, weights: None, domain: None, time: None, labels: None, features: None }
    }

    pub fn with_weights(mut self, w: Vec<T>) -> Self {
        self.weights = Some(w);
        self
    }

    pub fn with_domain(mut self, d: Vec<Option<i64>>) -> Self {
        self.domain = Some(d);
        self
    }

    pub fn with_time(mut self, t: Vec<Option<i64>>) -> Self {
        self.time = Some(t);
        self
    }

    pub fn with_labels(mut self, l: Vec<Option<usize>>) -> Self {
        self.labels = Some(l);
        self
    }
}

/// Per-node categorical attributes.
pub type NodeColumn<V> = Arc<Vec<Option<V>>>;

#[derive(Debug, Clone)]
pub struct Graph<T> {
    num_nodes: usize,
    directed: bool,
    edges: Vec<(usize, usize)>,
    weights: Option<Vec<T>>,
    edge_domain: Option<Vec<Option<i64>>>,
    edge_time: Option<Vec<Option<i64>>>,
    edge_labels: Option<Vec<Option<usize>>>,
    edge_features: Option<Array2<T>>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    entry_edge: Vec<usize>,
    node_features: Arc<Array2<T>>,
    node_labels: Option<NodeColumn<usize>>,
    node_domain: Option<NodeColumn<i64>>,
    node_time: Option<NodeColumn<i64>>,
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        bail!(Shape, "{what} has length {got}, expected {want}");
    }
    Ok(())
}

impl<T: Scalar> Graph<T> {
    /// Builds a graph. Duplicate edges collapse into one with summed weight
    /// (categorical attributes keep the first occurrence); undirected inputs
    /// are symmetrized.
    pub fn build(
        edges: &EdgeList<T>,
        num_nodes: usize,
        features: Option<Array2<T>>,
        labels: Option<Vec<Option<usize>>>,
        directed: bool,
    ) -> Result<Self> {
        let m = edges.pairs.len();
        if let Some((u, v)) = edges.pairs.iter().find(|(u, v)| *u >= num_nodes || *v >= num_nodes) {
            bail!(Index, "edge ({u}, {v}) references a node outside 0..{num_nodes}");
        }
        if let Some(w) = &edges.weights {
            check_len("edge weights", w.len(), m)?;
            if w.iter().any(|x| !x.is_finite() || *x < T::zero()) {
                bail!(Shape, "edge weights must be finite and non-negative");
            }
        }
        if let Some(d) = &edges.domain {
            check_len("edge domains", d.len(), m)?;
        }
        if let Some(t) = &edges.time {
            check_len("edge times", t.len(), m)?;
        }
        if let Some(l) = &edges.labels {
            check_len("edge labels", l.len(), m)?;
        }
        if let Some(f) = &edges.features {
            check_len("edge feature rows", f.nrows(), m)?;
        }
        let features = features.unwrap_or_else(|| Array2::zeros((num_nodes, 0)));
        check_len("node feature rows", features.nrows(), num_nodes)?;
        if let Some(l) = &labels {
            check_len("node labels", l.len(), num_nodes)?;
        }

        // canonical key -> (first input position, summed weight)
        let mut merged: BTreeMap<(usize, usize), (usize, T)> = BTreeMap::new();
        for (pos, &(u, v)) in edges.pairs.iter().enumerate() {
            let key = if directed { (u, v) } else { (u.min(v), u.max(v)) };
            let w = edges.weights.as_ref().map_or(T::one(), |w| w[pos]);
            merged.entry(key).and_modify(|e| e.1 += w).or_insert((pos, w));
        }
        let first: Vec<usize> = merged.values().map(|e| e.0).collect();
        let pick = |col: &Option<Vec<Option<i64>>>| col.as_ref().map(|c| first.iter().map(|&p| c[p]).collect());
        let edge_domain = pick(&edges.domain);
        let edge_time = pick(&edges.time);
        let edge_labels = edges.labels.as_ref().map(|c| first.iter().map(|&p| c[p]).collect());
        let edge_features = edges.features.as_ref().map(|f| f.select(ndarray::Axis(0), &first));
        let weights = edges.weights.as_ref().map(|_| merged.values().map(|e| e.1).collect());
        let canonical: Vec<(usize, usize)> = merged.keys().copied().collect();

        let mut g = Self {
            num_nodes,
            directed,
            edges: canonical,
            weights,
            edge_domain,
            edge_time,
            edge_labels,
            edge_features,
            row_ptr: vec![],
            col_idx: vec![],
            entry_edge: vec![],
            node_features: Arc::new(features),
            node_labels: labels.map(Arc::new),
            node_domain: None,
            node_time: None,
        };
        g.rebuild_csr();
        Ok(g)
    }

    fn rebuild_csr(&mut self) {
        let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(self.edges.len() * 2);
        for (id, &(u, v)) in self.edges.iter().enumerate() {
            entries.push((u, v, id));
            if !self.directed && u != v {
                entries.push((v, u, id));
            }
        }
        entries.sort_unstable();
        let mut row_ptr = vec![0usize; self.num_nodes + 1];
        for &(u, _, _) in &entries {
            row_ptr[u + 1] += 1;
        }
        for r in 0..self.num_nodes {
            row_ptr[r + 1] += row_ptr[r];
        }
        self.col_idx = entries.iter().map(|e| e.1).collect();
        self.entry_edge = entries.iter().map(|e| e.2).collect();
        self.row_ptr = row_ptr;
    }

    pub fn with_node_labels(mut self, l: Vec<Option<usize>>) -> Result<Self> {
        check_len("node labels", l.len(), self.num_nodes)?;
        self.node_labels = Some(Arc::new(l));
        Ok(self)
    }

    pub fn with_node_domain(mut self, d: Vec<Option<i64>>) -> Result<Self> {
        check_len("node domains", d.len(), self.num_nodes)?;
        self.node_domain = Some(Arc::new(d));
        Ok(self)
    }

    pub fn with_node_time(mut self, t: Vec<Option<i64>>) -> Result<Self> {
        check_len("node times", t.len(), self.num_nodes)?;
        self.node_time = Some(Arc::new(t));
        Ok(self)
    }

    pub fn with_node_features(mut self, f: Array2<T>) -> Result<Self> {
        check_len("node feature rows", f.nrows(), self.num_nodes)?;
        self.node_features = Arc::new(f);
        Ok(self)
    }

    pub(crate) fn with_shared_features(mut self, f: Arc<Array2<T>>) -> Self {
        debug_assert_eq!(f.nrows(), self.num_nodes);
        self.node_features = f;
        self
    }

    /// Keeps all nodes and node attributes, restricted to the given edge ids.
    pub fn edge_subgraph(&self, ids: &[usize]) -> Result<Self> {
        let mut ids = ids.to_vec();
        ids.sort_unstable();
        ids.dedup();
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.edges.len()) {
            bail!(Index, "edge id {bad} out of range 0..{}", self.edges.len());
        }
        let sel = |c: &Option<Vec<Option<i64>>>| c.as_ref().map(|c| ids.iter().map(|&i| c[i]).collect());
        let mut g = Self {
            num_nodes: self.num_nodes,
            directed: self.directed,
            edges: ids.iter().map(|&i| self.edges[i]).collect(),
            weights: self.weights.as_ref().map(|w| ids.iter().map(|&i| w[i]).collect()),
            edge_domain: sel(&self.edge_domain),
            edge_time: sel(&self.edge_time),
            edge_labels: self.edge_labels.as_ref().map(|c| ids.iter().map(|&i| c[i]).collect()),
            edge_features: self.edge_features.as_ref().map(|f| f.select(ndarray::Axis(0), &ids)),
            row_ptr: vec![],
            col_idx: vec![],
            entry_edge: vec![],
            node_features: Arc::clone(&self.node_features),
            node_labels: self.node_labels.clone(),
            node_domain: self.node_domain.clone(),
            node_time: self.node_time.clone(),
        };
        g.rebuild_csr();
        Ok(g)
    }

    /// Copy carrying only structure, weights and features: every label,
    /// domain and time attribute is dropped.
    pub fn without_annotations(&self) -> Self {
        Self {
            edge_domain: None,
            edge_time: None,
            edge_labels: None,
            node_labels: None,
            node_domain: None,
            node_time: None,
            ..self.clone()
        }
    }

    /// Symmetric GCN propagation matrix `D^-1/2 (A + I) D^-1/2`.
    ///
    /// Directed graphs are symmetrized first; a reciprocal pair keeps the larger
    /// weight. A self-loop already present in the data gets its weight
    /// incremented by one.
    pub fn normalized_adjacency(&self) -> Csr<T> {
        let n = self.num_nodes;
        let mut sym: BTreeMap<(usize, usize), T> = BTreeMap::new();
        for (id, &(u, v)) in self.edges.iter().enumerate() {
            let w = self.weight(id);
            for key in [(u, v), (v, u)] {
                sym.entry(key).and_modify(|x| *x = x.max(w)).or_insert(w);
            }
        }
        for i in 0..n {
            *sym.entry((i, i)).or_insert(T::zero()) += T::one();
        }
        let mut degree = vec![T::zero(); n];
        for (&(u, _), &w) in &sym {
            degree[u] += w;
        }
        let triplets = sym.into_iter().map(|((u, v), w)| (u, v, w / (degree[u] * degree[v]).sqrt())).collect();
        Csr::from_triplets(n, n, triplets).expect("indices within node range")
    }

    /// `num_nodes x 2` matrix of (in-degree, out-degree) edge counts.
    pub fn degree_features(&self) -> Array2<T> {
        let mut out = Array2::zeros((self.num_nodes, 2));
        for &(u, v) in &self.edges {
            out[[v, 0]] += T::one();
            out[[u, 1]] += T::one();
            if !self.directed && u != v {
                out[[u, 0]] += T::one();
                out[[v, 1]] += T::one();
            }
        }
        out
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Canonical edge list; positions are edge ids.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weight(&self, edge: usize) -> T {
        self.weights.as_ref().map_or(T::one(), |w| w[edge])
    }

    pub fn edge_weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }

    /// Stored neighbours of `u` with the id of the edge each entry comes from.
    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let span = self.row_ptr[u]..self.row_ptr[u + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.entry_edge[span].iter().copied())
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn column_indices(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        let key = if self.directed { (u, v) } else { (u.min(v), u.max(v)) };
        self.edges.binary_search(&key).is_ok()
    }

    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        let key = if self.directed { (u, v) } else { (u.min(v), u.max(v)) };
        self.edges.binary_search(&key).ok()
    }

    pub fn node_features(&self) -> &Array2<T> {
        &self.node_features
    }

    pub fn shared_node_features(&self) -> &Arc<Array2<T>> {
        &self.node_features
    }

    pub fn feature_dim(&self) -> usize {
        self.node_features.ncols()
    }

    pub fn node_labels(&self) -> Option<&[Option<usize>]> {
        self.node_labels.as_deref().map(Vec::as_slice)
    }

    pub fn node_domain(&self) -> Option<&[Option<i64>]> {
        self.node_domain.as_deref().map(Vec::as_slice)
    }

    pub fn node_time(&self) -> Option<&[Option<i64>]> {
        self.node_time.as_deref().map(Vec::as_slice)
    }

    pub fn edge_labels(&self) -> Option<&[Option<usize>]> {
        self.edge_labels.as_deref()
    }

    pub fn edge_domain(&self) -> Option<&[Option<i64>]> {
        self.edge_domain.as_deref()
    }

    pub fn edge_time(&self) -> Option<&[Option<i64>]> {
        self.edge_time.as_deref()
    }

    pub fn edge_features(&self) -> Option<&Array2<T>> {
        self.edge_features.as_ref()
    }

    /// Checks the structural invariants; every constructor upholds them.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes;
        if self.row_ptr.len() != n + 1 || self.row_ptr[0] != 0 {
            bail!(Shape, "row offsets must have length n + 1 and start at 0");
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            bail!(Shape, "row offsets are not monotone");
        }
        if self.row_ptr[n] != self.col_idx.len() {
            bail!(Shape, "final row offset differs from the entry count");
        }
        if self.col_idx.iter().any(|&c| c >= n) {
            bail!(Index, "column index outside 0..{n}");
        }
        if self.node_features.nrows() != n {
            bail!(Shape, "feature rows differ from node count");
        }
        if !self.directed {
            for u in 0..n {
                for (v, id) in self.neighbors(u) {
                    match self.neighbors(v).find(|&(x, _)| x == u) {
                        Some((_, back)) if self.weight(back) == self.weight(id) => {}
                        _ => bail!(Shape, "undirected edge ({u}, {v}) has no matching reverse entry"),
                    }
                }
            }
        }
        Ok(())
    }
}

fn matrix_rows<T: Scalar>(m: &Array2<T>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.iter().map(|x| x.as_f64()).collect()).collect()
}

/// Plain-data rendering of everything a graph carries; trainer-visible
/// values serialize through this so leakage checks can inspect the bytes.
impl<T: Scalar> serde::Serialize for Graph<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Graph", 11)?;
        st.serialize_field("num_nodes", &self.num_nodes)?;
        st.serialize_field("directed", &self.directed)?;
        st.serialize_field("edges", &self.edges)?;
        st.serialize_field(
            "weights",
            &self.weights.as_ref().map(|w| w.iter().map(|x| x.as_f64()).collect::<Vec<_>>()),
        )?;
        st.serialize_field("node_features", &matrix_rows(&self.node_features))?;
        st.serialize_field("node_labels", &self.node_labels.as_deref())?;
        st.serialize_field("node_domain", &self.node_domain.as_deref())?;
        st.serialize_field("node_time", &self.node_time.as_deref())?;
        st.serialize_field("edge_labels", &self.edge_labels)?;
        st.serialize_field("edge_domain", &self.edge_domain)?;
        st.serialize_field("edge_time", &self.edge_time)?;
        st.serialize_field("edge_features", &self.edge_features.as_ref().map(matrix_rows))?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn undirected(pairs: &[(usize, usize)], n: usize) -> Graph<f64> {
        Graph::build(&EdgeList::new(pairs.to_vec()), n, None, None, false).unwrap()
    }

    #[test]
    fn undirected_edge_is_symmetrized() {
        let g = undirected(&[(0, 1)], 2);
        assert_eq!(g.neighbors(0).map(|x| x.0).collect::<Vec<_>>(), vec![1]);
        assert_eq!(g.neighbors(1).map(|x| x.0).collect::<Vec<_>>(), vec![0]);
        g.validate().unwrap();
    }

    #[test]
    fn duplicate_edges_sum_weights() {
        let e = EdgeList::new(vec![(0, 1), (0, 1)]).with_weights(vec![1.0, 2.0]);
        let g = Graph::build(&e, 2, None, None, true).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.weight(0), 3.0);
    }

    #[test]
    fn out_of_range_endpoint() {
        let err = Graph::<f64>::build(&EdgeList::new(vec![(0, 5)]), 3, None, None, false).unwrap_err();
        assert!(matches!(err, crate::Error::Index(_)));
    }

    #[test]
    fn inconsistent_attribute_length() {
        let e = EdgeList::new(vec![(0, 1)]).with_weights(vec![1.0, 2.0]);
        assert!(matches!(Graph::build(&e, 2, None, None, false), Err(crate::Error::Shape(_))));
        let e = EdgeList::<f64>::new(vec![(0, 1)]);
        assert!(matches!(Graph::build(&e, 2, Some(Array2::zeros((3, 1))), None, false), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn isolated_node_normalizes_to_one() {
        let g = undirected(&[], 1);
        assert_eq!(g.normalized_adjacency().to_dense(), array![[1.0]]);
    }

    #[test]
    fn single_edge_normalizes_to_half() {
        let a = undirected(&[(0, 1)], 2).normalized_adjacency().to_dense();
        assert_eq!(a, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn triangle_normalizes_to_third() {
        let a = undirected(&[(0, 1), (1, 2), (0, 2)], 3).normalized_adjacency().to_dense();
        for v in a.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn existing_self_loop_is_incremented() {
        let g = undirected(&[(0, 0)], 1);
        // A + I = [[2]], degree 2 -> 2 / 2
        assert_eq!(g.normalized_adjacency().to_dense(), array![[1.0]]);
        let g = undirected(&[(0, 0), (0, 1)], 2);
        let a = g.normalized_adjacency();
        assert_abs_diff_eq!(a.get(0, 0), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn degree_features_directed_and_undirected() {
        let g = Graph::<f64>::build(&EdgeList::new(vec![(0, 1)]), 2, None, None, true).unwrap();
        assert_eq!(g.degree_features(), array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(undirected(&[], 3).degree_features(), Array2::<f64>::zeros((3, 2)));
        assert_eq!(undirected(&[(0, 1)], 2).degree_features(), array![[1.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn annotations_are_stripped() {
        let g = Graph::build(
            &EdgeList::<f64>::new(vec![(0, 1)]).with_labels(vec![Some(1)]),
            2,
            None,
            Some(vec![Some(0), Some(1)]),
            false,
        )
        .unwrap()
        .with_node_domain(vec![Some(0), None])
        .unwrap();
        let s = g.without_annotations();
        assert!(s.node_labels().is_none() && s.edge_labels().is_none() && s.node_domain().is_none());
        assert!(Arc::ptr_eq(s.shared_node_features(), g.shared_node_features()));
    }

    fn arb_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>, bool)> {
        (1usize..12).prop_flat_map(|n| {
            let pairs = proptest::collection::vec((0..n, 0..n), 0..30);
            (Just(n), pairs, proptest::collection::vec(0.1f64..3.0, 30), any::<bool>())
        })
    }

    proptest! {
        #[test]
        fn sqrt_degree_is_unit_eigenvector((n, pairs, w, directed) in arb_graph()) {
            let e = EdgeList::new(pairs.clone()).with_weights(w[..pairs.len()].to_vec());
            let g = Graph::build(&e, n, None, None, directed).unwrap();
            let a = g.normalized_adjacency();
            prop_assert!(a.is_symmetric(1e-12));
            // x_i = sqrt(d_i) with d the degree of the symmetrized A + I
            let mut sym = std::collections::BTreeMap::new();
            for (id, &(u, v)) in g.edges().iter().enumerate() {
                for key in [(u, v), (v, u)] {
                    let e = sym.entry(key).or_insert(0.0f64);
                    *e = e.max(g.weight(id));
                }
            }
            let mut d = vec![1.0; n];
            for (&(u, _), &w) in &sym { d[u] += w; }
            let x = ndarray::Array2::from_shape_fn((n, 1), |(i, _)| d[i].sqrt());
            let ax = a.matmul(x.view()).unwrap();
            for i in 0..n {
                prop_assert!((ax[[i, 0]] - x[[i, 0]]).abs() < 1e-10);
            }
        }

        #[test]
        fn edge_list_round_trips_as_collapsed_multiset((n, pairs, _w, directed) in arb_graph()) {
            let g = Graph::<f64>::build(&EdgeList::new(pairs.clone()), n, None, None, directed).unwrap();
            g.validate().unwrap();
            let mut want: Vec<(usize, usize)> = pairs
                .iter()
                .map(|&(u, v)| if directed { (u, v) } else { (u.min(v), u.max(v)) })
                .collect();
            want.sort_unstable();
            want.dedup();
            prop_assert_eq!(g.edges().to_vec(), want);
        }
    }
}
