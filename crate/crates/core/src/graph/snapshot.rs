use std::sync::Arc;

use super::Graph;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// One snapshot of a growing graph: the graph over the global id space and
/// the sorted set of node ids present at this time.
#[derive(Debug, Clone)]
pub struct Snapshot<T> {
    graph: Arc<Graph<T>>,
    nodes: Vec<usize>,
}

impl<T> Snapshot<T> {
    pub fn graph(&self) -> &Arc<Graph<T>> {
        &self.graph
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
}

/// Ordered snapshots with growth-only dynamics: node and edge sets never
/// shrink and node features of shared nodes never change.
#[derive(Debug, Clone)]
pub struct SnapshotSequence<T> {
    snapshots: Vec<Snapshot<T>>,
}

impl<T: Scalar> SnapshotSequence<T> {
    pub fn new(parts: Vec<(Graph<T>, Vec<usize>)>) -> Result<Self> {
        let mut snapshots: Vec<Snapshot<T>> = Vec::with_capacity(parts.len());
        for (i, (graph, mut nodes)) in parts.into_iter().enumerate() {
            nodes.sort_unstable();
            nodes.dedup();
            let mut present = vec![false; graph.num_nodes()];
            for &v in &nodes {
                if v >= graph.num_nodes() {
                    bail!(Index, "snapshot {i}: node {v} outside 0..{}", graph.num_nodes());
                }
                present[v] = true;
            }
            if let Some(&(u, v)) = graph.edges().iter().find(|(u, v)| !present[*u] || !present[*v]) {
                bail!(Setting, "snapshot {i}: edge ({u}, {v}) touches a node absent from the snapshot");
            }
            let mut graph = graph;
            if let Some(prev) = snapshots.last() {
                let pg = &prev.graph;
                if pg.num_nodes() != graph.num_nodes() {
                    bail!(Shape, "snapshot {i} uses a different id space");
                }
                if let Some(v) = prev.nodes.iter().find(|v| !present[**v]) {
                    bail!(Setting, "snapshot {i} drops node {v}");
                }
                if let Some(&(u, v)) = pg.edges().iter().find(|(u, v)| !graph.has_edge(*u, *v)) {
                    bail!(Setting, "snapshot {i} drops edge ({u}, {v})");
                }
                let (a, b) = (pg.node_features(), graph.node_features());
                if !Arc::ptr_eq(pg.shared_node_features(), graph.shared_node_features()) {
                    if a.dim() != b.dim() || prev.nodes.iter().any(|&v| a.row(v) != b.row(v)) {
                        bail!(Setting, "snapshot {i} changes features of an existing node");
                    }
                    graph = graph.with_shared_features(Arc::clone(pg.shared_node_features()));
                }
            }
            snapshots.push(Snapshot { graph: Arc::new(graph), nodes });
        }
        Ok(Self { snapshots })
    }

    /// Snapshot `i` keeps the nodes whose time is `<= cutoffs[i]` and the edges
    /// between them; nodes without a time are never present.
    pub fn from_node_times(graph: &Graph<T>, cutoffs: &[i64]) -> Result<Self> {
        let Some(times) = graph.node_time() else {
            bail!(Setting, "graph has no node time attribute");
        };
        let mut parts = Vec::with_capacity(cutoffs.len());
        for &cut in cutoffs {
            let alive: Vec<bool> = times.iter().map(|t| t.is_some_and(|t| t <= cut)).collect();
            let ids: Vec<usize> = graph
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, (u, v))| alive[*u] && alive[*v])
                .map(|(id, _)| id)
                .collect();
            let nodes = (0..graph.num_nodes()).filter(|&v| alive[v]).collect();
            parts.push((graph.edge_subgraph(&ids)?, nodes));
        }
        Self::new(parts)
    }

    /// Snapshot `i` keeps every node and the edges whose time is `<= cutoffs[i]`.
    pub fn from_edge_times(graph: &Graph<T>, cutoffs: &[i64]) -> Result<Self> {
        let Some(times) = graph.edge_time() else {
            bail!(Setting, "graph has no edge time attribute");
        };
        let mut parts = Vec::with_capacity(cutoffs.len());
        for &cut in cutoffs {
            let ids: Vec<usize> = (0..graph.num_edges()).filter(|&e| times[e].is_some_and(|t| t <= cut)).collect();
            parts.push((graph.edge_subgraph(&ids)?, (0..graph.num_nodes()).collect()));
        }
        Self::new(parts)
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn view(&self, i: usize) -> Result<&Snapshot<T>> {
        match self.snapshots.get(i) {
            Some(s) => Ok(s),
            None => bail!(Index, "snapshot {i} out of range 0..{}", self.snapshots.len()),
        }
    }

    /// `V(i) \ V(i-1)`, with `V(-1)` empty.
    pub fn new_nodes(&self, i: usize) -> Result<Vec<usize>> {
        let cur = self.view(i)?;
        Ok(match i.checked_sub(1) {
            None => cur.nodes.clone(),
            Some(p) => {
                let prev = &self.snapshots[p].nodes;
                cur.nodes.iter().copied().filter(|v| prev.binary_search(v).is_err()).collect()
            }
        })
    }

    /// Edge ids of snapshot `i`'s graph that are absent from snapshot `i - 1`.
    pub fn new_edges(&self, i: usize) -> Result<Vec<usize>> {
        let cur = self.view(i)?;
        Ok(match i.checked_sub(1) {
            None => (0..cur.graph.num_edges()).collect(),
            Some(p) => {
                let prev = &self.snapshots[p].graph;
                cur.graph
                    .edges()
                    .iter()
                    .enumerate()
                    .filter(|(_, (u, v))| !prev.has_edge(*u, *v))
                    .map(|(id, _)| id)
                    .collect()
            }
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Snapshot<T>> {
        self.snapshots.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeList;

    fn g(pairs: &[(usize, usize)], n: usize) -> Graph<f64> {
        Graph::build(&EdgeList::new(pairs.to_vec()), n, None, None, false).unwrap()
    }

    #[test]
    fn single_snapshot_view() {
        let s = SnapshotSequence::new(vec![(g(&[(0, 1)], 2), vec![0, 1])]).unwrap();
        assert_eq!(s.view(0).unwrap().graph().num_edges(), 1);
        assert!(matches!(s.view(1), Err(crate::Error::Index(_))));
    }

    #[test]
    fn new_nodes_is_set_difference() {
        let s = SnapshotSequence::new(vec![(g(&[(0, 1)], 3), vec![0, 1]), (g(&[(0, 1), (1, 2)], 3), vec![0, 1, 2])])
            .unwrap();
        assert_eq!(s.new_nodes(1).unwrap(), vec![2]);
        assert_eq!(s.new_nodes(0).unwrap(), vec![0, 1]);
        assert_eq!(s.new_edges(1).unwrap(), vec![1]);
        assert!(Arc::ptr_eq(
            s.view(0).unwrap().graph().shared_node_features(),
            s.view(1).unwrap().graph().shared_node_features()
        ));
    }

    #[test]
    fn shrinking_sequence_is_rejected() {
        let r = SnapshotSequence::new(vec![(g(&[(0, 1)], 3), vec![0, 1]), (g(&[], 3), vec![0, 1, 2])]);
        assert!(r.is_err());
    }

    #[test]
    fn from_node_times_grows() {
        let base = g(&[(0, 1), (1, 2), (2, 3)], 4).with_node_time(vec![Some(0), Some(0), Some(1), Some(2)]).unwrap();
        let s = SnapshotSequence::from_node_times(&base, &[0, 1, 2]).unwrap();
        assert_eq!(s.len(), 3);
        for i in 0..2 {
            let (a, b) = (s.view(i).unwrap().nodes(), s.view(i + 1).unwrap().nodes());
            assert!(a.iter().all(|v| b.contains(v)));
        }
        assert_eq!(s.new_nodes(2).unwrap(), vec![3]);
    }
}
