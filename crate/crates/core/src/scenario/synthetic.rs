//! Stochastic-block-model datasets for desk-scale experiments and tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{bail, Result};
use crate::graph::{EdgeList, Graph, GraphCollection};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Nc,
    Lp,
    Gc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n_tasks: usize,
    pub classes_per_task: usize,
    /// Nodes per class (node and link kinds).
    pub nodes_per_class: usize,
    pub feature_dim: usize,
    /// Intra-class edge probability.
    pub p_in: f64,
    /// Inter-class edge probability.
    pub p_out: f64,
    /// Ratio of class-mean spread to feature noise; `inf` gives noiseless
    /// features.
    pub separability: f64,
    /// Graphs per class (graph kind).
    pub graphs_per_class: usize,
    pub nodes_per_graph: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::Nc,
            n_tasks: 3,
            classes_per_task: 2,
            nodes_per_class: 60,
            feature_dim: 16,
            p_in: 0.1,
            p_out: 0.01,
            separability: 1.0,
            graphs_per_class: 30,
            nodes_per_graph: 12,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn classes(&self) -> usize {
        self.n_tasks * self.classes_per_task
    }

    fn validate(&self) -> Result<()> {
        let sizes = match self.kind {
            SyntheticKind::Nc | SyntheticKind::Lp => [self.nodes_per_class, 1],
            SyntheticKind::Gc => [self.graphs_per_class, self.nodes_per_graph],
        };
        if self.n_tasks == 0 || self.classes_per_task == 0 || self.feature_dim == 0 || sizes.contains(&0) {
            bail!(Config, "synthetic sizes must be positive");
        }
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.p_in) || !prob(self.p_out) || self.p_in <= self.p_out {
            bail!(Config, "need 0 <= p_out < p_in <= 1");
        }
        if self.separability.is_nan() || self.separability <= 0.0 {
            bail!(Config, "separability must be positive");
        }
        Ok(())
    }

    fn noise(&self) -> f64 {
        1.0 / self.separability
    }
}

fn class_means(rng: &mut ChaCha8Rng, classes: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((classes, dim), || rng.sample::<f64, _>(StandardNormal))
}

fn features(rng: &mut ChaCha8Rng, means: &Array2<f64>, labels: &[usize], noise: f64) -> Array2<f64> {
    let dim = means.ncols();
    let mut x = Array2::zeros((labels.len(), dim));
    for (r, &c) in labels.iter().enumerate() {
        for j in 0..dim {
            let eps: f64 = rng.sample(StandardNormal);
            x[[r, j]] = means[[c, j]] + noise * eps;
        }
    }
    x
}

fn sbm_edges(rng: &mut ChaCha8Rng, labels: &[usize], p: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    let n = labels.len();
    let mut out = vec![];
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p(labels[u], labels[v]) {
                out.push((u, v));
            }
        }
    }
    out
}

/// Deterministic SBM dataset with `n_tasks × classes_per_task` classes.
///
/// * `nc`: one graph, node labels, random node domain and time in
///   `0..n_tasks`.
/// * `lp`: the same graph as an edge dataset; an edge's domain is the later
///   task among its endpoints' classes, its time is random in `0..n_tasks`.
/// * `gc`: one small graph per instance whose density grows with its class.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = spec.classes();
    let means = class_means(&mut rng, classes, spec.feature_dim);
    let noise = spec.noise();
    let nt = spec.n_tasks as i64;
    match spec.kind {
        SyntheticKind::Nc | SyntheticKind::Lp => {
            let labels: Vec<usize> = (0..classes).flat_map(|c| std::iter::repeat_n(c, spec.nodes_per_class)).collect();
            let n = labels.len();
            let pairs = sbm_edges(&mut rng, &labels, |a, b| if a == b { spec.p_in } else { spec.p_out });
            let x = features(&mut rng, &means, &labels, noise);
            if spec.kind == SyntheticKind::Nc {
                let domain = (0..n).map(|_| Some(rng.random_range(0..nt))).collect();
                let time = (0..n).map(|_| Some(rng.random_range(0..nt))).collect();
                let g = Graph::build(
                    &EdgeList::new(pairs),
                    n,
                    Some(x),
                    Some(labels.into_iter().map(Some).collect()),
                    false,
                )?
                .with_node_domain(domain)?
                .with_node_time(time)?;
                Ok(Dataset::Nodes(g))
            } else {
                let task = |v: usize| (labels[v] / spec.classes_per_task) as i64;
                let domain = pairs.iter().map(|&(u, v)| Some(task(u).max(task(v)))).collect();
                let time = pairs.iter().map(|_| Some(rng.random_range(0..nt))).collect();
                let el = EdgeList::new(pairs).with_domain(domain).with_time(time);
                Ok(Dataset::Edges(Graph::build(&el, n, Some(x), None, false)?))
            }
        }
        SyntheticKind::Gc => {
            let mut graphs = vec![];
            let mut labels = vec![];
            for c in 0..classes {
                let p = spec.p_out + (spec.p_in - spec.p_out) * (c + 1) as f64 / classes as f64;
                for _ in 0..spec.graphs_per_class {
                    let nodes = vec![c; spec.nodes_per_graph];
                    let pairs = sbm_edges(&mut rng, &nodes, |_, _| p);
                    let x = features(&mut rng, &means, &nodes, noise);
                    graphs.push(Graph::build(&EdgeList::new(pairs), nodes.len(), Some(x), None, false)?);
                    labels.push(Some(c));
                }
            }
            let m = graphs.len();
            let domain = (0..m).map(|_| Some(rng.random_range(0..nt))).collect();
            let time = (0..m).map(|_| Some(rng.random_range(0..nt))).collect();
            Ok(Dataset::Graphs(GraphCollection::new(graphs, Some(labels))?.with_domain(domain)?.with_time(time)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_features_are_class_constant() {
        let spec = SyntheticSpec { separability: f64::INFINITY, nodes_per_class: 5, ..SyntheticSpec::default() };
        let Dataset::Nodes(g) = generate_synthetic(&spec).unwrap() else { panic!() };
        let labels = g.node_labels().unwrap();
        let x = g.node_features();
        for u in 0..g.num_nodes() {
            for v in 0..g.num_nodes() {
                if labels[u] == labels[v] {
                    assert_eq!(x.row(u), x.row(v));
                }
            }
        }
    }

    #[test]
    fn deterministic_and_sized() {
        let spec = SyntheticSpec { nodes_per_class: 20, ..SyntheticSpec::default() };
        let a = serde_json::to_string(match &generate_synthetic(&spec).unwrap() {
            Dataset::Nodes(g) => g,
            _ => panic!(),
        })
        .unwrap();
        let Dataset::Nodes(g) = generate_synthetic(&spec).unwrap() else { panic!() };
        assert_eq!(a, serde_json::to_string(&g).unwrap());
        assert_eq!(g.num_nodes(), 120);
        let distinct: std::collections::BTreeSet<_> = g.node_labels().unwrap().iter().collect();
        assert_eq!(distinct.len(), 6);
    }

    #[test]
    fn intra_class_edges_dominate() {
        let spec = SyntheticSpec { nodes_per_class: 40, ..SyntheticSpec::default() };
        let Dataset::Nodes(g) = generate_synthetic(&spec).unwrap() else { panic!() };
        let l = g.node_labels().unwrap();
        let intra = g.edges().iter().filter(|(u, v)| l[*u] == l[*v]).count() as f64;
        let inter = g.edges().len() as f64 - intra;
        // expected densities per possible pair: 0.1 vs 0.01
        let pairs_intra = 6.0 * 40.0 * 39.0 / 2.0;
        let pairs_inter = 240.0 * 239.0 / 2.0 - pairs_intra;
        assert!(intra / pairs_intra > 3.0 * inter / pairs_inter);
    }

    #[test]
    fn rejects_empty_sizes() {
        let spec = SyntheticSpec { nodes_per_class: 0, ..SyntheticSpec::default() };
        assert!(matches!(generate_synthetic(&spec), Err(crate::Error::Config(_))));
    }
}
