//! Link-prediction tasks: base and additional edges, held-out missing edges
//! and negative pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Level, Owner, Parts, Payload, PendingQuery, QueryPayload, Scenario, Setting, TaskInput, Truth};
use crate::error::{bail, Result};
use crate::graph::{Graph, SnapshotSequence};
use crate::scalar::Scalar;

type Pairs = Vec<(usize, usize)>;

/// Size of the shared negative pool every task's test positives are ranked
/// against (capped at half the number of non-edges).
pub const TEST_NEGATIVES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSplit {
    /// Share of each domain's edges that become base edges (Domain-IL).
    pub base_fraction: f64,
    /// Share of a task's additional edges held out as missing edges.
    pub missing_fraction: f64,
    /// Negatives per positive for training and validation.
    pub neg_ratio: f64,
    /// Share of the missing edges used for validation; the rest are tested.
    pub val_share: f64,
    pub test_negatives: usize,
}

impl Default for LinkSplit {
    fn default() -> Self {
        Self {
            base_fraction: 0.5,
            missing_fraction: 0.2,
            neg_ratio: 1.0,
            val_share: 0.5,
            test_negatives: TEST_NEGATIVES,
        }
    }
}

impl LinkSplit {
    fn validate(&self) -> Result<()> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.base_fraction) || !open(self.missing_fraction) || !open(self.val_share) {
            bail!(Config, "base_fraction, missing_fraction and val_share must lie in (0, 1)");
        }
        if !(self.neg_ratio.is_finite() && self.neg_ratio > 0.0) {
            bail!(Config, "neg_ratio must be positive");
        }
        Ok(())
    }
}

fn canonical(directed: bool, (u, v): (usize, usize)) -> (usize, usize) {
    if directed || u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Distinct uniformly drawn node pairs that are neither edges of `g` nor in
/// `forbidden`, without self-pairs. Pairs are unordered for undirected graphs.
pub fn sample_negative_pairs<T: Scalar>(
    g: &Graph<T>,
    forbidden: &BTreeSet<(usize, usize)>,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_with(g, forbidden, count, &mut rng)
}

fn sample_with<T: Scalar, R: Rng + ?Sized>(
    g: &Graph<T>,
    forbidden: &BTreeSet<(usize, usize)>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let feasible = feasible_count(g, forbidden);
    if count > feasible {
        bail!(Sampling, "asked for {count} negative pairs but only {feasible} exist");
    }
    if count == 0 {
        return Ok(vec![]);
    }
    let directed = g.is_directed();
    let n = g.num_nodes();
    let blocked = |p: (usize, usize)| p.0 == p.1 || g.has_edge(p.0, p.1) || forbidden.contains(&p);
    if 2 * count > feasible {
        let mut all: Vec<(usize, usize)> = (0..n)
            .flat_map(|u| (0..n).map(move |v| (u, v)))
            .filter(|&(u, v)| (directed || u < v) && !blocked((u, v)))
            .collect();
        let (picked, _) = all.partial_shuffle(rng, count);
        return Ok(picked.to_vec());
    }
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p = canonical(directed, (rng.random_range(0..n), rng.random_range(0..n)));
        if !blocked(p) && chosen.insert(p) {
            out.push(p);
        }
    }
    Ok(out)
}

fn feasible_count<T: Scalar>(g: &Graph<T>, forbidden: &BTreeSet<(usize, usize)>) -> usize {
    let n = g.num_nodes();
    let directed = g.is_directed();
    let total = if directed { n * n.saturating_sub(1) } else { n * n.saturating_sub(1) / 2 };
    let edges = g.edges().iter().filter(|(u, v)| u != v).count();
    let extra = forbidden
        .iter()
        .filter(|&&(u, v)| u != v && u < n && v < n && (directed || u < v) && !g.has_edge(u, v))
        .count();
    total - edges - extra
}

/// Edge domains derived from endpoint domains: when the endpoints disagree
/// the domain that comes later in `order` wins; endpoints whose domain is
/// unknown or unlisted are ignored.
pub fn edge_domains_from_nodes<T: Scalar>(
    g: &Graph<T>,
    node_domain: &[Option<i64>],
    order: &[i64],
) -> Vec<Option<i64>> {
    let rank: BTreeMap<i64, usize> = order.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    g.edges()
        .iter()
        .map(|&(u, v)| {
            [node_domain[u], node_domain[v]]
                .into_iter()
                .flatten()
                .filter_map(|d| rank.get(&d).map(|&r| (r, d)))
                .max()
                .map(|(_, d)| d)
        })
        .collect()
}

/// One task's edges before negatives are drawn.
struct LinkTask<T> {
    graph: Arc<Graph<T>>,
    val_pos: Vec<(usize, usize)>,
    test_pos: Vec<(usize, usize)>,
}

fn hold_out(missing: Vec<(usize, usize)>, val_share: f64, task: usize) -> Result<(Pairs, Pairs)> {
    let m = missing.len();
    if m < 2 {
        bail!(Setting, "task {task}: {m} missing edges cannot form validation and test sets");
    }
    let nv = ((m as f64 * val_share).round() as usize).clamp(1, m - 1);
    let mut val = missing;
    let test = val.split_off(nv);
    Ok((val, test))
}

fn compile<T: Scalar>(
    setting: Setting,
    truth_graph: &Graph<T>,
    tasks: Vec<LinkTask<T>>,
    params: &LinkSplit,
    dropped: usize,
    seed: u64,
    mut rng: ChaCha8Rng,
) -> Result<Scenario<T>> {
    // at most half the non-edges, so training negatives remain available
    let shared_count = params.test_negatives.min(feasible_count(truth_graph, &BTreeSet::new()) / 2);
    let shared = sample_with(truth_graph, &BTreeSet::new(), shared_count, &mut rng)?;
    if shared.is_empty() {
        bail!(Sampling, "the graph has no non-edges to rank against");
    }
    let mut queried: BTreeSet<(usize, usize)> = shared.iter().copied().collect();
    queried.extend(tasks.iter().flat_map(|t| t.test_pos.iter().copied()));

    let mut queries = vec![];
    let mut inputs = vec![];
    for (i, t) in tasks.into_iter().enumerate() {
        let train_pos: Vec<(usize, usize)> = t.graph.edges().to_vec();
        let n_train = (train_pos.len() as f64 * params.neg_ratio).round() as usize;
        let n_val = ((t.val_pos.len() as f64 * params.neg_ratio).round() as usize).max(1);
        let mut forbid = queried.clone();
        forbid.extend(t.val_pos.iter().copied());
        let mut neg = sample_with(&t.graph, &forbid, n_train + n_val, &mut rng)?;
        let val_neg = neg.split_off(n_train);
        for &(u, v) in &t.test_pos {
            queries.push(PendingQuery {
                payload: QueryPayload::Pair(u, v),
                owner: Owner::Task(i),
                truth: Truth::Edge(true),
            });
        }
        let payload = Payload::Links { graph: t.graph, train_pos, train_neg: neg, val_pos: t.val_pos, val_neg };
        inputs.push(TaskInput { index: i, classes: vec![], payload });
    }
    for &(u, v) in &shared {
        queries.push(PendingQuery {
            payload: QueryPayload::Pair(u, v),
            owner: Owner::Shared,
            truth: Truth::Edge(false),
        });
    }
    let parts = Parts {
        setting,
        level: Level::LinkPrediction,
        total_classes: 0,
        feature_dim: truth_graph.feature_dim(),
        task_classes: vec![vec![]; inputs.len()],
        inputs,
        queries,
        dropped,
    };
    Ok(Scenario::assemble(parts, seed, &mut rng))
}

/// Domain-IL link prediction. Each domain's edges are split into base edges,
/// shared by all tasks, and additional edges owned by that domain's task; a
/// share of the additional edges is held out as missing edges.
pub fn build_domain_il_lp<T: Scalar>(
    g: &Graph<T>,
    order: Option<&[i64]>,
    params: LinkSplit,
    seed: u64,
) -> Result<Scenario<T>> {
    params.validate()?;
    let Some(domain) = g.edge_domain() else { bail!(Setting, "graph has no edge domains") };
    let order: Vec<i64> = match order {
        Some(o) => o.to_vec(),
        None => domain.iter().flatten().copied().collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let position: BTreeMap<i64, usize> = order.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut per_domain = vec![vec![]; order.len()];
    let mut dropped = 0;
    for (e, d) in domain.iter().enumerate() {
        match d.and_then(|d| position.get(&d)) {
            Some(&t) => per_domain[t].push(e),
            None => dropped += 1,
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base = vec![];
    let mut extra = vec![];
    for (t, mut ids) in per_domain.into_iter().enumerate() {
        if ids.len() < 10 {
            bail!(Setting, "domain {} has {} edges; at least 10 are needed", order[t], ids.len());
        }
        ids.shuffle(&mut rng);
        let nb = ((ids.len() as f64 * params.base_fraction).round() as usize).clamp(1, ids.len() - 2);
        let rest = ids.split_off(nb);
        base.extend(ids);
        extra.push(rest);
    }
    let mut tasks = vec![];
    for (i, mut ids) in extra.into_iter().enumerate() {
        ids.shuffle(&mut rng);
        let nm = (ids.len() as f64 * params.missing_fraction).round() as usize;
        let keep = ids.split_off(nm.min(ids.len()));
        let missing = ids.iter().map(|&e| g.edges()[e]).collect();
        let (val_pos, test_pos) = hold_out(missing, params.val_share, i)?;
        let visible: Vec<usize> = base.iter().chain(&keep).copied().collect();
        let graph = Arc::new(g.edge_subgraph(&visible)?.without_annotations());
        tasks.push(LinkTask { graph, val_pos, test_pos });
    }
    compile(Setting::DomainIl, g, tasks, &params, dropped, seed, rng)
}

/// Time-IL link prediction. Task `i` sees the base edges accumulated so far
/// plus the edges new in snapshot `i`, minus its missing edges; afterwards
/// every non-missing new edge joins the base set.
pub fn build_time_il_lp<T: Scalar>(seq: &SnapshotSequence<T>, params: LinkSplit, seed: u64) -> Result<Scenario<T>> {
    params.validate()?;
    if seq.is_empty() {
        bail!(Setting, "snapshot sequence is empty");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut base: Vec<(usize, usize)> = vec![];
    let mut tasks = vec![];
    for i in 0..seq.len() {
        let snap = seq.view(i)?.graph();
        let mut new: Vec<(usize, usize)> = seq.new_edges(i)?.into_iter().map(|e| snap.edges()[e]).collect();
        if new.is_empty() {
            bail!(Setting, "snapshot {i} adds no edges");
        }
        new.shuffle(&mut rng);
        let nm = (new.len() as f64 * params.missing_fraction).round() as usize;
        let keep = new.split_off(nm.min(new.len()));
        let (val_pos, test_pos) = hold_out(new, params.val_share, i)?;
        base.extend_from_slice(&keep);
        let ids: Vec<usize> = base.iter().map(|&(u, v)| snap.edge_id(u, v).expect("snapshots only grow")).collect();
        let graph = Arc::new(snap.edge_subgraph(&ids)?.without_annotations());
        tasks.push(LinkTask { graph, val_pos, test_pos });
    }
    let last = seq.view(seq.len() - 1)?.graph();
    compile(Setting::TimeIl, last, tasks, &params, 0, seed, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeList;

    #[test]
    fn negatives_on_complete_graph_are_infeasible() {
        let g = Graph::<f64>::build(&EdgeList::new(vec![(0, 1), (0, 2), (1, 2)]), 3, None, None, false).unwrap();
        assert!(matches!(sample_negative_pairs(&g, &BTreeSet::new(), 1, 0), Err(crate::Error::Sampling(_))));
        assert!(sample_negative_pairs(&g, &BTreeSet::new(), 0, 0).unwrap().is_empty());
    }

    #[test]
    fn negatives_respect_forbidden_and_are_reproducible() {
        let g = Graph::<f64>::build(&EdgeList::new(vec![]), 3, None, None, true).unwrap();
        let forbidden = BTreeSet::from([(0, 1)]);
        let feasible = [(0, 2), (1, 2), (1, 0), (2, 0), (2, 1)];
        let a = sample_negative_pairs(&g, &forbidden, 2, 42).unwrap();
        assert_eq!(a.len(), 2);
        assert_ne!(a[0], a[1]);
        assert!(a.iter().all(|p| feasible.contains(p)));
        assert_eq!(a, sample_negative_pairs(&g, &forbidden, 2, 42).unwrap());
        assert_eq!(sample_negative_pairs(&g, &forbidden, 5, 1).unwrap().len(), 5);
        assert!(sample_negative_pairs(&g, &forbidden, 6, 1).is_err());
    }

    fn path(n: usize) -> Graph<f64> {
        Graph::build(&EdgeList::new((0..n - 1).map(|i| (i, i + 1)).collect()), n, None, None, false).unwrap()
    }

    #[test]
    fn time_il_lp_counts() {
        // snapshot 0: edges e0..e4, snapshot 1 adds e5..e9
        let g = path(11);
        let times = (0..10).map(|e| Some(if e < 5 { 0 } else { 1 })).collect();
        let el = EdgeList::new(g.edges().to_vec()).with_time(times);
        let g = Graph::<f64>::build(&el, 11, None, None, false).unwrap();
        let seq = SnapshotSequence::from_edge_times(&g, &[0, 1]).unwrap();
        let params = LinkSplit { missing_fraction: 0.4, ..LinkSplit::default() };
        let s = build_time_il_lp(&seq, params, 3).unwrap();
        let visible = |i: usize| match &s.input(i).unwrap().payload {
            Payload::Links { graph, val_pos, .. } => (graph.num_edges(), val_pos.len()),
            _ => panic!(),
        };
        // task 0: 5 new, 2 missing -> 3 visible; task 1: 3 base + 3 kept
        assert_eq!(visible(0), (3, 1));
        assert_eq!(visible(1), (6, 1));
        assert_eq!(s.queries_per_task(), vec![1, 1]);
    }

    #[test]
    fn domain_il_lp_missing_edges_are_hidden() {
        let n = 60;
        let g = path(n);
        let dom = (0..n - 1).map(|e| Some((e * 2 / (n - 1)) as i64)).collect();
        let el = EdgeList::new(g.edges().to_vec()).with_domain(dom);
        let g = Graph::<f64>::build(&el, n, None, None, false).unwrap();
        let s = build_domain_il_lp(&g, None, LinkSplit::default(), 7).unwrap();
        assert_eq!(s.num_tasks(), 2);
        let queries: BTreeSet<(usize, usize)> = s
            .queries()
            .iter()
            .map(|q| match q.payload {
                QueryPayload::Pair(u, v) => (u, v),
                _ => panic!(),
            })
            .collect();
        for i in 0..2 {
            let Payload::Links { graph, train_neg, val_pos, .. } = &s.input(i).unwrap().payload else { panic!() };
            assert!(graph.edges().iter().all(|e| !queries.contains(e)));
            assert!(val_pos.iter().all(|&(u, v)| !graph.has_edge(u, v)));
            assert!(train_neg.iter().all(|p| !queries.contains(p)));
        }
        let few =
            Graph::<f64>::build(&EdgeList::new(vec![(0, 1)]).with_domain(vec![Some(0)]), 2, None, None, false).unwrap();
        assert!(matches!(build_domain_il_lp(&few, None, LinkSplit::default(), 0), Err(crate::Error::Setting(_))));
    }

    #[test]
    fn later_domain_wins() {
        let g = path(3);
        let d = edge_domains_from_nodes(&g, &[Some(5), Some(3), None], &[3, 5]);
        assert_eq!(d, vec![Some(5), Some(3)]);
    }
}
