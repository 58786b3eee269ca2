//! Task construction for node, link and graph classification.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    class_set, Dataset, Labeled, LabeledPair, Owner, Parts, Payload, PendingQuery, QueryPayload, Scenario, Setting,
    Split, TaskInput, Truth,
};
use crate::error::{bail, Result};
use crate::graph::{Graph, GraphCollection, SnapshotSequence};
use crate::scalar::Scalar;

enum View<T> {
    Graph(Arc<Graph<T>>),
    Collection(Arc<GraphCollection<T>>),
}

impl<T> Clone for View<T> {
    fn clone(&self) -> Self {
        match self {
            Self::Graph(g) => Self::Graph(Arc::clone(g)),
            Self::Collection(c) => Self::Collection(Arc::clone(c)),
        }
    }
}

struct TaskDef<T> {
    view: View<T>,
    classes: Vec<usize>,
    pool: Vec<usize>,
}

fn stripped_view<T: Scalar>(ds: &Dataset<T>) -> View<T> {
    match ds {
        Dataset::Nodes(g) | Dataset::Edges(g) => View::Graph(Arc::new(g.without_annotations())),
        Dataset::Graphs(c) => View::Collection(Arc::new(c.without_annotations())),
    }
}

fn total_classes(labels: &[Option<usize>]) -> usize {
    labels.iter().flatten().max().map_or(0, |m| m + 1)
}

/// Splits each task's pool and turns the result into visible inputs plus
/// sealed test queries.
fn compile<T: Scalar>(
    ds: &Dataset<T>,
    labels: &[Option<usize>],
    setting: Setting,
    defs: Vec<TaskDef<T>>,
    dropped: usize,
    split: Split,
    seed: u64,
) -> Result<Scenario<T>> {
    split.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(defs.len());
    let mut queries = vec![];
    let mut task_classes = vec![];
    let pair_of = |id: usize| match ds {
        Dataset::Edges(g) => g.edges()[id],
        _ => unreachable!(),
    };
    for (i, def) in defs.into_iter().enumerate() {
        let [train, val, test] = split.partition(def.pool, &mut rng, &format!("task {i}"))?;
        let lab = |ids: &[usize]| ids.iter().map(|&id| Labeled { id, label: labels[id].expect("pooled") }).collect();
        let pairs = |ids: &[usize]| {
            ids.iter()
                .map(|&id| {
                    let (u, v) = pair_of(id);
                    LabeledPair { u, v, label: labels[id].expect("pooled") }
                })
                .collect()
        };
        let payload = match (&def.view, ds) {
            (View::Graph(g), Dataset::Nodes(_)) => {
                Payload::Nodes { graph: Arc::clone(g), train: lab(&train), val: lab(&val) }
            }
            (View::Graph(g), Dataset::Edges(_)) => {
                Payload::Edges { graph: Arc::clone(g), train: pairs(&train), val: pairs(&val) }
            }
            (View::Collection(c), Dataset::Graphs(_)) => {
                Payload::Graphs { collection: Arc::clone(c), train: lab(&train), val: lab(&val) }
            }
            _ => unreachable!("view kind follows the dataset kind"),
        };
        for id in test {
            let payload = match ds {
                Dataset::Nodes(_) => QueryPayload::Node(id),
                Dataset::Edges(_) => {
                    let (u, v) = pair_of(id);
                    QueryPayload::Pair(u, v)
                }
                Dataset::Graphs(_) => QueryPayload::Graph(id),
            };
            queries.push(PendingQuery {
                payload,
                owner: Owner::Task(i),
                truth: Truth::Class(labels[id].expect("pooled")),
            });
        }
        task_classes.push(def.classes.clone());
        inputs.push(TaskInput { index: i, classes: def.classes, payload });
    }
    let feature_dim = match ds {
        Dataset::Nodes(g) | Dataset::Edges(g) => g.feature_dim(),
        Dataset::Graphs(c) => c.feature_dim(),
    };
    let parts = Parts {
        setting,
        level: ds.level(),
        total_classes: total_classes(labels),
        feature_dim,
        task_classes,
        inputs,
        queries,
        dropped,
    };
    Ok(Scenario::assemble(parts, seed, &mut rng))
}

fn check_groups(groups: &[Vec<usize>], labels: &[Option<usize>]) -> Result<()> {
    if groups.is_empty() {
        bail!(Setting, "at least one class group is required");
    }
    let mut seen = BTreeSet::new();
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            bail!(Setting, "class group {i} is empty");
        }
        for &c in g {
            if !seen.insert(c) {
                bail!(Setting, "class {c} appears in more than one group");
            }
        }
    }
    let present: BTreeSet<usize> = labels.iter().flatten().copied().collect();
    for (i, g) in groups.iter().enumerate() {
        if !g.iter().any(|c| present.contains(c)) {
            bail!(Setting, "class group {i} has no labelled instances");
        }
    }
    Ok(())
}

/// Instances per group; instances whose class no group covers are dropped.
fn group_pools(groups: &[Vec<usize>], labels: &[Option<usize>]) -> (Vec<Vec<usize>>, usize) {
    let owner: BTreeMap<usize, usize> =
        groups.iter().enumerate().flat_map(|(i, g)| g.iter().map(move |&c| (c, i))).collect();
    let mut pools = vec![vec![]; groups.len()];
    let mut dropped = 0;
    for (id, l) in labels.iter().enumerate() {
        match l.and_then(|c| owner.get(&c)) {
            Some(&g) => pools[g].push(id),
            None => dropped += 1,
        }
    }
    (pools, dropped)
}

/// Task `i` holds the instances whose label lies in `groups[i]`; queries
/// carry their task id.
pub fn build_task_il<T: Scalar>(
    ds: &Dataset<T>,
    groups: &[Vec<usize>],
    split: Split,
    seed: u64,
) -> Result<Scenario<T>> {
    let labels = ds.require_labels()?;
    check_groups(groups, labels)?;
    let (pools, dropped) = group_pools(groups, labels);
    let view = stripped_view(ds);
    let defs = pools
        .into_iter()
        .map(|pool| TaskDef { view: view.clone(), classes: class_set(labels, pool.iter().copied()), pool })
        .collect();
    compile(ds, labels, Setting::TaskIl, defs, dropped, split, seed)
}

/// Task `i` adds the instances of `groups[i]`; its class set is the union
/// of the first `i + 1` groups.
pub fn build_class_il<T: Scalar>(
    ds: &Dataset<T>,
    groups: &[Vec<usize>],
    split: Split,
    seed: u64,
) -> Result<Scenario<T>> {
    let labels = ds.require_labels()?;
    check_groups(groups, labels)?;
    let (pools, dropped) = group_pools(groups, labels);
    let view = stripped_view(ds);
    let mut seen = BTreeSet::new();
    let defs = pools
        .into_iter()
        .map(|pool| {
            seen.extend(class_set(labels, pool.iter().copied()));
            TaskDef { view: view.clone(), classes: seen.iter().copied().collect(), pool }
        })
        .collect();
    compile(ds, labels, Setting::ClassIl, defs, dropped, split, seed)
}

/// Task `i` holds the instances whose domain is `order[i]`; the class set is
/// global.
pub fn build_domain_il<T: Scalar>(ds: &Dataset<T>, order: &[i64], split: Split, seed: u64) -> Result<Scenario<T>> {
    let labels = ds.require_labels()?;
    let Some(domain) = ds.domain() else { bail!(Setting, "dataset has no domain attribute") };
    if order.is_empty() {
        bail!(Setting, "domain order is empty");
    }
    let position: BTreeMap<i64, usize> = order.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    if position.len() != order.len() {
        bail!(Setting, "domain order lists a domain twice");
    }
    let mut pools = vec![vec![]; order.len()];
    let mut dropped = 0;
    for (id, (l, d)) in labels.iter().zip(domain).enumerate() {
        match (l, d.and_then(|d| position.get(&d))) {
            (Some(_), Some(&t)) => pools[t].push(id),
            _ => dropped += 1,
        }
    }
    if let Some(t) = pools.iter().position(Vec::is_empty) {
        bail!(Setting, "domain {} has no labelled instances", order[t]);
    }
    let classes = class_set(labels, pools.iter().flatten().copied());
    let view = stripped_view(ds);
    let defs = pools.into_iter().map(|pool| TaskDef { view: view.clone(), classes: classes.clone(), pool }).collect();
    compile(ds, labels, Setting::DomainIl, defs, dropped, split, seed)
}

/// Node Time-IL: task `i` trains on snapshot `i`; its labelled pool is the
/// set of nodes new in that snapshot.
pub fn build_time_il_nc<T: Scalar>(seq: &SnapshotSequence<T>, split: Split, seed: u64) -> Result<Scenario<T>> {
    if seq.is_empty() {
        bail!(Setting, "snapshot sequence is empty");
    }
    let last = seq.view(seq.len() - 1)?.graph();
    let Some(labels) = last.node_labels() else { bail!(Setting, "snapshots carry no node labels") };
    let labels = labels.to_vec();
    let mut defs = vec![];
    let mut covered = 0;
    for i in 0..seq.len() {
        let new = seq.new_nodes(i)?;
        if new.is_empty() {
            bail!(Setting, "snapshot {i} adds no nodes");
        }
        covered += new.len();
        let pool: Vec<usize> = new.into_iter().filter(|&v| labels[v].is_some()).collect();
        let view = View::Graph(Arc::new(seq.view(i)?.graph().without_annotations()));
        defs.push(TaskDef { view, classes: vec![], pool });
    }
    let classes = class_set(&labels, defs.iter().flat_map(|d| d.pool.iter().copied()));
    let labelled: usize = defs.iter().map(|d| d.pool.len()).sum();
    for d in &mut defs {
        d.classes = classes.clone();
    }
    let dropped = last.num_nodes() - covered + (covered - labelled);
    let ds = Dataset::Nodes((**last).clone());
    compile(&ds, &labels, Setting::TimeIl, defs, dropped, split, seed)
}

/// Time-IL by chronological blocks: instances sorted by time attribute are cut
/// into `n_tasks` contiguous equal-count blocks. For link classification
/// task `i` sees the edges of blocks `0..=i` only.
pub fn build_time_il<T: Scalar>(ds: &Dataset<T>, n_tasks: usize, split: Split, seed: u64) -> Result<Scenario<T>> {
    if matches!(ds, Dataset::Nodes(_)) {
        bail!(Setting, "node Time-IL is built from snapshots (build_time_il_nc)");
    }
    let labels = ds.require_labels()?;
    let Some(time) = ds.time() else { bail!(Setting, "dataset has no time attribute") };
    if n_tasks == 0 {
        bail!(Setting, "n_tasks must be positive");
    }
    let mut timed: Vec<(i64, usize)> =
        labels.iter().zip(time).enumerate().filter_map(|(id, (l, t))| l.and(*t).map(|t| (t, id))).collect();
    let dropped = ds.len() - timed.len();
    timed.sort_unstable();
    let n = timed.len();
    if n < n_tasks {
        bail!(Setting, "{n} timed instances cannot form {n_tasks} tasks");
    }
    let blocks: Vec<Vec<usize>> = (0..n_tasks)
        .map(|k| timed[k * n / n_tasks..(k + 1) * n / n_tasks].iter().map(|&(_, id)| id).collect())
        .collect();
    let classes = class_set(labels, timed.iter().map(|&(_, id)| id));
    let mut defs = vec![];
    let mut visible: Vec<usize> = vec![];
    for pool in blocks {
        let view = match ds {
            Dataset::Edges(g) => {
                visible.extend_from_slice(&pool);
                View::Graph(Arc::new(g.edge_subgraph(&visible)?.without_annotations()))
            }
            _ => stripped_view(ds),
        };
        defs.push(TaskDef { view, classes: classes.clone(), pool });
    }
    compile(ds, labels, Setting::TimeIl, defs, dropped, split, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeList;
    use crate::scenario::Query;

    fn six_class_graph(per_class: usize) -> Graph<f64> {
        let n = 6 * per_class;
        let pairs = (0..n - 1).map(|i| (i, i + 1)).collect();
        let labels = (0..n).map(|i| Some(i % 6)).collect();
        Graph::build(&EdgeList::new(pairs), n, None, Some(labels), false).unwrap()
    }

    fn ids(s: &Scenario<f64>) -> Vec<usize> {
        let mut all = vec![];
        for i in 0..s.rounds() {
            let Payload::Nodes { train, val, .. } = &s.input(i).unwrap().payload else { panic!() };
            all.extend(train.iter().chain(val).map(|l| l.id));
        }
        all.extend(s.queries().iter().map(|q| match q.payload {
            QueryPayload::Node(v) => v,
            _ => panic!(),
        }));
        all
    }

    #[test]
    fn cora_style_task_il() {
        let ds = Dataset::Nodes(six_class_graph(10));
        let s = build_task_il(&ds, &[vec![0, 1], vec![2, 3], vec![4, 5]], Split::default(), 1).unwrap();
        assert_eq!(s.num_tasks(), 3);
        assert!(s.queries().iter().all(|q| q.task.is_some()));
        let tc = s.info().task_classes.clone().unwrap();
        assert_eq!(tc, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);
        let mut all = ids(&s);
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n);
        assert_eq!(n, 60);
    }

    #[test]
    fn task_il_edge_cases() {
        let ds = Dataset::Nodes(six_class_graph(10));
        let one = build_task_il(&ds, &[vec![0, 1, 2, 3, 4, 5]], Split::default(), 1).unwrap();
        assert_eq!(one.num_tasks(), 1);
        assert!(matches!(
            build_task_il(&ds, &[vec![0, 1], vec![1, 2]], Split::default(), 1),
            Err(crate::Error::Setting(_))
        ));
        // class 5 uncovered: its instances are dropped
        let part = build_task_il(&ds, &[vec![0, 1], vec![2, 3, 4]], Split::default(), 1).unwrap();
        assert_eq!(part.dropped(), 10);
    }

    #[test]
    fn citeseer_style_class_il() {
        let ds = Dataset::Nodes(six_class_graph(10));
        let s = build_class_il(&ds, &[vec![0, 1], vec![2, 3], vec![4, 5]], Split::default(), 3).unwrap();
        let sizes: Vec<usize> = (0..3).map(|i| s.input(i).unwrap().classes.len()).collect();
        assert_eq!(sizes, vec![2, 4, 6]);
        assert!(s.queries().iter().all(|q: &Query| q.task.is_none()));
        assert!(s.info().task_classes.is_none());
        let Payload::Nodes { train, .. } = &s.input(1).unwrap().payload else { panic!() };
        assert!(train.iter().all(|l| l.label == 2 || l.label == 3));
    }

    #[test]
    fn domain_il() {
        let g = six_class_graph(10);
        let dom = (0..60).map(|i| Some((i / 30) as i64)).collect();
        let ds = Dataset::Nodes(g.with_node_domain(dom).unwrap());
        let s = build_domain_il(&ds, &[0, 1], Split::default(), 0).unwrap();
        assert_eq!(s.num_tasks(), 2);
        assert_eq!(s.input(0).unwrap().classes, s.input(1).unwrap().classes);
        assert!(matches!(build_domain_il(&ds, &[0, 7], Split::default(), 0), Err(crate::Error::Setting(_))));
    }

    #[test]
    fn shared_graph_instance_and_no_labels_visible() {
        let ds = Dataset::Nodes(six_class_graph(10));
        let s = build_class_il(&ds, &[vec![0, 1, 2], vec![3, 4, 5]], Split::default(), 0).unwrap();
        let g = |i| match &s.input(i).unwrap().payload {
            Payload::Nodes { graph, .. } => Arc::clone(graph),
            _ => panic!(),
        };
        assert!(Arc::ptr_eq(&g(0), &g(1)));
        assert!(g(0).node_labels().is_none());
    }

    #[test]
    fn time_il_nc_pools_are_new_nodes() {
        let n = 40;
        let labels: Vec<Option<usize>> = (0..n).map(|i| Some(i % 2)).collect();
        let time = (0..n).map(|i| Some(if i < 20 { 0 } else { 1 })).collect();
        let pairs = (0..n - 1).map(|i| (i, i + 1)).collect();
        let g = Graph::<f64>::build(&EdgeList::new(pairs), n, None, Some(labels), false)
            .unwrap()
            .with_node_time(time)
            .unwrap();
        let seq = SnapshotSequence::from_node_times(&g, &[0, 1]).unwrap();
        let s = build_time_il_nc(&seq, Split::default(), 5).unwrap();
        let Payload::Nodes { train, val, graph } = &s.input(1).unwrap().payload else { panic!() };
        assert!(train.iter().chain(val).all(|l| l.id >= 20));
        assert!(graph.node_time().is_none());
        let dup = SnapshotSequence::from_node_times(&g, &[0, 0]);
        if let Ok(seq) = dup {
            assert!(matches!(build_time_il_nc(&seq, Split::default(), 5), Err(crate::Error::Setting(_))));
        }
    }

    #[test]
    fn rebuild_is_identical() {
        let ds = Dataset::Nodes(six_class_graph(10));
        let a = build_class_il(&ds, &[vec![0, 1], vec![2, 3], vec![4, 5]], Split::default(), 9).unwrap();
        let b = build_class_il(&ds, &[vec![0, 1], vec![2, 3], vec![4, 5]], Split::default(), 9).unwrap();
        assert_eq!(serde_json::to_string(&a.input(2)).unwrap(), serde_json::to_string(&b.input(2)).unwrap());
        assert_eq!(a.queries(), b.queries());
    }
}
