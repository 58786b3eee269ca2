//! Compiles labelled data into a task sequence under one of the four
//! incremental settings, for node-, link- and graph-level problems.
//!
//! A [`Scenario`] holds two halves: the trainer-visible task inputs and query
//! list, and a [`SealedTruth`] with the test answers. Only the evaluator in
//! this crate can read the sealed half.

mod classification;
mod link;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use classification::{build_class_il, build_domain_il, build_task_il, build_time_il, build_time_il_nc};
pub use link::{
    build_domain_il_lp, build_time_il_lp, edge_domains_from_nodes, sample_negative_pairs, LinkSplit, TEST_NEGATIVES,
};
pub use synthetic::{generate_synthetic, SyntheticKind, SyntheticSpec};

use crate::error::{bail, Error, Result};
use crate::evaluator::BasicMetric;
use crate::graph::{Graph, GraphCollection};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Setting {
    TaskIl,
    ClassIl,
    DomainIl,
    TimeIl,
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::TaskIl => "task-il",
            Self::ClassIl => "class-il",
            Self::DomainIl => "domain-il",
            Self::TimeIl => "time-il",
        })
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "task-il" | "task" => Ok(Self::TaskIl),
            "class-il" | "class" => Ok(Self::ClassIl),
            "domain-il" | "domain" => Ok(Self::DomainIl),
            "time-il" | "time" => Ok(Self::TimeIl),
            _ => bail!(Config, "unknown setting {s:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Level {
    Node,
    LinkClassification,
    LinkPrediction,
    Graph,
}

impl Level {
    /// Whether answers are class indices (as opposed to ranking scores).
    pub fn is_classification(self) -> bool {
        self != Self::LinkPrediction
    }

    pub fn default_metrics(self) -> Vec<BasicMetric> {
        match self {
            Self::LinkPrediction => vec![BasicMetric::HitsAt(50), BasicMetric::Auroc],
            _ => vec![BasicMetric::Accuracy],
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Node => "node",
            Self::LinkClassification => "link-classification",
            Self::LinkPrediction => "link-prediction",
            Self::Graph => "graph",
        })
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "node" | "nc" => Ok(Self::Node),
            "link-classification" | "lc" => Ok(Self::LinkClassification),
            "link-prediction" | "lp" => Ok(Self::LinkPrediction),
            "graph" | "gc" => Ok(Self::Graph),
            _ => bail!(Config, "unknown level {s:?}"),
        }
    }
}

macro_rules! string_serde {
    ($($t:ty),*) => {$(
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.to_string()
            }
        }
    )*};
}
string_serde!(Setting, Level);

/// Train/validation/test ratios of each task's labelled pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p <= 0.0) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            bail!(Config, "split ratios must be positive and sum to 1, got {parts:?}");
        }
        Ok(())
    }

    /// Rounded (train, val, test) counts for a pool of `n`.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((n as f64) * self.train).round() as usize;
        let val = (((n as f64) * self.val).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, val, n - train - val)
    }

    fn partition<R: Rng + ?Sized>(&self, mut ids: Vec<usize>, rng: &mut R, what: &str) -> Result<[Vec<usize>; 3]> {
        ids.sort_unstable();
        ids.shuffle(rng);
        let (a, b, c) = self.sizes(ids.len());
        if a == 0 || b == 0 || c == 0 {
            bail!(Setting, "{what}: {} instances cannot fill a {a}/{b}/{c} split", ids.len());
        }
        let test = ids.split_off(a + b);
        let val = ids.split_off(a);
        let mut out = [ids, val, test];
        for part in &mut out {
            part.sort_unstable();
        }
        Ok(out)
    }
}

/// Labelled instances a scenario is compiled from.
#[derive(Debug, Clone)]
pub enum Dataset<T> {
    /// Node classification: labels and attributes live on the nodes.
    Nodes(Graph<T>),
    /// Link classification: labels and attributes live on the edges.
    Edges(Graph<T>),
    /// Graph classification.
    Graphs(GraphCollection<T>),
}

impl<T: Scalar> Dataset<T> {
    pub fn level(&self) -> Level {
        match self {
            Self::Nodes(_) => Level::Node,
            Self::Edges(_) => Level::LinkClassification,
            Self::Graphs(_) => Level::Graph,
        }
    }

    /// Number of instances (nodes, edges or graphs).
    pub fn len(&self) -> usize {
        match self {
            Self::Nodes(g) => g.num_nodes(),
            Self::Edges(g) => g.num_edges(),
            Self::Graphs(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        match self {
            Self::Nodes(g) => g.node_labels(),
            Self::Edges(g) => g.edge_labels(),
            Self::Graphs(c) => c.labels(),
        }
    }

    pub fn domain(&self) -> Option<&[Option<i64>]> {
        match self {
            Self::Nodes(g) => g.node_domain(),
            Self::Edges(g) => g.edge_domain(),
            Self::Graphs(c) => c.domain(),
        }
    }

    pub fn time(&self) -> Option<&[Option<i64>]> {
        match self {
            Self::Nodes(g) => g.node_time(),
            Self::Edges(g) => g.edge_time(),
            Self::Graphs(c) => c.time(),
        }
    }

    fn require_labels(&self) -> Result<&[Option<usize>]> {
        match self.labels() {
            Some(l) => Ok(l),
            None => bail!(Setting, "dataset has no instance labels"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Labeled {
    pub id: usize,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LabeledPair {
    pub u: usize,
    pub v: usize,
    pub label: usize,
}

/// Level-specific training material of one task.
#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "snake_case", bound = "T: Scalar")]
pub enum Payload<T> {
    Nodes {
        graph: Arc<Graph<T>>,
        train: Vec<Labeled>,
        val: Vec<Labeled>,
    },
    Edges {
        graph: Arc<Graph<T>>,
        train: Vec<LabeledPair>,
        val: Vec<LabeledPair>,
    },
    Links {
        graph: Arc<Graph<T>>,
        train_pos: Vec<(usize, usize)>,
        train_neg: Vec<(usize, usize)>,
        val_pos: Vec<(usize, usize)>,
        val_neg: Vec<(usize, usize)>,
    },
    Graphs {
        collection: Arc<GraphCollection<T>>,
        train: Vec<Labeled>,
        val: Vec<Labeled>,
    },
}

/// Everything a trainer receives before learning task `index`.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Scalar")]
pub struct TaskInput<T> {
    pub index: usize,
    /// Classes of this task's labelled data; in Class-IL the union of all
    /// classes seen so far.
    pub classes: Vec<usize>,
    pub payload: Payload<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct QueryId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryPayload {
    Node(usize),
    Pair(usize, usize),
    Graph(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Query {
    pub id: QueryId,
    pub payload: QueryPayload,
    /// Present only in Task-IL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task: Option<usize>,
}

/// Scenario-wide facts every trainer may read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioInfo {
    pub setting: Setting,
    pub level: Level,
    pub tasks: usize,
    pub total_classes: usize,
    pub feature_dim: usize,
    /// Class set of every task, published only in Task-IL.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub task_classes: Option<Vec<Vec<usize>>>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Truth {
    Class(usize),
    Edge(bool),
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Owner {
    Task(usize),
    /// Shared LP negatives, scored against every task's positives.
    Shared,
}

/// Test answers, indexed by query id.
#[derive(Clone)]
pub(crate) struct SealedTruth {
    pub(crate) answers: Vec<Truth>,
    pub(crate) owners: Vec<Owner>,
}

impl fmt::Debug for SealedTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealedTruth({} answers)", self.answers.len())
    }
}

#[derive(Debug, Clone)]
pub struct Scenario<T> {
    info: ScenarioInfo,
    seed: u64,
    inputs: Vec<TaskInput<T>>,
    queries: Arc<[Query]>,
    pub(crate) truth: SealedTruth,
    metrics: Vec<BasicMetric>,
    dropped: usize,
    merged: bool,
}

/// One test instance before the global shuffle.
pub(crate) struct PendingQuery {
    pub payload: QueryPayload,
    pub owner: Owner,
    pub truth: Truth,
}

pub(crate) struct Parts<T> {
    pub setting: Setting,
    pub level: Level,
    pub total_classes: usize,
    pub feature_dim: usize,
    pub task_classes: Vec<Vec<usize>>,
    pub inputs: Vec<TaskInput<T>>,
    pub queries: Vec<PendingQuery>,
    pub dropped: usize,
}

impl<T: Scalar> Scenario<T> {
    /// Shuffles the queries globally (so ids reveal no task membership) and
    /// seals their answers.
    pub(crate) fn assemble<R: Rng + ?Sized>(p: Parts<T>, seed: u64, rng: &mut R) -> Self {
        let mut pending = p.queries;
        pending.shuffle(rng);
        let task_il = p.setting == Setting::TaskIl;
        let queries: Arc<[Query]> = pending
            .iter()
            .enumerate()
            .map(|(i, q)| Query {
                id: QueryId(i),
                payload: q.payload,
                task: match (task_il, q.owner) {
                    (true, Owner::Task(t)) => Some(t),
                    _ => None,
                },
            })
            .collect();
        let truth = SealedTruth {
            answers: pending.iter().map(|q| q.truth).collect(),
            owners: pending.iter().map(|q| q.owner).collect(),
        };
        let info = ScenarioInfo {
            setting: p.setting,
            level: p.level,
            tasks: p.task_classes.len(),
            total_classes: p.total_classes,
            feature_dim: p.feature_dim,
            task_classes: task_il.then_some(p.task_classes),
        };
        Self {
            info,
            seed,
            inputs: p.inputs,
            queries,
            truth,
            metrics: p.level.default_metrics(),
            dropped: p.dropped,
            merged: false,
        }
    }

    pub fn info(&self) -> &ScenarioInfo {
        &self.info
    }

    pub fn setting(&self) -> Setting {
        self.info.setting
    }

    pub fn level(&self) -> Level {
        self.info.level
    }

    /// Number of evaluated tasks (matrix columns).
    pub fn num_tasks(&self) -> usize {
        self.info.tasks
    }

    /// Number of training rounds: `num_tasks`, or 1 for a joint scenario.
    pub fn rounds(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_joint(&self) -> bool {
        self.merged
    }

    pub fn total_classes(&self) -> usize {
        self.info.total_classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Instances excluded because a required attribute was missing.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn queries(&self) -> &Arc<[Query]> {
        &self.queries
    }

    /// Visible input of round `i`. Harness-side view; trainers receive inputs
    /// one at a time through the loader.
    pub fn input(&self, i: usize) -> Option<&TaskInput<T>> {
        self.inputs.get(i)
    }

    pub fn metrics(&self) -> &[BasicMetric] {
        &self.metrics
    }

    /// Replaces the basic metrics; the first one drives the summary metrics.
    pub fn with_metrics(mut self, metrics: Vec<BasicMetric>) -> Result<Self> {
        if metrics.is_empty() {
            bail!(Config, "at least one basic metric is required");
        }
        let classification = self.level().is_classification();
        if let Some(m) = metrics.iter().find(|m| m.wants_scores() == classification) {
            bail!(Config, "metric {m} does not apply to {} problems", self.level());
        }
        self.metrics = metrics;
        Ok(self)
    }

    /// Number of test queries owned by each task (shared LP negatives are
    /// not counted).
    pub fn queries_per_task(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_tasks()];
        for o in &self.truth.owners {
            if let Owner::Task(t) = o {
                out[*t] += 1;
            }
        }
        out
    }

    /// Single-round scenario whose input is the union of every task's input;
    /// queries and answers are unchanged, so its one matrix row scores the
    /// joint model on each task.
    pub fn joint(&self) -> Result<Self> {
        let Some(first) = self.inputs.first() else { bail!(Setting, "scenario has no tasks") };
        let classes: BTreeSet<usize> = self.inputs.iter().flat_map(|t| t.classes.iter().copied()).collect();
        let payload = match &first.payload {
            Payload::Nodes { .. } => {
                let (mut train, mut val) = (vec![], vec![]);
                for t in &self.inputs {
                    let Payload::Nodes { train: a, val: b, .. } = &t.payload else { unreachable!() };
                    train.extend_from_slice(a);
                    val.extend_from_slice(b);
                }
                Payload::Nodes { graph: self.union_graph()?, train, val }
            }
            Payload::Edges { .. } => {
                let (mut train, mut val) = (vec![], vec![]);
                for t in &self.inputs {
                    let Payload::Edges { train: a, val: b, .. } = &t.payload else { unreachable!() };
                    train.extend_from_slice(a);
                    val.extend_from_slice(b);
                }
                Payload::Edges { graph: self.union_graph()?, train, val }
            }
            Payload::Links { .. } => {
                let mut sets: [BTreeSet<(usize, usize)>; 4] = Default::default();
                for t in &self.inputs {
                    let Payload::Links { train_pos, train_neg, val_pos, val_neg, .. } = &t.payload else {
                        unreachable!()
                    };
                    for (set, items) in sets.iter_mut().zip([train_pos, train_neg, val_pos, val_neg]) {
                        set.extend(items.iter().copied());
                    }
                }
                // a pair that is a positive anywhere is not a negative
                let pos: BTreeSet<_> = sets[0].union(&sets[2]).copied().collect();
                let [tp, tn, vp, vn] = sets;
                Payload::Links {
                    graph: self.union_graph()?,
                    train_pos: tp.iter().copied().collect(),
                    train_neg: tn.into_iter().filter(|p| !pos.contains(p)).collect(),
                    val_pos: vp.into_iter().filter(|p| !tp.contains(p)).collect(),
                    val_neg: vn.into_iter().filter(|p| !pos.contains(p)).collect(),
                }
            }
            Payload::Graphs { collection, .. } => {
                let (mut train, mut val) = (vec![], vec![]);
                for t in &self.inputs {
                    let Payload::Graphs { train: a, val: b, .. } = &t.payload else { unreachable!() };
                    train.extend_from_slice(a);
                    val.extend_from_slice(b);
                }
                Payload::Graphs { collection: Arc::clone(collection), train, val }
            }
        };
        let mut out = self.clone();
        out.inputs = vec![TaskInput { index: 0, classes: classes.into_iter().collect(), payload }];
        out.merged = true;
        Ok(out)
    }

    /// Union of the per-task visible graphs (the shared instance when all
    /// tasks use the same one).
    fn union_graph(&self) -> Result<Arc<Graph<T>>> {
        let graphs: Vec<&Arc<Graph<T>>> = self
            .inputs
            .iter()
            .map(|t| match &t.payload {
                Payload::Nodes { graph, .. } | Payload::Edges { graph, .. } | Payload::Links { graph, .. } => graph,
                Payload::Graphs { .. } => unreachable!("collections are never merged"),
            })
            .collect();
        let first = graphs[0];
        if graphs.iter().all(|g| Arc::ptr_eq(g, first)) {
            return Ok(Arc::clone(first));
        }
        let mut seen = BTreeSet::new();
        let mut pairs = vec![];
        let mut weights = vec![];
        for g in &graphs {
            for (e, &p) in g.edges().iter().enumerate() {
                if seen.insert(p) {
                    pairs.push(p);
                    weights.push(g.weight(e));
                }
            }
        }
        let el = crate::graph::EdgeList::new(pairs).with_weights(weights);
        let g = Graph::build(&el, first.num_nodes(), None, None, first.is_directed())?
            .with_shared_features(Arc::clone(first.shared_node_features()));
        Ok(Arc::new(g))
    }
}

/// Sorted distinct labels of the selected instances.
pub(crate) fn class_set(labels: &[Option<usize>], ids: impl IntoIterator<Item = usize>) -> Vec<usize> {
    let set: BTreeSet<usize> = ids.into_iter().filter_map(|i| labels[i]).collect();
    set.into_iter().collect()
}
