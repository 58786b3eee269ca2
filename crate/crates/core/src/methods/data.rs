//! Trainer-side views of a task input: model-ready training and validation
//! examples and the per-round query context.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::Result;
use crate::evaluator::{accuracy, auroc};
use crate::graph::{Csr, Graph, GraphCollection};
use crate::model::{argmax_masked, Batch, HeadKind, Model, ModelConfig, Tape, Var};
use crate::scalar::Scalar;
use crate::scenario::{Level, Payload, ScenarioInfo, TaskInput};

/// A labelled set of instances together with the graph it is evaluated on.
#[derive(Debug, Clone)]
pub enum Examples<T> {
    Nodes {
        adj: Arc<Csr<T>>,
        x: Arc<Array2<T>>,
        rows: Vec<usize>,
        labels: Vec<usize>,
    },
    /// Link classification.
    Pairs {
        adj: Arc<Csr<T>>,
        x: Arc<Array2<T>>,
        pairs: Vec<(usize, usize)>,
        labels: Vec<usize>,
    },
    /// Link prediction with 0/1 targets.
    Links {
        adj: Arc<Csr<T>>,
        x: Arc<Array2<T>>,
        pairs: Vec<(usize, usize)>,
        targets: Vec<T>,
    },
    Graphs {
        collection: Arc<GraphCollection<T>>,
        ids: Vec<usize>,
        labels: Vec<usize>,
        adj: Arc<Csr<T>>,
        x: Arc<Array2<T>>,
        membership: Vec<usize>,
    },
}

fn graph_batch<T: Scalar>(c: &Arc<GraphCollection<T>>, ids: Vec<usize>, labels: Vec<usize>) -> Examples<T> {
    let (adj, x, membership) = c.batch(&ids);
    Examples::Graphs { collection: Arc::clone(c), ids, labels, adj: Arc::new(adj), x: Arc::new(x), membership }
}

impl<T: Scalar> Examples<T> {
    pub fn len(&self) -> usize {
        match self {
            Self::Nodes { rows, .. } => rows.len(),
            Self::Pairs { pairs, .. } | Self::Links { pairs, .. } => pairs.len(),
            Self::Graphs { ids, .. } => ids.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows of the propagation matrix (the size of dropout masks).
    pub fn num_nodes(&self) -> usize {
        match self {
            Self::Nodes { adj, .. } | Self::Pairs { adj, .. } | Self::Links { adj, .. } | Self::Graphs { adj, .. } => {
                adj.shape().0
            }
        }
    }

    pub fn batch(&self) -> Batch<'_, T> {
        match self {
            Self::Nodes { adj, x, rows, .. } => Batch::Nodes { adj, x, rows },
            Self::Pairs { adj, x, pairs, .. } | Self::Links { adj, x, pairs, .. } => Batch::Pairs { adj, x, pairs },
            Self::Graphs { adj, x, membership, ids, .. } => Batch::Graphs { adj, x, membership, count: ids.len() },
        }
    }

    /// The examples at positions `idx`, on the same graph.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        match self {
            Self::Nodes { adj, x, rows, labels } => {
                Self::Nodes { adj: Arc::clone(adj), x: Arc::clone(x), rows: pick(rows), labels: pick(labels) }
            }
            Self::Pairs { adj, x, pairs, labels } => Self::Pairs {
                adj: Arc::clone(adj),
                x: Arc::clone(x),
                pairs: idx.iter().map(|&i| pairs[i]).collect(),
                labels: pick(labels),
            },
            Self::Links { adj, x, pairs, targets } => Self::Links {
                adj: Arc::clone(adj),
                x: Arc::clone(x),
                pairs: idx.iter().map(|&i| pairs[i]).collect(),
                targets: idx.iter().map(|&i| targets[i]).collect(),
            },
            Self::Graphs { collection, ids, labels, .. } => graph_batch(collection, pick(ids), pick(labels)),
        }
    }

    /// Mean task loss of `output` (the model output for [`batch`](Self::batch)):
    /// masked cross-entropy, or logistic loss for link prediction.
    pub fn loss(&self, tape: &mut Tape<T>, output: Var, allowed: &[bool]) -> Result<Var> {
        match self {
            Self::Nodes { labels, .. } | Self::Pairs { labels, .. } | Self::Graphs { labels, .. } => {
                tape.cross_entropy(output, labels, allowed)
            }
            Self::Links { targets, .. } => tape.logistic(output, targets),
        }
    }

    /// Accuracy of masked argmax predictions, or AUROC for link prediction.
    pub fn evaluate(&self, model: &Model<T>, allowed: &[bool]) -> Result<f64> {
        let out = model.infer(&self.batch())?;
        match self {
            Self::Nodes { labels, .. } | Self::Pairs { labels, .. } | Self::Graphs { labels, .. } => {
                accuracy(&argmax_masked(&out, allowed), labels)
            }
            Self::Links { targets, .. } => {
                let scores: Vec<f64> = out.column(0).iter().map(|s| s.as_f64()).collect();
                let labels: Vec<bool> = targets.iter().map(|t| *t > T::of(0.5)).collect();
                auroc(&scores, &labels)
            }
        }
    }
}

/// Model-ready material of one task.
#[derive(Debug, Clone)]
pub struct TaskData<T> {
    pub index: usize,
    /// Output classes the training loss may use.
    pub allowed: Vec<bool>,
    pub train: Examples<T>,
    pub val: Examples<T>,
}

/// Graph material needed to answer queries during one round.
#[derive(Debug, Clone)]
pub struct RoundGraph<T> {
    pub adj: Arc<Csr<T>>,
    pub x: Arc<Array2<T>>,
    pub collection: Option<Arc<GraphCollection<T>>>,
}

fn propagation<T: Scalar>(g: &Graph<T>) -> (Arc<Csr<T>>, Arc<Array2<T>>) {
    (Arc::new(g.normalized_adjacency()), Arc::clone(g.shared_node_features()))
}

/// Mask over `n` outputs with the listed classes set.
pub fn class_mask(n: usize, classes: impl IntoIterator<Item = usize>) -> Vec<bool> {
    let mut m = vec![false; n];
    for c in classes {
        if c < n {
            m[c] = true;
        }
    }
    m
}

impl<T: Scalar> TaskData<T> {
    pub fn from_input(input: &TaskInput<T>, info: &ScenarioInfo) -> Result<(Self, RoundGraph<T>)> {
        let outputs = head_for(info).outputs();
        let allowed = if info.level == Level::LinkPrediction {
            vec![true]
        } else {
            class_mask(outputs, input.classes.iter().copied())
        };
        let (train, val, round) = match &input.payload {
            Payload::Nodes { graph, train, val } => {
                let (adj, x) = propagation(graph);
                let mk = |set: &[crate::scenario::Labeled]| Examples::Nodes {
                    adj: Arc::clone(&adj),
                    x: Arc::clone(&x),
                    rows: set.iter().map(|l| l.id).collect(),
                    labels: set.iter().map(|l| l.label).collect(),
                };
                (mk(train), mk(val), RoundGraph { adj: Arc::clone(&adj), x: Arc::clone(&x), collection: None })
            }
            Payload::Edges { graph, train, val } => {
                let (adj, x) = propagation(graph);
                let mk = |set: &[crate::scenario::LabeledPair]| Examples::Pairs {
                    adj: Arc::clone(&adj),
                    x: Arc::clone(&x),
                    pairs: set.iter().map(|p| (p.u, p.v)).collect(),
                    labels: set.iter().map(|p| p.label).collect(),
                };
                (mk(train), mk(val), RoundGraph { adj: Arc::clone(&adj), x: Arc::clone(&x), collection: None })
            }
            Payload::Links { graph, train_pos, train_neg, val_pos, val_neg } => {
                let (adj, x) = propagation(graph);
                let mk = |pos: &[(usize, usize)], neg: &[(usize, usize)]| Examples::Links {
                    adj: Arc::clone(&adj),
                    x: Arc::clone(&x),
                    pairs: pos.iter().chain(neg).copied().collect(),
                    targets: std::iter::repeat_n(T::one(), pos.len())
                        .chain(std::iter::repeat_n(T::zero(), neg.len()))
                        .collect(),
                };
                (
                    mk(train_pos, train_neg),
                    mk(val_pos, val_neg),
                    RoundGraph { adj: Arc::clone(&adj), x: Arc::clone(&x), collection: None },
                )
            }
            Payload::Graphs { collection, train, val } => {
                let mk = |set: &[crate::scenario::Labeled]| {
                    graph_batch(collection, set.iter().map(|l| l.id).collect(), set.iter().map(|l| l.label).collect())
                };
                let empty = Arc::new(Csr::identity(0));
                let round = RoundGraph {
                    adj: empty,
                    x: Arc::new(Array2::zeros((0, collection.feature_dim()))),
                    collection: Some(Arc::clone(collection)),
                };
                (mk(train), mk(val), round)
            }
        };
        Ok((Self { index: input.index, allowed, train, val }, round))
    }
}

/// Output head matching the scenario's level.
pub fn head_for(info: &ScenarioInfo) -> HeadKind {
    match info.level {
        Level::Node => HeadKind::Node { classes: info.total_classes },
        Level::LinkClassification => HeadKind::Pair { outputs: info.total_classes },
        Level::LinkPrediction => HeadKind::Pair { outputs: 1 },
        Level::Graph => HeadKind::Graph { classes: info.total_classes },
    }
}

pub fn model_config(info: &ScenarioInfo, hidden: usize, layers: usize) -> ModelConfig {
    ModelConfig { in_dim: info.feature_dim, hidden, layers, head: head_for(info) }
}
