//! GCN backbone with node, pair and graph heads, trained full-batch.
//!
//! Backbone layer `l` computes `Â (H W_l) + b_l`; every layer but the last is
//! followed by ReLU and (during training) dropout. Heads:
//!
//! * node: one linear layer on the node embeddings,
//! * pair: a 3-layer MLP on the concatenated embeddings `[h_u, h_v]`,
//! * graph: mean pooling per graph, then a 3-layer MLP.

mod optim;
mod params;
pub mod tape;

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use optim::{Adam, PlateauSchedule, ScheduleAction};
pub use params::{GradientSet, ParamSet};
pub use tape::{Tape, Var};

use crate::error::{bail, Result};
use crate::graph::Csr;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Node { classes: usize },
    Pair { outputs: usize },
    Graph { classes: usize },
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            Self::Node { classes } | Self::Graph { classes } => classes,
            Self::Pair { outputs } => outputs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub head: HeadKind,
}

/// Inputs of one full-batch forward pass.
pub enum Batch<'a, T> {
    /// Logits for the listed nodes.
    Nodes { adj: &'a Arc<Csr<T>>, x: &'a Arc<Array2<T>>, rows: &'a [usize] },
    /// Scores for the listed node pairs.
    Pairs { adj: &'a Arc<Csr<T>>, x: &'a Arc<Array2<T>>, pairs: &'a [(usize, usize)] },
    /// Logits per graph of a block-diagonal batch; `membership[v]` is the
    /// graph of node `v`.
    Graphs { adj: &'a Arc<Csr<T>>, x: &'a Arc<Array2<T>>, membership: &'a [usize], count: usize },
}

impl<T> Batch<'_, T> {
    fn graph(&self) -> (&Arc<Csr<T>>, &Arc<Array2<T>>) {
        match self {
            Self::Nodes { adj, x, .. } | Self::Pairs { adj, x, .. } | Self::Graphs { adj, x, .. } => (adj, x),
        }
    }
}

/// Inverted-dropout masks for the hidden backbone activations.
#[derive(Debug, Clone)]
pub struct DropoutMasks<T>(Vec<Arc<Array2<T>>>);

impl<T: Scalar> DropoutMasks<T> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, p: f64, rows: usize, config: &ModelConfig) -> Self {
        let keep = 1.0 - p;
        let scale = T::of(1.0 / keep);
        let masks = (0..config.layers.saturating_sub(1))
            .map(|_| {
                Arc::new(Array2::from_shape_simple_fn((rows, config.hidden), || {
                    if rng.random::<f64>() < keep {
                        scale
                    } else {
                        T::zero()
                    }
                }))
            })
            .collect();
        Self(masks)
    }

    pub fn from_masks(masks: Vec<Array2<T>>) -> Self {
        Self(masks.into_iter().map(Arc::new).collect())
    }
}

/// Output of [`Model::forward`].
pub struct Forward {
    pub output: Var,
    pub embeddings: Var,
    pub params: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    params: ParamSet<T>,
}

fn glorot<T: Scalar, R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-a..a)))
}

fn layout(config: &ModelConfig) -> Result<Vec<(String, (usize, usize))>> {
    if config.layers == 0 || config.hidden == 0 {
        bail!(Config, "model needs at least one layer and a positive hidden width");
    }
    if config.head.outputs() == 0 {
        bail!(Config, "model head needs at least one output");
    }
    let h = config.hidden;
    let mut out = Vec::new();
    let mut fan_in = config.in_dim;
    for l in 0..config.layers {
        out.push((format!("gcn{l}.weight"), (fan_in, h)));
        out.push((format!("gcn{l}.bias"), (1, h)));
        fan_in = h;
    }
    let dims: Vec<(usize, usize)> = match config.head {
        HeadKind::Node { classes } => vec![(h, classes)],
        HeadKind::Pair { outputs } => vec![(2 * h, h), (h, h), (h, outputs)],
        HeadKind::Graph { classes } => vec![(h, h), (h, h), (h, classes)],
    };
    for (k, (i, o)) in dims.into_iter().enumerate() {
        out.push((format!("head{k}.weight"), (i, o)));
        out.push((format!("head{k}.bias"), (1, o)));
    }
    Ok(out)
}

impl<T: Scalar> Model<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        for (name, (rows, cols)) in layout(&config)? {
            let t = if name.ends_with("bias") { Array2::zeros((rows, cols)) } else { glorot(rng, rows, cols) };
            params.push(name, t);
        }
        Ok(Self { config, params })
    }

    pub fn from_params(config: ModelConfig, params: ParamSet<T>) -> Result<Self> {
        let shapes = layout(&config)?;
        if shapes.len() != params.len() || shapes.iter().zip(params.tensors()).any(|((_, s), t)| *s != t.dim()) {
            bail!(Shape, "parameter layout does not match the model configuration");
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet<T>) -> Result<()> {
        if !self.params.same_layout(&params) {
            bail!(Shape, "parameter layout mismatch");
        }
        self.params = params;
        Ok(())
    }

    /// Records a forward pass on `tape`, registering the parameters as leaves.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        batch: &Batch<'_, T>,
        dropout: Option<&DropoutMasks<T>>,
    ) -> Result<Forward> {
        let vars = tape.params(&self.params)?;
        let layers = self.config.layers;
        let (adj, x) = batch.graph();
        let (gcn, head) = vars.split_at(2 * layers);
        let layer_params: Vec<(Var, Var)> = gcn.chunks(2).map(|c| (c[0], c[1])).collect();
        let masks: Vec<Option<Arc<Array2<T>>>> = match dropout {
            Some(DropoutMasks(m)) => m.iter().cloned().map(Some).collect(),
            None => vec![None; layers.saturating_sub(1)],
        };
        let emb = backbone_forward(tape, &layer_params, adj, x, &masks)?;
        let head_params: Vec<(Var, Var)> = head.chunks(2).map(|c| (c[0], c[1])).collect();
        let output = match (batch, self.config.head) {
            (Batch::Nodes { rows, .. }, HeadKind::Node { .. }) => head_nc(tape, head_params[0], emb, rows)?,
            (Batch::Pairs { pairs, .. }, HeadKind::Pair { .. }) => head_pair(tape, &head_params, emb, pairs)?,
            (Batch::Graphs { membership, count, .. }, HeadKind::Graph { .. }) => {
                head_gc(tape, &head_params, emb, membership, *count)?
            }
            _ => bail!(Shape, "batch kind does not match the model head"),
        };
        Ok(Forward { output, embeddings: emb, params: vars })
    }

    /// Inference-mode outputs (no dropout) as a plain matrix.
    pub fn infer(&self, batch: &Batch<'_, T>) -> Result<Array2<T>> {
        let mut tape = Tape::new();
        let f = self.forward(&mut tape, batch, None)?;
        Ok(tape.value(f.output).clone())
    }
}

/// GCN stack over a constant propagation matrix and feature matrix.
/// `masks[l]` (if any) multiplies the activation after hidden layer `l`.
pub fn backbone_forward<T: Scalar>(
    tape: &mut Tape<T>,
    layers: &[(Var, Var)],
    adj: &Arc<Csr<T>>,
    x: &Arc<Array2<T>>,
    masks: &[Option<Arc<Array2<T>>>],
) -> Result<Var> {
    let n = adj.shape().0;
    if adj.shape().1 != n || x.nrows() != n {
        bail!(Shape, "propagation matrix {:?} with feature matrix {:?}", adj.shape(), x.dim());
    }
    let mut h: Option<Var> = None;
    for (l, &(w, b)) in layers.iter().enumerate() {
        let xw = match h {
            None => tape.matmul_const(x, w)?,
            Some(h) => tape.matmul(h, w)?,
        };
        let prop = tape.spmm(adj, xw)?;
        let mut out = tape.add_bias(prop, b)?;
        if l + 1 < layers.len() {
            out = tape.relu(out);
            if let Some(Some(m)) = masks.get(l) {
                out = tape.mask(out, Arc::clone(m))?;
            }
        }
        h = Some(out);
    }
    match h {
        Some(h) => Ok(h),
        None => bail!(Shape, "backbone without layers"),
    }
}

fn linear<T: Scalar>(tape: &mut Tape<T>, (w, b): (Var, Var), x: Var) -> Result<Var> {
    let y = tape.matmul(x, w)?;
    tape.add_bias(y, b)
}

fn mlp<T: Scalar>(tape: &mut Tape<T>, layers: &[(Var, Var)], mut x: Var) -> Result<Var> {
    for (k, &p) in layers.iter().enumerate() {
        x = linear(tape, p, x)?;
        if k + 1 < layers.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Linear classifier on the embeddings of `rows`.
pub fn head_nc<T: Scalar>(tape: &mut Tape<T>, layer: (Var, Var), emb: Var, rows: &[usize]) -> Result<Var> {
    let picked = tape.gather_rows(emb, rows)?;
    linear(tape, layer, picked)
}

/// MLP over ordered pairs `[h_u, h_v]`.
pub fn head_pair<T: Scalar>(
    tape: &mut Tape<T>,
    layers: &[(Var, Var)],
    emb: Var,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
    let hu = tape.gather_rows(emb, &us)?;
    let hv = tape.gather_rows(emb, &vs)?;
    let h = tape.concat_cols(hu, hv)?;
    mlp(tape, layers, h)
}

/// Mean pooling per graph followed by an MLP.
pub fn head_gc<T: Scalar>(
    tape: &mut Tape<T>,
    layers: &[(Var, Var)],
    emb: Var,
    membership: &[usize],
    count: usize,
) -> Result<Var> {
    let pooled = tape.segment_mean(emb, membership, count)?;
    mlp(tape, layers, pooled)
}

/// Row-wise argmax over the allowed classes; ties go to the lowest index.
pub fn argmax_masked<T: Scalar>(logits: &Array2<T>, allowed: &[bool]) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best: Option<(usize, T)> = None;
            for (c, &v) in row.iter().enumerate() {
                if allowed.get(c).copied().unwrap_or(false) && best.is_none_or(|(_, b)| v > b) {
                    best = Some((c, v));
                }
            }
            best.map_or(0, |(c, _)| c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeList, Graph};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_model(dim: usize, classes: usize) -> Model<f64> {
        let config = ModelConfig { in_dim: dim, hidden: dim, layers: 1, head: HeadKind::Node { classes } };
        let mut m = Model::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        m.params_mut().tensors_mut()[0] = Array2::eye(dim);
        m
    }

    #[test]
    fn single_node_identity_propagation() {
        let adj = Arc::new(Csr::identity(1));
        let x = Arc::new(array![[0.3, -0.7]]);
        let mut tape = Tape::new();
        let p = identity_model(2, 2).params().clone();
        let vars = tape.params(&p).unwrap();
        let emb = backbone_forward(&mut tape, &[(vars[0], vars[1])], &adj, &x, &[]).unwrap();
        assert_eq!(tape.value(emb), &*x);
    }

    #[test]
    fn two_node_half_propagation() {
        let g = Graph::<f64>::build(&EdgeList::new(vec![(0, 1)]), 2, None, None, false).unwrap();
        let adj = Arc::new(g.normalized_adjacency());
        let x = Arc::new(array![[1.0, 0.0], [0.0, 1.0]]);
        let p = identity_model(2, 2).params().clone();
        let mut tape = Tape::new();
        let vars = tape.params(&p).unwrap();
        let emb = backbone_forward(&mut tape, &[(vars[0], vars[1])], &adj, &x, &[]).unwrap();
        assert_eq!(tape.value(emb), &array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn zero_weights_give_zero_embeddings_and_uniform_softmax() {
        let mut m = identity_model(2, 3);
        let zeroed = m.params().zeros_like();
        m.set_params(zeroed).unwrap();
        let adj = Arc::new(Csr::identity(2));
        let x = Arc::new(array![[1.0, 2.0], [3.0, 4.0]]);
        let out = m.infer(&Batch::Nodes { adj: &adj, x: &x, rows: &[0, 1] }).unwrap();
        assert!(out.iter().all(|v| *v == 0.0));
        let p = tape::masked_softmax(&out, &[true; 3], 1.0);
        assert_abs_diff_eq!(p[[0, 1]], 1.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn node_head_by_hand() {
        let mut tape = Tape::<f64>::new();
        let emb = tape.constant(array![[1.0, 2.0]]);
        let w = tape.constant(array![[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]]);
        let b = tape.constant(array![[0.5, 0.0, 0.0]]);
        let out = head_nc(&mut tape, (w, b), emb, &[0]).unwrap();
        assert_eq!(tape.value(out), &array![[1.5, 2.0, 0.0]]);
        let bad = tape.constant(array![[1.0], [1.0], [1.0]]);
        assert!(matches!(head_nc(&mut tape, (bad, b), emb, &[0]), Err(crate::Error::Shape(_))));
    }

    #[test]
    fn pair_head_by_hand_and_ordered() {
        // 1-d embeddings, hidden 1: layers (2->1), (1->1), (1->1)
        let mut tape = Tape::<f64>::new();
        let emb = tape.constant(array![[1.0], [2.0]]);
        let w0 = tape.constant(array![[1.0], [-1.0]]);
        let b0 = tape.constant(array![[3.0]]);
        let w1 = tape.constant(array![[2.0]]);
        let b1 = tape.constant(array![[0.0]]);
        let w2 = tape.constant(array![[0.5]]);
        let b2 = tape.constant(array![[0.1]]);
        let out = head_pair(&mut tape, &[(w0, b0), (w1, b1), (w2, b2)], emb, &[(0, 1), (1, 0)]).unwrap();
        // (0,1): relu(1 - 2 + 3) = 2 -> relu(4) = 4 -> 2.1 ; (1,0): relu(2 - 1 + 3) = 4 -> 8 -> 4.1
        assert_eq!(tape.value(out), &array![[2.1], [4.1]]);
    }

    #[test]
    fn graph_head_pooling_is_permutation_invariant() {
        let mut tape = Tape::<f64>::new();
        let emb = tape.constant(array![[1.0, 0.0], [3.0, 2.0], [5.0, 5.0]]);
        let w = tape.constant(Array2::eye(2));
        let b = tape.constant(array![[0.0, 0.0]]);
        let a = head_gc(&mut tape, &[(w, b)], emb, &[0, 0, 1], 2).unwrap();
        let emb2 = tape.constant(array![[3.0, 2.0], [1.0, 0.0], [5.0, 5.0]]);
        let c = head_gc(&mut tape, &[(w, b)], emb2, &[0, 0, 1], 2).unwrap();
        assert_eq!(tape.value(a), tape.value(c));
        assert_eq!(tape.value(a), &array![[2.0, 1.0], [5.0, 5.0]]);
        assert!(head_gc(&mut tape, &[(w, b)], emb, &[0, 0, 0], 2).is_err());
    }

    #[test]
    fn masked_argmax() {
        let z = array![[5.0, 1.0, 3.0]];
        assert_eq!(argmax_masked(&z, &[false, true, true]), vec![2]);
        assert_eq!(argmax_masked(&z, &[true, true, true]), vec![0]);
    }
}
