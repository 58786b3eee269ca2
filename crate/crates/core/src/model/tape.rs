//! Matrix-valued reverse-mode differentiation.
//!
//! A [`Tape`] records one forward computation. Every value is a dense matrix
//! (scalars are `1 x 1`). [`Tape::backward`] sweeps the recorded operations
//! once in reverse and returns gradients for the registered parameters; the
//! tape cannot be swept twice.

use std::sync::Arc;

use ndarray::{s, Array2, Axis};

use super::params::{GradientSet, ParamSet};
use crate::error::{bail, Result};
use crate::graph::Csr;
use crate::scalar::Scalar;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param,
    MatMul(Var, Var),
    MatMulConst(Arc<Array2<T>>, Var),
    SpMM { adj: Arc<Csr<T>>, adj_t: Option<Arc<Csr<T>>>, x: Var },
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Mask(Var, Arc<Array2<T>>),
    Gather(Var, Vec<usize>),
    Concat(Var, Var),
    SegmentMean { x: Var, membership: Vec<usize>, counts: Vec<usize> },
    CrossEntropy { logits: Var, probs: Array2<T>, targets: Vec<usize> },
    Logistic { logits: Var, targets: Vec<T> },
    Distill { logits: Var, grad: Array2<T> },
    SquaredNorm(Var),
    WeightedSqDiff { x: Var, anchor: Arc<Array2<T>>, weight: Arc<Array2<T>> },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: Vec<(usize, Var)>,
    param_layout: Option<ParamSet<T>>,
    swept: bool,
}

fn shape_err<T>(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<T> {
    bail!(Shape, "{what}: incompatible shapes {a:?} and {b:?}")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), param_layout: None, swept: false }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers every tensor of `params` as a differentiable leaf, in order.
    pub fn params(&mut self, params: &ParamSet<T>) -> Result<Vec<Var>> {
        if self.param_layout.is_some() {
            bail!(Tape, "parameters already registered on this tape");
        }
        self.param_layout = Some(params.zeros_like());
        Ok(params
            .tensors()
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let v = self.push(t.clone(), Op::Param);
                self.params.push((i, v));
                v
            })
            .collect())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return shape_err("matmul", x.dim(), y.dim());
        }
        let out = x.dot(y);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// `x · w` with a constant left operand (input features), without copying it.
    pub fn matmul_const(&mut self, x: &Arc<Array2<T>>, w: Var) -> Result<Var> {
        let wv = self.value(w);
        if x.ncols() != wv.nrows() {
            return shape_err("matmul", x.dim(), wv.dim());
        }
        let out = x.dot(wv);
        Ok(self.push(out, Op::MatMulConst(Arc::clone(x), w)))
    }

    /// Sparse propagation `adj · x` with a constant sparse matrix.
    pub fn spmm(&mut self, adj: &Arc<Csr<T>>, x: Var) -> Result<Var> {
        let out = adj.matmul(self.value(x).view())?;
        let adj_t = if adj.is_symmetric(T::zero()) { None } else { Some(Arc::new(adj.transpose())) };
        Ok(self.push(out, Op::SpMM { adj: Arc::clone(adj), adj_t, x }))
    }

    /// Adds a `1 x d` row to every row of an `n x d` matrix.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.nrows() != 1 || bv.ncols() != xv.ncols() {
            return shape_err("add_bias", xv.dim(), bv.dim());
        }
        let out = xv + bv;
        Ok(self.push(out, Op::AddBias(x, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.dim() != y.dim() {
            return shape_err("add", x.dim(), y.dim());
        }
        let out = x + y;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).mapv(|x| x * s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| if x > T::zero() { x } else { T::zero() });
        self.push(out, Op::Relu(a))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Arc<Array2<T>>) -> Result<Var> {
        let x = self.value(a);
        if x.dim() != mask.dim() {
            return shape_err("mask", x.dim(), mask.dim());
        }
        let out = x * &*mask;
        Ok(self.push(out, Op::Mask(a, mask)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        if let Some(&r) = rows.iter().find(|&&r| r >= x.nrows()) {
            bail!(Index, "row {r} outside 0..{}", x.nrows());
        }
        let out = x.select(Axis(0), rows);
        Ok(self.push(out, Op::Gather(a, rows.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.nrows() != y.nrows() {
            return shape_err("concat", x.dim(), y.dim());
        }
        let out = ndarray::concatenate(Axis(1), &[x.view(), y.view()]).expect("row counts agree");
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Mean of the rows belonging to each of `groups` segments.
    pub fn segment_mean(&mut self, a: Var, membership: &[usize], groups: usize) -> Result<Var> {
        let x = self.value(a);
        if membership.len() != x.nrows() {
            bail!(Shape, "membership covers {} rows of {}", membership.len(), x.nrows());
        }
        let mut counts = vec![0usize; groups];
        for &g in membership {
            if g >= groups {
                bail!(Index, "segment {g} outside 0..{groups}");
            }
            counts[g] += 1;
        }
        if let Some(g) = counts.iter().position(|&c| c == 0) {
            bail!(Shape, "segment {g} is empty");
        }
        let mut out = Array2::zeros((groups, x.ncols()));
        for (r, &g) in membership.iter().enumerate() {
            let mut row = out.row_mut(g);
            row += &x.row(r);
        }
        for (g, &c) in counts.iter().enumerate() {
            let inv = T::one() / T::of_usize(c);
            out.row_mut(g).mapv_inplace(|v| v * inv);
        }
        Ok(self.push(out, Op::SegmentMean { x: a, membership: membership.to_vec(), counts }))
    }

    /// Mean negative log-likelihood of a softmax restricted to `allowed`
    /// classes; disallowed logits behave as negative infinity.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], allowed: &[bool]) -> Result<Var> {
        let z = self.value(logits);
        if targets.len() != z.nrows() || allowed.len() != z.ncols() {
            bail!(
                Shape,
                "cross entropy over {:?} logits with {} targets and {} mask entries",
                z.dim(),
                targets.len(),
                allowed.len()
            );
        }
        if z.nrows() == 0 {
            bail!(Shape, "cross entropy over zero rows");
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= allowed.len() || !allowed[t]) {
            bail!(Mask, "target class {t} is not an allowed class");
        }
        let probs = masked_softmax(z, allowed, T::one());
        let mut loss = T::zero();
        for (r, &t) in targets.iter().enumerate() {
            loss += log_sum_exp(z.row(r).iter().copied(), allowed) - z[[r, t]];
        }
        let n = T::of_usize(targets.len());
        let out = Array2::from_elem((1, 1), loss / n);
        Ok(self.push(out, Op::CrossEntropy { logits, probs, targets: targets.to_vec() }))
    }

    /// Mean binary logistic loss of an `n x 1` logit column against 0/1 targets.
    pub fn logistic(&mut self, logits: Var, targets: &[T]) -> Result<Var> {
        let z = self.value(logits);
        if z.ncols() != 1 || z.nrows() != targets.len() || z.nrows() == 0 {
            bail!(Shape, "logistic loss over {:?} logits with {} targets", z.dim(), targets.len());
        }
        let mut loss = T::zero();
        for (r, &y) in targets.iter().enumerate() {
            let x = z[[r, 0]];
            // log(1 + e^x) - y x, stable for either sign
            loss += x.max(T::zero()) + (-x.abs()).exp().ln_1p() - y * x;
        }
        let out = Array2::from_elem((1, 1), loss / T::of_usize(targets.len()));
        Ok(self.push(out, Op::Logistic { logits, targets: targets.to_vec() }))
    }

    /// `temperature^2 · KL(softmax(old/τ) ‖ softmax(new/τ))` over the `classes`
    /// columns, averaged over rows. `old` is a constant.
    pub fn distill(&mut self, logits: Var, old: &Array2<T>, classes: &[usize], temperature: T) -> Result<Var> {
        let z = self.value(logits);
        if z.dim() != old.dim() {
            return shape_err("distill", z.dim(), old.dim());
        }
        let mut allowed = vec![false; z.ncols()];
        for &c in classes {
            if c >= z.ncols() {
                bail!(Index, "class {c} outside 0..{}", z.ncols());
            }
            allowed[c] = true;
        }
        let n = z.nrows();
        let mut grad = Array2::zeros(z.dim());
        let mut kl = T::zero();
        if n > 0 && !classes.is_empty() {
            let p_new = masked_softmax(z, &allowed, temperature);
            let p_old = masked_softmax(old, &allowed, temperature);
            let inv_n = T::one() / T::of_usize(n);
            for r in 0..n {
                for &c in classes {
                    let (po, pn) = (p_old[[r, c]], p_new[[r, c]]);
                    if po > T::zero() {
                        kl += po * (po.ln() - pn.ln());
                    }
                    // d/dz of τ² KL = τ (p_new - p_old)
                    grad[[r, c]] = temperature * (pn - po) * inv_n;
                }
            }
            kl *= inv_n;
        }
        let out = Array2::from_elem((1, 1), kl * temperature * temperature);
        Ok(self.push(out, Op::Distill { logits, grad }))
    }

    /// Sum of squared entries.
    pub fn squared_norm(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().fold(T::zero(), |acc, &x| acc + x * x);
        self.push(Array2::from_elem((1, 1), s), Op::SquaredNorm(a))
    }

    /// `Σ weight ⊙ (x − anchor)²`.
    pub fn weighted_sq_diff(&mut self, x: Var, anchor: Arc<Array2<T>>, weight: Arc<Array2<T>>) -> Result<Var> {
        let xv = self.value(x);
        if xv.dim() != anchor.dim() || xv.dim() != weight.dim() {
            return shape_err("weighted_sq_diff", xv.dim(), anchor.dim());
        }
        let mut s = T::zero();
        for ((a, b), w) in xv.iter().zip(anchor.iter()).zip(weight.iter()) {
            let d = *a - *b;
            s += *w * d * d;
        }
        Ok(self.push(Array2::from_elem((1, 1), s), Op::WeightedSqDiff { x, anchor, weight }))
    }

    /// Smallest |input| over all ReLU nodes; finite-difference checks use it to
    /// stay away from the kink.
    pub fn relu_margin(&self) -> Option<T> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => self.value(a).iter().map(|x| x.abs()).reduce(T::min),
                _ => None,
            })
            .reduce(T::min)
    }

    /// Reverse sweep from the scalar `loss`, returning gradients for the
    /// registered parameters (zeros for parameters the loss does not touch).
    pub fn backward(&mut self, loss: Var) -> Result<GradientSet<T>> {
        if self.swept {
            bail!(Tape, "tape already swept; record a new forward pass");
        }
        if self.value(loss).dim() != (1, 1) {
            bail!(Shape, "backward needs a 1x1 loss, got {:?}", self.value(loss).dim());
        }
        self.swept = true;
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::from_elem((1, 1), T::one()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, d: Array2<T>| match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot => *slot = Some(d),
            };
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let da = g.dot(&bv.t());
                    let db = av.t().dot(&g);
                    acc(*a, da);
                    acc(*b, db);
                }
                Op::MatMulConst(x, w) => acc(*w, x.t().dot(&g)),
                Op::SpMM { adj, adj_t, x } => {
                    let t = adj_t.as_deref().unwrap_or(adj);
                    acc(*x, t.matmul(g.view())?);
                }
                Op::AddBias(x, b) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(*b, db);
                    acc(*x, g);
                }
                Op::Add(a, b) => {
                    acc(*b, g.clone());
                    acc(*a, g);
                }
                Op::Scale(a, s) => acc(*a, g.mapv(|x| x * *s)),
                Op::Relu(a) => {
                    let input = &self.nodes[a.0].value;
                    let mut d = g;
                    ndarray::Zip::from(&mut d).and(input).for_each(|d, &x| {
                        if x <= T::zero() {
                            *d = T::zero();
                        }
                    });
                    acc(*a, d);
                }
                Op::Mask(a, m) => acc(*a, g * &**m),
                Op::Gather(a, rows) => {
                    let src = &self.nodes[a.0].value;
                    let mut d = Array2::zeros(src.raw_dim());
                    for (k, &r) in rows.iter().enumerate() {
                        let mut row = d.row_mut(r);
                        row += &g.row(k);
                    }
                    acc(*a, d);
                }
                Op::Concat(a, b) => {
                    let w = self.nodes[a.0].value.ncols();
                    acc(*a, g.slice(s![.., ..w]).to_owned());
                    acc(*b, g.slice(s![.., w..]).to_owned());
                }
                Op::SegmentMean { x, membership, counts } => {
                    let src = &self.nodes[x.0].value;
                    let mut d = Array2::zeros(src.raw_dim());
                    for (r, &grp) in membership.iter().enumerate() {
                        let inv = T::one() / T::of_usize(counts[grp]);
                        d.row_mut(r).assign(&g.row(grp).mapv(|v| v * inv));
                    }
                    acc(*x, d);
                }
                Op::CrossEntropy { logits, probs, targets } => {
                    let scale = g[[0, 0]] / T::of_usize(targets.len());
                    let mut d = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        d[[r, t]] -= T::one();
                    }
                    d.mapv_inplace(|v| v * scale);
                    acc(*logits, d);
                }
                Op::Logistic { logits, targets } => {
                    let z = &self.nodes[logits.0].value;
                    let scale = g[[0, 0]] / T::of_usize(targets.len());
                    let d = Array2::from_shape_fn(z.dim(), |(r, _)| (sigmoid(z[[r, 0]]) - targets[r]) * scale);
                    acc(*logits, d);
                }
                Op::Distill { logits, grad } => {
                    let s = g[[0, 0]];
                    acc(*logits, grad.mapv(|v| v * s));
                }
                Op::SquaredNorm(a) => {
                    let s = g[[0, 0]] + g[[0, 0]];
                    acc(*a, self.nodes[a.0].value.mapv(|v| v * s));
                }
                Op::WeightedSqDiff { x, anchor, weight } => {
                    let s = g[[0, 0]] + g[[0, 0]];
                    let xv = &self.nodes[x.0].value;
                    let mut d = xv - &**anchor;
                    d *= &**weight;
                    d.mapv_inplace(|v| v * s);
                    acc(*x, d);
                }
            }
        }

        let mut out = self.param_layout.take().unwrap_or_default();
        for &(i, v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                out.tensors_mut()[i] = g;
            }
        }
        Ok(out)
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn log_sum_exp<T: Scalar>(row: impl Iterator<Item = T> + Clone, allowed: &[bool]) -> T {
    let max = row.clone().zip(allowed).filter(|(_, a)| **a).map(|(x, _)| x).fold(T::neg_infinity(), T::max);
    let sum = row.zip(allowed).filter(|(_, a)| **a).map(|(x, _)| (x - max).exp()).fold(T::zero(), |a, b| a + b);
    max + sum.ln()
}

/// Row-wise softmax of `z / temperature` over the allowed columns; disallowed
/// columns get probability zero.
pub fn masked_softmax<T: Scalar>(z: &Array2<T>, allowed: &[bool], temperature: T) -> Array2<T> {
    let mut out = Array2::zeros(z.dim());
    for (r, row) in z.rows().into_iter().enumerate() {
        let max =
            row.iter().zip(allowed).filter(|(_, a)| **a).map(|(x, _)| *x / temperature).fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (c, &x) in row.iter().enumerate() {
            if allowed[c] {
                let e = (x / temperature - max).exp();
                out[[r, c]] = e;
                sum += e;
            }
        }
        out.row_mut(r).mapv_inplace(|v| v / sum);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn square_gradient() {
        let mut p = ParamSet::new();
        p.push("w", array![[3.0]]);
        let mut tape = Tape::new();
        let w = tape.params(&p).unwrap()[0];
        let y = tape.squared_norm(w);
        assert_eq!(tape.scalar(y), 9.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.tensors()[0], array![[6.0]]);
    }

    #[test]
    fn second_sweep_is_rejected() {
        let mut p = ParamSet::new();
        p.push("w", array![[1.0]]);
        let mut tape = Tape::new();
        let w = tape.params(&p).unwrap()[0];
        let y = tape.squared_norm(w);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(crate::Error::Tape(_))));
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.constant(array![[10.0, 0.0, 0.0]]);
        let l = tape.cross_entropy(z, &[0], &[true; 3]).unwrap();
        // ln(1 + 2 e^-10)
        assert_abs_diff_eq!(tape.scalar(l), 9.079573746724446e-5, epsilon = 1e-15);
        let u = tape.constant(array![[0.3, 0.3, 0.3, 0.3]]);
        let l = tape.cross_entropy(u, &[2], &[true; 4]).unwrap();
        assert_abs_diff_eq!(tape.scalar(l), 4f64.ln(), epsilon = 1e-14);
        assert!(matches!(tape.cross_entropy(u, &[2], &[true, true, false, true]), Err(crate::Error::Mask(_))));
    }

    #[test]
    fn full_mask_equals_unmasked_softmax() {
        let z: Array2<f64> = array![[1.0, -2.0, 0.5]];
        let p = masked_softmax(&z, &[true; 3], 1.0);
        let e: Vec<f64> = z.iter().map(|x| x.exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            assert_abs_diff_eq!(p[[0, c]], e[c] / s, epsilon = 1e-15);
        }
    }

    #[test]
    fn distill_matches_closed_form() {
        // old (0, 0), new (τ ln 2, 0): KL(p_old ‖ p_new) = ½ ln(9/8)
        let tau = 2.0f64;
        let mut tape = Tape::new();
        let z = tape.constant(array![[tau * 2f64.ln(), 0.0]]);
        let d = tape.distill(z, &array![[0.0, 0.0]], &[0, 1], tau).unwrap();
        assert_abs_diff_eq!(tape.scalar(d), tau * tau * 0.05889151782819174, epsilon = 1e-14);
        let same = tape.distill(z, &tape.value(z).clone(), &[0, 1], tau).unwrap();
        assert_abs_diff_eq!(tape.scalar(same), 0.0, epsilon = 1e-15);
    }
}
