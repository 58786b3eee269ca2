//! Regularisation-based methods: LwF (distillation from the previous model)
//! and EWC / MAS (quadratic anchoring with per-parameter importance).

use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};

use super::data::{Examples, TaskData};
use super::{Hooks, Step, TrainingStateDict};
use crate::error::{bail, Result};
use crate::model::{Model, ParamSet, Tape, Var};
use crate::scalar::Scalar;

/// Parameters learned on a past task together with their importance.
#[derive(Debug, Clone)]
pub struct Anchor<T> {
    theta: Vec<Arc<Array2<T>>>,
    weight: Vec<Arc<Array2<T>>>,
}

impl<T: Scalar> Anchor<T> {
    pub fn new(theta: &ParamSet<T>, weight: &ParamSet<T>) -> Result<Self> {
        if !theta.same_layout(weight) {
            bail!(Shape, "anchor and importance layouts differ");
        }
        let arcs = |p: &ParamSet<T>| p.tensors().iter().cloned().map(Arc::new).collect();
        Ok(Self { theta: arcs(theta), weight: arcs(weight) })
    }

    fn check(&self, params: &ParamSet<T>) -> Result<()> {
        let ok = self.theta.len() == params.len()
            && self.theta.iter().zip(params.tensors()).all(|(a, p)| a.dim() == p.dim());
        if !ok {
            bail!(Shape, "anchor does not match the parameter layout");
        }
        Ok(())
    }
}

/// `(λ/2) Σ_anchors Σ_j w_j (θ_j − θ*_j)²`.
pub fn quadratic_penalty<T: Scalar>(params: &ParamSet<T>, anchors: &[Anchor<T>], lambda: T) -> Result<T> {
    let mut total = T::zero();
    for a in anchors {
        a.check(params)?;
        for ((p, t), w) in params.tensors().iter().zip(&a.theta).zip(&a.weight) {
            for ((x, y), z) in p.iter().zip(t.iter()).zip(w.iter()) {
                let d = *x - *y;
                total += *z * d * d;
            }
        }
    }
    Ok(total * lambda / T::of(2.0))
}

/// Gradient of [`quadratic_penalty`]: `λ Σ_anchors w ⊙ (θ − θ*)`.
pub fn quadratic_penalty_grad<T: Scalar>(
    params: &ParamSet<T>,
    anchors: &[Anchor<T>],
    lambda: T,
) -> Result<ParamSet<T>> {
    let mut g = params.zeros_like();
    for a in anchors {
        a.check(params)?;
        for (((gt, p), t), w) in g.tensors_mut().iter_mut().zip(params.tensors()).zip(&a.theta).zip(&a.weight) {
            ndarray::Zip::from(gt).and(p).and(&**t).and(&**w).for_each(|g, &x, &y, &z| *g += lambda * z * (x - y));
        }
    }
    Ok(g)
}

/// Records the penalty on `tape` over the registered parameter leaves.
fn penalty_on_tape<T: Scalar>(tape: &mut Tape<T>, params: &[Var], anchors: &[Anchor<T>], lambda: T) -> Result<Var> {
    let mut total: Option<Var> = None;
    for a in anchors {
        if a.theta.len() != params.len() {
            bail!(Shape, "anchor has {} tensors for {} parameters", a.theta.len(), params.len());
        }
        for ((&p, t), w) in params.iter().zip(&a.theta).zip(&a.weight) {
            let term = tape.weighted_sq_diff(p, Arc::clone(t), Arc::clone(w))?;
            total = Some(match total {
                Some(s) => tape.add(s, term)?,
                None => term,
            });
        }
    }
    match total {
        Some(s) => Ok(tape.scale(s, lambda / T::of(2.0))),
        None => bail!(Shape, "no anchors to penalise"),
    }
}

/// Mean over `n` instances of the squared per-instance gradient of
/// `nll(tape, i)`; the closure registers the parameters on the tape.
pub fn fisher_diag_with<T: Scalar>(
    params: &ParamSet<T>,
    n: usize,
    mut nll: impl FnMut(&mut Tape<T>, usize) -> Result<Var>,
) -> Result<ParamSet<T>> {
    let mut acc = params.zeros_like();
    for i in 0..n {
        let mut tape = Tape::new();
        let loss = nll(&mut tape, i)?;
        acc.add_assign(&tape.backward(loss)?.map(|g| g * g))?;
    }
    if n > 0 {
        acc.scale(T::one() / T::of_usize(n));
    }
    Ok(acc)
}

/// Mean over `n` instances of `|∂‖f_i‖²/∂θ|` for the output `f_i` returned
/// by `output(tape, i)`.
pub fn mas_importance_with<T: Scalar>(
    params: &ParamSet<T>,
    n: usize,
    mut output: impl FnMut(&mut Tape<T>, usize) -> Result<Var>,
) -> Result<ParamSet<T>> {
    let mut acc = params.zeros_like();
    for i in 0..n {
        let mut tape = Tape::new();
        let f = output(&mut tape, i)?;
        let sq = tape.squared_norm(f);
        acc.add_assign(&tape.backward(sq)?.map(|g| g.abs()))?;
    }
    if n > 0 {
        acc.scale(T::one() / T::of_usize(n));
    }
    Ok(acc)
}

/// Empirical Fisher diagonal of `model` over `examples`, one instance at a
/// time, without dropout.
pub fn estimate_fisher_diag<T: Scalar>(
    model: &Model<T>,
    examples: &Examples<T>,
    allowed: &[bool],
) -> Result<ParamSet<T>> {
    fisher_diag_with(model.params(), examples.len(), |tape, i| {
        let one = examples.subset(&[i]);
        let f = model.forward(tape, &one.batch(), None)?;
        one.loss(tape, f.output, allowed)
    })
}

/// MAS importance of `model` over `examples`, without dropout.
pub fn mas_importance<T: Scalar>(model: &Model<T>, examples: &Examples<T>) -> Result<ParamSet<T>> {
    mas_importance_with(model.params(), examples.len(), |tape, i| {
        let one = examples.subset(&[i]);
        Ok(model.forward(tape, &one.batch(), None)?.output)
    })
}

fn anchored_iteration<T: Scalar>(
    state: &TrainingStateDict,
    key: &str,
    lambda: f64,
    step: &mut Step<'_, T>,
) -> Result<T> {
    match state.get::<Vec<Anchor<T>>>(key).filter(|a| !a.is_empty()) {
        Some(anchors) => step.train_with(|tape, f, loss| {
            let p = penalty_on_tape(tape, &f.params, anchors, T::of(lambda))?;
            tape.add(loss, p)
        }),
        None => step.train_with(|_, _, loss| Ok(loss)),
    }
}

/// Elastic weight consolidation with one anchor per past task.
#[derive(Debug, Clone, Copy)]
pub struct Ewc {
    pub lambda: f64,
}

impl<T: Scalar> Hooks<T> for Ewc {
    fn process_train_iteration(&self, state: &mut TrainingStateDict, step: &mut Step<'_, T>) -> Result<T> {
        anchored_iteration(state, "ewc.anchors", self.lambda, step)
    }

    fn process_after_training(
        &self,
        state: &mut TrainingStateDict,
        model: &Model<T>,
        task: &TaskData<T>,
    ) -> Result<()> {
        let fisher = estimate_fisher_diag(model, &task.train, &task.allowed)?;
        let anchor = Anchor::new(model.params(), &fisher)?;
        state.get_or_insert_with("ewc.anchors", Vec::<Anchor<T>>::new)?.push(anchor);
        Ok(())
    }
}

/// Memory-aware synapses: importance from output sensitivity.
#[derive(Debug, Clone, Copy)]
pub struct Mas {
    pub lambda: f64,
}

impl<T: Scalar> Hooks<T> for Mas {
    fn process_train_iteration(&self, state: &mut TrainingStateDict, step: &mut Step<'_, T>) -> Result<T> {
        anchored_iteration(state, "mas.anchors", self.lambda, step)
    }

    fn process_after_training(
        &self,
        state: &mut TrainingStateDict,
        model: &Model<T>,
        task: &TaskData<T>,
    ) -> Result<()> {
        let omega = mas_importance(model, &task.train)?;
        let anchor = Anchor::new(model.params(), &omega)?;
        state.get_or_insert_with("mas.anchors", Vec::<Anchor<T>>::new)?.push(anchor);
        Ok(())
    }
}

/// Learning without forgetting: distils the previous model's outputs on the
/// current training instances, over the classes seen before this task.
/// A link-prediction score `s` is distilled as the two logits `(s, 0)`.
#[derive(Debug, Clone, Copy)]
pub struct Lwf {
    pub lambda: f64,
    pub temperature: f64,
}

const LWF_OLD: &str = "lwf.old_outputs";
const LWF_CLASSES: &str = "lwf.classes";

fn with_zero_column<T: Scalar>(a: &Array2<T>) -> Array2<T> {
    concatenate(Axis(1), &[a.view(), Array2::zeros((a.nrows(), 1)).view()]).expect("same row count")
}

impl<T: Scalar> Hooks<T> for Lwf {
    fn process_before_training(
        &self,
        state: &mut TrainingStateDict,
        model: &Model<T>,
        task: &TaskData<T>,
    ) -> Result<()> {
        state.remove(LWF_OLD);
        if state.get::<Vec<usize>>(LWF_CLASSES).is_some_and(|c| !c.is_empty()) {
            let mut old = model.infer(&task.train.batch())?;
            if matches!(task.train, Examples::Links { .. }) {
                old = with_zero_column(&old);
            }
            state.insert(LWF_OLD, old);
        }
        Ok(())
    }

    fn process_train_iteration(&self, state: &mut TrainingStateDict, step: &mut Step<'_, T>) -> Result<T> {
        let (Some(old), Some(classes)) = (state.get::<Array2<T>>(LWF_OLD), state.get::<Vec<usize>>(LWF_CLASSES)) else {
            return step.train_with(|_, _, loss| Ok(loss));
        };
        let links = matches!(step.task.train, Examples::Links { .. });
        step.train_with(|tape, f, loss| {
            let logits = if links {
                let zeros = tape.constant(Array2::zeros((tape.value(f.output).nrows(), 1)));
                tape.concat_cols(f.output, zeros)?
            } else {
                f.output
            };
            let d = tape.distill(logits, old, classes, T::of(self.temperature))?;
            let d = tape.scale(d, T::of(self.lambda));
            tape.add(loss, d)
        })
    }

    fn process_after_training(
        &self,
        state: &mut TrainingStateDict,
        _model: &Model<T>,
        task: &TaskData<T>,
    ) -> Result<()> {
        let classes = state.get_or_insert_with(LWF_CLASSES, Vec::<usize>::new)?;
        if matches!(task.train, Examples::Links { .. }) {
            *classes = vec![0, 1];
        } else {
            classes.extend(task.allowed.iter().enumerate().filter(|(_, &a)| a).map(|(c, _)| c));
            classes.sort_unstable();
            classes.dedup();
        }
        state.remove(LWF_OLD);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn set(vals: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Array2::from_shape_vec((1, vals.len()), vals.to_vec()).unwrap());
        p
    }

    #[test]
    fn penalty_hand_example() {
        let anchor = Anchor::new(&set(&[0.0, 0.0]), &set(&[1.0, 2.0])).unwrap();
        assert_eq!(quadratic_penalty(&set(&[1.0, 1.0]), std::slice::from_ref(&anchor), 2.0).unwrap(), 3.0);
        assert_eq!(quadratic_penalty(&set(&[0.0, 0.0]), std::slice::from_ref(&anchor), 2.0).unwrap(), 0.0);
        assert_eq!(quadratic_penalty(&set(&[1.0, 1.0]), std::slice::from_ref(&anchor), 4.0).unwrap(), 6.0);
        assert!(quadratic_penalty(&set(&[1.0]), &[anchor], 1.0).is_err());
    }

    #[test]
    fn penalty_gradient_matches_tape_and_differences() {
        let theta = set(&[0.3, -1.2, 2.0]);
        let anchors = vec![
            Anchor::new(&set(&[0.1, 0.0, 1.0]), &set(&[1.0, 0.5, 2.0])).unwrap(),
            Anchor::new(&set(&[-0.4, 0.2, 0.0]), &set(&[0.2, 3.0, 0.1])).unwrap(),
        ];
        let lambda = 1.7;
        let g = quadratic_penalty_grad(&theta, &anchors, lambda).unwrap();
        let mut tape = Tape::new();
        let vars = tape.params(&theta).unwrap();
        let p = penalty_on_tape(&mut tape, &vars, &anchors, lambda).unwrap();
        assert!((tape.scalar(p) - quadratic_penalty(&theta, &anchors, lambda).unwrap()).abs() < 1e-12);
        let tg = tape.backward(p).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut up = theta.flatten();
            let mut dn = theta.flatten();
            up[j] += h;
            dn[j] -= h;
            let fd = (quadratic_penalty(&theta.unflatten(&up).unwrap(), &anchors, lambda).unwrap()
                - quadratic_penalty(&theta.unflatten(&dn).unwrap(), &anchors, lambda).unwrap())
                / (2.0 * h);
            assert!((fd - g.flatten()[j]).abs() < 1e-6);
            assert!((tg.flatten()[j] - g.flatten()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn mas_linear_toy() {
        // f(x) = w x with x = 1, w = 2: |d(f²)/dw| = |2 f x| = 4
        let w = set(&[2.0]);
        let omega = mas_importance_with(&w, 1, |tape, _| {
            let v = tape.params(&w)?;
            let x = Arc::new(array![[1.0]]);
            tape.matmul_const(&x, v[0])
        })
        .unwrap();
        assert_eq!(omega.flatten(), vec![4.0]);
        let zero = mas_importance_with(&set(&[0.0]), 1, |tape, _| {
            let v = tape.params(&set(&[0.0]))?;
            tape.matmul_const(&Arc::new(array![[1.0]]), v[0])
        })
        .unwrap();
        assert_eq!(zero.flatten(), vec![0.0]);
    }

    #[test]
    fn fisher_logistic_toy() {
        // one-parameter logistic model p(y=1|x) = σ(w x)
        let xs = [0.5, -1.0, 2.0, 0.3];
        let ys = [1.0, 0.0, 1.0, 0.0];
        let w = 0.7;
        let params = set(&[w]);
        let f = fisher_diag_with(&params, xs.len(), |tape, i| {
            let v = tape.params(&params)?;
            let z = tape.matmul_const(&Arc::new(array![[xs[i]]]), v[0])?;
            tape.logistic(z, &[ys[i]])
        })
        .unwrap();
        // independent oracle: d/dw of −log-lik = (σ(wx) − y) x
        let oracle = xs
            .iter()
            .zip(&ys)
            .map(|(x, y)| {
                let s = 1.0 / (1.0 + (-w * x).exp());
                ((s - y) * x).powi(2)
            })
            .sum::<f64>()
            / xs.len() as f64;
        assert!((f.flatten()[0] - oracle).abs() < 1e-10);
        let zero = fisher_diag_with(&params, 3, |tape, _| {
            let v = tape.params(&params)?;
            let c = tape.constant(array![[1.0]]);
            let z = tape.scale(v[0], 0.0);
            tape.add(z, c)
        })
        .unwrap();
        assert_eq!(zero.flatten(), vec![0.0]);
    }
}
