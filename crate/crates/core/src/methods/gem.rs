//! Gradient episodic memory: a small replay memory per past task whose loss
//! gradients constrain every update.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::data::{Examples, TaskData};
use super::{Hooks, RunContext, Step, TrainingStateDict};
use crate::error::{bail, Result};
use crate::model::{Model, Tape};
use crate::scalar::Scalar;

/// Stored instances of one past task and the output mask in force when they
/// were stored.
#[derive(Debug, Clone)]
pub struct MemoryEntry<T> {
    pub examples: Examples<T>,
    pub allowed: Vec<bool>,
}

/// Uniform sample without replacement of `min(capacity, |train|)` training
/// instances, in their original order.
pub fn gem_sample_memory<T: Scalar>(train: &Examples<T>, capacity: usize, seed: u64) -> Result<Examples<T>> {
    if capacity == 0 {
        bail!(Config, "memory capacity must be positive");
    }
    let n = train.len();
    let mut idx = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, capacity.min(n)).into_vec();
    idx.sort_unstable();
    Ok(train.subset(&idx))
}

const MAX_SWEEPS: usize = 1_000_000;
const TOLERANCE: f64 = 1e-10;

/// Projects `g` so that it no longer opposes any memory gradient.
///
/// Returns `g` untouched when `g·g_k ≥ 0` for all `k`. Otherwise solves the
/// dual of `min ‖g̃ − g‖²  s.t.  G g̃ ≥ 0`,
///
/// ```text
/// min_v ½ vᵀ(G Gᵀ)v + (G g)ᵀ v   s.t.  v ≥ margin
/// ```
///
/// by projected coordinate descent and returns `g̃ = g + Gᵀ v`. A positive
/// margin pushes the update beyond the constraint boundary.
pub fn gem_project(g: &[f64], memories: &[Vec<f64>], margin: f64) -> Result<Vec<f64>> {
    if let Some(m) = memories.iter().find(|m| m.len() != g.len()) {
        bail!(Shape, "memory gradient of length {} for a gradient of length {}", m.len(), g.len());
    }
    if !(margin >= 0.0 && margin.is_finite()) {
        bail!(Config, "margin must be finite and non-negative, got {margin}");
    }
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let q: Vec<f64> = memories.iter().map(|m| dot(m, g)).collect();
    if q.iter().all(|&d| d >= 0.0) {
        return Ok(g.to_vec());
    }
    let t = memories.len();
    let p: Vec<Vec<f64>> = memories.iter().map(|a| memories.iter().map(|b| dot(a, b)).collect()).collect();
    let scale = 1.0 + q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut v = vec![margin; t];
    for _ in 0..MAX_SWEEPS {
        for k in 0..t {
            if p[k][k] > 0.0 {
                let grad = dot(&p[k], &v) + q[k];
                v[k] = (v[k] - grad / p[k][k]).max(margin);
            }
        }
        // KKT residual of the box-constrained problem
        let residual = (0..t)
            .filter(|&k| p[k][k] > 0.0)
            .map(|k| {
                let grad = dot(&p[k], &v) + q[k];
                if v[k] > margin {
                    grad.abs()
                } else {
                    (-grad).max(0.0)
                }
            })
            .fold(0.0, f64::max);
        if residual <= TOLERANCE * scale {
            break;
        }
    }
    let mut out = g.to_vec();
    for (m, &vk) in memories.iter().zip(&v) {
        for (o, x) in out.iter_mut().zip(m) {
            *o += vk * x;
        }
    }
    Ok(out)
}

/// GEM with `memory` stored instances per past task.
#[derive(Debug, Clone, Copy)]
pub struct Gem {
    pub memory: usize,
    pub margin: f64,
}

const MEMORIES: &str = "gem.memories";
const SEED: &str = "gem.seed";

impl<T: Scalar> Hooks<T> for Gem {
    fn init_training_states(&self, state: &mut TrainingStateDict, ctx: &RunContext) -> Result<()> {
        state.insert(SEED, ctx.seed);
        state.insert(MEMORIES, Vec::<MemoryEntry<T>>::new());
        Ok(())
    }

    fn process_train_iteration(&self, state: &mut TrainingStateDict, step: &mut Step<'_, T>) -> Result<T> {
        let memories = match state.get::<Vec<MemoryEntry<T>>>(MEMORIES) {
            Some(m) if !m.is_empty() => m,
            _ => return step.train_with(|_, _, loss| Ok(loss)),
        };
        let mut tape = Tape::new();
        let (_, loss) = step.task_loss(&mut tape)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            bail!(Divergence, "task {}: loss is {value} at epoch {}", step.task.index, step.epoch);
        }
        let grads = tape.backward(loss)?;
        let reference = memories
            .iter()
            .map(|m| {
                let mut t = Tape::new();
                let f = step.model.forward(&mut t, &m.examples.batch(), None)?;
                let l = m.examples.loss(&mut t, f.output, &m.allowed)?;
                Ok(t.backward(l)?.flatten().iter().map(|x| x.as_f64()).collect::<Vec<_>>())
            })
            .collect::<Result<Vec<_>>>()?;
        let flat: Vec<f64> = grads.flatten().iter().map(|x| x.as_f64()).collect();
        let projected = gem_project(&flat, &reference, self.margin)?;
        let grads = if projected == flat {
            grads
        } else {
            grads.unflatten(&projected.into_iter().map(T::of).collect::<Vec<_>>())?
        };
        step.apply(&grads)?;
        Ok(value)
    }

    fn process_after_training(
        &self,
        state: &mut TrainingStateDict,
        _model: &Model<T>,
        task: &TaskData<T>,
    ) -> Result<()> {
        if self.memory == 0 {
            return Ok(());
        }
        let seed = state.get::<u64>(SEED).copied().unwrap_or(0);
        let examples = gem_sample_memory(&task.train, self.memory, seed.wrapping_add(task.index as u64))?;
        let entry = MemoryEntry { examples, allowed: task.allowed.clone() };
        state.get_or_insert_with(MEMORIES, Vec::<MemoryEntry<T>>::new)?.push(entry);
        Ok(())
    }
}
