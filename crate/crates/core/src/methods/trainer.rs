use std::collections::BTreeSet;

use ndarray::s;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::data::{class_mask, model_config, Examples, RoundGraph, TaskData};
use super::{Bare, Hooks, TrainConfig, TrainingStateDict};
use crate::error::{bail, Error, Result};
use crate::evaluator::{PerformanceMatrix, Report};
use crate::model::{
    argmax_masked, Adam, Batch, DropoutMasks, Forward, GradientSet, Model, ParamSet, PlateauSchedule, ScheduleAction,
    Tape, Var,
};
use crate::protocol::{Answer, AnswerSheet, Loader, Next};
use crate::scalar::Scalar;
use crate::scenario::{Level, Query, QueryPayload, Scenario, ScenarioInfo};

/// Run-wide facts handed to [`Hooks::init_training_states`].
#[derive(Debug, Clone, Serialize)]
pub struct RunContext {
    pub info: ScenarioInfo,
    pub seed: u64,
    pub config: TrainConfig,
}

/// One optimisation step as seen by [`Hooks::process_train_iteration`].
pub struct Step<'a, T: Scalar> {
    pub model: &'a mut Model<T>,
    pub task: &'a TaskData<T>,
    /// Dropout masks drawn by the loop for this epoch.
    pub dropout: Option<&'a DropoutMasks<T>>,
    pub epoch: usize,
    optimizer: &'a mut Adam<T>,
}

impl<T: Scalar> Step<'_, T> {
    /// Records the training forward pass and the task loss.
    pub fn task_loss(&self, tape: &mut Tape<T>) -> Result<(Forward, Var)> {
        let f = self.model.forward(tape, &self.task.train.batch(), self.dropout)?;
        let loss = self.task.train.loss(tape, f.output, &self.task.allowed)?;
        Ok((f, loss))
    }

    /// One Adam update with the given gradients.
    pub fn apply(&mut self, grads: &GradientSet<T>) -> Result<()> {
        self.optimizer.step(self.model.params_mut(), grads)
    }

    /// Task loss, optionally extended by `extra`, then backward and update.
    pub fn train_with(&mut self, extra: impl FnOnce(&mut Tape<T>, &Forward, Var) -> Result<Var>) -> Result<T> {
        let mut tape = Tape::new();
        let (f, loss) = self.task_loss(&mut tape)?;
        let total = extra(&mut tape, &f, loss)?;
        let value = tape.scalar(total);
        if !value.is_finite() {
            bail!(Divergence, "task {}: loss is {value} at epoch {}", self.task.index, self.epoch);
        }
        let grads = tape.backward(total)?;
        self.apply(&grads)?;
        Ok(value)
    }
}

/// Everything a run produces besides the report: the trainer's own
/// validation matrix (row `i` covers the validation sets of tasks `0..=i`)
/// and epochs spent per task.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: Report,
    pub validation: PerformanceMatrix<f64>,
    /// Mean of the last validation row.
    pub val_ap: f64,
    pub epochs: Vec<usize>,
}

fn in_round(round: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Protocol(m) => Error::Protocol(format!("round {round}: {m}")),
        e => e,
    }
}

fn new_model<T: Scalar>(info: &ScenarioInfo, config: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    Model::new(model_config(info, config.hidden, config.layers), rng)
}

/// Trains through every round of `scenario` with `hooks` and returns the
/// report together with validation bookkeeping.
pub fn train<T: Scalar>(
    hooks: &dyn Hooks<T>,
    scenario: Scenario<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunOutput> {
    config.validate()?;
    let info = scenario.info().clone();
    let rounds = scenario.rounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = new_model(&info, config, &mut rng)?;
    let mut state = TrainingStateDict::new();
    hooks.init_training_states(&mut state, &RunContext { info: info.clone(), seed, config: config.clone() })?;

    let mut loader = Loader::new(scenario);
    let mut seen = BTreeSet::new();
    let mut val_sets: Vec<(Examples<T>, Vec<bool>)> = vec![];
    let mut val_rows = vec![];
    let mut epochs = vec![];
    while let Next::Task(round) = loader.next_task().map_err(in_round(loader.round()))? {
        let (data, graph) = TaskData::from_input(&round.input, &info)?;
        seen.extend(round.input.classes.iter().copied());
        hooks.process_before_training(&mut state, &model, &data)?;
        epochs.push(fit(hooks, &mut state, &mut model, &data, config, &mut rng)?);
        hooks.process_after_training(&mut state, &model, &data)?;

        val_sets.push((data.val, data.allowed));
        let mut row = val_sets.iter().map(|(v, a)| v.evaluate(&model, a).map(Some)).collect::<Result<Vec<_>>>()?;
        row.resize(rounds, None);
        val_rows.push(row);

        let seen_mask = class_mask(model.config().head.outputs(), seen.iter().copied());
        let sheet = answer_queries(&model, &graph, &round.queries, &info, &seen_mask)?;
        loader.submit_answers(&sheet).map_err(in_round(loader.round()))?;
    }
    let report = loader.finalize()?.with_seeds(vec![seed]);
    let last = val_rows.last().map(|r| r.iter().flatten().copied().collect::<Vec<_>>()).unwrap_or_default();
    let val_ap = last.iter().sum::<f64>() / last.len().max(1) as f64;
    Ok(RunOutput { report, validation: PerformanceMatrix::from_option_rows(val_rows)?, val_ap, epochs })
}

/// The full evaluation report of one continual run.
pub fn run_continual<T: Scalar>(
    hooks: &dyn Hooks<T>,
    scenario: Scenario<T>,
    config: &TrainConfig,
    seed: u64,
) -> Result<Report> {
    Ok(train(hooks, scenario, config, seed)?.report)
}

/// Epoch loop for one task; returns the number of epochs run. The best
/// validation checkpoint is restored at the end.
fn fit<T: Scalar>(
    hooks: &dyn Hooks<T>,
    state: &mut TrainingStateDict,
    model: &mut Model<T>,
    data: &TaskData<T>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<usize> {
    let mut opt = Adam::new(model.params(), T::of(config.lr)).with_weight_decay(T::of(config.weight_decay));
    let mut schedule = PlateauSchedule::new(config.lr, config.patience, config.stop_factor);
    let mut best: Option<(f64, ParamSet<T>)> = None;
    let mut ran = 0;
    for epoch in 0..config.max_epochs {
        ran = epoch + 1;
        let masks = (config.dropout > 0.0)
            .then(|| DropoutMasks::sample(rng, config.dropout, data.train.num_nodes(), model.config()));
        let mut step = Step { model: &mut *model, task: data, dropout: masks.as_ref(), epoch, optimizer: &mut opt };
        let loss = hooks.process_train_iteration(state, &mut step)?;
        if !loss.is_finite() {
            bail!(Divergence, "task {}: loss is {loss} at epoch {epoch}", data.index);
        }
        let val = data.val.evaluate(model, &data.allowed)?;
        if best.as_ref().is_none_or(|(b, _)| val > *b) {
            best = Some((val, model.params().clone()));
        }
        match schedule.observe(val) {
            ScheduleAction::Continue => {}
            ScheduleAction::DecayLr => opt.lr = T::of(schedule.lr),
            ScheduleAction::Stop => break,
        }
    }
    if let Some((_, params)) = best {
        model.set_params(params)?;
    }
    Ok(ran)
}

/// Predictions for every query using the graph of the current round.
/// Task-IL masks each query to its task's classes; otherwise to `seen`.
fn answer_queries<T: Scalar>(
    model: &Model<T>,
    graph: &RoundGraph<T>,
    queries: &[Query],
    info: &ScenarioInfo,
    seen: &[bool],
) -> Result<AnswerSheet> {
    let Some(first) = queries.first() else { return Ok(AnswerSheet::new()) };
    let mixed = || Error::Protocol("queries mix payload kinds".into());
    let out = match first.payload {
        QueryPayload::Node(_) => {
            let rows = queries
                .iter()
                .map(|q| if let QueryPayload::Node(v) = q.payload { Ok(v) } else { Err(mixed()) })
                .collect::<Result<Vec<_>>>()?;
            model.infer(&Batch::Nodes { adj: &graph.adj, x: &graph.x, rows: &rows })?
        }
        QueryPayload::Pair(..) => {
            let pairs = queries
                .iter()
                .map(|q| if let QueryPayload::Pair(u, v) = q.payload { Ok((u, v)) } else { Err(mixed()) })
                .collect::<Result<Vec<_>>>()?;
            model.infer(&Batch::Pairs { adj: &graph.adj, x: &graph.x, pairs: &pairs })?
        }
        QueryPayload::Graph(_) => {
            let ids = queries
                .iter()
                .map(|q| if let QueryPayload::Graph(g) = q.payload { Ok(g) } else { Err(mixed()) })
                .collect::<Result<Vec<_>>>()?;
            let Some(c) = &graph.collection else { bail!(Protocol, "graph queries without a collection") };
            let (adj, x, membership) = c.batch(&ids);
            model.infer(&Batch::Graphs { adj: &adj.into(), x: &x.into(), membership: &membership, count: ids.len() })?
        }
    };
    if info.level == Level::LinkPrediction {
        return Ok(queries.iter().enumerate().map(|(r, q)| (q.id, Answer::Score(out[[r, 0]].as_f64()))).collect());
    }
    let task_masks: Option<Vec<Vec<bool>>> =
        info.task_classes.as_ref().map(|tc| tc.iter().map(|c| class_mask(out.ncols(), c.iter().copied())).collect());
    let mut sheet = AnswerSheet::new();
    for (r, q) in queries.iter().enumerate() {
        let mask = match (&task_masks, q.task) {
            (Some(m), Some(t)) => &m[t],
            _ => seen,
        };
        let pred = argmax_masked(&out.slice(s![r..r + 1, ..]).to_owned(), mask)[0];
        sheet.insert(q.id, Answer::Class(pred));
    }
    Ok(sheet)
}

/// Per-task performance of the untrained model, averaged over `seeds`. The
/// model for each seed is initialised exactly as [`train`] would.
pub fn random_baseline<T: Scalar>(scenario: &Scenario<T>, config: &TrainConfig, seeds: &[u64]) -> Result<Vec<f64>> {
    if seeds.is_empty() {
        bail!(Config, "random baseline needs at least one seed");
    }
    let info = scenario.info().clone();
    let mut total = vec![0.0; scenario.num_tasks()];
    for &seed in seeds {
        let model: Model<T> = new_model(&info, config, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let mut loader = Loader::new(scenario.clone());
        let mut seen = BTreeSet::new();
        while let Next::Task(round) = loader.next_task()? {
            let (_, graph) = TaskData::from_input(&round.input, &info)?;
            seen.extend(round.input.classes.iter().copied());
            let mask = class_mask(model.config().head.outputs(), seen.iter().copied());
            loader.submit_answers(&answer_queries(&model, &graph, &round.queries, &info, &mask)?)?;
        }
        for (t, v) in total.iter_mut().zip(loader.finalize()?.matrix()?.diagonal()) {
            *t += v.unwrap_or(f64::NAN);
        }
    }
    Ok(total.into_iter().map(|t| t / seeds.len() as f64).collect())
}

/// Joint reference matrix: Bare training on the merged scenario, per-task
/// performance averaged over `seeds`, stored as a repeated row.
pub fn joint_reference<T: Scalar>(
    scenario: &Scenario<T>,
    config: &TrainConfig,
    seeds: &[u64],
) -> Result<PerformanceMatrix<f64>> {
    if seeds.is_empty() {
        bail!(Config, "joint reference needs at least one seed");
    }
    let joint = scenario.joint()?;
    let mut total = vec![0.0; scenario.num_tasks()];
    for &seed in seeds {
        let m = run_continual(&Bare, joint.clone(), config, seed)?.matrix()?;
        for (j, t) in total.iter_mut().enumerate() {
            *t += m.get(0, j).unwrap_or(f64::NAN);
        }
    }
    let row: Vec<f64> = total.into_iter().map(|t| t / seeds.len() as f64).collect();
    Ok(PerformanceMatrix::from_repeated_row(&row))
}
